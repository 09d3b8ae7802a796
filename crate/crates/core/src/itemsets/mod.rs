//! Frequent itemset mining over horizontally partitioned transactions.
//!
//! [`apriori_local`] is plain level-wise Apriori. [`gfm_run`] mines every
//! site locally without global pruning and then settles global frequency
//! top-down, starting from each site's maximal itemsets. [`fdm_run`] is the
//! level-wise baseline with one count exchange per itemset size. All three
//! return the same itemsets with the same supports; they differ in rounds
//! and bytes.

mod fdm;
mod gfm;
mod wire;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::datagen::{Item, TransactionDB};
use crate::error::{Error, Result};

pub use fdm::fdm_run;
pub use gfm::gfm_run;
pub use wire::ItemsetMessage;

/// Nonempty, strictly ascending set of item ids. Orders lexicographically.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Item>", into = "Vec<Item>")]
pub struct Itemset(Vec<Item>);

impl Itemset {
    pub fn new(items: Vec<Item>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::validation("itemset must be nonempty"));
        }
        if !items.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::validation(format!(
                "itemset {items:?} is not strictly ascending"
            )));
        }
        Ok(Itemset(items))
    }

    /// Sorts and deduplicates.
    pub fn from_unsorted(mut items: Vec<Item>) -> Result<Self> {
        items.sort_unstable();
        items.dedup();
        Itemset::new(items)
    }

    pub fn singleton(item: Item) -> Self {
        Itemset(vec![item])
    }

    pub fn items(&self) -> &[Item] {
        &self.0
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_subset_of(&self, other: &Itemset) -> bool {
        let mut rest = other.0.iter();
        self.0.iter().all(|i| rest.any(|j| j == i))
    }

    /// Subsets with one item removed, in lexicographic order.
    pub fn immediate_subsets(&self) -> Vec<Itemset> {
        if self.0.len() < 2 {
            return Vec::new();
        }
        let mut out: Vec<_> = (0..self.0.len())
            .map(|skip| {
                let mut v = self.0.clone();
                v.remove(skip);
                Itemset(v)
            })
            .collect();
        out.sort();
        out
    }

    /// All nonempty strict subsets.
    pub fn proper_subsets(&self) -> Vec<Itemset> {
        let n = self.0.len();
        (1u64..(1 << n) - 1)
            .map(|mask| Itemset((0..n).filter(|b| mask >> b & 1 == 1).map(|b| self.0[b]).collect()))
            .collect()
    }
}

impl TryFrom<Vec<Item>> for Itemset {
    type Error = Error;

    fn try_from(items: Vec<Item>) -> Result<Self> {
        Itemset::new(items)
    }
}

impl From<Itemset> for Vec<Item> {
    fn from(s: Itemset) -> Self {
        s.0
    }
}

impl fmt::Debug for Itemset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (n, i) in self.0.iter().enumerate() {
            if n > 0 {
                f.write_str(",")?;
            }
            write!(f, "{i}")?;
        }
        f.write_str("}")
    }
}

/// Per-site counts of itemsets as learned by one participant.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SupportTable {
    n_sites: usize,
    entries: BTreeMap<Itemset, Vec<Option<u64>>>,
}

impl SupportTable {
    pub fn new(n_sites: usize) -> Self {
        SupportTable {
            n_sites,
            entries: BTreeMap::new(),
        }
    }

    /// Records `count` for `site`. A different count for the same pair is
    /// an error.
    pub fn record(&mut self, itemset: &Itemset, site: usize, count: u64) -> Result<()> {
        let n = self.n_sites;
        let slot = &mut self
            .entries
            .entry(itemset.clone())
            .or_insert_with(|| vec![None; n])[site];
        match *slot {
            Some(c) if c != count => Err(Error::Inconsistent(format!(
                "site {site} reported {count} and {c} for {itemset:?}"
            ))),
            _ => {
                *slot = Some(count);
                Ok(())
            }
        }
    }

    pub fn per_site(&self, itemset: &Itemset) -> Option<&[Option<u64>]> {
        self.entries.get(itemset).map(Vec::as_slice)
    }

    /// Sum over sites once every site's count is known.
    pub fn global(&self, itemset: &Itemset) -> Option<u64> {
        self.entries.get(itemset)?.iter().copied().sum()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiningParams {
    pub minsup: f64,
    /// Largest itemset size mined.
    pub k: usize,
}

impl MiningParams {
    pub fn new(minsup: f64, k: usize) -> Result<Self> {
        let p = MiningParams { minsup, k };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.minsup > 0.0 && self.minsup <= 1.0) {
            return Err(Error::validation(format!(
                "minsup must be in (0, 1], got {}",
                self.minsup
            )));
        }
        if self.k == 0 {
            return Err(Error::validation("k must be positive"));
        }
        Ok(())
    }

    /// Minimum count for a database of `n` transactions.
    pub fn threshold(&self, n: usize) -> u64 {
        support_threshold(self.minsup, n)
    }
}

/// `ceil(minsup * n)`, at least 1. The small slack keeps products such as
/// `0.07 * 100 = 7.000000000000001` from rounding up.
pub fn support_threshold(minsup: f64, n: usize) -> u64 {
    ((minsup * n as f64 - 1e-9).ceil() as u64).max(1)
}

/// Frequent itemsets keyed by size, each with its support.
pub type Levels = BTreeMap<usize, BTreeMap<Itemset, u64>>;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MiningResult {
    #[serde(with = "levels_serde")]
    pub frequent: Levels,
    pub rounds: u32,
    pub messages: u64,
    pub bytes: u64,
}

impl MiningResult {
    pub fn total(&self) -> usize {
        self.frequent.values().map(BTreeMap::len).sum()
    }

    /// Number of frequent itemsets of each size.
    pub fn counts_by_size(&self) -> BTreeMap<usize, usize> {
        self.frequent.iter().map(|(&l, m)| (l, m.len())).collect()
    }

    pub fn support(&self, itemset: &Itemset) -> Option<u64> {
        self.frequent.get(&itemset.len())?.get(itemset).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Itemset, u64)> {
        self.frequent
            .values()
            .flat_map(|m| m.iter().map(|(s, &c)| (s, c)))
    }
}

mod levels_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Entry {
        items: Itemset,
        support: u64,
    }

    pub fn serialize<S: Serializer>(levels: &Levels, s: S) -> std::result::Result<S::Ok, S::Error> {
        let out: BTreeMap<usize, Vec<Entry>> = levels
            .iter()
            .map(|(&l, m)| {
                let v = m
                    .iter()
                    .map(|(items, &support)| Entry {
                        items: items.clone(),
                        support,
                    })
                    .collect();
                (l, v)
            })
            .collect();
        out.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Levels, D::Error> {
        let raw = BTreeMap::<usize, Vec<Entry>>::deserialize(d)?;
        Ok(raw
            .into_iter()
            .map(|(l, v)| (l, v.into_iter().map(|e| (e.items, e.support)).collect()))
            .collect())
    }
}

/// Transaction-by-transaction containment counting. Item ids outside the
/// database's range count as absent.
pub fn count_support<'a>(db: &TransactionDB, itemsets: impl IntoIterator<Item = &'a Itemset>) -> Vec<u64> {
    let queries: Vec<&Itemset> = itemsets.into_iter().collect();
    let mut counts = vec![0u64; queries.len()];
    if queries.is_empty() {
        return counts;
    }
    let mut present = vec![false; db.n_items];
    for tx in &db.transactions {
        for &i in tx {
            present[i as usize] = true;
        }
        for (c, q) in counts.iter_mut().zip(&queries) {
            if q.0
                .iter()
                .all(|&i| present.get(i as usize).copied().unwrap_or(false))
            {
                *c += 1;
            }
        }
        for &i in tx {
            present[i as usize] = false;
        }
    }
    counts
}

/// Apriori join and prune. All inputs must have the same size.
pub fn candidate_gen<'a>(frequent_prev: impl IntoIterator<Item = &'a Itemset>) -> Result<BTreeSet<Itemset>> {
    let prev: BTreeSet<&Itemset> = frequent_prev.into_iter().collect();
    let Some(size) = prev.first().map(|s| s.len()) else {
        return Ok(BTreeSet::new());
    };
    if prev.iter().any(|s| s.len() != size) {
        return Err(Error::validation("candidate_gen needs itemsets of one size"));
    }
    let sorted: Vec<&Itemset> = prev.iter().copied().collect();
    let mut out = BTreeSet::new();
    for (a_idx, a) in sorted.iter().enumerate() {
        let prefix = &a.0[..size - 1];
        for b in &sorted[a_idx + 1..] {
            if &b.0[..size - 1] != prefix {
                break;
            }
            let mut items = a.0.clone();
            items.push(b.0[size - 1]);
            let cand = Itemset(items);
            if cand.immediate_subsets().iter().all(|s| prev.contains(s)) {
                out.insert(cand);
            }
        }
    }
    Ok(out)
}

/// Levels of itemsets meeting `threshold`, plus the number of
/// itemset-in-transaction checks spent.
pub(crate) fn apriori_with_threshold(db: &TransactionDB, threshold: u64, k: usize) -> (Levels, u64) {
    let mut levels = Levels::new();
    let mut work = 0u64;
    let mut candidates: BTreeSet<Itemset> = (0..db.n_items as Item).map(Itemset::singleton).collect();
    for level in 1..=k {
        if candidates.is_empty() {
            break;
        }
        work += (candidates.len() * db.len()) as u64;
        let counts = count_support(db, &candidates);
        let frequent: BTreeMap<Itemset, u64> = candidates
            .into_iter()
            .zip(counts)
            .filter(|&(_, c)| c >= threshold)
            .collect();
        if frequent.is_empty() {
            break;
        }
        candidates = if level < k {
            candidate_gen(frequent.keys()).expect("one level has one size")
        } else {
            BTreeSet::new()
        };
        levels.insert(level, frequent);
    }
    (levels, work)
}

/// Locally frequent itemsets of sizes `1..=k`; empty levels are omitted.
pub fn apriori_local(db: &TransactionDB, params: &MiningParams) -> Result<Levels> {
    params.validate()?;
    Ok(apriori_with_threshold(db, params.threshold(db.len()), params.k).0)
}

/// Apriori over the concatenation of all site databases.
pub fn centralized(site_dbs: &[TransactionDB], params: &MiningParams) -> Result<MiningResult> {
    let pooled = TransactionDB::pooled(site_dbs);
    Ok(MiningResult {
        frequent: apriori_local(&pooled, params)?,
        ..Default::default()
    })
}

pub(crate) fn check_inputs(site_dbs: &[TransactionDB], params: &MiningParams, n_sites: usize) -> Result<()> {
    params.validate()?;
    if site_dbs.is_empty() {
        return Err(Error::validation("at least one site database is required"));
    }
    if site_dbs.len() != n_sites {
        return Err(Error::validation(format!(
            "{} site databases for a {n_sites}-site session",
            site_dbs.len()
        )));
    }
    Ok(())
}


#[cfg(test)]
pub(crate) mod oracle {
    use super::*;
    use std::collections::HashMap;

    /// Every itemset of size at most `k` contained in some transaction,
    /// counted by enumerating each transaction's subsets.
    pub fn exhaustive(dbs: &[TransactionDB], minsup: f64, k: usize) -> Levels {
        let mut counts: HashMap<Vec<Item>, u64> = HashMap::new();
        let mut n = 0;
        for db in dbs {
            n += db.len();
            for tx in &db.transactions {
                let m = tx.len();
                for mask in 1u64..(1u64 << m) {
                    if mask.count_ones() as usize <= k {
                        let s: Vec<Item> = (0..m).filter(|b| mask >> b & 1 == 1).map(|b| tx[b]).collect();
                        *counts.entry(s).or_default() += 1;
                    }
                }
            }
        }
        let threshold = ((minsup * n as f64 - 1e-9).ceil() as u64).max(1);
        let mut out = Levels::new();
        for (s, c) in counts {
            if c >= threshold {
                out.entry(s.len()).or_default().insert(Itemset(s), c);
            }
        }
        out
    }
}

#[cfg(test)]
mod proptests {
    use super::oracle::exhaustive;
    use super::*;
    use proptest::prelude::*;

    fn db() -> impl Strategy<Value = TransactionDB> {
        prop::collection::vec(prop::collection::btree_set(0u32..10, 0..7), 0..60).prop_map(|txs| {
            TransactionDB::new(10, txs.into_iter().map(|t| t.into_iter().collect()).collect()).unwrap()
        })
    }

    proptest! {
        #[test]
        fn apriori_matches_exhaustive(db in db(), minsup in 0.05f64..0.5, k in 1usize..5) {
            let params = MiningParams::new(minsup, k).unwrap();
            prop_assert_eq!(apriori_local(&db, &params).unwrap(), exhaustive(&[db], minsup, k));
        }

        #[test]
        fn candidate_gen_is_join_then_prune(db in db(), minsup in 0.05f64..0.4) {
            let levels = apriori_local(&db, &MiningParams::new(minsup, 2).unwrap()).unwrap();
            if let Some(l2) = levels.get(&2) {
                let cands = candidate_gen(l2.keys()).unwrap();
                for c in &cands {
                    for s in c.immediate_subsets() {
                        prop_assert!(l2.contains_key(&s));
                    }
                }
                // Any 3-set whose 2-subsets are all frequent is generated.
                let items: BTreeSet<Item> = l2.keys().flat_map(|s| s.items().to_vec()).collect();
                let items: Vec<Item> = items.into_iter().collect();
                for a in 0..items.len() {
                    for b in a + 1..items.len() {
                        for c in b + 1..items.len() {
                            let t = Itemset(vec![items[a], items[b], items[c]]);
                            let all = t.immediate_subsets().iter().all(|s| l2.contains_key(s));
                            prop_assert_eq!(all, cands.contains(&t));
                        }
                    }
                }
            }
        }
    }
}

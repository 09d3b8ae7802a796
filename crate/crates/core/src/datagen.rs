//! Seeded generators for Gaussian-mixture point sets and synthetic
//! transaction databases, site partitioning, and the plain-text file
//! formats used to move datasets around.
//!
//! All randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! `seed_from_u64`, a portable stream cipher RNG whose output is fixed by the
//! algorithm, so a spec with a given seed produces the same bytes on every
//! platform. Seed 0 is a valid seed.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Item = u32;

/// Seeded RNG used by every generator in the crate.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub center: Vec<f64>,
    pub stddev: f64,
    pub count: usize,
}

/// Isotropic Gaussian mixture: component `j` contributes `count` points drawn
/// from `N(center, stddev² I)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub dims: usize,
    pub components: Vec<MixtureComponent>,
    #[serde(default)]
    pub seed: u64,
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dims == 0 {
            return Err(Error::validation("mixture dims must be positive"));
        }
        if self.components.is_empty() {
            return Err(Error::validation("mixture needs at least one component"));
        }
        for (j, c) in self.components.iter().enumerate() {
            if c.center.len() != self.dims {
                return Err(Error::validation(format!(
                    "component {j}: center has length {}, expected {}",
                    c.center.len(),
                    self.dims
                )));
            }
            if !(c.stddev > 0.0 && c.stddev.is_finite()) {
                return Err(Error::validation(format!(
                    "component {j}: stddev must be a positive finite number"
                )));
            }
            if c.count == 0 {
                return Err(Error::validation(format!("component {j}: count must be >= 1")));
            }
            if c.center.iter().any(|x| !x.is_finite()) {
                return Err(Error::validation(format!("component {j}: non-finite center")));
            }
        }
        Ok(())
    }

    pub fn total_points(&self) -> usize {
        self.components.iter().map(|c| c.count).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pattern {
    pub itemset: Vec<Item>,
    pub prob: f64,
}

/// Independent-pattern transaction model: each pattern is included whole
/// with its probability, every other item is added with `noise_prob`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransactionSpec {
    pub n_items: usize,
    pub n_transactions: usize,
    #[serde(default)]
    pub patterns: Vec<Pattern>,
    #[serde(default)]
    pub noise_prob: f64,
    #[serde(default)]
    pub seed: u64,
}

fn check_prob(p: f64, what: &str) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::validation(format!("{what} must lie in [0, 1], got {p}")))
    }
}

impl TransactionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_items == 0 {
            return Err(Error::validation("n_items must be positive"));
        }
        if self.n_transactions == 0 {
            return Err(Error::validation("n_transactions must be positive"));
        }
        check_prob(self.noise_prob, "noise_prob")?;
        for (j, p) in self.patterns.iter().enumerate() {
            check_prob(p.prob, &format!("pattern {j} prob"))?;
            if p.itemset.is_empty() {
                return Err(Error::validation(format!("pattern {j} is empty")));
            }
            if !p.itemset.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::validation(format!(
                    "pattern {j} must be strictly ascending"
                )));
            }
            if let Some(&bad) = p.itemset.iter().find(|&&i| i as usize >= self.n_items) {
                return Err(Error::validation(format!(
                    "pattern {j} item {bad} out of range (n_items = {})",
                    self.n_items
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    pub dims: usize,
    pub points: Vec<Vec<f64>>,
}

impl PointSet {
    pub fn new(dims: usize, points: Vec<Vec<f64>>) -> Result<Self> {
        if dims == 0 {
            return Err(Error::validation("point dims must be positive"));
        }
        if let Some(i) = points.iter().position(|p| p.len() != dims) {
            return Err(Error::validation(format!(
                "point {i} has length {}, expected {dims}",
                points[i].len()
            )));
        }
        Ok(PointSet { dims, points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn partition(&self, n_sites: usize, strategy: PartitionStrategy) -> Result<Vec<PointSet>> {
        Ok(partition(&self.points, n_sites, strategy)?
            .into_iter()
            .map(|points| PointSet {
                dims: self.dims,
                points,
            })
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransactionDB {
    pub n_items: usize,
    pub transactions: Vec<Vec<Item>>,
}

impl TransactionDB {
    pub fn new(n_items: usize, transactions: Vec<Vec<Item>>) -> Result<Self> {
        if n_items == 0 {
            return Err(Error::validation("n_items must be positive"));
        }
        for (t, tx) in transactions.iter().enumerate() {
            if !tx.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::validation(format!(
                    "transaction {t} is not strictly ascending"
                )));
            }
            if tx.last().is_some_and(|&i| i as usize >= n_items) {
                return Err(Error::validation(format!(
                    "transaction {t} has an item id >= n_items ({n_items})"
                )));
            }
        }
        Ok(TransactionDB {
            n_items,
            transactions,
        })
    }

    pub fn len(&self) -> usize {
        self.transactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transactions.is_empty()
    }

    pub fn partition(&self, n_sites: usize, strategy: PartitionStrategy) -> Result<Vec<TransactionDB>> {
        Ok(partition(&self.transactions, n_sites, strategy)?
            .into_iter()
            .map(|transactions| TransactionDB {
                n_items: self.n_items,
                transactions,
            })
            .collect())
    }

    /// Concatenation of site databases, in site order.
    pub fn pooled(sites: &[TransactionDB]) -> TransactionDB {
        TransactionDB {
            n_items: sites.iter().map(|db| db.n_items).max().unwrap_or(1),
            transactions: sites.iter().flat_map(|db| db.transactions.clone()).collect(),
        }
    }
}

/// Draws the mixture, returning the points together with the index of the
/// component each point came from.
pub fn gen_gaussian_mixture_labeled(spec: &MixtureSpec) -> Result<(PointSet, Vec<usize>)> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed);
    let mut points = Vec::with_capacity(spec.total_points());
    let mut labels = Vec::with_capacity(spec.total_points());
    for (j, comp) in spec.components.iter().enumerate() {
        for _ in 0..comp.count {
            let p = comp
                .center
                .iter()
                .map(|&c| {
                    let z: f64 = rng.sample(StandardNormal);
                    c + comp.stddev * z
                })
                .collect();
            points.push(p);
            labels.push(j);
        }
    }
    Ok((
        PointSet {
            dims: spec.dims,
            points,
        },
        labels,
    ))
}

pub fn gen_gaussian_mixture(spec: &MixtureSpec) -> Result<PointSet> {
    gen_gaussian_mixture_labeled(spec).map(|(points, _)| points)
}

pub fn gen_transactions(spec: &TransactionSpec) -> Result<TransactionDB> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed);
    let mut transactions = Vec::with_capacity(spec.n_transactions);
    let mut tx = BTreeSet::new();
    for _ in 0..spec.n_transactions {
        tx.clear();
        for pattern in &spec.patterns {
            if rng.random::<f64>() < pattern.prob {
                tx.extend(pattern.itemset.iter().copied());
            }
        }
        // One draw per item keeps the stream aligned whatever the patterns hit.
        for item in 0..spec.n_items as Item {
            let hit = rng.random::<f64>() < spec.noise_prob;
            if hit {
                tx.insert(item);
            }
        }
        transactions.push(tx.iter().copied().collect());
    }
    Ok(TransactionDB {
        n_items: spec.n_items,
        transactions,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionStrategy {
    /// Record `r` goes to site `r mod n_sites`.
    #[default]
    RoundRobin,
    /// Consecutive blocks; the first `len mod n_sites` sites get one extra.
    Contiguous,
    /// Seeded shuffle followed by a round-robin deal.
    Shuffled { seed: u64 },
}

/// Record indices held by each site.
pub fn partition_indices(len: usize, n_sites: usize, strategy: PartitionStrategy) -> Result<Vec<Vec<usize>>> {
    if n_sites == 0 {
        return Err(Error::validation("n_sites must be at least 1"));
    }
    if n_sites > len {
        return Err(Error::validation(format!(
            "cannot split {len} records over {n_sites} sites"
        )));
    }
    let deal = |order: &[usize]| {
        let mut sites = vec![Vec::with_capacity(len / n_sites + 1); n_sites];
        for (pos, &r) in order.iter().enumerate() {
            sites[pos % n_sites].push(r);
        }
        sites
    };
    Ok(match strategy {
        PartitionStrategy::RoundRobin => deal(&(0..len).collect::<Vec<_>>()),
        PartitionStrategy::Shuffled { seed } => {
            let mut order: Vec<usize> = (0..len).collect();
            order.shuffle(&mut seeded_rng(seed));
            deal(&order)
        }
        PartitionStrategy::Contiguous => {
            let base = len / n_sites;
            let extra = len % n_sites;
            let mut start = 0;
            (0..n_sites)
                .map(|s| {
                    let size = base + usize::from(s < extra);
                    let block = (start..start + size).collect();
                    start += size;
                    block
                })
                .collect()
        }
    })
}

pub fn partition<T: Clone>(
    records: &[T],
    n_sites: usize,
    strategy: PartitionStrategy,
) -> Result<Vec<Vec<T>>> {
    Ok(partition_indices(records.len(), n_sites, strategy)?
        .into_iter()
        .map(|idx| idx.into_iter().map(|r| records[r].clone()).collect())
        .collect())
}

// ---------------------------------------------------------------------------
// File formats

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_string(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// CSV, one point per line, no header. Floats use the shortest
/// representation that parses back to the same value.
pub fn format_points(points: &PointSet) -> String {
    let mut out = String::new();
    for p in &points.points {
        for (i, x) in p.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write!(out, "{x}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn parse_points(text: &str, path: &Path) -> Result<PointSet> {
    let mut points = Vec::new();
    let mut dims = None;
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let p = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                path: path.into(),
                line: n + 1,
                msg: e.to_string(),
            })?;
        match dims {
            None => dims = Some(p.len()),
            Some(d) if d != p.len() => {
                return Err(Error::Parse {
                    path: path.into(),
                    line: n + 1,
                    msg: format!("expected {d} columns, found {}", p.len()),
                })
            }
            _ => {}
        }
        points.push(p);
    }
    let dims = dims.ok_or_else(|| Error::validation(format!("{} holds no points", path.display())))?;
    PointSet::new(dims, points)
}

pub fn write_points(path: &Path, points: &PointSet) -> Result<()> {
    write_string(path, &format_points(points))
}

pub fn read_points(path: &Path) -> Result<PointSet> {
    parse_points(&read_to_string(path)?, path)
}

/// One transaction per line, ascending space-separated ids; an empty line is
/// an empty transaction. Every line, including the last, ends in `\n`.
pub fn format_transactions(db: &TransactionDB) -> String {
    let mut out = String::new();
    for tx in &db.transactions {
        for (i, item) in tx.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            write!(out, "{item}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Parses the transaction format. Without `n_items` the universe is taken
/// as one past the largest id seen.
pub fn parse_transactions(text: &str, n_items: Option<usize>, path: &Path) -> Result<TransactionDB> {
    let body = text.strip_suffix('\n').unwrap_or(text);
    let mut transactions = Vec::new();
    if !text.is_empty() {
        for (n, line) in body.split('\n').enumerate() {
            let tx = line
                .split_whitespace()
                .map(|f| f.parse::<Item>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    path: path.into(),
                    line: n + 1,
                    msg: e.to_string(),
                })?;
            transactions.push(tx);
        }
    }
    let seen = transactions
        .iter()
        .filter_map(|tx| tx.last())
        .max()
        .map_or(1, |&m| m as usize + 1);
    TransactionDB::new(n_items.unwrap_or(seen), transactions)
}

pub fn write_transactions(path: &Path, db: &TransactionDB) -> Result<()> {
    write_string(path, &format_transactions(db))
}

pub fn read_transactions(path: &Path, n_items: Option<usize>) -> Result<TransactionDB> {
    parse_transactions(&read_to_string(path)?, n_items, path)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mixture(components: Vec<MixtureComponent>, seed: u64) -> MixtureSpec {
        MixtureSpec {
            dims: components[0].center.len(),
            components,
            seed,
        }
    }

    fn comp(center: &[f64], stddev: f64, count: usize) -> MixtureComponent {
        MixtureComponent {
            center: center.to_vec(),
            stddev,
            count,
        }
    }

    #[test]
    fn mixture_is_deterministic() {
        let spec = mixture(vec![comp(&[0.0, 0.0], 1.0, 5)], 7);
        let a = gen_gaussian_mixture(&spec).unwrap();
        let b = gen_gaussian_mixture(&spec).unwrap();
        assert_eq!(a.len(), 5);
        assert_eq!(format_points(&a), format_points(&b));
        let other = gen_gaussian_mixture(&mixture(vec![comp(&[0.0, 0.0], 1.0, 5)], 8)).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn tiny_spread_stays_on_center() {
        let spec = mixture(vec![comp(&[3.0, -2.0], 1e-12, 50)], 0);
        let pts = gen_gaussian_mixture(&spec).unwrap();
        for p in &pts.points {
            assert!((p[0] - 3.0).abs() < 1e-9 && (p[1] + 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn component_means_converge() {
        let centers = [[10.0, 10.0], [10.0, -10.0], [-10.0, 10.0], [-10.0, -10.0]];
        let spec = mixture(centers.iter().map(|c| comp(c, 1.0, 1000)).collect(), 3);
        let (pts, labels) = gen_gaussian_mixture_labeled(&spec).unwrap();
        assert_eq!(pts.len(), 4000);
        for (j, c) in centers.iter().enumerate() {
            let members: Vec<_> = pts
                .points
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l == j)
                .map(|(p, _)| p)
                .collect();
            assert_eq!(members.len(), 1000);
            for d in 0..2 {
                let mean = members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64;
                assert!((mean - c[d]).abs() < 0.2, "component {j} dim {d}: {mean}");
            }
        }
    }

    #[test]
    fn mixture_rejects_bad_specs() {
        let empty = MixtureSpec {
            dims: 2,
            components: vec![],
            seed: 0,
        };
        assert!(matches!(gen_gaussian_mixture(&empty), Err(Error::Validation(_))));
        let zero_dims = MixtureSpec {
            dims: 0,
            components: vec![comp(&[], 1.0, 1)],
            seed: 0,
        };
        assert!(gen_gaussian_mixture(&zero_dims).is_err());
        let mut bad = mixture(vec![comp(&[0.0], 1.0, 1)], 0);
        bad.components[0].stddev = 0.0;
        assert!(gen_gaussian_mixture(&bad).is_err());
        bad.components[0].stddev = 1.0;
        bad.components[0].count = 0;
        assert!(gen_gaussian_mixture(&bad).is_err());
    }

    fn tx_spec(patterns: Vec<(Vec<Item>, f64)>, noise: f64, n: usize) -> TransactionSpec {
        TransactionSpec {
            n_items: 10,
            n_transactions: n,
            patterns: patterns
                .into_iter()
                .map(|(itemset, prob)| Pattern { itemset, prob })
                .collect(),
            noise_prob: noise,
            seed: 11,
        }
    }

    #[test]
    fn certain_pattern_fills_every_transaction() {
        let db = gen_transactions(&tx_spec(vec![(vec![0, 1], 1.0)], 0.0, 100)).unwrap();
        assert!(db.transactions.iter().all(|t| t == &[0, 1]));
    }

    #[test]
    fn no_patterns_no_noise_gives_empty_transactions() {
        let db = gen_transactions(&tx_spec(vec![], 0.0, 20)).unwrap();
        assert_eq!(db.len(), 20);
        assert!(db.transactions.iter().all(Vec::is_empty));
    }

    #[test]
    fn pattern_support_matches_probability() {
        let db = gen_transactions(&tx_spec(vec![(vec![0, 1, 2], 0.5)], 0.0, 10_000)).unwrap();
        let hits = db
            .transactions
            .iter()
            .filter(|t| t.starts_with(&[0, 1, 2]))
            .count();
        let support = hits as f64 / 10_000.0;
        assert!((support - 0.5).abs() < 0.02, "support {support}");
    }

    #[test]
    fn noise_support_within_three_sigma() {
        let n = 20_000;
        let p = 0.3;
        let db = gen_transactions(&tx_spec(vec![], p, n)).unwrap();
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        for item in 0..10 {
            let f = db.transactions.iter().filter(|t| t.contains(&item)).count() as f64 / n as f64;
            assert!((f - p).abs() < 3.0 * sigma, "item {item}: {f}");
        }
    }

    #[test]
    fn transaction_spec_validation() {
        let mut spec = tx_spec(vec![(vec![3, 12], 0.5)], 0.0, 5);
        assert!(matches!(gen_transactions(&spec), Err(Error::Validation(_))));
        spec.patterns[0].itemset = vec![2, 1];
        assert!(gen_transactions(&spec).is_err());
        spec.patterns[0].itemset = vec![1, 2];
        spec.noise_prob = 1.5;
        assert!(gen_transactions(&spec).is_err());
    }

    #[test]
    fn round_robin_deals_in_turn() {
        let sites = partition_indices(10, 2, PartitionStrategy::RoundRobin).unwrap();
        assert_eq!(sites, vec![vec![0, 2, 4, 6, 8], vec![1, 3, 5, 7, 9]]);
    }

    #[test]
    fn contiguous_uses_ceiling_split() {
        let sites = partition_indices(7, 3, PartitionStrategy::Contiguous).unwrap();
        let sizes: Vec<_> = sites.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![3, 2, 2]);
        assert_eq!(sites[0], vec![0, 1, 2]);
    }

    #[test]
    fn single_site_holds_everything() {
        for strategy in [
            PartitionStrategy::RoundRobin,
            PartitionStrategy::Contiguous,
            PartitionStrategy::Shuffled { seed: 4 },
        ] {
            let recs: Vec<u32> = (0..9).collect();
            let sites = partition(&recs, 1, strategy).unwrap();
            let mut all = sites[0].clone();
            all.sort();
            assert_eq!(all, recs);
        }
    }

    #[test]
    fn partition_errors() {
        assert!(partition_indices(3, 4, PartitionStrategy::RoundRobin).is_err());
        assert!(partition_indices(3, 0, PartitionStrategy::RoundRobin).is_err());
    }

    #[test]
    fn transaction_text_keeps_empty_lines() {
        let db = TransactionDB::new(5, vec![vec![0, 3], vec![], vec![4]]).unwrap();
        let text = format_transactions(&db);
        assert_eq!(text, "0 3\n\n4\n");
        let back = parse_transactions(&text, Some(5), Path::new("mem")).unwrap();
        assert_eq!(back, db);
        let trailing_empty = TransactionDB::new(5, vec![vec![1], vec![]]).unwrap();
        let back =
            parse_transactions(&format_transactions(&trailing_empty), Some(5), Path::new("m")).unwrap();
        assert_eq!(back, trailing_empty);
    }

    #[test]
    fn parse_rejects_unsorted_transactions() {
        assert!(parse_transactions("3 1\n", None, Path::new("m")).is_err());
        assert!(parse_transactions("a b\n", None, Path::new("m")).is_err());
    }

    #[test]
    fn point_csv_is_exact() {
        let spec = mixture(vec![comp(&[0.5, -1.25, 3.0], 2.0, 40)], 99);
        let pts = gen_gaussian_mixture(&spec).unwrap();
        let back = parse_points(&format_points(&pts), Path::new("mem")).unwrap();
        assert_eq!(back, pts);
    }
}

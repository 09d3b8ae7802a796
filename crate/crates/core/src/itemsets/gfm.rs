use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use crate::datagen::TransactionDB;
use crate::error::{Error, Result};
use crate::gridsim::{Envelope, RoundCtx, Session, Work};

use super::{
    apriori_with_threshold, check_inputs, count_support, Itemset, ItemsetMessage, Levels, MiningParams,
    MiningResult, SupportTable,
};

/// What one site knows during reconciliation.
struct SiteState<'a> {
    db: &'a TransactionDB,
    /// This site's own counts.
    local: BTreeMap<Itemset, u64>,
    table: SupportTable,
    /// Globally frequent, with the support once known here.
    frequent: BTreeMap<Itemset, Option<u64>>,
    failed: BTreeSet<Itemset>,
    /// Itemsets to test in the next round.
    pending: BTreeSet<Itemset>,
}

impl SiteState<'_> {
    fn count(&mut self, sets: &[Itemset]) -> (Vec<u64>, Work) {
        let start = Instant::now();
        let missing: Vec<&Itemset> = sets.iter().filter(|s| !self.local.contains_key(*s)).collect();
        let units = (missing.len() * self.db.len()) as f64;
        let counts = count_support(self.db, missing.iter().copied());
        for (s, c) in missing.into_iter().zip(counts) {
            self.local.insert(s.clone(), c);
        }
        let out = sets.iter().map(|s| self.local[s]).collect();
        (out, Work::new(units, start.elapsed()))
    }

    fn decided(&self, s: &Itemset) -> bool {
        self.frequent.contains_key(s) || self.failed.contains(s)
    }
}

/// Local Apriori at every site, then top-down reconciliation of global
/// frequency starting from each site's maximal locally frequent itemsets.
///
/// A round has four stages:
/// 1. every site announces its pending itemsets, with its own counts;
/// 2. sites that did not announce an itemset reply with their counts;
/// 3. each site decides its itemsets; subsets of frequent ones are frequent
///    too, and the lowest-numbered site that announced a frequent itemset
///    requests the supports of its subsets that are still unknown;
/// 4. the other sites answer those requests.
///
/// Subsets of failed itemsets become the next round's pending itemsets, so
/// the largest undecided size shrinks every round and at most `k` rounds
/// are used.
pub fn gfm_run(site_dbs: &[TransactionDB], params: &MiningParams, net: &mut Session) -> Result<MiningResult> {
    check_inputs(site_dbs, params, net.n_sites())?;
    let n = site_dbs.len();
    let threshold = params.threshold(site_dbs.iter().map(TransactionDB::len).sum());
    let before = (net.rounds(), net.log().messages, net.log().bytes);

    let mut sites = Vec::with_capacity(n);
    let mut work = Vec::with_capacity(n);
    for db in site_dbs {
        let start = Instant::now();
        let (levels, units) = apriori_with_threshold(db, params.threshold(db.len()), params.k);
        work.push(Work::new(units as f64, start.elapsed()));
        sites.push(SiteState {
            db,
            pending: maximal(&levels),
            local: levels.into_values().flatten().collect(),
            table: SupportTable::new(n),
            frequent: BTreeMap::new(),
            failed: BTreeSet::new(),
        });
    }
    net.local_stage("local apriori", &work)?;

    while sites.iter().any(|s| !s.pending.is_empty()) {
        net.round(|ctx| reconcile(ctx, &mut sites, threshold))?;
    }

    let mut frequent = Levels::new();
    for site in &sites {
        for (s, support) in &site.frequent {
            let Some(support) = *support else { continue };
            let prev = frequent.entry(s.len()).or_default().insert(s.clone(), support);
            if prev.is_some_and(|p| p != support) {
                return Err(Error::Inconsistent(format!(
                    "sites disagree on the support of {s:?}"
                )));
            }
        }
    }
    Ok(MiningResult {
        frequent,
        rounds: net.rounds() - before.0,
        messages: net.log().messages - before.1,
        bytes: net.log().bytes - before.2,
    })
}

/// Locally frequent itemsets without a locally frequent superset.
fn maximal(levels: &Levels) -> BTreeSet<Itemset> {
    let mut out = BTreeSet::new();
    for (l, sets) in levels {
        let covered: BTreeSet<Itemset> = levels
            .get(&(l + 1))
            .into_iter()
            .flat_map(|m| m.keys().flat_map(Itemset::immediate_subsets))
            .collect();
        out.extend(sets.keys().filter(|s| !covered.contains(*s)).cloned());
    }
    out
}

fn broadcast(from: usize, n: usize, entries: Vec<(Itemset, u64)>) -> Vec<Envelope<ItemsetMessage>> {
    if entries.is_empty() {
        return Vec::new();
    }
    (0..n)
        .filter(|&to| to != from)
        .map(|to| Envelope {
            from,
            to,
            payload: ItemsetMessage::new(from, entries.clone()),
        })
        .collect()
}

fn reconcile(ctx: &mut RoundCtx<'_>, sites: &mut [SiteState<'_>], threshold: u64) -> Result<()> {
    let n = sites.len();
    let round = ctx.round();

    // Announce pending itemsets with local counts.
    ctx.set_stage_name(format!("round {round}: announce"));
    let announced: Vec<BTreeSet<Itemset>> =
        sites.iter_mut().map(|s| std::mem::take(&mut s.pending)).collect();
    let mut out = Vec::new();
    for (i, site) in sites.iter_mut().enumerate() {
        let sets: Vec<Itemset> = announced[i].iter().cloned().collect();
        let (counts, work) = site.count(&sets);
        ctx.charge(i, work);
        for (s, &c) in sets.iter().zip(&counts) {
            site.table.record(s, i, c)?;
        }
        out.extend(broadcast(i, n, sets.into_iter().zip(counts).collect()));
    }
    let inbox = ctx.exchange(out)?;

    // Fill in counts for itemsets the receiver did not announce itself.
    ctx.next_stage();
    ctx.set_stage_name(format!("round {round}: reply"));
    let mut out = Vec::new();
    for env in inbox {
        let (i, j) = (env.from, env.to);
        let site = &mut sites[j];
        for (s, c) in &env.payload.entries {
            site.table.record(s, i, *c)?;
        }
        let wanted: Vec<Itemset> = env
            .payload
            .entries
            .into_iter()
            .map(|(s, _)| s)
            .filter(|s| !announced[j].contains(s))
            .collect();
        if wanted.is_empty() {
            continue;
        }
        let (counts, work) = site.count(&wanted);
        ctx.charge(j, work);
        out.push(Envelope {
            from: j,
            to: i,
            payload: ItemsetMessage::new(j, wanted.into_iter().zip(counts).collect()),
        });
    }
    for env in ctx.exchange(out)? {
        for (s, c) in &env.payload.entries {
            sites[env.to].table.record(s, env.from, *c)?;
        }
    }

    // Decide, then request supports of implied subsets.
    ctx.next_stage();
    ctx.set_stage_name(format!("round {round}: fill request"));
    let mut failed_now = vec![Vec::new(); n];
    let mut out = Vec::new();
    for (i, site) in sites.iter_mut().enumerate() {
        let mut fill = BTreeSet::new();
        for s in &announced[i] {
            let g = site
                .table
                .global(s)
                .ok_or_else(|| Error::Inconsistent(format!("site {i} lacks counts for {s:?}")))?;
            if g < threshold {
                site.failed.insert(s.clone());
                failed_now[i].push(s.clone());
                continue;
            }
            site.frequent.insert(s.clone(), Some(g));
            let responsible = !announced[..i].iter().any(|a| a.contains(s));
            for sub in s.proper_subsets() {
                let known = site.table.global(&sub);
                let slot = site.frequent.entry(sub.clone()).or_insert(None);
                if slot.is_none() {
                    *slot = known;
                    if known.is_none() && responsible {
                        fill.insert(sub);
                    }
                }
            }
        }
        let sets: Vec<Itemset> = fill.into_iter().collect();
        let (counts, work) = site.count(&sets);
        ctx.charge(i, work);
        for (s, &c) in sets.iter().zip(&counts) {
            site.table.record(s, i, c)?;
            // Complete already when this is the only site.
            if let Some(g) = site.table.global(s) {
                site.frequent.insert(s.clone(), Some(g));
            }
        }
        out.extend(broadcast(i, n, sets.into_iter().map(|s| (s, 0)).collect()));
    }
    let inbox = ctx.exchange(out)?;

    ctx.next_stage();
    ctx.set_stage_name(format!("round {round}: fill reply"));
    let mut out = Vec::new();
    for env in inbox {
        let sets: Vec<Itemset> = env.payload.entries.into_iter().map(|(s, _)| s).collect();
        let (counts, work) = sites[env.to].count(&sets);
        ctx.charge(env.to, work);
        out.push(Envelope {
            from: env.to,
            to: env.from,
            payload: ItemsetMessage::new(env.to, sets.into_iter().zip(counts).collect()),
        });
    }
    for env in ctx.exchange(out)? {
        let site = &mut sites[env.to];
        for (s, c) in &env.payload.entries {
            site.table.record(s, env.from, *c)?;
            if let Some(g) = site.table.global(s) {
                site.frequent.insert(s.clone(), Some(g));
            }
        }
    }

    for (site, failed) in sites.iter_mut().zip(failed_now) {
        let next: BTreeSet<Itemset> = failed
            .iter()
            .flat_map(Itemset::immediate_subsets)
            .filter(|s| !site.decided(s))
            .collect();
        site.pending = next;
    }
    Ok(())
}

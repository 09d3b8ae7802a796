use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use crate::datagen::{Item, TransactionDB};
use crate::error::{Error, Result};
use crate::gridsim::{Envelope, Session, Work};

use super::{
    candidate_gen, check_inputs, count_support, Itemset, ItemsetMessage, Levels, MiningParams, MiningResult,
    SupportTable,
};

fn count_all(dbs: &[TransactionDB], candidates: &[Itemset]) -> (Vec<Vec<u64>>, Vec<Work>) {
    dbs.iter()
        .map(|db| {
            let start = Instant::now();
            let counts = count_support(db, candidates);
            (
                counts,
                Work::new((candidates.len() * db.len()) as f64, start.elapsed()),
            )
        })
        .unzip()
}

/// Level-wise distributed Apriori. Candidates of each size come from the
/// globally frequent itemsets one size below. In the round for that size
/// every site broadcasts its locally frequent candidates with their counts,
/// then sends its counts for the rest of the broadcast union.
///
/// One round is used per size whose union of locally frequent candidates is
/// nonempty; the plan is a counting stage plus two stages per round.
pub fn fdm_run(site_dbs: &[TransactionDB], params: &MiningParams, net: &mut Session) -> Result<MiningResult> {
    check_inputs(site_dbs, params, net.n_sites())?;
    let n = site_dbs.len();
    let thresholds: Vec<u64> = site_dbs.iter().map(|db| params.threshold(db.len())).collect();
    let global_threshold = params.threshold(site_dbs.iter().map(TransactionDB::len).sum());
    let before = (net.rounds(), net.log().messages, net.log().bytes);

    let n_items = site_dbs.iter().map(|db| db.n_items).max().unwrap_or(0);
    let mut candidates: Vec<Itemset> = (0..n_items as Item).map(Itemset::singleton).collect();
    let (mut counts, work) = count_all(site_dbs, &candidates);
    net.local_stage("count level 1", &work)?;
    let mut pending_work: Option<Vec<Work>> = None;

    let mut frequent = Levels::new();
    for level in 1..=params.k {
        let local_frequent: Vec<Vec<(Itemset, u64)>> = (0..n)
            .map(|i| {
                candidates
                    .iter()
                    .zip(&counts[i])
                    .filter(|&(_, &c)| c >= thresholds[i])
                    .map(|(s, &c)| (s.clone(), c))
                    .collect()
            })
            .collect();
        if local_frequent.iter().all(Vec::is_empty) {
            break;
        }
        let index: BTreeMap<&Itemset, usize> = candidates.iter().enumerate().map(|(p, s)| (s, p)).collect();

        let level_frequent = net.round(|ctx| {
            ctx.set_stage_name(format!("level {level}: broadcast"));
            for (i, w) in pending_work.take().into_iter().flatten().enumerate() {
                ctx.charge(i, w);
            }
            let mut out = Vec::new();
            for (i, lf) in local_frequent.iter().enumerate() {
                if lf.is_empty() {
                    continue;
                }
                for j in (0..n).filter(|&j| j != i) {
                    out.push(Envelope {
                        from: i,
                        to: j,
                        payload: ItemsetMessage::new(i, lf.clone()),
                    });
                }
            }
            let inbox = ctx.exchange(out)?;

            let mut tables: Vec<SupportTable> = (0..n).map(|_| SupportTable::new(n)).collect();
            let mut unions: Vec<BTreeSet<Itemset>> = vec![BTreeSet::new(); n];
            for (i, lf) in local_frequent.iter().enumerate() {
                for (s, c) in lf {
                    tables[i].record(s, i, *c)?;
                    unions[i].insert(s.clone());
                }
            }
            for env in inbox {
                for (s, c) in env.payload.entries {
                    tables[env.to].record(&s, env.from, c)?;
                    unions[env.to].insert(s);
                }
            }

            ctx.next_stage();
            ctx.set_stage_name(format!("level {level}: poll"));
            let mut out = Vec::new();
            for j in 0..n {
                let rest: Vec<(Itemset, u64)> = unions[j]
                    .iter()
                    .filter(|s| counts[j][index[s]] < thresholds[j])
                    .map(|s| (s.clone(), counts[j][index[s]]))
                    .collect();
                for (s, c) in &rest {
                    tables[j].record(s, j, *c)?;
                }
                if rest.is_empty() {
                    continue;
                }
                for i in (0..n).filter(|&i| i != j) {
                    out.push(Envelope {
                        from: j,
                        to: i,
                        payload: ItemsetMessage::new(j, rest.clone()),
                    });
                }
            }
            for env in ctx.exchange(out)? {
                for (s, c) in env.payload.entries {
                    tables[env.to].record(&s, env.from, c)?;
                }
            }

            let mut agreed: Option<BTreeMap<Itemset, u64>> = None;
            for (i, (table, union)) in tables.iter().zip(&unions).enumerate() {
                let mut level_frequent = BTreeMap::new();
                for s in union {
                    let g = table
                        .global(s)
                        .ok_or_else(|| Error::Inconsistent(format!("site {i} lacks counts for {s:?}")))?;
                    if g >= global_threshold {
                        level_frequent.insert(s.clone(), g);
                    }
                }
                match &agreed {
                    Some(a) if *a != level_frequent => {
                        return Err(Error::Inconsistent(format!("sites disagree on level {level}")))
                    }
                    _ => agreed = Some(level_frequent),
                }
            }
            Ok(agreed.unwrap_or_default())
        })?;

        if level_frequent.is_empty() {
            break;
        }
        candidates = if level < params.k {
            candidate_gen(level_frequent.keys())?.into_iter().collect()
        } else {
            Vec::new()
        };
        frequent.insert(level, level_frequent);
        if candidates.is_empty() {
            break;
        }
        let (c, w) = count_all(site_dbs, &candidates);
        counts = c;
        pending_work = Some(w);
    }

    Ok(MiningResult {
        frequent,
        rounds: net.rounds() - before.0,
        messages: net.log().messages - before.1,
        bytes: net.log().bytes - before.2,
    })
}

//! Global aggregation of sub-clusters: threshold-bounded Ward merging
//! followed by border perturbation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    fold_stats, merge_stats, remove_stats, sq_dist, stats_lookup, ward_unchecked, ClusterStats,
    GlobalCluster, GlobalLabeling, SubClusterId, SubClusterStats,
};
use crate::error::{Error, Result};

/// Upper bound on the Ward increment of a merge.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MergeThreshold {
    Fixed(f64),
    Rule(ThresholdRule),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRule {
    /// Twice the largest variance among the input sub-clusters.
    Auto,
}

impl MergeThreshold {
    pub const AUTO: MergeThreshold = MergeThreshold::Rule(ThresholdRule::Auto);

    pub fn resolve(&self, subs: &[SubClusterStats]) -> f64 {
        match *self {
            MergeThreshold::Fixed(t) => t,
            MergeThreshold::Rule(ThresholdRule::Auto) => {
                2.0 * subs.iter().map(|s| s.stats.variance).fold(0.0, f64::max)
            }
        }
    }
}

/// How the border budget is split between global clusters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuotaBasis {
    /// Proportional to the number of member sub-clusters.
    #[default]
    Members,
    /// Proportional to the number of points.
    Points,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregationParams {
    pub threshold: MergeThreshold,
    /// Total number of border candidates `b` examined per pass.
    pub border: usize,
    pub passes: usize,
    /// A member whose second-nearest global center is within this factor of
    /// its nearest one is also a candidate. Disabled when `<= 1`.
    pub multi_attributed_factor: f64,
    #[serde(default)]
    pub quota_basis: QuotaBasis,
}

impl Default for AggregationParams {
    fn default() -> Self {
        AggregationParams {
            threshold: MergeThreshold::AUTO,
            border: 8,
            passes: 1,
            multi_attributed_factor: 1.1,
            quota_basis: QuotaBasis::Members,
        }
    }
}

impl AggregationParams {
    pub fn validate(&self) -> Result<()> {
        if let MergeThreshold::Fixed(t) = self.threshold {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::validation(format!(
                    "merge threshold must be positive, got {t}"
                )));
            }
        }
        if self.passes == 0 {
            return Err(Error::validation("perturbation passes must be >= 1"));
        }
        if self.multi_attributed_factor.is_nan() {
            return Err(Error::validation("multi-attributed factor is NaN"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeStep {
    pub left: SubClusterId,
    pub right: SubClusterId,
    pub increment: f64,
    pub total_variance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Move {
    pub sub_cluster: SubClusterId,
    pub from: usize,
    pub to: usize,
    /// Variance sum of the two affected clusters before and after the move.
    pub pair_before: f64,
    pub pair_after: f64,
}

#[derive(Clone, Debug)]
pub struct PerturbOutcome {
    pub labeling: GlobalLabeling,
    pub moves: Vec<Move>,
}

#[derive(Clone, Debug)]
pub struct AggregationTrace {
    pub threshold: f64,
    pub merges: Vec<MergeStep>,
    /// Labeling at the end of the merging phase.
    pub merged: GlobalLabeling,
    pub perturbation: PerturbOutcome,
}

pub fn aggregate(subs: &[SubClusterStats], params: &AggregationParams) -> Result<GlobalLabeling> {
    aggregate_traced(subs, params).map(|t| t.perturbation.labeling)
}

pub fn aggregate_traced(subs: &[SubClusterStats], params: &AggregationParams) -> Result<AggregationTrace> {
    params.validate()?;
    let threshold = params.threshold.resolve(subs);
    let (merged, merges) = merge_phase(subs, threshold)?;
    let perturbation = perturb(&merged, subs, params)?;
    Ok(AggregationTrace {
        threshold,
        merges,
        merged,
        perturbation,
    })
}

struct Slot {
    members: Vec<SubClusterId>,
    agg: ClusterStats,
}

/// Nearest partner of a slot, ordered by `(increment, partner slot)`.
#[derive(Clone, Copy)]
struct Nearest {
    increment: f64,
    partner: usize,
}

fn better(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

fn nearest_of(slots: &[Option<Slot>], i: usize) -> Option<Nearest> {
    let me = slots[i].as_ref()?;
    let mut best: Option<Nearest> = None;
    for (j, other) in slots.iter().enumerate() {
        let Some(other) = other else { continue };
        if j == i {
            continue;
        }
        let inc = ward_unchecked(&me.agg, &other.agg);
        if best.is_none_or(|b| better((inc, j), (b.increment, b.partner))) {
            best = Some(Nearest {
                increment: inc,
                partner: j,
            });
        }
    }
    best
}

/// Greedy Ward merging: repeatedly merge the pair of global clusters with
/// the smallest increment while that increment is below `threshold`. Ties
/// go to the lexicographically smallest pair of labels, where the initial
/// label of a sub-cluster is its rank in `(site, index)` order and a merged
/// cluster keeps the smaller label.
pub fn merge_phase(subs: &[SubClusterStats], threshold: f64) -> Result<(GlobalLabeling, Vec<MergeStep>)> {
    if subs.is_empty() {
        return Err(Error::validation("aggregation needs at least one sub-cluster"));
    }
    stats_lookup(subs)?;
    let mut sorted: Vec<&SubClusterStats> = subs.iter().collect();
    sorted.sort_by_key(|s| s.id);

    let mut slots: Vec<Option<Slot>> = sorted
        .iter()
        .map(|s| {
            Some(Slot {
                members: vec![s.id],
                agg: s.stats.clone(),
            })
        })
        .collect();
    let mut cache: Vec<Option<Nearest>> = (0..slots.len()).map(|i| nearest_of(&slots, i)).collect();
    let mut total: f64 = sorted.iter().map(|s| s.stats.variance).sum();
    let mut merges = Vec::new();

    loop {
        // Global minimum by (increment, low label, high label).
        let mut pick: Option<(f64, usize, usize)> = None;
        for (i, nn) in cache.iter().enumerate() {
            let Some(nn) = nn else { continue };
            let (lo, hi) = (i.min(nn.partner), i.max(nn.partner));
            let cand = (nn.increment, lo, hi);
            if pick.is_none_or(|p| cand.0 < p.0 || (cand.0 == p.0 && (lo, hi) < (p.1, p.2))) {
                pick = Some(cand);
            }
        }
        let Some((increment, lo, hi)) = pick else { break };
        if increment >= threshold {
            break;
        }
        let b = slots[hi].take().expect("active slot");
        let a = slots[lo].as_mut().expect("active slot");
        let left = a.members[0];
        let right = b.members[0];
        a.agg = merge_stats(&a.agg, &b.agg)?;
        a.members.extend(b.members);
        a.members.sort();
        total += increment;
        merges.push(MergeStep {
            left,
            right,
            increment,
            total_variance: total,
        });

        cache[hi] = None;
        for k in 0..slots.len() {
            if slots[k].is_none() {
                continue;
            }
            if k == lo {
                cache[k] = nearest_of(&slots, k);
                continue;
            }
            let stale = cache[k].is_some_and(|nn| nn.partner == lo || nn.partner == hi);
            if stale {
                cache[k] = nearest_of(&slots, k);
            } else {
                let inc = ward_unchecked(&slots[k].as_ref().unwrap().agg, &slots[lo].as_ref().unwrap().agg);
                if cache[k].is_none_or(|nn| better((inc, lo), (nn.increment, nn.partner))) {
                    cache[k] = Some(Nearest {
                        increment: inc,
                        partner: lo,
                    });
                }
            }
        }
    }

    let mut clusters: Vec<Slot> = slots.into_iter().flatten().collect();
    clusters.sort_by_key(|s| s.members[0]);
    let clusters = clusters
        .into_iter()
        .enumerate()
        .map(|(label, s)| GlobalCluster {
            label,
            members: s.members,
            agg: s.agg,
        })
        .collect();
    Ok((GlobalLabeling::with_total(clusters), merges))
}

/// The `min(quota, |members| - 1)` members whose centers lie farthest from
/// the cluster's aggregate center; ties go to the smaller `(site, index)`.
pub fn find_border(
    cluster: &GlobalCluster,
    quota: usize,
    subs: &[SubClusterStats],
) -> Result<Vec<SubClusterId>> {
    let lookup = stats_lookup(subs)?;
    Ok(border_of(cluster, quota, &lookup))
}

fn by_distance_desc(
    ids: &mut [SubClusterId],
    center: &[f64],
    lookup: &BTreeMap<SubClusterId, &ClusterStats>,
) {
    ids.sort_by(|a, b| {
        let da = sq_dist(&lookup[a].center, center);
        let db = sq_dist(&lookup[b].center, center);
        db.total_cmp(&da).then(a.cmp(b))
    });
}

fn border_of(
    cluster: &GlobalCluster,
    quota: usize,
    lookup: &BTreeMap<SubClusterId, &ClusterStats>,
) -> Vec<SubClusterId> {
    if cluster.members.len() < 2 {
        return Vec::new();
    }
    let mut ids = cluster.members.clone();
    by_distance_desc(&mut ids, &cluster.agg.center, lookup);
    ids.truncate(quota.min(cluster.members.len() - 1));
    ids
}

fn nearest_other(clusters: &[GlobalCluster], own: usize, point: &[f64]) -> Option<usize> {
    clusters
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != own)
        .map(|(j, c)| (j, sq_dist(point, &c.agg.center)))
        .fold(None, |best: Option<(usize, f64)>, cur| match best {
            Some(b) if b.1 <= cur.1 => Some(b),
            _ => Some(cur),
        })
        .map(|(j, _)| j)
}

/// Relocates border sub-clusters to the nearest other global cluster
/// whenever that strictly lowers the two clusters' combined variance.
pub fn perturb(
    labeling: &GlobalLabeling,
    subs: &[SubClusterStats],
    params: &AggregationParams,
) -> Result<PerturbOutcome> {
    params.validate()?;
    labeling.validate(subs)?;
    let lookup = stats_lookup(subs)?;
    let mut clusters = labeling.clusters.clone();
    let mut moves = Vec::new();
    if params.border == 0 || clusters.len() < 2 {
        return Ok(PerturbOutcome {
            labeling: labeling.clone(),
            moves,
        });
    }
    let total_members: usize = clusters.iter().map(|c| c.members.len()).sum();
    let total_points: u64 = clusters.iter().map(|c| c.agg.size).sum();

    for _ in 0..params.passes {
        for ci in 0..clusters.len() {
            let share = match params.quota_basis {
                QuotaBasis::Members => clusters[ci].members.len() as f64 / total_members as f64,
                QuotaBasis::Points => clusters[ci].agg.size as f64 / total_points as f64,
            };
            let quota = ((params.border as f64 * share).round() as usize).max(1);
            let mut candidates = border_of(&clusters[ci], quota, &lookup);
            if params.multi_attributed_factor > 1.0 {
                for m in &clusters[ci].members {
                    if candidates.contains(m) {
                        continue;
                    }
                    let mut d: Vec<f64> = clusters
                        .iter()
                        .map(|c| sq_dist(&lookup[m].center, &c.agg.center).sqrt())
                        .collect();
                    d.sort_by(f64::total_cmp);
                    if d[1] <= params.multi_attributed_factor * d[0] {
                        candidates.push(*m);
                    }
                }
                let center = clusters[ci].agg.center.clone();
                by_distance_desc(&mut candidates, &center, &lookup);
            }

            for x in candidates {
                if clusters[ci].members.len() < 2 {
                    break;
                }
                let xs = lookup[&x];
                let Some(cj) = nearest_other(&clusters, ci, &xs.center) else {
                    break;
                };
                let rest = remove_stats(&clusters[ci].agg, xs)?;
                let joined = merge_stats(&clusters[cj].agg, xs)?;
                let pair_before = clusters[ci].agg.variance + clusters[cj].agg.variance;
                let pair_after = rest.variance + joined.variance;
                if pair_after < pair_before {
                    clusters[ci].members.retain(|m| *m != x);
                    let pos = clusters[cj].members.partition_point(|m| *m < x);
                    clusters[cj].members.insert(pos, x);
                    // Refold so the stored aggregates carry no subtraction error.
                    for c in [ci, cj] {
                        clusters[c].agg = fold_stats(clusters[c].members.iter().map(|m| lookup[m]))?;
                    }
                    moves.push(Move {
                        sub_cluster: x,
                        from: clusters[ci].label,
                        to: clusters[cj].label,
                        pair_before,
                        pair_after,
                    });
                }
            }
        }
    }
    Ok(PerturbOutcome {
        labeling: GlobalLabeling::with_total(clusters),
        moves,
    })
}

//! Variance-based distributed clustering.
//!
//! A sub-cluster is summarized by its size `N`, center `c` and variance
//! `var`, where `var` is the un-normalized sum of squared Euclidean
//! deviations (SSE) of its points from `c`. With that convention two
//! summaries merge exactly:
//!
//! ```text
//! N = Na + Nb
//! c = (Na / N) ca + (Nb / N) cb
//! var = var_a + var_b + Na Nb / (Na + Nb) * |ca - cb|²
//! ```
//!
//! so the aggregation site never needs the points themselves.

mod aggregate;
mod kmeans;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use aggregate::{
    aggregate, aggregate_traced, find_border, merge_phase, perturb, AggregationParams, AggregationTrace,
    MergeStep, MergeThreshold, Move, PerturbOutcome, QuotaBasis,
};
pub use kmeans::{local_cluster, local_cluster_detailed, KMeansConfig, LocalClustering};

/// Slack below zero tolerated when subtracting variances, relative to the
/// variance of the whole.
const REMOVE_SLACK: f64 = 1e-9;

/// `cluster_{site,index}`: identifies a sub-cluster across the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SubClusterId {
    pub site: u32,
    pub index: u32,
}

impl SubClusterId {
    pub fn new(site: u32, index: u32) -> Self {
        SubClusterId { site, index }
    }
}

/// Sufficient statistics of a set of points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub size: u64,
    pub center: Vec<f64>,
    pub variance: f64,
}

impl ClusterStats {
    pub fn new(size: u64, center: Vec<f64>, variance: f64) -> Result<Self> {
        let s = ClusterStats {
            size,
            center,
            variance,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn singleton(point: &[f64]) -> Self {
        ClusterStats {
            size: 1,
            center: point.to_vec(),
            variance: 0.0,
        }
    }

    /// Exact statistics of a nonempty point set (two-pass: mean, then SSE).
    pub fn from_points<P: AsRef<[f64]>>(points: &[P]) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::validation("cannot summarize an empty point set"))?;
        let dims = first.as_ref().len();
        let mut center = vec![0.0; dims];
        for p in points {
            let p = p.as_ref();
            if p.len() != dims {
                return Err(Error::validation("points of mixed dimension"));
            }
            for (c, x) in center.iter_mut().zip(p) {
                *c += x;
            }
        }
        let n = points.len() as f64;
        center.iter_mut().for_each(|c| *c /= n);
        let variance = points.iter().map(|p| sq_dist(p.as_ref(), &center)).sum();
        Ok(ClusterStats {
            size: points.len() as u64,
            center,
            variance,
        })
    }

    pub fn dims(&self) -> usize {
        self.center.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::validation("sub-cluster size must be >= 1"));
        }
        if !(self.variance >= 0.0 && self.variance.is_finite()) {
            return Err(Error::validation(format!(
                "variance must be finite and nonnegative, got {}",
                self.variance
            )));
        }
        if self.size == 1 && self.variance != 0.0 {
            return Err(Error::validation("a singleton must have zero variance"));
        }
        if self.center.iter().any(|x| !x.is_finite()) {
            return Err(Error::validation("non-finite center coordinate"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubClusterStats {
    pub id: SubClusterId,
    #[serde(flatten)]
    pub stats: ClusterStats,
}

impl SubClusterStats {
    pub fn new(site: u32, index: u32, stats: ClusterStats) -> Self {
        SubClusterStats {
            id: SubClusterId { site, index },
            stats,
        }
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_dims(a: &ClusterStats, b: &ClusterStats) -> Result<()> {
    if a.dims() == b.dims() {
        Ok(())
    } else {
        Err(Error::validation(format!(
            "dimension mismatch: {} vs {}",
            a.dims(),
            b.dims()
        )))
    }
}

/// Increase in SSE caused by merging `a` and `b`:
/// `Na Nb / (Na + Nb) * |ca - cb|²` (squared Euclidean distance).
pub fn ward_increment(a: &ClusterStats, b: &ClusterStats) -> Result<f64> {
    check_dims(a, b)?;
    Ok(ward_unchecked(a, b))
}

fn ward_unchecked(a: &ClusterStats, b: &ClusterStats) -> f64 {
    let na = a.size as f64;
    let nb = b.size as f64;
    na * nb / (na + nb) * sq_dist(&a.center, &b.center)
}

pub fn merge_stats(a: &ClusterStats, b: &ClusterStats) -> Result<ClusterStats> {
    check_dims(a, b)?;
    let size = a.size + b.size;
    let n = size as f64;
    let wa = a.size as f64 / n;
    let wb = b.size as f64 / n;
    let center = a
        .center
        .iter()
        .zip(&b.center)
        .map(|(x, y)| wa * x + wb * y)
        .collect();
    Ok(ClusterStats {
        size,
        center,
        variance: a.variance + b.variance + ward_unchecked(a, b),
    })
}

/// Inverse of [`merge_stats`]: the statistics of `whole` with `part` taken
/// out.
pub fn remove_stats(whole: &ClusterStats, part: &ClusterStats) -> Result<ClusterStats> {
    check_dims(whole, part)?;
    if part.size >= whole.size {
        return Err(Error::validation(format!(
            "cannot remove {} points from a cluster of {}",
            part.size, whole.size
        )));
    }
    let size = whole.size - part.size;
    let nw = whole.size as f64;
    let np = part.size as f64;
    let nr = size as f64;
    let center: Vec<f64> = whole
        .center
        .iter()
        .zip(&part.center)
        .map(|(w, p)| (nw * w - np * p) / nr)
        .collect();
    let rest = ClusterStats {
        size,
        center,
        variance: 0.0,
    };
    let mut variance = whole.variance - part.variance - ward_unchecked(part, &rest);
    if variance < 0.0 {
        if variance >= -REMOVE_SLACK * whole.variance.max(1.0) {
            variance = 0.0;
        } else {
            return Err(Error::Inconsistent(format!(
                "removal leaves negative variance {variance}; part was not folded into whole"
            )));
        }
    }
    if size == 1 {
        variance = 0.0;
    }
    Ok(ClusterStats { variance, ..rest })
}

/// Left fold of [`merge_stats`] over `parts`.
pub fn fold_stats<'a, I>(parts: I) -> Result<ClusterStats>
where
    I: IntoIterator<Item = &'a ClusterStats>,
{
    let mut it = parts.into_iter();
    let first = it
        .next()
        .ok_or_else(|| Error::validation("cannot fold an empty set of statistics"))?;
    it.try_fold(first.clone(), |acc, s| merge_stats(&acc, s))
}

/// Bytes site `i` ships to the aggregation site: per sub-cluster, `dims`
/// center coordinates plus size and variance as 8-byte values, and an 8-byte
/// id (4-byte site, 4-byte index).
pub fn clustering_payload_bytes(n_stats: usize, dims: usize) -> u64 {
    const ID_BYTES: u64 = 8;
    let n = n_stats as u64;
    n * (dims as u64 + 2) * 8 + n * ID_BYTES
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalCluster {
    pub label: usize,
    pub members: Vec<SubClusterId>,
    #[serde(flatten)]
    pub agg: ClusterStats,
}

/// Assignment of every sub-cluster to a global cluster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalLabeling {
    pub clusters: Vec<GlobalCluster>,
    pub total_variance: f64,
}

impl GlobalLabeling {
    /// Builds a labeling from explicit groups of sub-cluster ids; group `g`
    /// gets label `g`.
    pub fn from_groups(subs: &[SubClusterStats], groups: &[Vec<SubClusterId>]) -> Result<Self> {
        let lookup = stats_lookup(subs)?;
        let clusters = groups
            .iter()
            .enumerate()
            .map(|(label, members)| {
                let mut members = members.clone();
                members.sort();
                let agg = fold_stats(
                    members
                        .iter()
                        .map(|id| lookup_stats(&lookup, id))
                        .collect::<Result<Vec<_>>>()?,
                )?;
                Ok(GlobalCluster { label, members, agg })
            })
            .collect::<Result<Vec<_>>>()?;
        let labeling = GlobalLabeling::with_total(clusters);
        labeling.validate(subs)?;
        Ok(labeling)
    }

    pub(crate) fn with_total(clusters: Vec<GlobalCluster>) -> Self {
        let total_variance = clusters.iter().map(|c| c.agg.variance).sum();
        GlobalLabeling {
            clusters,
            total_variance,
        }
    }

    pub fn k(&self) -> usize {
        self.clusters.len()
    }

    pub fn label_of(&self, id: SubClusterId) -> Option<usize> {
        self.clusters
            .iter()
            .find(|c| c.members.contains(&id))
            .map(|c| c.label)
    }

    pub fn assignment(&self) -> std::collections::BTreeMap<SubClusterId, usize> {
        self.clusters
            .iter()
            .flat_map(|c| c.members.iter().map(move |&m| (m, c.label)))
            .collect()
    }

    /// Checks that the labeling partitions `subs` and that every aggregate
    /// and the total agree with a fresh fold of the members.
    pub fn validate(&self, subs: &[SubClusterStats]) -> Result<()> {
        let lookup = stats_lookup(subs)?;
        let mut seen = std::collections::BTreeSet::new();
        let mut total = 0.0;
        for c in &self.clusters {
            if c.members.is_empty() {
                return Err(Error::validation(format!("cluster {} has no members", c.label)));
            }
            for m in &c.members {
                if !lookup.contains_key(m) {
                    return Err(Error::validation(format!("unknown sub-cluster {m:?}")));
                }
                if !seen.insert(*m) {
                    return Err(Error::validation(format!("sub-cluster {m:?} labeled twice")));
                }
            }
            let fresh = fold_stats(c.members.iter().map(|m| lookup[m]))?;
            if fresh.size != c.agg.size
                || !rel_close(fresh.variance, c.agg.variance, 1e-9)
                || fresh
                    .center
                    .iter()
                    .zip(&c.agg.center)
                    .any(|(a, b)| !rel_close(*a, *b, 1e-9))
            {
                return Err(Error::Inconsistent(format!(
                    "aggregate of cluster {} disagrees with its members",
                    c.label
                )));
            }
            total += c.agg.variance;
        }
        if seen.len() != lookup.len() {
            return Err(Error::validation("some sub-clusters are unlabeled"));
        }
        if !rel_close(total, self.total_variance, 1e-9) {
            return Err(Error::Inconsistent(
                "total_variance is not the sum of aggregates".into(),
            ));
        }
        Ok(())
    }
}

/// `|a - b| <= tol * max(|a|, |b|, 1)`.
pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

pub(crate) fn stats_lookup(
    subs: &[SubClusterStats],
) -> Result<std::collections::BTreeMap<SubClusterId, &ClusterStats>> {
    let mut map = std::collections::BTreeMap::new();
    let dims = subs.first().map(|s| s.stats.dims());
    for s in subs {
        s.stats.validate()?;
        if Some(s.stats.dims()) != dims {
            return Err(Error::validation("sub-clusters of mixed dimension"));
        }
        if map.insert(s.id, &s.stats).is_some() {
            return Err(Error::validation(format!("duplicate sub-cluster id {:?}", s.id)));
        }
    }
    Ok(map)
}

fn lookup_stats<'a>(
    lookup: &std::collections::BTreeMap<SubClusterId, &'a ClusterStats>,
    id: &SubClusterId,
) -> Result<&'a ClusterStats> {
    lookup
        .get(id)
        .copied()
        .ok_or_else(|| Error::validation(format!("unknown sub-cluster {id:?}")))
}

// ---------------------------------------------------------------------------
// Interchange files

/// CSV with header `site,index,size,center_0..center_{d-1},variance`.
pub fn format_stats_csv(stats: &[SubClusterStats]) -> String {
    let dims = stats.first().map_or(0, |s| s.stats.dims());
    let mut out = String::from("site,index,size");
    for d in 0..dims {
        write!(out, ",center_{d}").unwrap();
    }
    out.push_str(",variance\n");
    for s in stats {
        write!(out, "{},{},{}", s.id.site, s.id.index, s.stats.size).unwrap();
        for x in &s.stats.center {
            write!(out, ",{x}").unwrap();
        }
        writeln!(out, ",{}", s.stats.variance).unwrap();
    }
    out
}

pub fn parse_stats_csv(text: &str, path: &Path) -> Result<Vec<SubClusterStats>> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.into(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing header".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 4 || cols[..3] != ["site", "index", "size"] || cols.last() != Some(&"variance") {
        return Err(parse_err(1, format!("unexpected header {header:?}")));
    }
    let dims = cols.len() - 4;
    let mut out = Vec::new();
    for (n, line) in lines {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != cols.len() {
            return Err(parse_err(n + 1, format!("expected {} fields", cols.len())));
        }
        let int = |s: &str| s.parse::<u64>().map_err(|e| parse_err(n + 1, e.to_string()));
        let float = |s: &str| s.parse::<f64>().map_err(|e| parse_err(n + 1, e.to_string()));
        let center = f[3..3 + dims]
            .iter()
            .map(|s| float(s))
            .collect::<Result<Vec<_>>>()?;
        let stats = ClusterStats::new(int(f[2])?, center, float(f[3 + dims])?)?;
        out.push(SubClusterStats::new(int(f[0])? as u32, int(f[1])? as u32, stats));
    }
    Ok(out)
}

pub fn write_stats_csv(path: &Path, stats: &[SubClusterStats]) -> Result<()> {
    fs::write(path, format_stats_csv(stats)).map_err(|e| Error::io(path, e))
}

pub fn read_stats_csv(path: &Path) -> Result<Vec<SubClusterStats>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_stats_csv(&text, path)
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn points(dims: usize, max: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-50.0f64..50.0, dims), 1..max)
    }

    fn pair() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        (1usize..=8).prop_flat_map(|d| (points(d, 60), points(d, 60)))
    }

    proptest! {
        #[test]
        fn merge_is_exact_and_symmetric((a_pts, b_pts) in pair()) {
            let a = ClusterStats::from_points(&a_pts).unwrap();
            let b = ClusterStats::from_points(&b_pts).unwrap();
            let pooled: Vec<_> = a_pts.iter().chain(&b_pts).cloned().collect();
            let truth = ClusterStats::from_points(&pooled).unwrap();
            let ab = merge_stats(&a, &b).unwrap();
            let ba = merge_stats(&b, &a).unwrap();
            prop_assert!(rel_close(ab.variance, truth.variance, 1e-9));
            prop_assert_eq!(ab.size, truth.size);
            prop_assert_eq!(&ab, &ba);
            let back = remove_stats(&ab, &b).unwrap();
            prop_assert_eq!(back.size, a.size);
            prop_assert!(rel_close(back.variance, a.variance, 1e-9));
            for (x, y) in back.center.iter().zip(&a.center) {
                prop_assert!(rel_close(*x, *y, 1e-9));
            }
            prop_assert!(ward_increment(&a, &b).unwrap() >= 0.0);
        }

        #[test]
        fn fold_order_is_nearly_irrelevant(sets in (1usize..=4).prop_flat_map(|d| prop::collection::vec(points(d, 20), 2..6))) {
            let stats: Vec<_> = sets.iter().map(|s| ClusterStats::from_points(s).unwrap()).collect();
            let fwd = fold_stats(&stats).unwrap();
            let rev = fold_stats(stats.iter().rev()).unwrap();
            prop_assert_eq!(fwd.size, rev.size);
            prop_assert!(rel_close(fwd.variance, rev.variance, 1e-9));
            for (x, y) in fwd.center.iter().zip(&rev.center) {
                prop_assert!(rel_close(*x, *y, 1e-9));
            }
        }
    }
}

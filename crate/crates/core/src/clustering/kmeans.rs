use rand::Rng;

use super::{sq_dist, ClusterStats, SubClusterStats};
use crate::datagen::{seeded_rng, PointSet};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KMeansConfig {
    pub max_iterations: usize,
    /// Stop once no center moves by more than `tolerance` times the scale of
    /// the centers (`max(1, largest center norm)`).
    pub tolerance: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            max_iterations: 100,
            tolerance: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LocalClustering {
    pub stats: Vec<SubClusterStats>,
    /// Sub-cluster index of every input point.
    pub assignment: Vec<usize>,
    pub iterations: usize,
}

/// Lloyd's k-means with seeded k-means++ seeding; returns the exact
/// statistics of the `k` resulting sub-clusters of `site`.
pub fn local_cluster(points: &PointSet, k: usize, seed: u64, site: u32) -> Result<Vec<SubClusterStats>> {
    local_cluster_detailed(points, k, seed, site, KMeansConfig::default()).map(|lc| lc.stats)
}

pub fn local_cluster_detailed(
    points: &PointSet,
    k: usize,
    seed: u64,
    site: u32,
    config: KMeansConfig,
) -> Result<LocalClustering> {
    let n = points.len();
    if n == 0 {
        return Err(Error::validation("cannot cluster an empty point set"));
    }
    if k == 0 || k > n {
        return Err(Error::validation(format!(
            "k_i = {k} must lie in 1..={n} (number of points)"
        )));
    }
    let pts = &points.points;
    let mut centers = seed_centers(pts, k, seed);
    let mut assignment = vec![0usize; n];
    let mut iterations = 0;

    for iter in 1..=config.max_iterations {
        iterations = iter;
        assign(pts, &centers, &mut assignment);
        fill_empty(pts, &mut centers, &mut assignment, k);
        let updated = means(pts, &assignment, k, points.dims);
        let scale = updated
            .iter()
            .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(1.0, f64::max);
        let shift = updated
            .iter()
            .zip(&centers)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centers = updated;
        if shift <= config.tolerance * scale {
            break;
        }
    }
    assign(pts, &centers, &mut assignment);
    fill_empty(pts, &mut centers, &mut assignment, k);

    let mut members: Vec<Vec<&[f64]>> = vec![Vec::new(); k];
    for (p, &c) in pts.iter().zip(&assignment) {
        members[c].push(p);
    }
    let stats = members
        .iter()
        .enumerate()
        .map(|(index, m)| {
            Ok(SubClusterStats::new(
                site,
                index as u32,
                ClusterStats::from_points(m)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LocalClustering {
        stats,
        assignment,
        iterations,
    })
}

/// k-means++: first center uniform, then proportional to squared distance
/// from the nearest chosen center.
fn seed_centers(pts: &[Vec<f64>], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seeded_rng(seed);
    let n = pts.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centers = vec![pts[first].clone()];
    let mut d2: Vec<f64> = pts.iter().map(|p| sq_dist(p, &pts[first])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 {
                    acc += d;
                    pick = Some(i);
                    if acc > target {
                        break;
                    }
                }
            }
            pick.expect("positive total implies a positive weight")
        } else {
            // Every remaining point duplicates a center.
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[next] = true;
        for (d, p) in d2.iter_mut().zip(pts) {
            *d = d.min(sq_dist(p, &pts[next]));
        }
        centers.push(pts[next].clone());
    }
    centers
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centers.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

fn assign(pts: &[Vec<f64>], centers: &[Vec<f64>], assignment: &mut [usize]) {
    for (a, p) in assignment.iter_mut().zip(pts) {
        *a = nearest(p, centers);
    }
}

/// Reseeds each empty cluster with the point farthest from its current
/// center, taken from a cluster that keeps at least one point.
fn fill_empty(pts: &[Vec<f64>], centers: &mut [Vec<f64>], assignment: &mut [usize], k: usize) {
    let mut sizes = vec![0usize; k];
    for &a in assignment.iter() {
        sizes[a] += 1;
    }
    for empty in 0..k {
        if sizes[empty] > 0 {
            continue;
        }
        let (far, _) = pts
            .iter()
            .enumerate()
            .filter(|&(i, _)| sizes[assignment[i]] > 1)
            .map(|(i, p)| (i, sq_dist(p, &centers[assignment[i]])))
            .fold((usize::MAX, f64::NEG_INFINITY), |best, cur| {
                if cur.1 > best.1 {
                    cur
                } else {
                    best
                }
            });
        sizes[assignment[far]] -= 1;
        assignment[far] = empty;
        sizes[empty] = 1;
        centers[empty] = pts[far].clone();
    }
}

fn means(pts: &[Vec<f64>], assignment: &[usize], k: usize, dims: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dims]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in pts.iter().zip(assignment) {
        counts[a] += 1;
        for (s, x) in sums[a].iter_mut().zip(p) {
            *s += x;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|x| *x /= c as f64);
    }
    sums
}

//! Fixed workloads shared by the benchmarks.

use gridmine_core::clustering::{local_cluster, ClusterStats, SubClusterStats};
use gridmine_core::datagen::{gen_gaussian_mixture, gen_transactions, MixtureComponent, MixtureSpec};
use gridmine_core::experiment::{default_transaction_spec, two_pass_instance};
use gridmine_core::gridsim::{LinkMatrix, Session};
use gridmine_core::{PartitionStrategy, PointSet, TransactionDB};

/// `components` unit-variance blobs on a line, 10 apart, in `dims`
/// dimensions.
pub fn blobs(dims: usize, components: usize, per_component: usize, seed: u64) -> PointSet {
    let spec = MixtureSpec {
        dims,
        components: (0..components)
            .map(|j| MixtureComponent {
                center: vec![10.0 * j as f64; dims],
                stddev: 1.0,
                count: per_component,
            })
            .collect(),
        seed,
    };
    gen_gaussian_mixture(&spec).expect("valid mixture")
}

/// Two summaries of `dims` dimensions.
pub fn stats_pair(dims: usize) -> (ClusterStats, ClusterStats) {
    let a = ClusterStats::new(120, vec![1.5; dims], 40.0).expect("valid stats");
    let b = ClusterStats::new(80, vec![-2.0; dims], 25.0).expect("valid stats");
    (a, b)
}

/// Sub-cluster statistics of `sites` sites with `k_i` sub-clusters each,
/// over four separated blobs.
pub fn sub_clusters(sites: usize, k_i: usize, seed: u64) -> Vec<SubClusterStats> {
    let points = blobs(2, 4, 1000, seed);
    points
        .partition(sites, PartitionStrategy::RoundRobin)
        .expect("enough points")
        .iter()
        .enumerate()
        .flat_map(|(i, part)| local_cluster(part, k_i, seed + i as u64, i as u32).expect("k-means runs"))
        .collect()
}

/// Default generated baskets over `sites` sites.
pub fn transactions(sites: usize, n_transactions: usize, seed: u64) -> Vec<TransactionDB> {
    let mut spec = default_transaction_spec(seed);
    spec.n_transactions = n_transactions;
    gen_transactions(&spec)
        .expect("valid spec")
        .partition(sites, PartitionStrategy::RoundRobin)
        .expect("enough transactions")
}

/// The fixed four-site instance on which GFM needs two rounds.
pub fn two_pass() -> Vec<TransactionDB> {
    two_pass_instance()
}

pub fn session(sites: usize) -> Session {
    Session::new(sites, LinkMatrix::table2()).expect("valid session")
}

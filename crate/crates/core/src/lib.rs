//! Grid-oriented distributed data mining.
//!
//! Two distributed algorithms that keep cross-site traffic to a minimum:
//!
//! * [`clustering`]: sites run k-means locally and ship only the
//!   `(size, center, variance)` statistics of their sub-clusters; one
//!   aggregation site merges sub-clusters by increasing Ward variance and
//!   then relocates border sub-clusters when that lowers total variance.
//! * [`itemsets`]: sites mine locally frequent itemsets without any global
//!   pruning and reconcile global frequency top-down in as few
//!   synchronization rounds as possible (GFM), next to the level-wise FDM
//!   baseline.
//!
//! Communication happens only through a [`gridsim::Session`], which counts
//! rounds, messages and bytes and times them on a bandwidth/latency
//! [`gridsim::LinkMatrix`]. The [`estimator`] module turns stage plans into
//! ideal makespans and compares them with measured times.

pub mod clustering;
pub mod datagen;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod gridsim;
pub mod itemsets;

pub use clustering::{
    AggregationParams, ClusterStats, GlobalCluster, GlobalLabeling, SubClusterId, SubClusterStats,
};
pub use datagen::{MixtureSpec, PartitionStrategy, PointSet, TransactionDB, TransactionSpec};
pub use error::{Error, Result};
pub use estimator::{OverheadReport, TimeUnit, TimeValue};
pub use gridsim::{AccountingLog, LinkMatrix, Session, StagePlan};
pub use itemsets::{Itemset, MiningParams, MiningResult};

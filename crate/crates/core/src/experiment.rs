//! Reproducible experiment runs: configuration, execution and reports.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::clustering::{
    aggregate_traced, clustering_payload_bytes, local_cluster_detailed, AggregationParams, KMeansConfig,
    SubClusterId, SubClusterStats,
};
use crate::datagen::{
    gen_gaussian_mixture_labeled, gen_transactions, partition_indices, read_points, read_transactions, Item,
    MixtureComponent, MixtureSpec, PartitionStrategy, Pattern, PointSet, TransactionDB, TransactionSpec,
};
use crate::error::{Error, Result};
use crate::estimator::{estimate_clustering, overhead, OverheadReport, TimeUnit, TimeValue};
use crate::gridsim::{AccountingLog, Envelope, LinkMatrix, Payload, Session, TimingMode, Work};
use crate::itemsets::{centralized, fdm_run, gfm_run, MiningParams, MiningResult};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Site that receives every sub-cluster summary.
pub const AGGREGATION_SITE: usize = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Cluster,
    Mine,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[default]
    Gfm,
    Fdm,
    /// GFM and FDM on the same data; their results must agree.
    Both,
    Centralized,
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gfm" => Ok(Algorithm::Gfm),
            "fdm" => Ok(Algorithm::Fdm),
            "both" => Ok(Algorithm::Both),
            "centralized" => Ok(Algorithm::Centralized),
            _ => Err(Error::validation(format!(
                "unknown algorithm {s:?} (expected gfm, fdm, both or centralized)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DataSource {
    /// Generated transactions, partitioned over the sites.
    Transactions(TransactionSpec),
    /// Generated Gaussian mixture, partitioned over the sites.
    Mixture(MixtureSpec),
    /// One transaction file per site.
    TransactionFiles {
        paths: Vec<PathBuf>,
        #[serde(default)]
        n_items: Option<usize>,
    },
    /// One point file per site.
    PointFiles { paths: Vec<PathBuf> },
    /// Fixed 4-site instance on which GFM needs two rounds and FDM four.
    TwoPass,
}

/// Point sets per site, with the generating component of every point when
/// the data is synthetic.
pub type SitePoints = (Vec<PointSet>, Option<Vec<Vec<usize>>>);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: Task,
    #[serde(default)]
    pub algorithm: Algorithm,
    pub data: DataSource,
    pub n_sites: usize,
    #[serde(default)]
    pub partition: PartitionStrategy,
    #[serde(default = "default_mining")]
    pub mining: MiningParams,
    #[serde(default = "default_k_i")]
    pub k_i: usize,
    #[serde(default)]
    pub aggregation: AggregationParams,
    /// Path to a link-matrix JSON file, or `table2`.
    #[serde(default = "default_links")]
    pub links: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub timing: TimingMode,
    /// Real duration of the run, if known; produces an overhead report.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measured: Option<TimeValue>,
    /// Also run centralized Apriori and compare.
    #[serde(default)]
    pub verify: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

fn default_mining() -> MiningParams {
    MiningParams { minsup: 0.1, k: 4 }
}

fn default_k_i() -> usize {
    10
}

fn default_links() -> String {
    "table2".to_string()
}

/// Default transaction generator: a few overlapping patterns over 20 items.
pub fn default_transaction_spec(seed: u64) -> TransactionSpec {
    let pattern = |items: &[Item], prob| Pattern {
        itemset: items.to_vec(),
        prob,
    };
    TransactionSpec {
        n_items: 20,
        n_transactions: 800,
        patterns: vec![
            pattern(&[0, 1, 2, 3], 0.3),
            pattern(&[2, 3, 4], 0.25),
            pattern(&[5, 6, 7, 8], 0.2),
            pattern(&[9, 10], 0.35),
        ],
        noise_prob: 0.05,
        seed,
    }
}

/// Four unit-variance blobs on the corners of a 10x10 square, 5000 points
/// each.
pub fn default_mixture_spec(seed: u64) -> MixtureSpec {
    let corner = |x: f64, y: f64| MixtureComponent {
        center: vec![x, y],
        stddev: 1.0,
        count: 5000,
    };
    MixtureSpec {
        dims: 2,
        components: vec![
            corner(0.0, 0.0),
            corner(10.0, 0.0),
            corner(0.0, 10.0),
            corner(10.0, 10.0),
        ],
        seed,
    }
}

impl ExperimentConfig {
    pub fn new(task: Task) -> Self {
        let data = match task {
            Task::Mine => DataSource::Transactions(default_transaction_spec(0)),
            Task::Cluster => DataSource::Mixture(default_mixture_spec(0)),
        };
        ExperimentConfig {
            task,
            algorithm: Algorithm::default(),
            data,
            n_sites: 4,
            partition: PartitionStrategy::default(),
            mining: default_mining(),
            k_i: default_k_i(),
            aggregation: AggregationParams::default(),
            links: default_links(),
            seed: 0,
            timing: TimingMode::default(),
            measured: None,
            verify: false,
            output: None,
        }
    }

    /// Mining: the two-pass instance with GFM and FDM side by side, k=4.
    /// Clustering: four separated blobs over four sites, 10 sub-clusters
    /// per site.
    pub fn paper_preset(task: Task) -> Self {
        let mut cfg = ExperimentConfig::new(task);
        if task == Task::Mine {
            cfg.data = DataSource::TwoPass;
            cfg.algorithm = Algorithm::Both;
            cfg.mining = MiningParams { minsup: 0.2, k: 4 };
        }
        cfg
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        crate::datagen::read_json(path)
    }

    /// Sets the seed everywhere it is used, including generator specs.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        match &mut self.data {
            DataSource::Transactions(spec) => spec.seed = seed,
            DataSource::Mixture(spec) => spec.seed = seed,
            _ => {}
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sites == 0 {
            return Err(Error::validation("n_sites must be at least 1"));
        }
        self.mining.validate()?;
        self.aggregation.validate()?;
        if self.k_i == 0 {
            return Err(Error::validation("k_i must be at least 1"));
        }
        match (&self.task, &self.data) {
            (Task::Mine, DataSource::Transactions(spec)) => spec.validate()?,
            (Task::Cluster, DataSource::Mixture(spec)) => spec.validate()?,
            (Task::Mine, DataSource::TransactionFiles { paths, .. })
            | (Task::Cluster, DataSource::PointFiles { paths }) => {
                if paths.len() != self.n_sites {
                    return Err(Error::validation(format!(
                        "{} input files for {} sites",
                        paths.len(),
                        self.n_sites
                    )));
                }
            }
            (Task::Mine, DataSource::TwoPass) => {
                if self.n_sites != 4 {
                    return Err(Error::validation("the two-pass instance has exactly 4 sites"));
                }
            }
            (task, _) => {
                return Err(Error::validation(format!(
                    "data source does not fit the {task:?} task"
                )))
            }
        }
        if let Some(m) = self.measured {
            if m.value.is_nan() || m.value <= 0.0 {
                return Err(Error::validation("measured time must be positive"));
            }
        }
        if let TimingMode::Modeled { seconds_per_unit } = self.timing {
            if !(seconds_per_unit >= 0.0 && seconds_per_unit.is_finite()) {
                return Err(Error::validation("seconds_per_unit must be finite and >= 0"));
            }
        }
        Ok(())
    }

    pub fn load_links(&self) -> Result<LinkMatrix> {
        match self.links.as_str() {
            "table2" | "table2-default" => Ok(LinkMatrix::table2()),
            path => LinkMatrix::read_json(Path::new(path)),
        }
    }

    /// Per-site transaction databases.
    pub fn load_transactions(&self) -> Result<Vec<TransactionDB>> {
        match &self.data {
            DataSource::Transactions(spec) => gen_transactions(spec)?.partition(self.n_sites, self.partition),
            DataSource::TransactionFiles { paths, n_items } => {
                let dbs: Vec<TransactionDB> = paths
                    .iter()
                    .map(|p| read_transactions(p, *n_items))
                    .collect::<Result<_>>()?;
                // Sites must agree on the item universe.
                let n = dbs.iter().map(|db| db.n_items).max().unwrap_or(1);
                Ok(dbs
                    .into_iter()
                    .map(|db| TransactionDB {
                        n_items: n,
                        transactions: db.transactions,
                    })
                    .collect())
            }
            DataSource::TwoPass => Ok(two_pass_instance()),
            _ => Err(Error::validation("not a transaction data source")),
        }
    }

    /// Per-site point sets and, for generated data, the component of every
    /// point.
    pub fn load_points(&self) -> Result<SitePoints> {
        match &self.data {
            DataSource::Mixture(spec) => {
                let (points, labels) = gen_gaussian_mixture_labeled(spec)?;
                let parts = partition_indices(points.len(), self.n_sites, self.partition)?;
                let sets = parts
                    .iter()
                    .map(|idx| {
                        PointSet::new(
                            points.dims,
                            idx.iter().map(|&r| points.points[r].clone()).collect(),
                        )
                    })
                    .collect::<Result<_>>()?;
                let truth = parts
                    .iter()
                    .map(|idx| idx.iter().map(|&r| labels[r]).collect())
                    .collect();
                Ok((sets, Some(truth)))
            }
            DataSource::PointFiles { paths } => {
                let sets: Vec<PointSet> = paths.iter().map(|p| read_points(p)).collect::<Result<_>>()?;
                if sets.windows(2).any(|w| w[0].dims != w[1].dims) {
                    return Err(Error::validation("point files disagree on dimensionality"));
                }
                Ok((sets, None))
            }
            _ => Err(Error::validation("not a point data source")),
        }
    }
}

fn repeat(items: &[Item], times: usize) -> impl Iterator<Item = Vec<Item>> + '_ {
    std::iter::repeat_n(items.to_vec(), times)
}

/// Four sites over eight items where, at minsup 0.2 and k=4, GFM settles
/// in two rounds while FDM needs one per size. Every site holds 40 copies
/// of {0,1,2,3}; site 0 also holds 30 copies of {4,5,6,7}, which fails
/// globally, while the other sites carry the 3-subsets of {4,5,6,7} often
/// enough for each to be globally frequent.
pub fn two_pass_instance() -> Vec<TransactionDB> {
    const CORE: &[Item] = &[0, 1, 2, 3];
    let site = |blocks: &[(&[Item], usize)]| {
        let tx = blocks.iter().flat_map(|&(items, n)| repeat(items, n)).collect();
        TransactionDB::new(8, tx).expect("fixed instance is valid")
    };
    vec![
        site(&[(CORE, 40), (&[4, 5, 6, 7], 30), (&[], 30)]),
        site(&[(CORE, 40), (&[4, 5, 6], 35), (&[4, 5, 7], 35), (&[4, 6, 7], 35)]),
        site(&[(CORE, 40), (&[5, 6, 7], 35), (&[4, 5, 6], 35), (&[4, 5, 7], 35)]),
        site(&[(CORE, 40), (&[4, 6, 7], 35), (&[5, 6, 7], 35)]),
    ]
}

/// Communication and modeled time of one protocol run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Accounting {
    pub algorithm: String,
    pub rounds: u32,
    pub messages: u64,
    pub bytes: u64,
    pub makespan_seconds: f64,
}

impl Accounting {
    fn from_session(algorithm: &str, net: &Session) -> Result<Self> {
        Ok(Accounting {
            algorithm: algorithm.to_string(),
            rounds: net.rounds(),
            messages: net.log().messages,
            bytes: net.log().bytes,
            makespan_seconds: net.makespan()?,
        })
    }
}

/// Integer map keys written as JSON strings. Needed because the summary sits
/// inside an internally tagged enum, where serde cannot parse keys back.
mod size_keys {
    use std::collections::BTreeMap;

    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(map: &BTreeMap<usize, usize>, s: S) -> Result<S::Ok, S::Error> {
        map.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<usize, usize>, D::Error> {
        BTreeMap::<String, usize>::deserialize(d)?
            .into_iter()
            .map(|(k, v)| {
                Ok((
                    k.parse()
                        .map_err(|_| D::Error::custom(format!("bad itemset size {k:?}")))?,
                    v,
                ))
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MineSummary {
    /// Number of frequent itemsets per size.
    #[serde(with = "size_keys")]
    pub frequent_counts: BTreeMap<usize, usize>,
    pub total_frequent: usize,
    /// Under `both`: whether GFM and FDM returned identical results.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub equivalent: Option<bool>,
    /// With `verify`: whether the run matched centralized Apriori.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verified: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub label: usize,
    pub size: u64,
    pub center: Vec<f64>,
    pub variance: f64,
    pub members: Vec<SubClusterId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusteringSummary {
    pub k_global: usize,
    pub total_variance: f64,
    pub sub_clusters: usize,
    pub threshold: f64,
    pub merges: usize,
    /// Number of global clusters after merging, before perturbation.
    pub k_merged: usize,
    pub variance_before_perturbation: f64,
    pub moves: usize,
    /// Size of every site's sub-cluster statistics, the aggregation site
    /// included.
    pub payload_bytes: u64,
    /// Analytical estimate: slowest local clustering, slowest transfer to
    /// the aggregation site, merge.
    pub estimated_seconds: f64,
    /// Fraction of points whose global cluster's majority component is
    /// their own component. Only for generated data.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub purity: Option<f64>,
    pub clusters: Vec<ClusterSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "task")]
pub enum RunResults {
    Mine(MineSummary),
    Cluster(ClusteringSummary),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub tool_version: String,
    /// Wall-clock time of the run; the only field allowed to differ between
    /// repeated runs of one configuration.
    pub timestamp: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub results: RunResults,
    /// One entry per protocol run.
    pub accounting: Vec<Accounting>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overhead: Option<OverheadReport>,
}

impl RunReport {
    pub fn read_json(path: &Path) -> Result<Self> {
        crate::datagen::read_json(path)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// True when `both` disagreed or verification failed.
    pub fn equivalence_violated(&self) -> bool {
        match &self.results {
            RunResults::Mine(m) => m.equivalent == Some(false) || m.verified == Some(false),
            RunResults::Cluster(_) => false,
        }
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let push = |out: &mut String, line: String| {
            out.push_str(&line);
            out.push('\n');
        };
        push(
            &mut out,
            format!(
                "gridmine {} report (schema {})",
                self.tool_version, self.schema_version
            ),
        );
        push(
            &mut out,
            format!(
                "task: {:?}, sites: {}, seed: {}",
                self.config.task, self.config.n_sites, self.seed
            ),
        );
        match &self.results {
            RunResults::Mine(m) => {
                push(&mut out, format!("frequent itemsets: {} total", m.total_frequent));
                for (size, n) in &m.frequent_counts {
                    push(&mut out, format!("  size {size}: {n}"));
                }
                if let Some(eq) = m.equivalent {
                    push(&mut out, format!("gfm and fdm agree: {eq}"));
                }
                if let Some(v) = m.verified {
                    push(&mut out, format!("matches centralized apriori: {v}"));
                }
            }
            RunResults::Cluster(c) => {
                push(
                    &mut out,
                    format!(
                        "global clusters: {} from {} sub-clusters",
                        c.k_global, c.sub_clusters
                    ),
                );
                push(&mut out, format!("total variance: {}", c.total_variance));
                push(&mut out, format!("payload bytes: {}", c.payload_bytes));
                if let Some(p) = c.purity {
                    push(&mut out, format!("purity: {:.4}", p));
                }
            }
        }
        for a in &self.accounting {
            push(
                &mut out,
                format!(
                    "{}: {} rounds, {} messages, {} bytes, modeled {:.6} s",
                    a.algorithm, a.rounds, a.messages, a.bytes, a.makespan_seconds
                ),
            );
        }
        if let Some(o) = &self.overhead {
            push(&mut out, o.to_string());
        }
        out
    }
}

/// A finished run: the report plus the raw material behind it.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: RunReport,
    /// Message log of every protocol run, keyed like `report.accounting`.
    pub logs: Vec<(String, AccountingLog)>,
    pub mining: Option<MiningResult>,
}

pub fn run(config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    match config.task {
        Task::Mine => run_mine(config),
        Task::Cluster => run_cluster(config),
    }
}

fn report(config: &ExperimentConfig, results: RunResults, accounting: Vec<Accounting>) -> Result<RunReport> {
    let overhead = match config.measured {
        Some(measured) => {
            let modeled = accounting.first().map_or(0.0, |a| a.makespan_seconds);
            let estimated = match measured.unit {
                TimeUnit::Seconds => TimeValue::seconds(modeled),
                TimeUnit::Minutes => TimeValue::minutes(modeled / 60.0),
            };
            Some(overhead(
                &format!("{:?}", config.task).to_lowercase(),
                measured,
                estimated,
            )?)
        }
        None => None,
    };
    Ok(RunReport {
        schema_version: SCHEMA_VERSION,
        tool_version: TOOL_VERSION.to_string(),
        timestamp: String::new(),
        seed: config.seed,
        config: config.clone(),
        results,
        accounting,
        overhead,
    })
}

pub fn run_mine(config: &ExperimentConfig) -> Result<RunOutput> {
    let dbs = config.load_transactions()?;
    let links = config.load_links()?;
    let params = &config.mining;
    let session = |n| Session::new(n, links.clone()).map(|s| s.with_timing(config.timing));

    let mut accounting = Vec::new();
    let mut logs = Vec::new();
    let mut results = Vec::new();
    let algorithms: &[Algorithm] = match config.algorithm {
        Algorithm::Both => &[Algorithm::Gfm, Algorithm::Fdm],
        Algorithm::Gfm => &[Algorithm::Gfm],
        Algorithm::Fdm => &[Algorithm::Fdm],
        Algorithm::Centralized => &[Algorithm::Centralized],
    };
    for &alg in algorithms {
        let (name, result, net) = match alg {
            Algorithm::Gfm => {
                let mut net = session(dbs.len())?;
                ("gfm", gfm_run(&dbs, params, &mut net)?, net)
            }
            Algorithm::Fdm => {
                let mut net = session(dbs.len())?;
                ("fdm", fdm_run(&dbs, params, &mut net)?, net)
            }
            _ => {
                let start = Instant::now();
                let result = centralized(&dbs, params)?;
                let mut net = session(1)?;
                let pooled: usize = dbs.iter().map(TransactionDB::len).sum();
                let n_items = dbs.iter().map(|db| db.n_items).max().unwrap_or(0);
                // Rough candidate volume; only the modeled time depends on it.
                let units = (pooled * (n_items + result.total())) as f64;
                net.local_stage("centralized apriori", &[Work::new(units, start.elapsed())])?;
                ("centralized", result, net)
            }
        };
        accounting.push(Accounting::from_session(name, &net)?);
        logs.push((name.to_string(), net.log().clone()));
        results.push(result);
    }

    let equivalent = (results.len() == 2).then(|| results[0].frequent == results[1].frequent);
    let verified = if config.verify {
        let reference = centralized(&dbs, params)?;
        Some(results.iter().all(|r| r.frequent == reference.frequent))
    } else {
        None
    };
    let first = results.swap_remove(0);
    let summary = MineSummary {
        frequent_counts: first.counts_by_size(),
        total_frequent: first.total(),
        equivalent,
        verified,
    };
    Ok(RunOutput {
        report: report(config, RunResults::Mine(summary), accounting)?,
        logs,
        mining: Some(first),
    })
}

struct StatsMessage {
    count: usize,
    dims: usize,
}

impl Payload for StatsMessage {
    fn wire_len(&self) -> u64 {
        clustering_payload_bytes(self.count, self.dims)
    }
}

pub fn run_cluster(config: &ExperimentConfig) -> Result<RunOutput> {
    let (sites, truth) = config.load_points()?;
    let links = config.load_links()?;
    let dims = sites[0].dims;
    let mut net = Session::new(sites.len(), links.clone())?.with_timing(config.timing);

    let mut subs: Vec<SubClusterStats> = Vec::new();
    let mut assignments = Vec::new();
    let mut work = Vec::new();
    for (s, points) in sites.iter().enumerate() {
        let start = Instant::now();
        let seed = config
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(s as u64);
        let local = local_cluster_detailed(points, config.k_i, seed, s as u32, KMeansConfig::default())?;
        let units = (points.len() * config.k_i * dims * local.iterations) as f64;
        work.push(Work::new(units, start.elapsed()));
        subs.extend(local.stats);
        assignments.push(local.assignment);
    }
    net.local_stage("local k-means", &work)?;

    let payloads: Vec<u64> = sites
        .iter()
        .map(|_| clustering_payload_bytes(config.k_i, dims))
        .collect();
    net.round(|ctx| {
        ctx.set_stage_name("ship statistics");
        let out = (0..sites.len())
            .filter(|&s| s != AGGREGATION_SITE)
            .map(|s| Envelope {
                from: s,
                to: AGGREGATION_SITE,
                payload: StatsMessage {
                    count: config.k_i,
                    dims,
                },
            })
            .collect();
        ctx.exchange(out).map(drop)
    })?;

    let start = Instant::now();
    let trace = aggregate_traced(&subs, &config.aggregation)?;
    let n = subs.len() as f64;
    let mut merge_work = vec![Work::default(); sites.len()];
    merge_work[AGGREGATION_SITE] = Work::new(n * n * dims as f64, start.elapsed());
    net.local_stage("aggregate", &merge_work)?;

    let labeling = &trace.perturbation.labeling;
    labeling.validate(&subs)?;
    let purity = truth.map(|truth| {
        let labels = labeling.assignment();
        let mut table: BTreeMap<(usize, usize), u64> = BTreeMap::new();
        for (s, site_truth) in truth.iter().enumerate() {
            for (p, &component) in site_truth.iter().enumerate() {
                let id = SubClusterId::new(s as u32, assignments[s][p] as u32);
                *table.entry((labels[&id], component)).or_default() += 1;
            }
        }
        let mut best: BTreeMap<usize, u64> = BTreeMap::new();
        for (&(label, _), &count) in &table {
            let b = best.entry(label).or_default();
            *b = (*b).max(count);
        }
        let total: u64 = table.values().sum();
        best.values().sum::<u64>() as f64 / total as f64
    });

    let stage_costs = |stage: usize| -> Vec<f64> {
        net.plan().stages[stage]
            .activities
            .iter()
            .map(|a| a.compute_cost)
            .collect()
    };
    let merge_time = stage_costs(2)[AGGREGATION_SITE];
    let estimated_seconds =
        estimate_clustering(&stage_costs(0), merge_time, &payloads, &links, AGGREGATION_SITE)?;

    let summary = ClusteringSummary {
        k_global: labeling.k(),
        total_variance: labeling.total_variance,
        sub_clusters: subs.len(),
        threshold: trace.threshold,
        merges: trace.merges.len(),
        k_merged: trace.merged.k(),
        variance_before_perturbation: trace.merged.total_variance,
        moves: trace.perturbation.moves.len(),
        payload_bytes: payloads.iter().sum(),
        estimated_seconds,
        purity,
        clusters: labeling
            .clusters
            .iter()
            .map(|c| ClusterSummary {
                label: c.label,
                size: c.agg.size,
                center: c.agg.center.clone(),
                variance: c.agg.variance,
                members: c.members.clone(),
            })
            .collect(),
    };
    let accounting = vec![Accounting::from_session("clustering", &net)?];
    Ok(RunOutput {
        report: report(config, RunResults::Cluster(summary), accounting)?,
        logs: vec![("clustering".to_string(), net.log().clone())],
        mining: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_pass_preset() {
        let out = run(&ExperimentConfig::paper_preset(Task::Mine)).unwrap();
        let rounds: Vec<u32> = out.report.accounting.iter().map(|a| a.rounds).collect();
        assert_eq!(rounds, vec![2, 4]);
        assert!(!out.report.equivalence_violated());
        assert!(out.report.accounting[0].bytes < out.report.accounting[1].bytes);
    }

    #[test]
    fn reports_round_trip() {
        for task in [Task::Mine, Task::Cluster] {
            let report = run(&ExperimentConfig::paper_preset(task)).unwrap().report;
            let back: RunReport = serde_json::from_str(&report.to_json().unwrap()).unwrap();
            assert_eq!(back, report);
        }
    }

    #[test]
    fn cluster_preset_recovers_blobs() {
        let out = run(&ExperimentConfig::paper_preset(Task::Cluster)).unwrap();
        let RunResults::Cluster(c) = &out.report.results else {
            panic!()
        };
        assert_eq!(c.k_global, 4);
        assert!(c.purity.unwrap() > 0.99);
        assert_eq!(c.payload_bytes, 4 * clustering_payload_bytes(10, 2));
        // Only the three non-aggregation sites ship statistics.
        assert_eq!(
            out.report.accounting[0].bytes,
            3 * clustering_payload_bytes(10, 2)
        );
        assert!((c.estimated_seconds - out.report.accounting[0].makespan_seconds).abs() < 1e-12);
    }

    #[test]
    fn runs_are_deterministic() {
        let mut cfg = ExperimentConfig::new(Task::Mine);
        cfg.algorithm = Algorithm::Both;
        cfg.verify = true;
        let a = run(&cfg).unwrap().report.to_json().unwrap();
        let b = run(&cfg).unwrap().report.to_json().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn overhead_is_reported_when_measured() {
        let mut cfg = ExperimentConfig::new(Task::Mine);
        cfg.measured = Some(TimeValue::seconds(100.0));
        let r = run(&cfg).unwrap().report;
        let o = r.overhead.unwrap();
        assert_eq!(o.estimated.value, r.accounting[0].makespan_seconds);
    }

    #[test]
    fn validation() {
        let mut cfg = ExperimentConfig::new(Task::Cluster);
        cfg.k_i = 100_000;
        assert!(matches!(run(&cfg), Err(Error::Validation(_))));
        let mut cfg = ExperimentConfig::new(Task::Mine);
        cfg.data = DataSource::Mixture(default_mixture_spec(0));
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::new(Task::Mine);
        cfg.data = DataSource::TransactionFiles {
            paths: vec![PathBuf::from("/nonexistent/a.txt")],
            n_items: None,
        };
        cfg.n_sites = 1;
        assert!(cfg.validate().is_ok());
        assert!(matches!(run(&cfg), Err(Error::Io { .. })));
        let mut cfg = ExperimentConfig::paper_preset(Task::Mine);
        cfg.n_sites = 3;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_json_defaults() {
        let cfg: ExperimentConfig =
            serde_json::from_str(r#"{"task":"mine","data":{"kind":"two_pass"},"n_sites":4}"#).unwrap();
        assert_eq!(cfg.links, "table2");
        assert_eq!(cfg.mining, default_mining());
        assert_eq!(cfg.algorithm, Algorithm::Gfm);
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}

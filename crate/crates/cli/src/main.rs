use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use gridmine_core::clustering::MergeThreshold;
use gridmine_core::datagen::{gen_gaussian_mixture, gen_transactions, write_points, write_transactions};
use gridmine_core::estimator::{
    estimate_itemsets, overhead, reference_reports, relative_gain, round1, OverheadReport, TimeUnit,
    TimeValue,
};
use gridmine_core::experiment::{
    self, two_pass_instance, Algorithm, DataSource, ExperimentConfig, RunOutput, RunReport, Task,
    SCHEMA_VERSION,
};
use gridmine_core::{Error, LinkMatrix, StagePlan};

const EXIT_VALIDATION: u8 = 2;
const EXIT_EQUIVALENCE: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser)]
#[command(
    name = "gridmine",
    version,
    about = "Distributed clustering and frequent itemset mining on a simulated grid"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset and write one file per site.
    Gen(GenArgs),
    /// Mine frequent itemsets with GFM, FDM, both or centrally.
    Mine(MineArgs),
    /// Cluster points: local k-means, then global aggregation.
    Cluster(ClusterArgs),
    /// Compare measured times with estimates.
    Estimate(EstimateArgs),
    /// Pretty-print a run report.
    Report { path: PathBuf },
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON); flags override its fields.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    sites: Option<usize>,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Link matrix JSON file, or `table2`.
    #[arg(long, value_name = "PATH|table2")]
    links: Option<String>,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Start from the built-in preset instead of the defaults.
    #[arg(long)]
    paper_preset: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum DataKind {
    Transactions,
    Points,
}

#[derive(Args)]
struct GenArgs {
    /// Defaults to the kind of data in the configuration.
    #[arg(value_enum)]
    kind: Option<DataKind>,
    #[command(flatten)]
    common: Common,
    /// Total number of transactions to generate.
    #[arg(long, value_name = "N")]
    transactions: Option<usize>,
}

#[derive(Args)]
struct MineArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_name = "F")]
    minsup: Option<f64>,
    #[arg(long, value_name = "N")]
    k: Option<usize>,
    #[arg(long, value_name = "gfm|fdm|both|centralized")]
    algo: Option<String>,
    /// Transaction files, one per site.
    #[arg(long, value_name = "PATH", num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long, value_name = "N")]
    n_items: Option<usize>,
    /// Also run centralized Apriori and compare.
    #[arg(long)]
    verify: bool,
    /// Measured duration of the real run, e.g. `521min`.
    #[arg(long, value_name = "TIME")]
    measured: Option<String>,
    /// Message log as CSV.
    #[arg(long, value_name = "PATH")]
    dump_log: Option<PathBuf>,
    /// Frequent itemsets with supports, as JSON.
    #[arg(long, value_name = "PATH")]
    result: Option<PathBuf>,
}

#[derive(Args)]
struct ClusterArgs {
    #[command(flatten)]
    common: Common,
    /// Sub-clusters per site.
    #[arg(long, value_name = "N")]
    ki: Option<usize>,
    /// Merge threshold on the variance increment.
    #[arg(long, value_name = "F|auto")]
    tau: Option<String>,
    /// Border candidates per perturbation pass.
    #[arg(long, value_name = "N")]
    border: Option<usize>,
    /// Point files, one per site.
    #[arg(long, value_name = "PATH", num_args = 1..)]
    input: Vec<PathBuf>,
    #[arg(long, value_name = "TIME")]
    measured: Option<String>,
    #[arg(long, value_name = "PATH")]
    dump_log: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    /// Reproduce the three rows of the original results table.
    #[arg(long)]
    paper_preset: bool,
    #[arg(long, value_name = "TIME")]
    measured: Option<String>,
    #[arg(long, value_name = "TIME", conflicts_with = "plan")]
    estimated: Option<String>,
    /// Stage plan (JSON) whose makespan is the estimate, in seconds.
    #[arg(long, value_name = "PATH")]
    plan: Option<PathBuf>,
    #[arg(long, value_name = "PATH|table2")]
    links: Option<String>,
    #[arg(long, default_value = "run")]
    task: String,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

/// Raised when GFM and FDM (or a verification run) disagree.
#[derive(Debug)]
struct EquivalenceViolation(String);

impl std::fmt::Display for EquivalenceViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "equivalence violation: {}", self.0)
    }
}

impl std::error::Error for EquivalenceViolation {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<EquivalenceViolation>().is_some() {
        return EXIT_EQUIVALENCE;
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Io { .. } => EXIT_IO,
                Error::Validation(_) | Error::Parse { .. } | Error::Json(_) => EXIT_VALIDATION,
                Error::Inconsistent(_) | Error::State(_) => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Mine(args) => cmd_mine(args),
        Command::Cluster(args) => cmd_cluster(args),
        Command::Estimate(args) => cmd_estimate(args),
        Command::Report { path } => cmd_report(&path),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn base_config(common: &Common, task: Task) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::read_json(path)?,
        None if common.paper_preset => ExperimentConfig::paper_preset(task),
        None => ExperimentConfig::new(task),
    };
    if cfg.task != task {
        return Err(Error::Validation(format!("configuration is for the {:?} task", cfg.task)).into());
    }
    if let Some(n) = common.sites {
        cfg.n_sites = n;
    }
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    if let Some(links) = &common.links {
        cfg.links = links.clone();
    }
    if let Some(out) = &common.out {
        cfg.output = Some(out.clone());
    }
    Ok(cfg)
}

fn parse_time(s: &str) -> anyhow::Result<TimeValue> {
    Ok(s.parse::<TimeValue>()?)
}

fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

/// `log.csv` becomes `log.gfm.csv` when several logs are written.
fn log_path(base: &Path, name: &str, many: bool) -> PathBuf {
    if !many {
        return base.to_path_buf();
    }
    let stem = base
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let file = match base.extension() {
        Some(ext) => format!("{stem}.{name}.{}", ext.to_string_lossy()),
        None => format!("{stem}.{name}"),
    };
    base.with_file_name(file)
}

fn finish(mut output: RunOutput, dump_log: Option<&Path>) -> anyhow::Result<()> {
    output.report.timestamp = timestamp();
    if let Some(base) = dump_log {
        let many = output.logs.len() > 1;
        for (name, log) in &output.logs {
            write_text(&log_path(base, name, many), &log.to_csv())?;
        }
    }
    let json = output.report.to_json()?;
    match &output.report.config.output {
        Some(path) => {
            write_text(path, &json)?;
            print!("{}", output.report.summary());
        }
        None => print!("{json}"),
    }
    if output.report.equivalence_violated() {
        return Err(EquivalenceViolation(
            "distributed results differ from each other or from centralized apriori".into(),
        )
        .into());
    }
    Ok(())
}

fn cmd_gen(args: GenArgs) -> anyhow::Result<()> {
    let task = match args.kind {
        Some(DataKind::Points) => Task::Cluster,
        Some(DataKind::Transactions) => Task::Mine,
        None => match &args.common.config {
            Some(path) => ExperimentConfig::read_json(path)?.task,
            None => Task::Mine,
        },
    };
    let mut cfg = base_config(&args.common, task)?;
    let dir = args.common.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;

    let mut written = Vec::new();
    match (&mut cfg.data, task) {
        (DataSource::Transactions(spec), _) => {
            if let Some(n) = args.transactions {
                spec.n_transactions = n;
            }
            let sites = gen_transactions(spec)?.partition(cfg.n_sites, cfg.partition)?;
            for (i, db) in sites.iter().enumerate() {
                let path = dir.join(format!("site-{i}.txt"));
                write_transactions(&path, db)?;
                written.push((path, db.len()));
            }
        }
        (DataSource::TwoPass, _) => {
            for (i, db) in two_pass_instance().iter().enumerate() {
                let path = dir.join(format!("site-{i}.txt"));
                write_transactions(&path, db)?;
                written.push((path, db.len()));
            }
        }
        (DataSource::Mixture(spec), _) => {
            let points = gen_gaussian_mixture(spec)?;
            for (i, part) in points.partition(cfg.n_sites, cfg.partition)?.iter().enumerate() {
                let path = dir.join(format!("site-{i}.csv"));
                write_points(&path, part)?;
                written.push((path, part.len()));
            }
        }
        _ => bail!(Error::Validation(
            "gen needs a generated data source, not input files".into()
        )),
    }
    for (i, (path, n)) in written.iter().enumerate() {
        println!("site {i}: {n} records -> {}", path.display());
    }
    Ok(())
}

fn cmd_mine(args: MineArgs) -> anyhow::Result<()> {
    let mut cfg = base_config(&args.common, Task::Mine)?;
    if let Some(m) = args.minsup {
        cfg.mining.minsup = m;
    }
    if let Some(k) = args.k {
        cfg.mining.k = k;
    }
    if let Some(a) = &args.algo {
        cfg.algorithm = a.parse::<Algorithm>()?;
    }
    if !args.input.is_empty() {
        if args.common.sites.is_none() {
            cfg.n_sites = args.input.len();
        }
        cfg.data = DataSource::TransactionFiles {
            paths: args.input.clone(),
            n_items: args.n_items,
        };
    }
    cfg.verify |= args.verify;
    if let Some(t) = &args.measured {
        cfg.measured = Some(parse_time(t)?);
    }
    let output = experiment::run(&cfg)?;
    if let (Some(path), Some(result)) = (&args.result, &output.mining) {
        let mut json = serde_json::to_string_pretty(result)?;
        json.push('\n');
        write_text(path, &json)?;
    }
    finish(output, args.dump_log.as_deref())
}

fn cmd_cluster(args: ClusterArgs) -> anyhow::Result<()> {
    let mut cfg = base_config(&args.common, Task::Cluster)?;
    if let Some(k) = args.ki {
        cfg.k_i = k;
    }
    if let Some(tau) = &args.tau {
        cfg.aggregation.threshold = match tau.as_str() {
            "auto" => MergeThreshold::AUTO,
            t => MergeThreshold::Fixed(
                t.parse()
                    .map_err(|_| Error::Validation(format!("--tau expects a number or auto, got {t:?}")))?,
            ),
        };
    }
    if let Some(b) = args.border {
        cfg.aggregation.border = b;
    }
    if !args.input.is_empty() {
        if args.common.sites.is_none() {
            cfg.n_sites = args.input.len();
        }
        cfg.data = DataSource::PointFiles {
            paths: args.input.clone(),
        };
    }
    if let Some(t) = &args.measured {
        cfg.measured = Some(parse_time(t)?);
    }
    let output = experiment::run(&cfg)?;
    finish(output, args.dump_log.as_deref())
}

#[derive(Serialize)]
struct Gain {
    reference: f64,
    improved: f64,
    gain_pct: f64,
    gain_pct_rounded: f64,
}

#[derive(Serialize)]
struct EstimateReport {
    schema_version: u32,
    reports: Vec<OverheadReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    gains: Vec<Gain>,
}

fn cmd_estimate(args: EstimateArgs) -> anyhow::Result<()> {
    let (reports, gains) = if args.paper_preset {
        let gains = [(687.0, 521.0), (518.0, 424.0)]
            .into_iter()
            .map(|(a, b)| {
                let pct = relative_gain(a, b)?;
                Ok(Gain {
                    reference: a,
                    improved: b,
                    gain_pct: pct,
                    gain_pct_rounded: round1(pct),
                })
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        (reference_reports(), gains)
    } else {
        let measured = parse_time(
            args.measured
                .as_deref()
                .ok_or_else(|| Error::Validation("--measured is required without --paper-preset".into()))?,
        )?;
        let estimated = match (&args.estimated, &args.plan) {
            (Some(e), _) => parse_time(e)?,
            (None, Some(plan)) => {
                let links = match args.links.as_deref() {
                    None | Some("table2") | Some("table2-default") => LinkMatrix::table2(),
                    Some(path) => LinkMatrix::read_json(Path::new(path))?,
                };
                let seconds = estimate_itemsets(&StagePlan::read_json(plan)?, &links)?;
                TimeValue {
                    value: seconds,
                    unit: TimeUnit::Seconds,
                }
            }
            (None, None) => {
                return Err(anyhow!(Error::Validation("give --estimated or --plan".into())));
            }
        };
        (vec![overhead(&args.task, measured, estimated)?], Vec::new())
    };
    let report = EstimateReport {
        schema_version: SCHEMA_VERSION,
        reports,
        gains,
    };
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    match &args.out {
        Some(path) => {
            write_text(path, &json)?;
            for r in &report.reports {
                println!("{r}");
            }
            for g in &report.gains {
                println!(
                    "gain {} -> {}: {:.1}%",
                    g.reference, g.improved, g.gain_pct_rounded
                );
            }
        }
        None => print!("{json}"),
    }
    Ok(())
}

fn cmd_report(path: &Path) -> anyhow::Result<()> {
    let report = RunReport::read_json(path).with_context(|| format!("reading {}", path.display()))?;
    print!("{}", report.summary());
    Ok(())
}

//! The `mpg` command line.
//!
//! Exit codes: 0 success, 1 usage, 2 data or validation error, 3 provider
//! failure (missing credentials, or no question answered at all).

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mpg_core::aggregator::{DEFAULT_EPSILON, DEFAULT_REPLICATIONS, DEFAULT_SUBDOMAIN_DRAWS};
use mpg_core::corpus::{load_hierarchy, read_hierarchy, HierarchyConfig};
use mpg_core::harness::{evaluate_model, HarnessError, QpsMode};
use mpg_core::report::{
    build_report, correlation_rows, correlation_table, format_frontier, format_social, frontier,
    social_rows, PairingConfig, ReportError,
};
use mpg_core::stats::ScoreSeries;
use mpg_core::synthoracle::synthetic_corpus;
use mpg_core::{Corpus, ModelSpec, Report, RunConfig, RunResult, SamplerConfig};

pub const RUN_FILE: &str = "run.jsonl";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Parser)]
#[command(
    name = "mpg",
    version,
    about = "Evaluate models and aggregate benchmark scores"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Query a model over the corpus, then aggregate.
    Run(RunArgs),
    /// Re-aggregate a persisted run without querying anything.
    Aggregate(AggregateArgs),
    /// Correlate reports with external scores and emit frontier plot data.
    Compare(CompareArgs),
    /// Probability that ambiguous accuracy exceeds disambiguated accuracy.
    Social(SocialArgs),
    /// Write a placeholder corpus for every leaf of a hierarchy.
    SynthCorpus(SynthCorpusArgs),
}

/// `questions` or a positive integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Draws {
    Questions,
    Fixed(u64),
}

impl FromStr for Draws {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "questions" {
            return Ok(Draws::Questions);
        }
        match s.parse::<u64>() {
            Ok(0) | Err(_) => Err(format!(
                "expected `questions` or a positive integer, got `{s}`"
            )),
            Ok(n) => Ok(Draws::Fixed(n)),
        }
    }
}

impl fmt::Display for Draws {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Draws::Questions => f.write_str("questions"),
            Draws::Fixed(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SamplerArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_REPLICATIONS)]
    pub replications: usize,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
    /// Latent draws per subdomain: a count, or `questions` for the
    /// subdomain's question total.
    #[arg(long, default_value_t = Draws::Fixed(DEFAULT_SUBDOMAIN_DRAWS))]
    pub subdomain_draws: Draws,
    /// Latent draws in the root pool. Defaults to the sum over subdomains.
    #[arg(long)]
    pub root_draws: Option<u64>,
}

impl SamplerArgs {
    pub fn config(&self) -> SamplerConfig {
        SamplerConfig {
            replications: self.replications,
            subdomain_draws: match self.subdomain_draws {
                Draws::Questions => None,
                Draws::Fixed(n) => Some(n),
            },
            root_draws: self.root_draws,
            epsilon: self.epsilon,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum QpsModeArg {
    Sequential,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Model spec TOML.
    #[arg(long)]
    pub model: PathBuf,
    /// Directory of `<benchmark>.jsonl` files.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub hierarchy: PathBuf,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[arg(long, default_value_t = 1)]
    pub parallelism: usize,
    #[arg(long, value_enum, default_value_t = QpsModeArg::Sequential)]
    pub qps_mode: QpsModeArg,
    /// Transient-error retries per question.
    #[arg(long, default_value_t = 3)]
    pub max_retries: u32,
    /// Per-request timeout in seconds.
    #[arg(long, default_value_t = 60.0)]
    pub timeout: f64,
    /// Output directory for run.jsonl and report.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct AggregateArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub hierarchy: PathBuf,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    /// Take the sampler settings from an existing report instead of the
    /// flags, and check the result reproduces it.
    #[arg(long, conflicts_with_all = ["seed", "replications", "epsilon", "subdomain_draws", "root_draws"])]
    pub like: Option<PathBuf>,
    /// Report path. Printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[arg(long = "report", required = true)]
    pub reports: Vec<PathBuf>,
    /// External scores as `NAME=PATH`; the file holds `model,score` lines.
    #[arg(long = "score")]
    pub scores: Vec<NamedPath>,
    /// Write correlations.csv and frontier.csv here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedPath {
    pub name: String,
    pub path: PathBuf,
}

impl FromStr for NamedPath {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('=') {
            Some((name, path)) if !name.trim().is_empty() && !path.is_empty() => Ok(Self {
                name: name.trim().to_string(),
                path: PathBuf::from(path),
            }),
            _ => Err(format!("expected NAME=PATH, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SocialArgs {
    #[arg(long = "run", required = true)]
    pub runs: Vec<PathBuf>,
    /// Pairing TOML. Defaults to the BBQ Race/SO/SES pairs.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long, default_value_t = 100_000)]
    pub draws: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    pub epsilon: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SynthCorpusArgs {
    #[arg(long)]
    pub hierarchy: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub per_leaf: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Provider(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Provider(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Provider(m) => f.write_str(m),
        }
    }
}

fn data(module: &str, e: impl fmt::Display) -> CliError {
    CliError::Data(format!("{module}: {e}"))
}

fn harness(e: HarnessError) -> CliError {
    match e {
        HarnessError::MissingAuth { .. } | HarnessError::Client(_) => {
            CliError::Provider(format!("harness: {e}"))
        }
        other => data("harness", other),
    }
}

fn report_err(e: ReportError) -> CliError {
    let module = match e {
        ReportError::Aggregator(_) => "aggregator",
        ReportError::Stats(_) => "stats",
        _ => "report",
    };
    data(module, e)
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents)
        .map_err(|e| data("io", format!("cannot write {}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path)
        .map_err(|e| data("io", format!("cannot create {}: {e}", path.display())))
}

/// Paths written by [`cmd_run`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub run_path: PathBuf,
    pub report_path: PathBuf,
    pub report: Report,
}

pub fn cmd_run(args: &RunArgs) -> Result<RunOutput, CliError> {
    let spec = ModelSpec::load(&args.model).map_err(harness)?;
    let corpus = Corpus::load_dir(&args.corpus).map_err(|e| data("corpus", e))?;
    let hierarchy = load_hierarchy(&args.hierarchy, &corpus).map_err(|e| data("corpus", e))?;
    let sampler = args.sampler.config();
    sampler.validate().map_err(|e| data("aggregator", e))?;
    if !(args.timeout > 0.0 && args.timeout.is_finite()) {
        return Err(CliError::Usage(
            "--timeout must be a positive number of seconds".into(),
        ));
    }
    let cfg = RunConfig {
        parallelism: args.parallelism,
        max_retries: args.max_retries,
        request_timeout: Duration::from_secs_f64(args.timeout),
        qps_mode: match args.qps_mode {
            QpsModeArg::Sequential => QpsMode::Sequential,
        },
        seed: args.sampler.seed,
        ..RunConfig::default()
    };

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Provider(format!("harness: cannot start runtime: {e}")))?;
    let run = runtime
        .block_on(evaluate_model(&spec, &corpus, &hierarchy, &cfg))
        .map_err(harness)?;

    create_dir(&args.out)?;
    let run_path = args.out.join(RUN_FILE);
    run.write(&run_path).map_err(harness)?;
    if run.warnings > 0 {
        tracing::warn!(
            failed = run.warnings,
            total = run.records.len(),
            "some questions failed and were scored 0"
        );
    }
    if run.warnings == run.records.len() {
        return Err(CliError::Provider(format!(
            "harness: every one of {} questions failed; first error: {}",
            run.records.len(),
            run.records
                .iter()
                .find_map(|r| r.error.as_deref())
                .unwrap_or("unknown")
        )));
    }

    let report = build_report(&run, &hierarchy, &sampler).map_err(report_err)?;
    let report_path = args.out.join(REPORT_FILE);
    report.write(&report_path).map_err(report_err)?;
    Ok(RunOutput {
        run_path,
        report_path,
        report,
    })
}

pub fn cmd_aggregate(args: &AggregateArgs) -> Result<Report, CliError> {
    let run = RunResult::read(&args.run).map_err(harness)?;
    let hierarchy = read_hierarchy(&args.hierarchy).map_err(|e| data("corpus", e))?;
    let reference = match &args.like {
        Some(path) => Some(Report::read(path).map_err(report_err)?),
        None => None,
    };
    let sampler = match &reference {
        Some(r) => r.sampler.clone(),
        None => args.sampler.config(),
    };
    let report = build_report(&run, &hierarchy, &sampler).map_err(report_err)?;
    if let Some(reference) = reference {
        if reference.config_digest != report.config_digest {
            return Err(data(
                "report",
                "hierarchy differs from the one the reference report was built with",
            ));
        }
        if reference != report {
            return Err(data(
                "report",
                "re-aggregation does not reproduce the reference report",
            ));
        }
    }
    if let Some(out) = &args.out {
        report.write(out).map_err(report_err)?;
    }
    Ok(report)
}

/// Correlation table (empty when no scores were given) and frontier CSV.
pub fn cmd_compare(args: &CompareArgs) -> Result<(String, String), CliError> {
    let reports = args
        .reports
        .iter()
        .map(|p| Report::read(p).map_err(report_err))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(first) = reports.first() {
        if let Some(other) = reports
            .iter()
            .find(|r| r.config_digest != first.config_digest)
        {
            return Err(data(
                "report",
                format!(
                    "reports for `{}` and `{}` were built with different configurations",
                    first.model, other.model
                ),
            ));
        }
    }
    let external = args
        .scores
        .iter()
        .map(|s| {
            ScoreSeries::load(&s.path)
                .map(|series| (s.name.clone(), series))
                .map_err(|e| data("stats", e))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let table = if external.is_empty() {
        String::new()
    } else {
        correlation_table(&correlation_rows(&reports, &external).map_err(report_err)?)
    };
    let plot = format_frontier(&frontier(&reports));
    if let Some(dir) = &args.out {
        create_dir(dir)?;
        if !table.is_empty() {
            write_file(&dir.join("correlations.csv"), &table)?;
        }
        write_file(&dir.join("frontier.csv"), &plot)?;
    }
    Ok((table, plot))
}

pub fn cmd_social(args: &SocialArgs) -> Result<String, CliError> {
    let pairs = match &args.pairs {
        Some(p) => PairingConfig::load(p).map_err(report_err)?,
        None => PairingConfig::bbq_default(),
    };
    let runs = args
        .runs
        .iter()
        .map(|p| RunResult::read(p).map_err(harness))
        .collect::<Result<Vec<_>, _>>()?;
    let rows =
        social_rows(&runs, &pairs, args.draws, args.seed, args.epsilon).map_err(report_err)?;
    Ok(format_social(&pairs, &rows))
}

pub fn cmd_synth_corpus(args: &SynthCorpusArgs) -> Result<Corpus, CliError> {
    let hierarchy: HierarchyConfig =
        read_hierarchy(&args.hierarchy).map_err(|e| data("corpus", e))?;
    let corpus =
        synthetic_corpus(&hierarchy, args.per_leaf, args.seed).map_err(|e| data("corpus", e))?;
    create_dir(&args.out)?;
    corpus.write_dir(&args.out).map_err(|e| data("corpus", e))?;
    Ok(corpus)
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let io = |e: std::io::Error| data("io", e);
    match cli.command {
        Command::Run(args) => {
            let res = cmd_run(&args)?;
            let g = &res.report.goodness;
            writeln!(
                out,
                "{}: goodness {:.4} [{:.4}, {:.4}], qps {:.4}, warnings {}",
                res.report.model, g.mean, g.ci_low, g.ci_high, res.report.qps, res.report.warnings
            )
            .map_err(io)?;
            writeln!(
                out,
                "wrote {} and {}",
                res.run_path.display(),
                res.report_path.display()
            )
            .map_err(io)?;
        }
        Command::Aggregate(args) => {
            let report = cmd_aggregate(&args)?;
            if args.out.is_none() {
                out.write_all(report.to_json().as_bytes()).map_err(io)?;
            }
        }
        Command::Compare(args) => {
            let (table, plot) = cmd_compare(&args)?;
            if args.out.is_none() {
                if !table.is_empty() {
                    out.write_all(table.as_bytes()).map_err(io)?;
                    writeln!(out).map_err(io)?;
                }
                out.write_all(plot.as_bytes()).map_err(io)?;
            }
        }
        Command::Social(args) => {
            out.write_all(cmd_social(&args)?.as_bytes()).map_err(io)?;
        }
        Command::SynthCorpus(args) => {
            let corpus = cmd_synth_corpus(&args)?;
            writeln!(
                out,
                "wrote {} benchmarks to {}",
                corpus.len(),
                args.out.display()
            )
            .map_err(io)?;
        }
    }
    Ok(())
}

/// Parse `argv`, run the command and return the process exit code. Help and
/// version requests print to `out` and succeed.
pub fn execute<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = out.write_all(text.as_bytes());
                    0
                }
                _ => {
                    let _ = err.write_all(text.as_bytes());
                    1
                }
            };
        }
    };
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

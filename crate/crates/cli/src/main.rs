//! `headcache` command-line driver.
//!
//! Every subcommand starts from a [`RunConfig`]: the defaults, replaced by a
//! JSON file when `--config` is given, then overridden by individual flags.
//! Failures print `{"error": {"kind": ..., "message": ...}}` on stderr.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context as _};
use clap::{Args, Parser, Subcommand, ValueEnum};
use headcache::budget::PolicyKind;
use headcache::contrib::verify_bound_suite_with;
use headcache::harness::{
    classify_trace, compress_run, export_pca, export_report, pca_points, run_all, run_pipeline, ReportFormat,
    RunConfig, TraceSource,
};
use headcache::trace::{gen_synthetic_trace, write_trace, SyntheticProfile, TraceShape};
use serde_json::json;

#[derive(Parser)]
#[command(name = "headcache", version, about = "Head-aware KV-cache compression toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic `.tkv` trace.
    Gen(GenArgs),
    /// Classify heads and write per-layer budget plans as JSON.
    Compress(Common),
    /// Evaluate decode fidelity of every policy and budget.
    Eval(Common),
    /// Check the head-contribution bound on random instances.
    Contrib(ContribArgs),
    /// Project semantic vectors to 2-D with PCA.
    Pca(Common),
    /// Run everything and write report.json, report.csv and pca.csv.
    All(Common),
}

/// Flags shared by every pipeline subcommand.
#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration; individual flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input `.tkv` trace; a synthetic clustered trace is used when absent.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Policies to run (comma separated or repeated).
    #[arg(long, value_delimiter = ',')]
    policy: Vec<PolicyKind>,
    /// Budget ratios in (0, 1] (comma separated or repeated).
    #[arg(long, value_delimiter = ',')]
    budget: Vec<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    m_top: Option<usize>,
    #[arg(long)]
    top_t: Option<usize>,
    /// Observation window length.
    #[arg(long)]
    window: Option<usize>,
    /// Odd pooling kernel width.
    #[arg(long)]
    kernel: Option<usize>,
    #[arg(long)]
    sinks: Option<usize>,
    #[arg(long)]
    recents: Option<usize>,
    /// Number of trailing query rows used as decode probes.
    #[arg(long)]
    decode_queries: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (directory for `all`); stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    format: Option<ReportFormat>,
}

#[derive(Args)]
struct ContribArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    head_dim: Option<usize>,
    #[arg(long)]
    out_dim: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileKind {
    Uniform,
    Clustered,
    Needle,
}

#[derive(Args)]
struct GenArgs {
    /// Destination `.tkv` file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "clustered")]
    profile: ProfileKind,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 16)]
    heads: usize,
    #[arg(long, default_value_t = 2048)]
    seq_len: usize,
    #[arg(long, default_value_t = 32)]
    head_dim: usize,
    /// Planted heads per layer (clustered).
    #[arg(long, default_value_t = 2)]
    planted: usize,
    /// Per-entry noise added to shared heads (clustered).
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Needle row index (needle); defaults to the middle of the sequence.
    #[arg(long)]
    needle_position: Option<usize>,
    #[arg(long, default_value_t = 8.0)]
    strength: f64,
}

impl Common {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_json_file(path).with_context(|| format!("reading {}", path.display()))?,
            None => RunConfig::default(),
        };
        if let Some(p) = &self.trace {
            c.trace = Some(TraceSource::File(p.clone()));
        }
        if !self.policy.is_empty() {
            c.policies = self.policy.clone();
        }
        if !self.budget.is_empty() {
            c.budgets = self.budget.clone();
        }
        macro_rules! take {
            ($($field:ident),*) => {$(if let Some(v) = self.$field { c.$field = v; })*};
        }
        take!(beta, m_top, top_t, window, kernel, sinks, recents, seed);
        if self.decode_queries.is_some() {
            c.decode_queries = self.decode_queries;
        }
        if self.out.is_some() {
            c.out = self.out.clone();
        }
        c.validate()?;
        Ok(c)
    }

    fn format(&self, fallback: ReportFormat) -> ReportFormat {
        self.format.unwrap_or(fallback)
    }
}

fn load_trace(config: &RunConfig) -> anyhow::Result<headcache::trace::AttentionTrace> {
    let source = config.trace_source();
    let trace = source.load().with_context(|| match &source {
        TraceSource::File(p) => format!("loading trace {}", p.display()),
        TraceSource::Synthetic { .. } => "generating synthetic trace".to_owned(),
    })?;
    Ok(trace)
}

/// Opens `path`, or stdout when `None`.
fn sink(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json(path: Option<&Path>, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let mut out = sink(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn gen(args: &GenArgs) -> anyhow::Result<()> {
    let profile = match args.profile {
        ProfileKind::Uniform => SyntheticProfile::uniform(args.seed),
        ProfileKind::Clustered => SyntheticProfile::clustered(args.seed, args.planted, args.noise),
        ProfileKind::Needle => {
            SyntheticProfile::needle(args.seed, args.needle_position.unwrap_or(args.seq_len / 2), args.strength)
        }
    };
    let shape = TraceShape::new(args.layers, args.heads, args.seq_len, args.head_dim);
    let trace = gen_synthetic_trace(&profile, shape)?;
    let file = File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let bytes = write_trace(&trace, BufWriter::new(file))?;
    let summary = json!({
        "path": args.out,
        "bytes": bytes,
        "shape": shape,
        "profile": profile,
        "planted_heads": (0..shape.layers).map(|r| profile.planted_heads(shape.heads, r)).collect::<Vec<_>>(),
    });
    write_json(None, &summary)
}

fn compress(args: &Common) -> anyhow::Result<()> {
    let config = args.resolve()?;
    let trace = load_trace(&config)?;
    let (_, plans) = compress_run(&trace, &config)?;
    if plans.runs.is_empty() {
        if let Some(first) = plans.skipped.first() {
            return Err(anyhow!(Failure {
                kind: first.kind.clone(),
                message: first.reason.clone(),
            }));
        }
    }
    write_json(config.out.as_deref(), &plans)
}

fn eval(args: &Common) -> anyhow::Result<()> {
    let config = args.resolve()?;
    let trace = load_trace(&config)?;
    let report = run_pipeline(&trace, &config, false)?;
    let mut out = sink(config.out.as_deref())?;
    export_report(&report, args.format(ReportFormat::Json), &mut out)?;
    out.flush()?;
    Ok(())
}

fn contrib(args: &ContribArgs) -> anyhow::Result<()> {
    let config = args.common.resolve()?;
    let mut suite = config.contrib_config();
    if args.common.seed.is_some() {
        suite.seed = config.seed;
    }
    suite.trials = args.trials.unwrap_or(suite.trials);
    suite.heads = args.heads.unwrap_or(suite.heads);
    suite.head_dim = args.head_dim.unwrap_or(suite.head_dim);
    suite.out_dim = args.out_dim.unwrap_or(suite.out_dim);
    let report = verify_bound_suite_with(&suite)?;
    write_json(config.out.as_deref(), &report)
}

fn pca(args: &Common) -> anyhow::Result<()> {
    let config = args.resolve()?;
    let trace = load_trace(&config)?;
    let points = pca_points(&classify_trace(&trace, &config)?)?;
    match args.format(ReportFormat::Csv) {
        ReportFormat::Csv => {
            let mut out = sink(config.out.as_deref())?;
            export_pca(&points, &mut out)?;
            out.flush()?;
            Ok(())
        }
        ReportFormat::Json => write_json(config.out.as_deref(), &points),
    }
}

fn all(args: &Common) -> anyhow::Result<()> {
    let config = args.resolve()?;
    let dir = config.out.clone().unwrap_or_else(|| PathBuf::from("headcache-out"));
    let report = run_all(&config, &dir)?;
    let runs: Vec<_> = report
        .runs
        .iter()
        .map(|r| {
            json!({
                "policy": r.policy,
                "budget_ratio": r.budget_ratio,
                "mean_l2_error": r.mean_l2_error,
                "mean_cosine": r.mean_cosine,
                "memory_ratio": r.memory.ratio_vs_full,
            })
        })
        .collect();
    write_json(
        None,
        &json!({
            "out": dir,
            "files": ["report.json", "report.csv", "pca.csv"],
            "runs": runs,
            "skipped": report.skipped.len(),
        }),
    )
}

/// An error with an explicit kind, for failures the library reports as data.
#[derive(Debug)]
struct Failure {
    kind: String,
    message: String,
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

fn error_kind(err: &anyhow::Error) -> String {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<headcache::Error>() {
            return e.kind().to_owned();
        }
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return f.kind.clone();
        }
        if cause.downcast_ref::<io::Error>().is_some() {
            return "io".to_owned();
        }
    }
    "internal".to_owned()
}

fn report_error(kind: &str, message: &str) {
    eprintln!("{}", json!({ "error": { "kind": kind, "message": message } }));
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report_error("usage", e.render().to_string().trim());
            return ExitCode::from(2);
        }
    };
    let result = match &cli.command {
        Command::Gen(a) => gen(a),
        Command::Compress(a) => compress(a),
        Command::Eval(a) => eval(a),
        Command::Contrib(a) => contrib(a),
        Command::Pca(a) => pca(a),
        Command::All(a) => all(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(&error_kind(&e), &format!("{e:#}"));
            ExitCode::FAILURE
        }
    }
}

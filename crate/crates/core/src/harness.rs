//! Pipeline orchestration, run configuration and report export.

use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::budget::{apply_policy, BudgetPlan, PolicyKind, PolicyParams};
use crate::cache::{build_compressed_cache, memory_footprint, CompressedCache, MemoryFootprint};
use crate::contrib::{verify_bound_suite_with, BoundSuiteConfig, BoundSuiteReport};
use crate::error::{param, Error, Result};
use crate::fidelity::{fidelity_eval, DecodeQueries, FidelityMetrics};
use crate::semantic::{heterogeneous_schedule, profile_layer, HeadClass, HeterogeneitySchedule, LayerProfile};
use crate::tensor::pca_2d;
use crate::trace::{gen_synthetic_trace, read_trace, AttentionTrace, SyntheticProfile, TraceShape};

/// Where the trace comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceSource {
    File(PathBuf),
    Synthetic {
        profile: SyntheticProfile,
        shape: TraceShape,
    },
}

impl TraceSource {
    pub fn load(&self) -> Result<AttentionTrace> {
        match self {
            TraceSource::File(path) => read_trace(BufReader::new(File::open(path)?)),
            TraceSource::Synthetic { profile, shape } => gen_synthetic_trace(profile, *shape),
        }
    }

    fn describe(&self) -> String {
        match self {
            TraceSource::File(path) => path.display().to_string(),
            TraceSource::Synthetic { profile, .. } => {
                format!("synthetic:{}", serde_json::to_value(&profile.kind).map_or_else(
                    |_| "?".to_owned(),
                    |v| v["kind"].as_str().unwrap_or("?").to_owned(),
                ))
            }
        }
    }
}

/// Everything a run needs. Loadable from JSON; absent keys take defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub trace: Option<TraceSource>,
    pub policies: Vec<PolicyKind>,
    pub budgets: Vec<f64>,
    pub beta: f64,
    pub m_top: usize,
    pub top_t: usize,
    pub window: usize,
    pub kernel: usize,
    pub sinks: usize,
    pub recents: usize,
    /// Defaults to the observation window length.
    pub decode_queries: Option<usize>,
    /// Evaluate the queries just before the observation window instead of
    /// the window itself.
    pub held_out: bool,
    pub seed: u64,
    pub contrib: Option<BoundSuiteConfig>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            trace: None,
            policies: vec![
                PolicyKind::Full,
                PolicyKind::TaskKv,
                PolicyKind::Streaming,
                PolicyKind::UniformTopk,
            ],
            budgets: vec![0.2, 0.4, 0.6, 0.8],
            beta: 0.25,
            m_top: 4,
            top_t: 256,
            window: 32,
            kernel: 7,
            sinks: 16,
            recents: 256,
            decode_queries: None,
            held_out: false,
            seed: 7,
            contrib: None,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }

    /// Trace used when none is configured: a clustered synthetic trace.
    pub fn default_trace(&self) -> TraceSource {
        TraceSource::Synthetic {
            profile: SyntheticProfile::clustered(self.seed, 2, 0.0),
            shape: TraceShape::new(2, 16, 2048, 32),
        }
    }

    pub fn trace_source(&self) -> TraceSource {
        self.trace.clone().unwrap_or_else(|| self.default_trace())
    }

    pub fn decode(&self) -> DecodeQueries {
        let count = self.decode_queries.unwrap_or(self.window);
        DecodeQueries {
            count,
            skip_last: if self.held_out { self.window } else { 0 },
        }
    }

    pub fn policy_params(&self, budget_ratio: f64) -> PolicyParams {
        PolicyParams {
            budget_ratio,
            sinks: self.sinks,
            recents: self.recents,
            window: self.window,
            kernel: self.kernel,
        }
    }

    pub fn contrib_config(&self) -> BoundSuiteConfig {
        self.contrib
            .unwrap_or_else(|| BoundSuiteConfig::new(self.seed, 100, 8, 16, 32))
    }

    pub fn validate(&self) -> Result<()> {
        if self.top_t == 0 {
            return Err(param("top-t must be at least 1"));
        }
        for &b in &self.budgets {
            self.policy_params(b).validate()?;
        }
        if self.budgets.is_empty() && !self.policies.is_empty() {
            return Err(param("at least one budget ratio is required"));
        }
        Ok(())
    }
}

/// Schedule plus per-layer head profiles for a whole trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceClassification {
    pub schedule: HeterogeneitySchedule,
    pub layers: Vec<LayerProfile>,
}

impl TraceClassification {
    pub fn classes(&self, layer: usize) -> Vec<HeadClass> {
        self.layers[layer].classes()
    }
}

/// Profiles every layer: window scores, top-t semantic vectors, distances,
/// then classification with the scheduled heterogeneous count.
pub fn classify_trace(trace: &AttentionTrace, config: &RunConfig) -> Result<TraceClassification> {
    let schedule = heterogeneous_schedule(trace.num_heads(), config.beta, config.m_top, trace.num_layers())?;
    let layers = (0..trace.num_layers())
        .into_par_iter()
        .map(|r| {
            profile_layer(
                r,
                trace.layer(r),
                config.window,
                config.top_t,
                schedule.per_layer_counts[r],
            )
        })
        .collect::<Result<Vec<_>>>()?;
    log::info!("classified {} layers, heterogeneous counts {:?}", layers.len(), schedule.per_layer_counts);
    Ok(TraceClassification { schedule, layers })
}

/// One policy at one budget: its plans, cache and memory cost.
pub fn compress_policy(
    trace: &AttentionTrace,
    classification: &TraceClassification,
    policy: PolicyKind,
    params: &PolicyParams,
) -> Result<(Vec<BudgetPlan>, CompressedCache)> {
    let plans = (0..trace.num_layers())
        .into_par_iter()
        .map(|r| apply_policy(r, trace.layer(r), &classification.classes(r), policy, params))
        .collect::<Result<Vec<_>>>()?;
    let cache = build_compressed_cache(trace, &plans)?;
    Ok((plans, cache))
}

/// Serializable plans for one (policy, budget) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSet {
    pub policy: PolicyKind,
    pub budget_ratio: f64,
    pub memory: MemoryFootprint,
    pub plans: Vec<BudgetPlan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedRun {
    pub policy: PolicyKind,
    pub budget_ratio: f64,
    pub kind: String,
    pub reason: String,
}

/// Output of [`compress_run`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlansFile {
    pub schedule: Vec<usize>,
    pub runs: Vec<PlanSet>,
    pub skipped: Vec<SkippedRun>,
}

/// Classifies the trace and plans every configured (policy, budget) pair.
/// Infeasible budgets are recorded as skipped rather than aborting the run.
pub fn compress_run(trace: &AttentionTrace, config: &RunConfig) -> Result<(TraceClassification, PlansFile)> {
    config.validate()?;
    let classification = classify_trace(trace, config)?;
    let mut runs = Vec::new();
    let mut skipped = Vec::new();
    for &policy in &config.policies {
        for &ratio in &config.budgets {
            match compress_policy(trace, &classification, policy, &config.policy_params(ratio)) {
                Ok((plans, cache)) => {
                    let memory = memory_footprint(&cache);
                    log::info!("planned {policy} at budget {ratio}: {} tokens retained", memory.tokens_retained);
                    runs.push(PlanSet {
                        policy,
                        budget_ratio: ratio,
                        memory,
                        plans,
                    })
                }
                Err(e) if is_infeasible(&e) => skipped.push(skip(policy, ratio, &e)),
                Err(e) => return Err(e),
            }
        }
    }
    let file = PlansFile {
        schedule: classification.schedule.per_layer_counts.clone(),
        runs,
        skipped,
    };
    Ok((classification, file))
}

fn is_infeasible(e: &Error) -> bool {
    matches!(e.root(), Error::InfeasibleBudget { .. })
}

fn skip(policy: PolicyKind, budget_ratio: f64, e: &Error) -> SkippedRun {
    log::warn!("skipping {policy} at budget {budget_ratio}: {e}");
    SkippedRun {
        policy,
        budget_ratio,
        kind: e.kind().to_owned(),
        reason: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub source: String,
    pub layers: usize,
    pub heads: usize,
    pub seq_len: usize,
    pub head_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportParams {
    pub beta: f64,
    pub m_top: usize,
    pub top_t: usize,
    pub window: usize,
    pub kernel: usize,
    pub sinks: usize,
    pub recents: usize,
    pub decode: DecodeQueries,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSummary {
    pub head: usize,
    pub distance: f64,
    pub class: HeadClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub layer: usize,
    pub heterogeneous_count: usize,
    pub heads: Vec<HeadSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaPoint {
    pub layer: usize,
    pub head: usize,
    pub x: f64,
    pub y: f64,
    pub class: HeadClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadRow {
    pub layer: usize,
    pub head: usize,
    pub class: HeadClass,
    pub retained: usize,
    pub l2_error: f64,
    pub cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRun {
    pub policy: PolicyKind,
    pub budget_ratio: f64,
    pub memory: MemoryFootprint,
    pub mean_l2_error: f64,
    pub mean_cosine: f64,
    pub clamped_layers: Vec<usize>,
    pub heads: Vec<HeadRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub trace: TraceSummary,
    pub params: ReportParams,
    pub schedule: Vec<usize>,
    pub layers: Vec<LayerSummary>,
    pub pca: Vec<PcaPoint>,
    pub runs: Vec<PolicyRun>,
    pub skipped: Vec<SkippedRun>,
    pub contribution: Option<BoundSuiteReport>,
}

/// Scores a set of plans against the trace they were built from.
pub fn evaluate_plan_set(trace: &AttentionTrace, set: &PlanSet, queries: DecodeQueries) -> Result<PolicyRun> {
    let cache = build_compressed_cache(trace, &set.plans)?;
    let metrics = fidelity_eval(trace, &cache, queries)?;
    Ok(policy_run(set, &cache, &metrics))
}

fn policy_run(set: &PlanSet, cache: &CompressedCache, metrics: &FidelityMetrics) -> PolicyRun {
    let mut heads = Vec::new();
    for (r, plan) in set.plans.iter().enumerate() {
        for (h, f) in metrics.per_head[r].iter().enumerate() {
            heads.push(HeadRow {
                layer: r,
                head: h,
                class: plan.classes.get(h).copied().unwrap_or(HeadClass::NonHeterogeneous),
                retained: cache.layers[r][h].slots(),
                l2_error: f.l2_error,
                cosine: f.cosine,
            });
        }
    }
    PolicyRun {
        policy: set.policy,
        budget_ratio: set.budget_ratio,
        memory: memory_footprint(cache),
        mean_l2_error: metrics.mean_l2_error,
        mean_cosine: metrics.mean_cosine,
        clamped_layers: set.plans.iter().filter(|p| p.clamped).map(|p| p.layer).collect(),
        heads,
    }
}

/// Per-layer PCA of the heads' semantic vectors.
pub fn pca_points(classification: &TraceClassification) -> Result<Vec<PcaPoint>> {
    let mut points = Vec::new();
    for layer in &classification.layers {
        let vectors: Vec<&[f64]> = layer.heads.iter().map(|h| h.semantic.values.as_slice()).collect();
        for (head, xy) in layer.heads.iter().zip(pca_2d(&vectors)?) {
            points.push(PcaPoint {
                layer: layer.layer,
                head: head.head,
                x: xy[0],
                y: xy[1],
                class: head.class,
            });
        }
    }
    Ok(points)
}

/// Full pipeline: classify, plan and evaluate every (policy, budget) pair,
/// export PCA coordinates, and optionally run the contribution-bound suite.
pub fn run_pipeline(trace: &AttentionTrace, config: &RunConfig, with_contrib: bool) -> Result<EvalReport> {
    let decode = config.decode();
    let (classification, plans) = compress_run(trace, config)?;
    let runs = plans
        .runs
        .iter()
        .map(|set| evaluate_plan_set(trace, set, decode))
        .collect::<Result<Vec<_>>>()?;
    let contribution = if with_contrib {
        log::info!("checking the contribution bound");
        Some(verify_bound_suite_with(&config.contrib_config())?)
    } else {
        None
    };
    Ok(EvalReport {
        trace: TraceSummary {
            source: config.trace_source().describe(),
            layers: trace.num_layers(),
            heads: trace.num_heads(),
            seq_len: trace.seq_len(),
            head_dim: trace.head_dim(),
        },
        params: ReportParams {
            beta: config.beta,
            m_top: config.m_top,
            top_t: config.top_t,
            window: config.window,
            kernel: config.kernel,
            sinks: config.sinks,
            recents: config.recents,
            decode,
        },
        schedule: plans.schedule,
        layers: layer_summaries(&classification),
        pca: pca_points(&classification)?,
        runs,
        skipped: plans.skipped,
        contribution,
    })
}

pub fn layer_summaries(classification: &TraceClassification) -> Vec<LayerSummary> {
    classification
        .layers
        .iter()
        .map(|l| LayerSummary {
            layer: l.layer,
            heterogeneous_count: l.heterogeneous_count,
            heads: l
                .heads
                .iter()
                .map(|h| HeadSummary {
                    head: h.head,
                    distance: h.distance_to_center,
                    class: h.class,
                })
                .collect(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(param(format!("unknown format {other:?}; expected json or csv"))),
        }
    }
}

struct Counting<W> {
    inner: W,
    bytes: u64,
}

impl<W: Write> Write for Counting<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.bytes += n as u64;
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

pub const METRICS_CSV_HEADER: [&str; 8] = ["policy", "budget_ratio", "layer", "head", "class", "retained", "l2_error", "cosine"];
pub const PCA_CSV_HEADER: [&str; 5] = ["layer", "head", "x", "y", "class"];

/// Writes the report: canonical nested JSON, or the flat per-head CSV.
/// Returns the number of bytes written.
pub fn export_report<W: Write>(report: &EvalReport, format: ReportFormat, sink: W) -> Result<u64> {
    let mut out = Counting { inner: sink, bytes: 0 };
    match format {
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut out, report)?;
            out.write_all(b"\n")?;
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(METRICS_CSV_HEADER)?;
            for run in &report.runs {
                for row in &run.heads {
                    w.write_record([
                        run.policy.as_str().to_owned(),
                        run.budget_ratio.to_string(),
                        row.layer.to_string(),
                        row.head.to_string(),
                        row.class.as_str().to_owned(),
                        row.retained.to_string(),
                        row.l2_error.to_string(),
                        row.cosine.to_string(),
                    ])?;
                }
            }
            w.flush()?;
        }
    }
    out.flush()?;
    Ok(out.bytes)
}

/// Writes PCA coordinates as `layer,head,x,y,class`.
pub fn export_pca<W: Write>(points: &[PcaPoint], sink: W) -> Result<u64> {
    let mut out = Counting { inner: sink, bytes: 0 };
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(PCA_CSV_HEADER)?;
        for p in points {
            w.write_record([
                p.layer.to_string(),
                p.head.to_string(),
                p.x.to_string(),
                p.y.to_string(),
                p.class.as_str().to_owned(),
            ])?;
        }
        w.flush()?;
    }
    Ok(out.bytes)
}

/// Runs the pipeline and writes `report.json`, `report.csv` and `pca.csv`
/// into `dir`.
pub fn run_all(config: &RunConfig, dir: &Path) -> Result<EvalReport> {
    let trace = config.trace_source().load()?;
    let report = run_pipeline(&trace, config, true)?;
    std::fs::create_dir_all(dir)?;
    export_report(&report, ReportFormat::Json, io::BufWriter::new(File::create(dir.join("report.json"))?))?;
    export_report(&report, ReportFormat::Csv, io::BufWriter::new(File::create(dir.join("report.csv"))?))?;
    export_pca(&report.pca, io::BufWriter::new(File::create(dir.join("pca.csv"))?))?;
    Ok(report)
}

//! Head-removal contribution and its offset-based upper bound.
//!
//! For a single multi-head-attention output `y = Σ_i v_i·W_i`, dropping head
//! `j` changes `y` by exactly `v_j·W_j`. Writing `v_j = ṽ + δ_j` around the
//! mean head output and bounding every block by `C = max_i ‖W_i‖₂` gives
//!
//! ```text
//! ‖Δy_j‖² ≤ (‖ṽ‖ + ‖δ_j‖)² · C²
//! ```
//!
//! The functions here compute both sides on concrete instances so the
//! inequality can be checked empirically.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim, param, Error, Result};
use crate::rng::SampleStream;
use crate::tensor::{norm, spectral_norm, sub, Matrix};

/// One layer's head outputs and the matching output-projection blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct MhaInstance {
    head_values: Vec<Vec<f64>>,
    out_blocks: Vec<Matrix>,
}

impl MhaInstance {
    pub fn new(head_values: Vec<Vec<f64>>, out_blocks: Vec<Matrix>) -> Result<Self> {
        if head_values.is_empty() {
            return Err(Error::EmptyInput("instance needs at least one head"));
        }
        if head_values.len() != out_blocks.len() {
            return Err(dim(format!(
                "{} head outputs but {} projection blocks",
                head_values.len(),
                out_blocks.len()
            )));
        }
        let d = head_values[0].len();
        let n_out = out_blocks[0].cols();
        for (j, (v, w)) in head_values.iter().zip(&out_blocks).enumerate() {
            if v.len() != d || w.rows() != d || w.cols() != n_out {
                return Err(dim(format!(
                    "head {j}: value length {} and block {}x{} inconsistent with d={d}, N_out={n_out}",
                    v.len(),
                    w.rows(),
                    w.cols()
                )));
            }
        }
        Ok(Self {
            head_values,
            out_blocks,
        })
    }

    /// Random instance: a shared mean vector plus per-head Gaussian offsets of
    /// scale `spread`; blocks have `N(0, 1/d)` entries.
    pub fn random(stream: &mut SampleStream, n: usize, d: usize, n_out: usize, spread: f64) -> Result<Self> {
        let common = stream.normals(d);
        let head_values = (0..n)
            .map(|_| common.iter().map(|c| c + spread * stream.normal()).collect())
            .collect();
        let scale = 1.0 / (d as f64).sqrt();
        let out_blocks = (0..n)
            .map(|_| Matrix::new(d, n_out, stream.normals(d * n_out).into_iter().map(|x| x * scale).collect()))
            .collect::<Result<_>>()?;
        Self::new(head_values, out_blocks)
    }

    pub fn num_heads(&self) -> usize {
        self.head_values.len()
    }

    pub fn head_values(&self) -> &[Vec<f64>] {
        &self.head_values
    }

    pub fn out_blocks(&self) -> &[Matrix] {
        &self.out_blocks
    }

    /// `y = Σ_{i ∉ skip} v_i·W_i`.
    pub fn output_without(&self, skip: Option<usize>) -> Vec<f64> {
        let mut y = vec![0.0; self.out_blocks[0].cols()];
        for (i, (v, w)) in self.head_values.iter().zip(&self.out_blocks).enumerate() {
            if Some(i) == skip {
                continue;
            }
            let part = w.left_mul(v).expect("validated shapes");
            y.iter_mut().zip(part).for_each(|(a, b)| *a += b);
        }
        y
    }

    pub fn mean_value(&self) -> Vec<f64> {
        let d = self.head_values[0].len();
        let mut mean = vec![0.0; d];
        for v in &self.head_values {
            mean.iter_mut().zip(v).for_each(|(m, x)| *m += x);
        }
        let n = self.num_heads() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    fn check_head(&self, j: usize) -> Result<()> {
        if j >= self.num_heads() {
            return Err(param(format!("head {j} out of range for {} heads", self.num_heads())));
        }
        Ok(())
    }
}

/// `‖v_j·W_j‖²`.
pub fn head_contribution(instance: &MhaInstance, j: usize) -> Result<f64> {
    instance.check_head(j)?;
    let out = instance.out_blocks[j].left_mul(&instance.head_values[j])?;
    Ok(out.iter().map(|x| x * x).sum())
}

/// `‖y − y_without_j‖²`, computed from the two full sums.
pub fn removal_difference(instance: &MhaInstance, j: usize) -> Result<f64> {
    instance.check_head(j)?;
    let y = instance.output_without(None);
    let y_minus = instance.output_without(Some(j));
    Ok(sub(&y, &y_minus).iter().map(|x| x * x).sum())
}

/// `(‖ṽ‖ + ‖δ_j‖)² · C²` with `C` the largest block spectral norm.
pub fn contribution_bound(instance: &MhaInstance, j: usize) -> Result<f64> {
    instance.check_head(j)?;
    let mean = instance.mean_value();
    let offset = sub(&instance.head_values[j], &mean);
    let c = max_block_norm(instance)?;
    Ok((norm(&mean) + norm(&offset)).powi(2) * c * c)
}

fn max_block_norm(instance: &MhaInstance) -> Result<f64> {
    instance
        .out_blocks
        .iter()
        .map(spectral_norm)
        .try_fold(0.0_f64, |acc, n| n.map(|n| acc.max(n)))
}

/// Every quantity of the bound for every head of an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionResult {
    pub contributions: Vec<f64>,
    pub removal_differences: Vec<f64>,
    pub mean_vector: Vec<f64>,
    pub offsets: Vec<Vec<f64>>,
    pub offset_norms: Vec<f64>,
    pub block_norms: Vec<f64>,
    pub c_bound: f64,
    pub bound_rhs: Vec<f64>,
    /// Same bound with each head's own block norm in place of `C`.
    pub per_head_bound: Vec<f64>,
}

pub fn analyze(instance: &MhaInstance) -> Result<ContributionResult> {
    let n = instance.num_heads();
    let mean = instance.mean_value();
    let offsets: Vec<Vec<f64>> = instance.head_values.iter().map(|v| sub(v, &mean)).collect();
    let offset_norms: Vec<f64> = offsets.iter().map(|o| norm(o)).collect();
    let block_norms = instance.out_blocks.iter().map(spectral_norm).collect::<Result<Vec<_>>>()?;
    let c_bound = block_norms.iter().copied().fold(0.0, f64::max);
    let mean_norm = norm(&mean);
    Ok(ContributionResult {
        contributions: (0..n).map(|j| head_contribution(instance, j)).collect::<Result<_>>()?,
        removal_differences: (0..n).map(|j| removal_difference(instance, j)).collect::<Result<_>>()?,
        bound_rhs: offset_norms.iter().map(|o| (mean_norm + o).powi(2) * c_bound * c_bound).collect(),
        per_head_bound: offset_norms
            .iter()
            .zip(&block_norms)
            .map(|(o, c)| (mean_norm + o).powi(2) * c * c)
            .collect(),
        mean_vector: mean,
        offsets,
        offset_norms,
        block_norms,
        c_bound,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundSuiteConfig {
    pub seed: u64,
    pub trials: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub out_dim: usize,
    /// Scale of per-head offsets around the shared mean; 0 makes all heads equal.
    pub spread: f64,
    /// Token rows for the matrix-output variant of the bound.
    pub matrix_rows: usize,
}

impl BoundSuiteConfig {
    pub fn new(seed: u64, trials: usize, heads: usize, head_dim: usize, out_dim: usize) -> Self {
        Self {
            seed,
            trials,
            heads,
            head_dim,
            out_dim,
            spread: 0.5,
            matrix_rows: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSuiteReport {
    pub config: BoundSuiteConfig,
    /// Heads whose contribution exceeds the bound by more than `1e-9` relative.
    pub violations: usize,
    pub max_ratio: f64,
    /// Mean Spearman correlation between `‖δ_j‖` and contribution; trials
    /// where either side is constant are skipped. Descriptive only.
    pub rank_corr: f64,
    pub rank_corr_trials: usize,
    /// Largest relative gap between the closed form and the removal difference.
    pub max_closed_form_rel_err: f64,
    pub closed_form_mismatches: usize,
    /// Largest contribution/bound ratio with per-head block norms.
    pub max_ratio_per_head_norm: f64,
    /// Violations of the Frobenius-norm analogue with `matrix_rows`-row head outputs.
    pub matrix_violations: usize,
}

struct TrialOutcome {
    violations: usize,
    max_ratio: f64,
    rank_corr: Option<f64>,
    max_rel_err: f64,
    mismatches: usize,
    max_ratio_per_head: f64,
    matrix_violations: usize,
}

pub fn verify_bound_suite(seed: u64, trials: usize, heads: usize, head_dim: usize, out_dim: usize) -> Result<BoundSuiteReport> {
    verify_bound_suite_with(&BoundSuiteConfig::new(seed, trials, heads, head_dim, out_dim))
}

/// Runs `trials` random instances; trial `i` draws from stream `i` of the
/// suite seed, so results do not depend on scheduling.
pub fn verify_bound_suite_with(config: &BoundSuiteConfig) -> Result<BoundSuiteReport> {
    if config.trials == 0 {
        return Err(param("trials must be at least 1"));
    }
    if config.heads == 0 || config.head_dim == 0 || config.out_dim == 0 {
        return Err(param("heads, head_dim and out_dim must be at least 1"));
    }
    if !(config.spread.is_finite() && config.spread >= 0.0) {
        return Err(param("spread must be finite and ≥ 0"));
    }
    let outcomes = (0..config.trials)
        .into_par_iter()
        .map(|trial| run_trial(config, trial))
        .collect::<Result<Vec<_>>>()?;

    let corrs: Vec<f64> = outcomes.iter().filter_map(|o| o.rank_corr).collect();
    Ok(BoundSuiteReport {
        config: *config,
        violations: outcomes.iter().map(|o| o.violations).sum(),
        max_ratio: outcomes.iter().map(|o| o.max_ratio).fold(0.0, f64::max),
        rank_corr: if corrs.is_empty() {
            0.0
        } else {
            corrs.iter().sum::<f64>() / corrs.len() as f64
        },
        rank_corr_trials: corrs.len(),
        max_closed_form_rel_err: outcomes.iter().map(|o| o.max_rel_err).fold(0.0, f64::max),
        closed_form_mismatches: outcomes.iter().map(|o| o.mismatches).sum(),
        max_ratio_per_head_norm: outcomes.iter().map(|o| o.max_ratio_per_head).fold(0.0, f64::max),
        matrix_violations: outcomes.iter().map(|o| o.matrix_violations).sum(),
    })
}

fn run_trial(config: &BoundSuiteConfig, trial: usize) -> Result<TrialOutcome> {
    let mut stream = SampleStream::new(config.seed, trial as u64);
    let instance = MhaInstance::random(&mut stream, config.heads, config.head_dim, config.out_dim, config.spread)?;
    let result = analyze(&instance)?;
    let mut out = TrialOutcome {
        violations: 0,
        max_ratio: 0.0,
        rank_corr: spearman(&result.offset_norms, &result.contributions),
        max_rel_err: 0.0,
        mismatches: 0,
        max_ratio_per_head: 0.0,
        matrix_violations: 0,
    };
    for j in 0..instance.num_heads() {
        let (c, b) = (result.contributions[j], result.bound_rhs[j]);
        if c > b + 1e-9 * b {
            out.violations += 1;
        }
        out.max_ratio = out.max_ratio.max(ratio(c, b));
        out.max_ratio_per_head = out.max_ratio_per_head.max(ratio(c, result.per_head_bound[j]));
        let rel = relative_gap(c, result.removal_differences[j]);
        out.max_rel_err = out.max_rel_err.max(rel);
        if rel > 1e-9 {
            out.mismatches += 1;
        }
    }
    if config.matrix_rows > 0 {
        out.matrix_violations = matrix_trial(&mut stream, config, &instance, result.c_bound)?;
    }
    Ok(out)
}

/// Frobenius analogue: each head contributes an `rows × d` block `V_j`, and
/// `‖V_j·W_j‖_F² ≤ (‖Ṽ‖_F + ‖Δ_j‖_F)²·C²`.
fn matrix_trial(stream: &mut SampleStream, config: &BoundSuiteConfig, instance: &MhaInstance, c: f64) -> Result<usize> {
    let (rows, d, n) = (config.matrix_rows, config.head_dim, config.heads);
    let common = stream.normals(rows * d);
    let blocks = (0..n)
        .map(|_| {
            let data = common.iter().map(|x| x + config.spread * stream.normal()).collect();
            Matrix::new(rows, d, data)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut mean = vec![0.0; rows * d];
    for b in &blocks {
        mean.iter_mut().zip(b.as_slice()).for_each(|(m, x)| *m += x / n as f64);
    }
    let mean_norm = norm(&mean);
    let mut violations = 0;
    for (vj, wj) in blocks.iter().zip(instance.out_blocks()) {
        let lhs = vj.matmul(wj)?.frobenius_norm().powi(2);
        let rhs = (mean_norm + norm(&sub(vj.as_slice(), &mean))).powi(2) * c * c;
        if lhs > rhs + 1e-9 * rhs {
            violations += 1;
        }
    }
    Ok(violations)
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

fn relative_gap(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Spearman rank correlation with average ranks for ties; `None` when either
/// input is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

//! Per-head token budgets and retention policies.
//!
//! Heterogeneous heads keep every position. The remaining budget of a layer
//! is split evenly over the non-heterogeneous heads, each of which keeps
//! attention sinks, recent tokens, and the `k` highest-scoring middle
//! positions ("middle activations") under pooled observation-window scores.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::semantic::{top_indices, window_column_scores, HeadClass};
use crate::tensor::AttentionInputs;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    /// Keep everything.
    Full,
    /// Heterogeneous heads full; others sinks + recents + middle activations.
    TaskKv,
    /// Sinks plus a recency window sized to the per-head budget.
    Streaming,
    /// Per-head top scores under an equal split, plus the observation window.
    UniformTopk,
    /// Like `TaskKv`, but middle slots go to extra recent tokens.
    NoCache,
    /// Like `TaskKv`, but middle slots hold averaged groups of middle tokens.
    CompressedCache,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::Full,
        PolicyKind::TaskKv,
        PolicyKind::Streaming,
        PolicyKind::UniformTopk,
        PolicyKind::NoCache,
        PolicyKind::CompressedCache,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Full => "full",
            PolicyKind::TaskKv => "task-kv",
            PolicyKind::Streaming => "streaming",
            PolicyKind::UniformTopk => "uniform-topk",
            PolicyKind::NoCache => "no-cache",
            PolicyKind::CompressedCache => "compressed-cache",
        }
    }

    /// Whether the policy reads the head classification.
    pub fn uses_classification(self) -> bool {
        matches!(self, PolicyKind::TaskKv | PolicyKind::NoCache | PolicyKind::CompressedCache)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| param(format!("unknown policy {s:?}")))
    }
}

/// Knobs shared by every policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub budget_ratio: f64,
    pub sinks: usize,
    pub recents: usize,
    pub window: usize,
    pub kernel: usize,
}

impl PolicyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.budget_ratio > 0.0 && self.budget_ratio <= 1.0) {
            return Err(param(format!("budget ratio must be in (0, 1], got {}", self.budget_ratio)));
        }
        if self.window == 0 {
            return Err(param("observation window must be at least 1"));
        }
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return Err(param(format!("pooling kernel must be odd and ≥ 1, got {}", self.kernel)));
        }
        Ok(())
    }

    /// Per-layer token budget `floor(ratio · N · n)`.
    pub fn layer_budget(&self, seq_len: usize, num_heads: usize) -> usize {
        (self.budget_ratio * seq_len as f64 * num_heads as f64).floor() as usize
    }
}

/// Retention decision for one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetPlan {
    pub layer: usize,
    pub policy: PolicyKind,
    pub seq_len: usize,
    pub total_budget: usize,
    /// Sinks kept by each non-heterogeneous head (after any clamp).
    pub sinks: usize,
    /// Recent tokens kept by each non-heterogeneous head (after any clamp).
    pub recents: usize,
    pub middle_k: usize,
    /// Set when the per-head share could not cover the requested sinks and
    /// recents, so both were shrunk to fit.
    pub clamped: bool,
    pub heterogeneous_count: usize,
    pub classes: Vec<HeadClass>,
    pub per_head_retained: Vec<Vec<usize>>,
    /// Half-open `[start, end)` spans averaged into one synthetic entry each
    /// (`compressed-cache` only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub compensation_groups: Vec<Vec<[usize; 2]>>,
}

impl BudgetPlan {
    /// Cache slots used by head `h`, synthetic entries included.
    pub fn head_slots(&self, h: usize) -> usize {
        self.per_head_retained[h].len() + self.compensation_groups.get(h).map_or(0, Vec::len)
    }

    pub fn slots_used(&self) -> usize {
        (0..self.per_head_retained.len()).map(|h| self.head_slots(h)).sum()
    }
}

/// Outcome of the middle-activation count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MiddleCount {
    pub k: usize,
    /// Tokens available to each non-heterogeneous head, `floor((B − N·f)/(n − f))`.
    pub per_head: usize,
    pub clamped: bool,
}

/// `k = floor((B − N·f)/(n − f)) − s1 − s2`, clamped at zero.
pub fn middle_activation_count(
    budget: usize,
    seq_len: usize,
    f_r: usize,
    n: usize,
    sinks: usize,
    recents: usize,
) -> Result<MiddleCount> {
    if f_r > n {
        return Err(param(format!("heterogeneous count {f_r} exceeds head count {n}")));
    }
    if f_r == n {
        return Err(Error::NoNonHeterogeneousHeads);
    }
    let reserved = seq_len * f_r;
    if budget < reserved {
        return Err(Error::InfeasibleBudget {
            budget,
            required: reserved,
        });
    }
    let per_head = (budget - reserved) / (n - f_r);
    let floor = sinks + recents;
    Ok(MiddleCount {
        k: per_head.saturating_sub(floor),
        per_head,
        clamped: per_head < floor,
    })
}

/// Centred moving average; the window is clipped at both ends and divided by
/// its actual size.
pub fn pool_scores(scores: &[f64], kernel: usize) -> Result<Vec<f64>> {
    if kernel == 0 || kernel.is_multiple_of(2) {
        return Err(param(format!("pooling kernel must be odd and ≥ 1, got {kernel}")));
    }
    let half = kernel / 2;
    let n = scores.len();
    Ok((0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            scores[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect())
}

/// Positions kept by one head: everything for heterogeneous heads, otherwise
/// the first `sinks`, the last `recents`, and the `k` best pooled scores in
/// `[sinks, N − recents)`.
pub fn select_retained_indices(
    class: HeadClass,
    pooled: &[f64],
    seq_len: usize,
    sinks: usize,
    recents: usize,
    k: usize,
) -> Vec<usize> {
    if class == HeadClass::Heterogeneous || sinks + recents >= seq_len {
        return (0..seq_len).collect();
    }
    let middle = sinks..seq_len - recents;
    let mut keep: Vec<usize> = (0..sinks).collect();
    keep.extend(top_indices(&pooled[middle.clone()], k).into_iter().map(|i| i + middle.start));
    keep.extend(middle.end..seq_len);
    keep
}

/// Builds the retention plan for one layer.
///
/// `classes` is required by the policies that distinguish heterogeneous heads
/// and ignored by the rest.
pub fn apply_policy(
    layer: usize,
    heads: &[AttentionInputs],
    classes: &[HeadClass],
    policy: PolicyKind,
    params: &PolicyParams,
) -> Result<BudgetPlan> {
    params.validate()?;
    let n = heads.len();
    let first = heads.first().ok_or(Error::EmptyInput("layer has no heads"))?;
    let seq_len = first.seq_len();
    if policy.uses_classification() && classes.len() != n {
        return Err(param(format!("{} head classes for {n} heads", classes.len())));
    }
    let budget = params.layer_budget(seq_len, n);
    let all: Vec<usize> = (0..seq_len).collect();
    let mut plan = BudgetPlan {
        layer,
        policy,
        seq_len,
        total_budget: budget,
        sinks: 0,
        recents: 0,
        middle_k: 0,
        clamped: false,
        heterogeneous_count: 0,
        classes: if classes.len() == n {
            classes.to_vec()
        } else {
            vec![HeadClass::NonHeterogeneous; n]
        },
        per_head_retained: Vec::with_capacity(n),
        compensation_groups: Vec::new(),
    };
    let pooled = |h: usize| -> Result<Vec<f64>> {
        let w = window_column_scores(&heads[h], params.window.min(seq_len))?;
        pool_scores(&w.column_means, params.kernel)
    };

    match policy {
        PolicyKind::Full => {
            plan.per_head_retained = vec![all; n];
        }
        PolicyKind::Streaming => {
            let share = budget / n;
            if share >= seq_len {
                plan.per_head_retained = vec![all; n];
            } else {
                let sinks = params.sinks.min(share);
                let recents = share - sinks;
                plan.sinks = sinks;
                plan.recents = recents;
                let keep: Vec<usize> = (0..sinks).chain(seq_len - recents..seq_len).collect();
                plan.per_head_retained = vec![keep; n];
            }
        }
        PolicyKind::UniformTopk => {
            let share = budget / n;
            let window = params.window.min(share).min(seq_len);
            plan.recents = window;
            plan.middle_k = share.saturating_sub(window);
            for h in 0..n {
                if share >= seq_len {
                    plan.per_head_retained.push(all.clone());
                    continue;
                }
                let pooled = pooled(h).map_err(|e| e.in_head(layer, h))?;
                let prefix = seq_len - window;
                let mut keep = top_indices(&pooled[..prefix], share - window);
                keep.extend(prefix..seq_len);
                plan.per_head_retained.push(keep);
            }
        }
        PolicyKind::TaskKv | PolicyKind::NoCache | PolicyKind::CompressedCache => {
            let f_r = classes.iter().filter(|c| **c == HeadClass::Heterogeneous).count();
            plan.heterogeneous_count = f_r;
            if seq_len * f_r > budget {
                return Err(Error::InfeasibleBudget {
                    budget,
                    required: seq_len * f_r,
                }
                .in_layer(layer));
            }
            if f_r == n {
                plan.per_head_retained = vec![all; n];
                return Ok(plan);
            }
            let count = middle_activation_count(budget, seq_len, f_r, n, params.sinks, params.recents)
                .map_err(|e| e.in_layer(layer))?;
            let (sinks, recents) = if count.clamped {
                log::warn!(
                    "layer {layer}: per-head share {} below sinks+recents {}; shrinking both",
                    count.per_head,
                    params.sinks + params.recents
                );
                let sinks = params.sinks.min(count.per_head);
                (sinks, count.per_head - sinks)
            } else {
                (params.sinks, params.recents)
            };
            plan.sinks = sinks;
            plan.recents = recents;
            plan.middle_k = count.k;
            plan.clamped = count.clamped;
            if policy == PolicyKind::CompressedCache {
                plan.compensation_groups = vec![Vec::new(); n];
            }
            for (h, &class) in classes.iter().enumerate() {
                if class == HeadClass::Heterogeneous || sinks + recents >= seq_len {
                    plan.per_head_retained.push(all.clone());
                    continue;
                }
                let keep = match policy {
                    PolicyKind::TaskKv => {
                        let pooled = pooled(h).map_err(|e| e.in_head(layer, h))?;
                        select_retained_indices(class, &pooled, seq_len, sinks, recents, count.k)
                    }
                    PolicyKind::NoCache => {
                        let recents = (recents + count.k).min(seq_len - sinks);
                        (0..sinks).chain(seq_len - recents..seq_len).collect()
                    }
                    _ => {
                        plan.compensation_groups[h] = contiguous_groups(sinks, seq_len - recents, count.k);
                        (0..sinks).chain(seq_len - recents..seq_len).collect()
                    }
                };
                plan.per_head_retained.push(keep);
            }
        }
    }
    Ok(plan)
}

/// Splits `[start, end)` into `min(groups, end − start)` contiguous spans of
/// near-equal length.
pub fn contiguous_groups(start: usize, end: usize, groups: usize) -> Vec<[usize; 2]> {
    let len = end.saturating_sub(start);
    let g = groups.min(len);
    (0..g)
        .map(|i| [start + i * len / g, start + (i + 1) * len / g])
        .collect()
}

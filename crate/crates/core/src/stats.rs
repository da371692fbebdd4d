//! Paired comparisons of per-image IoU scores.
//!
//! * Wilcoxon signed-rank, two-sided. Zero differences are dropped, tied
//!   absolute differences get average ranks. Small samples use the exact null
//!   distribution of W (all `2^n` sign assignments, counted by dynamic
//!   programming over doubled ranks); larger ones use the normal
//!   approximation with tie-corrected variance and a 0.5 continuity
//!   correction.
//! * Cohen's d with pooled sample standard deviation.
//! * Five-number summaries with type-7 (linear interpolation) quantiles.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

/// Largest effective sample size evaluated exactly under [`WilcoxonMode::Auto`].
pub const EXACT_MAX_N: usize = 25;

pub const QUANTILE_METHOD: &str = "type-7 linear interpolation between order statistics";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("sample lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("all paired differences are zero")]
    AllZeroDifferences,
    #[error("empty sample")]
    EmptySet,
    #[error("non-finite value in sample")]
    NonFinite,
    #[error("each group needs at least 2 samples (got {0} and {1})")]
    TooFewSamples(usize, usize),
    #[error("pooled standard deviation is zero")]
    DegenerateVariance,
    #[error("exact mode is limited to n <= {EXACT_MAX_N}, got {0}")]
    ExactTooLarge(usize),
}

/// Two equal-length samples of per-image scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSamples {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub label_a: String,
    pub label_b: String,
}

impl PairedSamples {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self, StatsError> {
        Self::labeled(a, b, "a", "b")
    }

    pub fn labeled(
        a: Vec<f64>,
        b: Vec<f64>,
        label_a: impl Into<String>,
        label_b: impl Into<String>,
    ) -> Result<Self, StatsError> {
        if a.len() != b.len() {
            return Err(StatsError::LengthMismatch(a.len(), b.len()));
        }
        if a.is_empty() {
            return Err(StatsError::EmptySet);
        }
        if a.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite);
        }
        Ok(Self {
            a,
            b,
            label_a: label_a.into(),
            label_b: label_b.into(),
        })
    }

    pub fn swapped(&self) -> Self {
        Self {
            a: self.b.clone(),
            b: self.a.clone(),
            label_a: self.label_b.clone(),
            label_b: self.label_a.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMode {
    /// Exact when `n_effective <= EXACT_MAX_N`, otherwise normal approximation.
    Auto,
    Exact,
    NormalApproximation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMode {
    Exact,
    NormalApproximation,
}

impl PValueMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PValueMode::Exact => "exact",
            PValueMode::NormalApproximation => "normal_approximation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of ranks of positive differences `a - b`.
    pub statistic: f64,
    pub p_value: f64,
    pub n_effective: usize,
    pub mode: PValueMode,
}

/// Average ranks (1-based) of `values`; also returns the tie-group sizes.
pub fn average_ranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1 ..= end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = avg;
        }
        if end - start > 1 {
            ties.push(end - start);
        }
        start = end;
    }
    (ranks, ties)
}

pub fn wilcoxon_signed_rank(s: &PairedSamples, policy: WilcoxonMode) -> Result<WilcoxonResult, StatsError> {
    if s.a.len() != s.b.len() {
        return Err(StatsError::LengthMismatch(s.a.len(), s.b.len()));
    }
    let diffs: Vec<f64> = s.a.iter().zip(&s.b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n == 0 {
        return Err(StatsError::AllZeroDifferences);
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = average_ranks(&abs);
    let statistic: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).fold(0.0, |acc, (_, r)| acc + r);

    let mode = match policy {
        WilcoxonMode::Auto if n <= EXACT_MAX_N => PValueMode::Exact,
        WilcoxonMode::Auto => PValueMode::NormalApproximation,
        WilcoxonMode::Exact if n > EXACT_MAX_N => return Err(StatsError::ExactTooLarge(n)),
        WilcoxonMode::Exact => PValueMode::Exact,
        WilcoxonMode::NormalApproximation => PValueMode::NormalApproximation,
    };
    let p_value = match mode {
        PValueMode::Exact => exact_p(&ranks, statistic),
        PValueMode::NormalApproximation => normal_p(n, &ties, statistic),
    };
    Ok(WilcoxonResult {
        statistic,
        p_value,
        n_effective: n,
        mode,
    })
}

/// Two-sided exact p-value: `min(1, 2 * min(P(W <= w), P(W >= w)))` under
/// the null where every sign assignment is equally likely.
fn exact_p(ranks: &[f64], statistic: f64) -> f64 {
    // Ranks are multiples of 0.5, so doubled ranks are integers.
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    for &r in &doubled {
        for s in (r..=total).rev() {
            counts[s] += counts[s - r];
        }
    }
    let w2 = (statistic * 2.0).round() as usize;
    let le: u64 = counts[..=w2].iter().sum();
    let ge: u64 = counts[w2..].iter().sum();
    let all = (1u64 << ranks.len()) as f64;
    (2.0 * le.min(ge) as f64 / all).min(1.0)
}

fn normal_p(n: usize, ties: &[usize], statistic: f64) -> f64 {
    let n = n as f64;
    let mean = n * (n + 1.0) / 4.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term;
    let z = ((statistic - mean).abs() - 0.5) / var.sqrt();
    if z <= 0.0 {
        return 1.0;
    }
    erfc(z / std::f64::consts::SQRT_2).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohensDResult {
    pub d: f64,
    pub mean_a: f64,
    pub mean_b: f64,
    pub sd_a: f64,
    pub sd_b: f64,
    pub pooled_sd: f64,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance with `n - 1` denominator.
fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

pub fn cohens_d(group_a: &[f64], group_b: &[f64]) -> Result<CohensDResult, StatsError> {
    if group_a.len() < 2 || group_b.len() < 2 {
        return Err(StatsError::TooFewSamples(group_a.len(), group_b.len()));
    }
    if group_a.iter().chain(group_b).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let (na, nb) = (group_a.len() as f64, group_b.len() as f64);
    let (va, vb) = (variance(group_a), variance(group_b));
    let pooled_sd = (((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0)).sqrt();
    if pooled_sd == 0.0 {
        return Err(StatsError::DegenerateVariance);
    }
    let (mean_a, mean_b) = (mean(group_a), mean(group_b));
    Ok(CohensDResult {
        d: (mean_a - mean_b) / pooled_sd,
        mean_a,
        mean_b,
        sd_a: va.sqrt(),
        sd_b: vb.sqrt(),
        pooled_sd,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
    /// Sample standard deviation (`n - 1`); 0 for a single sample.
    pub sd: f64,
}

/// Type-7 quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize_distribution(samples: &[f64]) -> Result<DistributionSummary, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::EmptySet);
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(DistributionSummary {
        n: sorted.len(),
        min: sorted[0],
        q1: quantile_sorted(&sorted, 0.25),
        median: quantile_sorted(&sorted, 0.5),
        q3: quantile_sorted(&sorted, 0.75),
        max: sorted[sorted.len() - 1],
        mean: mean(&sorted),
        sd: if sorted.len() > 1 { variance(&sorted).sqrt() } else { 0.0 },
    })
}

//! Evaluation metrics for estimate traces against ground truth.
//!
//! The noise-reduction metric compares first-difference high-pass residuals:
//! for a signal `s` and truth `g`, the residual is
//! `(s_t - s_{t-1}) - (g_t - g_{t-1})`, which isolates sample-to-sample noise
//! from the signal itself. Lag is the argmax of the cross-correlation between
//! estimate and truth over ±50 samples (positive lag = estimate delayed).

use serde::{Deserialize, Serialize};

/// Maximum lag searched by the cross-correlation, samples.
pub const MAX_LAG: i64 = 50;

/// Per-component evaluation of one estimate trace.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Metrics {
    /// RMSE of the filtered mean vs truth, per state component (9).
    pub rmse: Vec<f64>,
    /// Cross-correlation lag of the filtered momenta vs truth, samples (6).
    pub lag_samples: Vec<i64>,
    /// High-pass residual std ratio raw/filtered, per momentum component (6).
    pub noise_reduction: Vec<f64>,
    /// Mean normalized estimation error squared.
    pub mean_nees: f64,
    /// Mean normalized innovation squared.
    pub mean_nis: f64,
    /// Largest per-step jump of the raw computed momenta.
    pub max_step_jump_raw: f64,
    /// Largest per-step jump of the filtered momenta.
    pub max_step_jump_filtered: f64,
    /// Number of post-warmup samples evaluated.
    pub samples_evaluated: usize,
}

/// Inputs to [`compute_metrics`], one row per post-warmup sample.
pub struct TraceData {
    /// Raw computed measurement `y`, 9 components per sample.
    pub raw: Vec<[f64; 9]>,
    /// Filtered mean, 9 components per sample.
    pub filtered: Vec<[f64; 9]>,
    /// Ground truth, 9 components per sample.
    pub truth: Vec<[f64; 9]>,
    /// Per-sample NEES values (empty if unavailable).
    pub nees: Vec<f64>,
    /// Per-sample NIS values (empty if unavailable).
    pub nis: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("trace and truth lengths differ: {trace} vs {truth}")]
    LengthMismatch { trace: usize, truth: usize },
    #[error("too few samples to evaluate: {0}")]
    TooFewSamples(usize),
}

fn component(series: &[[f64; 9]], i: usize) -> Vec<f64> {
    series.iter().map(|row| row[i]).collect()
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// First-difference high-pass residual of `signal` against `truth`.
fn highpass_residual(signal: &[f64], truth: &[f64]) -> Vec<f64> {
    signal
        .windows(2)
        .zip(truth.windows(2))
        .map(|(s, g)| (s[1] - s[0]) - (g[1] - g[0]))
        .collect()
}

/// Integer lag (samples) maximizing the cross-correlation of `estimate`
/// against `truth` over ±[`MAX_LAG`]; ties resolve to the smallest |lag|.
/// Positive lag means the estimate is delayed.
pub fn cross_correlation_lag(estimate: &[f64], truth: &[f64]) -> i64 {
    let n = estimate.len().min(truth.len());
    if n == 0 {
        return 0;
    }
    let em = mean(&estimate[..n]);
    let tm = mean(&truth[..n]);
    let max_lag = MAX_LAG.min(n as i64 - 1);
    // biased (raw-sum) estimate: shrinking overlap penalizes large lags, so
    // identical signals always report zero lag
    let correlations: Vec<(i64, f64)> = (-max_lag..=max_lag)
        .map(|lag| {
            let mut corr = 0.0;
            for t in 0..n as i64 {
                let shifted = t + lag;
                if shifted >= 0 && shifted < n as i64 {
                    corr += (estimate[shifted as usize] - em) * (truth[t as usize] - tm);
                }
            }
            (lag, corr)
        })
        .collect();
    let best = correlations
        .iter()
        .map(|(_, c)| *c)
        .fold(f64::NEG_INFINITY, f64::max);
    // ties (e.g. constant signals) resolve to the smallest |lag|
    let tol = 1e-12 * best.abs().max(1e-300);
    correlations
        .iter()
        .filter(|(_, c)| *c >= best - tol)
        .map(|(lag, _)| *lag)
        .min_by_key(|lag| lag.abs())
        .unwrap_or(0)
}

/// Compute all metrics over already-warmup-trimmed samples.
pub fn compute_metrics(data: &TraceData) -> Result<Metrics, MetricsError> {
    let n = data.filtered.len();
    if data.truth.len() != n {
        return Err(MetricsError::LengthMismatch {
            trace: n,
            truth: data.truth.len(),
        });
    }
    if data.raw.len() != n {
        return Err(MetricsError::LengthMismatch {
            trace: n,
            truth: data.raw.len(),
        });
    }
    if n < 3 {
        return Err(MetricsError::TooFewSamples(n));
    }

    let mut rmse = Vec::with_capacity(9);
    for i in 0..9 {
        let sum_sq: f64 = data
            .filtered
            .iter()
            .zip(&data.truth)
            .map(|(f, g)| (f[i] - g[i]) * (f[i] - g[i]))
            .sum();
        rmse.push((sum_sq / n as f64).sqrt());
    }

    let mut lag_samples = Vec::with_capacity(6);
    let mut noise_reduction = Vec::with_capacity(6);
    let mut max_step_jump_raw: f64 = 0.0;
    let mut max_step_jump_filtered: f64 = 0.0;
    for i in 3..9 {
        let filtered = component(&data.filtered, i);
        let raw = component(&data.raw, i);
        let truth = component(&data.truth, i);
        lag_samples.push(cross_correlation_lag(&filtered, &truth));
        let res_raw = std_dev(&highpass_residual(&raw, &truth));
        let res_filtered = std_dev(&highpass_residual(&filtered, &truth));
        noise_reduction.push(if res_filtered > 0.0 {
            res_raw / res_filtered
        } else {
            f64::INFINITY
        });
        for w in raw.windows(2) {
            max_step_jump_raw = max_step_jump_raw.max((w[1] - w[0]).abs());
        }
        for w in filtered.windows(2) {
            max_step_jump_filtered = max_step_jump_filtered.max((w[1] - w[0]).abs());
        }
    }

    Ok(Metrics {
        rmse,
        lag_samples,
        noise_reduction,
        mean_nees: mean(&data.nees),
        mean_nis: mean(&data.nis),
        max_step_jump_raw,
        max_step_jump_filtered,
        samples_evaluated: n,
    })
}

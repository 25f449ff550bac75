//! Per-workload performance penalties of adjustment vectors.
//!
//! Real-time workloads use a cubic latency-degradation polynomial of the
//! fractional curtailment; batch workloads use a linear model over engineered
//! delay features, fitted with cross-validated Lasso. Both are scaled by a
//! weight `k` that converts raw penalty units into equivalent-entitlement np.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::solver::{smooth_pos, smooth_pos_deriv};
use crate::traces::WorkloadKind;

#[derive(Debug, Error)]
pub enum PenaltyError {
    #[error("adjustment {value} at hour {hour} outside [0, usage]")]
    DomainError { hour: usize, value: f64 },
    #[error("zero usage with nonzero adjustment at hour {0}")]
    ZeroUsage(usize),
    #[error("penalty polynomial decreasing on [0, 0.5] near delta = {0}")]
    NonMonotonic(f64),
    #[error("zero-variance feature column {0}")]
    DegenerateDesign(usize),
    #[error("need at least {folds} samples for {folds}-fold CV, got {samples}")]
    TooFewSamples { samples: usize, folds: usize },
    #[error("calibration cap produced zero penalty; raise cap severity")]
    ZeroPenalty,
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
}

/// Cubic coefficients (a3, a2, a1) fitted to median-latency degradation of an
/// interactive service under power curtailment.
pub const REALTIME_MEDIAN_LATENCY: (f64, f64, f64) = (6.3, -13.0, 51.6);
/// Cubic coefficients fitted to maximum-latency degradation of a web tier.
pub const REALTIME_MAX_LATENCY: (f64, f64, f64) = (-4.0, -3.5, 42.5);

/// Real-time penalty: `C = sum_t k * f(delta_t)` with
/// `f(delta) = a3 d^3 + a2 d^2 + a1 d` and `delta_t = d_t / U_t` the
/// fractional curtailment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealtimePenaltyModel {
    pub a3: f64,
    pub a2: f64,
    pub a1: f64,
    /// np per latency-degradation unit.
    pub weight_k: f64,
}

impl RealtimePenaltyModel {
    /// Validates that `f` is nondecreasing on `delta in [0, 0.5]` by a
    /// derivative sign check on a grid.
    pub fn new(coeffs: (f64, f64, f64), weight_k: f64) -> Result<Self, PenaltyError> {
        let (a3, a2, a1) = coeffs;
        for i in 0..=100 {
            let delta = 0.5 * i as f64 / 100.0;
            let slope = 3.0 * a3 * delta * delta + 2.0 * a2 * delta + a1;
            if slope < -1e-9 {
                return Err(PenaltyError::NonMonotonic(delta));
            }
        }
        Ok(Self { a3, a2, a1, weight_k })
    }

    pub fn f(&self, delta: f64) -> f64 {
        ((self.a3 * delta + self.a2) * delta + self.a1) * delta
    }

    pub fn f_deriv(&self, delta: f64) -> f64 {
        (3.0 * self.a3 * delta + 2.0 * self.a2) * delta + self.a1
    }
}

/// `C = sum_t k * f(d_t / U_t)`, validating `0 <= d_t <= U_t`.
pub fn realtime_penalty(
    d: &[f64],
    usage: &[f64],
    m: &RealtimePenaltyModel,
) -> Result<f64, PenaltyError> {
    if d.len() != usage.len() {
        return Err(PenaltyError::LengthMismatch(format!(
            "adjustment has {} hours, usage {}",
            d.len(),
            usage.len()
        )));
    }
    for (hour, (&dt, &ut)) in d.iter().zip(usage).enumerate() {
        if dt < 0.0 || dt > ut {
            return Err(PenaltyError::DomainError { hour, value: dt });
        }
        if ut == 0.0 && dt > 0.0 {
            return Err(PenaltyError::ZeroUsage(hour));
        }
    }
    Ok(realtime_penalty_unchecked(d, usage, m))
}

/// Same sum without domain validation; used inside solver objectives where
/// box bounds already enforce the domain.
pub fn realtime_penalty_unchecked(d: &[f64], usage: &[f64], m: &RealtimePenaltyModel) -> f64 {
    d.iter()
        .zip(usage)
        .map(|(&dt, &ut)| {
            if ut > 0.0 {
                m.weight_k * m.f(dt / ut)
            } else {
                0.0
            }
        })
        .sum()
}

/// Gradient of [`realtime_penalty_unchecked`]: `k * f'(d_t/U_t) / U_t`.
pub fn realtime_penalty_grad(d: &[f64], usage: &[f64], m: &RealtimePenaltyModel) -> Vec<f64> {
    d.iter()
        .zip(usage)
        .map(|(&dt, &ut)| {
            if ut > 0.0 {
                m.weight_k * m.f_deriv(dt / ut) / ut
            } else {
                0.0
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureName {
    WtJobs,
    WtPower,
    WtSq,
    NJobsDelayed,
    TotalTardiness,
}

/// Engineered delay features of an adjustment vector. All are sums of
/// positive parts or nonnegative terms, hence nonnegative.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Cumulative delayed job-share: sum_t (sum_{t'<=t} |J|*d/U)^+.
    pub wt_jobs: f64,
    /// Cumulative curtailed power: sum_t (sum_{t'<=t} d)^+.
    pub wt_power: f64,
    /// Cumulative squared adjustment share: sum_t (sum_{t'<=t} |J|*d^2/U)^+.
    pub wt_sq: f64,
    /// Instantaneous delayed jobs: sum_t |J|*(d_t)^+/U_t.
    pub n_jobs_delayed: f64,
    /// SLO-lagged cumulative delay: sum over prefixes ending at t - SLO.
    pub total_tardiness: f64,
}

impl FeatureVector {
    pub fn get(&self, name: FeatureName) -> f64 {
        match name {
            FeatureName::WtJobs => self.wt_jobs,
            FeatureName::WtPower => self.wt_power,
            FeatureName::WtSq => self.wt_sq,
            FeatureName::NJobsDelayed => self.n_jobs_delayed,
            FeatureName::TotalTardiness => self.total_tardiness,
        }
    }
}

/// Inputs the batch penalty needs besides the adjustment vector.
#[derive(Debug, Clone, Copy)]
pub struct BatchContext<'a> {
    pub usage: &'a [f64],
    pub jobs_per_hour: &'a [f64],
    /// `None` for workloads without deadlines.
    pub slo_hours: Option<u32>,
}

pub fn compute_features(
    d: &[f64],
    ctx: &BatchContext,
) -> Result<FeatureVector, PenaltyError> {
    let n = d.len();
    if ctx.usage.len() != n || ctx.jobs_per_hour.len() != n {
        return Err(PenaltyError::LengthMismatch(format!(
            "adjustment {} hours, usage {}, jobs {}",
            n,
            ctx.usage.len(),
            ctx.jobs_per_hour.len()
        )));
    }
    for (hour, (&dt, &ut)) in d.iter().zip(ctx.usage).enumerate() {
        if ut <= 0.0 && dt != 0.0 {
            return Err(PenaltyError::ZeroUsage(hour));
        }
    }
    let pos = |x: f64| x.max(0.0);
    let ratio = |t: usize| {
        if ctx.usage[t] > 0.0 {
            ctx.jobs_per_hour[t] * d[t] / ctx.usage[t]
        } else {
            0.0
        }
    };

    let mut wt_jobs = 0.0;
    let mut wt_power = 0.0;
    let mut wt_sq = 0.0;
    let mut n_jobs_delayed = 0.0;
    let mut cum_jobs = 0.0;
    let mut cum_power = 0.0;
    let mut cum_sq = 0.0;
    let mut cum_jobs_prefix = vec![0.0; n];
    for t in 0..n {
        cum_jobs += ratio(t);
        cum_power += d[t];
        cum_sq += if ctx.usage[t] > 0.0 {
            ctx.jobs_per_hour[t] * d[t] * d[t] / ctx.usage[t]
        } else {
            0.0
        };
        wt_jobs += pos(cum_jobs);
        wt_power += pos(cum_power);
        wt_sq += pos(cum_sq);
        n_jobs_delayed += if ctx.usage[t] > 0.0 {
            ctx.jobs_per_hour[t] * pos(d[t]) / ctx.usage[t]
        } else {
            0.0
        };
        cum_jobs_prefix[t] = cum_jobs;
    }
    // Tardiness lags the cumulative delay by the SLO. The outer sum runs
    // through the hour after the horizon so a 1-hour SLO sees every prefix.
    let mut total_tardiness = 0.0;
    if let Some(slo) = ctx.slo_hours {
        let slo = slo as usize;
        if slo <= n {
            for p in 0..=(n - slo).min(n - 1) {
                total_tardiness += pos(cum_jobs_prefix[p]);
            }
        }
    }
    Ok(FeatureVector {
        wt_jobs,
        wt_power,
        wt_sq,
        n_jobs_delayed,
        total_tardiness,
    })
}

/// Batch penalty: `C = (k * (b0 + b1 x1 + b2 x2))^+` over the two features
/// selected for the workload kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchPenaltyModel {
    pub selected: (FeatureName, FeatureName),
    pub betas: (f64, f64, f64),
    /// np per job-hour.
    pub weight_k: f64,
    pub alpha: f64,
}

/// Hard-wired feature selection per workload kind, matching the engineered
/// features that carry signal for each: throughput-oriented batch reacts to
/// curtailed power and delayed-job counts, deadline batch to curtailed power
/// and the squared-adjustment term.
pub fn selected_features_for(kind: WorkloadKind) -> (FeatureName, FeatureName) {
    match kind {
        WorkloadKind::BatchNoSlo => (FeatureName::WtPower, FeatureName::NJobsDelayed),
        WorkloadKind::BatchSlo => (FeatureName::WtPower, FeatureName::WtSq),
        WorkloadKind::RealTime => panic!("real-time workloads use the polynomial model"),
    }
}

pub fn batch_penalty(
    d: &[f64],
    ctx: &BatchContext,
    m: &BatchPenaltyModel,
) -> Result<f64, PenaltyError> {
    let x = compute_features(d, ctx)?;
    let (b0, b1, b2) = m.betas;
    let raw = b0 + b1 * x.get(m.selected.0) + b2 * x.get(m.selected.1);
    Ok((m.weight_k * raw).max(0.0))
}

// ---------------------------------------------------------------------------
// Smoothed batch penalty (differentiable surrogate for the solver)
// ---------------------------------------------------------------------------

fn smoothed_feature_and_grad(
    name: FeatureName,
    d: &[f64],
    ctx: &BatchContext,
    eps: f64,
) -> (f64, Vec<f64>) {
    let n = d.len();
    let jr = |t: usize| {
        if ctx.usage[t] > 0.0 {
            ctx.jobs_per_hour[t] / ctx.usage[t]
        } else {
            0.0
        }
    };
    let mut grad = vec![0.0; n];
    match name {
        FeatureName::WtPower => {
            let mut value = 0.0;
            let mut cum = 0.0;
            let mut sp_deriv = vec![0.0; n];
            for t in 0..n {
                cum += d[t];
                value += smooth_pos(cum, eps);
                sp_deriv[t] = smooth_pos_deriv(cum, eps);
            }
            // d/dd_j = sum_{t >= j} sp'(cum_t); suffix sums.
            let mut suffix = 0.0;
            for j in (0..n).rev() {
                suffix += sp_deriv[j];
                grad[j] = suffix;
            }
            (value, grad)
        }
        FeatureName::WtJobs | FeatureName::TotalTardiness => {
            let mut cum = vec![0.0; n];
            let mut acc = 0.0;
            for t in 0..n {
                acc += jr(t) * d[t];
                cum[t] = acc;
            }
            let (value, weights) = match name {
                FeatureName::WtJobs => {
                    let value: f64 = cum.iter().map(|&c| smooth_pos(c, eps)).sum();
                    let weights: Vec<f64> =
                        cum.iter().map(|&c| smooth_pos_deriv(c, eps)).collect();
                    (value, weights)
                }
                _ => {
                    // Tardiness: only prefixes ending at least SLO hours back
                    // contribute, and the outer sum extends one hour past the
                    // horizon.
                    let mut weights = vec![0.0; n];
                    let mut value = 0.0;
                    if let Some(slo) = ctx.slo_hours {
                        let slo = slo as usize;
                        if slo <= n {
                            for p in 0..=(n - slo).min(n - 1) {
                                value += smooth_pos(cum[p], eps);
                                weights[p] = smooth_pos_deriv(cum[p], eps);
                            }
                        }
                    }
                    (value, weights)
                }
            };
            let mut suffix = 0.0;
            for j in (0..n).rev() {
                suffix += weights[j];
                grad[j] = jr(j) * suffix;
            }
            (value, grad)
        }
        FeatureName::WtSq => {
            let mut value = 0.0;
            let mut cum = 0.0;
            let mut sp_deriv = vec![0.0; n];
            for t in 0..n {
                cum += jr(t) * d[t] * d[t];
                value += smooth_pos(cum, eps);
                sp_deriv[t] = smooth_pos_deriv(cum, eps);
            }
            let mut suffix = 0.0;
            for j in (0..n).rev() {
                suffix += sp_deriv[j];
                grad[j] = 2.0 * jr(j) * d[j] * suffix;
            }
            (value, grad)
        }
        FeatureName::NJobsDelayed => {
            let mut value = 0.0;
            for t in 0..n {
                value += jr(t) * smooth_pos(d[t], eps);
                grad[t] = jr(t) * smooth_pos_deriv(d[t], eps);
            }
            (value, grad)
        }
    }
}

/// Differentiable batch penalty: smooth positive parts replace the exact
/// ones both inside the features and around the linear form.
pub fn smoothed_batch_penalty(
    d: &[f64],
    ctx: &BatchContext,
    m: &BatchPenaltyModel,
    eps: f64,
) -> f64 {
    let (x1, _) = smoothed_feature_and_grad(m.selected.0, d, ctx, eps);
    let (x2, _) = smoothed_feature_and_grad(m.selected.1, d, ctx, eps);
    let (b0, b1, b2) = m.betas;
    smooth_pos(m.weight_k * (b0 + b1 * x1 + b2 * x2), eps)
}

pub fn smoothed_batch_penalty_grad(
    d: &[f64],
    ctx: &BatchContext,
    m: &BatchPenaltyModel,
    eps: f64,
) -> Vec<f64> {
    let (x1, g1) = smoothed_feature_and_grad(m.selected.0, d, ctx, eps);
    let (x2, g2) = smoothed_feature_and_grad(m.selected.1, d, ctx, eps);
    let (b0, b1, b2) = m.betas;
    let inner = m.weight_k * (b0 + b1 * x1 + b2 * x2);
    let outer = smooth_pos_deriv(inner, eps) * m.weight_k;
    g1.iter()
        .zip(&g2)
        .map(|(&a, &b)| outer * (b1 * a + b2 * b))
        .collect()
}

// ---------------------------------------------------------------------------
// Lasso
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    /// Intercept then one slope per feature, on the original feature scale.
    pub intercept: f64,
    pub slopes: Vec<f64>,
    pub alpha: f64,
    pub cv_mae_mean: f64,
    pub cv_mae_var: f64,
    pub r2: f64,
}

fn soft_threshold(rho: f64, alpha: f64) -> f64 {
    if rho > alpha {
        rho - alpha
    } else if rho < -alpha {
        rho + alpha
    } else {
        0.0
    }
}

/// Coordinate descent for `1/(2N) ||yc - Xs b||^2 + alpha ||b||_1` where `Xs`
/// has unit-variance columns and `yc` is centered. Returns standardized
/// slopes.
fn lasso_cd(xs: &[Vec<f64>], yc: &[f64], alpha: f64) -> Vec<f64> {
    let n = yc.len();
    let p = xs.len();
    let mut beta = vec![0.0; p];
    let mut resid = yc.to_vec();
    for _ in 0..10_000 {
        let mut max_delta = 0.0f64;
        for j in 0..p {
            let old = beta[j];
            // rho_j = (1/N) x_j . (resid + x_j * beta_j)
            let mut rho = 0.0;
            for i in 0..n {
                rho += xs[j][i] * (resid[i] + xs[j][i] * old);
            }
            rho /= n as f64;
            let new = soft_threshold(rho, alpha);
            if new != old {
                for i in 0..n {
                    resid[i] -= xs[j][i] * (new - old);
                }
                max_delta = max_delta.max((new - old).abs());
                beta[j] = new;
            }
        }
        if max_delta < 1e-10 {
            break;
        }
    }
    beta
}

struct Standardized {
    /// Column-major, unit variance, zero mean.
    cols: Vec<Vec<f64>>,
    means: Vec<f64>,
    sds: Vec<f64>,
    y_mean: f64,
    yc: Vec<f64>,
}

fn standardize(x: &[Vec<f64>], y: &[f64], rows: &[usize]) -> Result<Standardized, PenaltyError> {
    let n = rows.len();
    let p = x[0].len();
    let mut means = vec![0.0; p];
    let mut sds = vec![0.0; p];
    let mut cols = vec![vec![0.0; n]; p];
    for j in 0..p {
        for (k, &i) in rows.iter().enumerate() {
            cols[j][k] = x[i][j];
        }
        let mean = cols[j].iter().sum::<f64>() / n as f64;
        let var = cols[j].iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        if var <= 1e-24 {
            return Err(PenaltyError::DegenerateDesign(j));
        }
        let sd = var.sqrt();
        for v in cols[j].iter_mut() {
            *v = (*v - mean) / sd;
        }
        means[j] = mean;
        sds[j] = sd;
    }
    let y_mean = rows.iter().map(|&i| y[i]).sum::<f64>() / n as f64;
    let yc = rows.iter().map(|&i| y[i] - y_mean).collect();
    Ok(Standardized {
        cols,
        means,
        sds,
        y_mean,
        yc,
    })
}

/// Cross-validated Lasso: 30-point logarithmic alpha grid, `folds`-fold CV
/// minimizing mean absolute error (ties resolved toward the stronger
/// regularization), final refit on all samples at the selected alpha.
pub fn lasso_fit(
    x: &[Vec<f64>],
    y: &[f64],
    folds: usize,
    seed: u64,
) -> Result<LassoFit, PenaltyError> {
    let n = y.len();
    assert_eq!(x.len(), n, "one feature row per target");
    assert!(folds >= 2);
    if n < folds {
        return Err(PenaltyError::TooFewSamples { samples: n, folds });
    }
    let p = x[0].len();
    let all: Vec<usize> = (0..n).collect();
    // Surface zero-variance columns before CV, with the offending index.
    standardize(x, y, &all)?;
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let y_sd = (y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let scale = y_sd.max(1e-12);
    let alphas: Vec<f64> = (0..30)
        .map(|i| scale * 10f64.powf(-4.0 + 6.0 * i as f64 / 29.0))
        .collect();

    // Seed-deterministic fold assignment.
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let fold_of: Vec<usize> = {
        let mut f = vec![0; n];
        for (k, &i) in idx.iter().enumerate() {
            f[i] = k % folds;
        }
        f
    };

    let predict = |std: &Standardized, beta_std: &[f64], row: &[f64]| -> f64 {
        let mut pred = std.y_mean;
        for j in 0..p {
            pred += beta_std[j] * (row[j] - std.means[j]) / std.sds[j];
        }
        pred
    };

    let mut best: Option<(f64, f64, f64)> = None; // (alpha, mae_mean, mae_var)
    for &alpha in &alphas {
        let mut fold_maes = Vec::with_capacity(folds);
        let mut degenerate = false;
        for fold in 0..folds {
            let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != fold).collect();
            let test: Vec<usize> = (0..n).filter(|&i| fold_of[i] == fold).collect();
            if test.is_empty() {
                continue;
            }
            let std = match standardize(x, y, &train) {
                Ok(s) => s,
                Err(_) => {
                    // A fold can lose all variance in a column even when the
                    // full design is fine; skip this alpha/fold pairing.
                    degenerate = true;
                    break;
                }
            };
            let beta = lasso_cd(&std.cols, &std.yc, alpha);
            let mae = test
                .iter()
                .map(|&i| (predict(&std, &beta, &x[i]) - y[i]).abs())
                .sum::<f64>()
                / test.len() as f64;
            fold_maes.push(mae);
        }
        if degenerate || fold_maes.is_empty() {
            continue;
        }
        let mean = fold_maes.iter().sum::<f64>() / fold_maes.len() as f64;
        let var = fold_maes.iter().map(|m| (m - mean).powi(2)).sum::<f64>()
            / fold_maes.len() as f64;
        // Ties go to the larger alpha (grid is ascending, so >= keeps later).
        if best.map_or(true, |(_, bm, _)| mean <= bm + 1e-15) {
            best = Some((alpha, mean, var));
        }
    }
    let (alpha, cv_mae_mean, cv_mae_var) =
        best.ok_or(PenaltyError::DegenerateDesign(0))?;

    let std = standardize(x, y, &all)?;
    let beta_std = lasso_cd(&std.cols, &std.yc, alpha);
    let slopes: Vec<f64> = (0..p).map(|j| beta_std[j] / std.sds[j]).collect();
    let intercept =
        std.y_mean - slopes.iter().zip(&std.means).map(|(s, m)| s * m).sum::<f64>();
    let ss_tot: f64 = y.iter().map(|v| (v - std.y_mean).powi(2)).sum();
    let ss_res: f64 = (0..n)
        .map(|i| {
            let pred = intercept
                + slopes.iter().zip(&x[i]).map(|(s, v)| s * v).sum::<f64>();
            (y[i] - pred).powi(2)
        })
        .sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(LassoFit {
        intercept,
        slopes,
        alpha,
        cv_mae_mean,
        cv_mae_var,
        r2,
    })
}

/// Converts a raw (unweighted) penalty at a 15%-capacity cap into the weight
/// `k` that equates the penalty with the equivalent entitlement loss:
/// `k = cap_fraction * E / raw_penalty`.
pub fn calibrate_weight(
    entitlement_np: f64,
    raw_penalty_at_cap: f64,
    cap_fraction: f64,
) -> Result<f64, PenaltyError> {
    assert!(cap_fraction > 0.0 && cap_fraction < 1.0);
    if raw_penalty_at_cap <= 0.0 {
        return Err(PenaltyError::ZeroPenalty);
    }
    Ok(cap_fraction * entitlement_np / raw_penalty_at_cap)
}

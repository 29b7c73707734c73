//! Lag-order selection and the residual diagnostics the identification
//! arguments lean on: serial correlation, stationarity, and the shape of the
//! policy innovations.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::panel::{companion, fit_on_sample, PVARFit, PVARSpec, PanelDataset};
use crate::stats;

/// Criterion values for one candidate lag order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LagCriteriaRow {
    pub lag: usize,
    pub log_det: f64,
    pub bic_like: f64,
    pub aic_like: f64,
    pub hqic_like: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LagSelectionTable {
    pub rows: Vec<LagCriteriaRow>,
    pub effective_obs: usize,
    pub chosen_bic: usize,
    pub chosen_aic: usize,
    pub chosen_hqic: usize,
}

fn argmin_first(rows: &[LagCriteriaRow], f: impl Fn(&LagCriteriaRow) -> f64) -> usize {
    let mut best = &rows[0];
    for r in &rows[1..] {
        if f(r) < f(best) {
            best = r;
        }
    }
    best.lag
}

/// Log-det information criteria for p = 1..=pmax, all fitted on t > pmax.
pub fn lag_criteria(
    panel: &PanelDataset,
    base: &PVARSpec,
    pmax: usize,
) -> Result<LagSelectionTable> {
    if pmax == 0 || 3 * pmax >= panel.n_times() {
        return Err(Error::InvalidArgument(format!(
            "pmax = {pmax} must satisfy 1 <= pmax < T/3 (T = {})",
            panel.n_times()
        )));
    }
    let m = panel.m() as f64;
    let fits: Vec<Result<(usize, f64, usize)>> = (1..=pmax)
        .into_par_iter()
        .map(|p| {
            let spec = PVARSpec {
                lag_order: p,
                ..base.clone()
            };
            let fit = fit_on_sample(panel, &spec, pmax)?;
            let det = fit.sigma.determinant();
            if !(det > 0.0) {
                return Err(Error::NotPsd {
                    min_eigenvalue: det,
                });
            }
            Ok((p, det.ln(), fit.effective_obs))
        })
        .collect();
    let mut rows = Vec::with_capacity(pmax);
    let mut eff = 0;
    for f in fits {
        let (p, log_det, n) = f?;
        eff = n;
        let nf = n as f64;
        let k = m * m * p as f64;
        rows.push(LagCriteriaRow {
            lag: p,
            log_det,
            bic_like: log_det + k / nf * nf.ln(),
            aic_like: log_det + 2.0 * k / nf,
            hqic_like: log_det + 2.0 * k / nf * nf.ln().ln(),
        });
    }
    Ok(LagSelectionTable {
        chosen_bic: argmin_first(&rows, |r| r.bic_like),
        chosen_aic: argmin_first(&rows, |r| r.aic_like),
        chosen_hqic: argmin_first(&rows, |r| r.hqic_like),
        rows,
        effective_obs: eff,
    })
}

/// Cross-correlations `corr(x̃_{j,t}, x̃_{l,t−s})` pooled over units.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AutocorrReport {
    pub m: usize,
    pub smax: usize,
    /// Indexed `(j * m + l) * smax + (s - 1)`.
    pub values: Vec<f64>,
    pub bound: f64,
    pub max_abs: f64,
    pub violated: bool,
}

impl AutocorrReport {
    pub fn get(&self, j: usize, l: usize, s: usize) -> f64 {
        self.values[(j * self.m + l) * self.smax + (s - 1)]
    }
}

pub fn residual_autocorr(fit: &PVARFit, smax: usize) -> Result<AutocorrReport> {
    let rows = fit.rows_per_unit();
    if smax == 0 || smax >= rows {
        return Err(Error::InvalidArgument(format!(
            "smax = {smax} must lie in 1..{rows}"
        )));
    }
    let m = fit.m();
    let mut values = vec![0.0; m * m * smax];
    let mut a = Vec::new();
    let mut b = Vec::new();
    for j in 0..m {
        for l in 0..m {
            for s in 1..=smax {
                a.clear();
                b.clear();
                for u in 0..fit.n_units {
                    for r in s..rows {
                        a.push(fit.residual(u, r, j));
                        b.push(fit.residual(u, r - s, l));
                    }
                }
                values[(j * m + l) * smax + (s - 1)] = stats::pearson(&a, &b);
            }
        }
    }
    let bound = 2.0 / (fit.effective_obs as f64).sqrt();
    let max_abs = values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    Ok(AutocorrReport {
        m,
        smax,
        values,
        bound,
        max_abs,
        violated: max_abs > bound,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StationarityReport {
    pub spectral_radius: f64,
    pub stationary: bool,
    /// False when power iteration stalled and the norm bound was used.
    pub converged: bool,
    pub iterations: usize,
}

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITER: usize = 10_000;

/// Spectral radius by power iteration; falls back to the Gelfand bound
/// `‖A^k‖^{1/k}` (k = 2^48, by repeated squaring) when the iteration does not
/// settle, e.g. for a dominant complex pair.
pub fn spectral_radius(a: &DMatrix<f64>) -> StationarityReport {
    let n = a.nrows();
    let report = |radius: f64, converged: bool, iterations: usize| StationarityReport {
        spectral_radius: radius,
        stationary: radius < 1.0,
        converged,
        iterations,
    };
    if n == 0 {
        return report(0.0, true, 0);
    }
    let mut v = nalgebra::DVector::from_fn(n, |i, _| 1.0 + 0.1 * i as f64);
    v /= v.norm();
    let mut prev = f64::NAN;
    let mut prev_step = f64::NAN;
    for it in 1..=POWER_MAX_ITER {
        let w = a * &v;
        let est = w.norm();
        if est == 0.0 {
            return report(0.0, true, it);
        }
        let step = (est - prev).abs();
        let tol = POWER_TOL * est.max(1.0);
        if step == 0.0 {
            return report(est, true, it);
        }
        // geometric tail: remaining error ≈ step·r/(1 − r)
        let r = step / prev_step;
        if step < tol && r < 1.0 && step * r / (1.0 - r) < tol {
            return report(est, true, it);
        }
        prev = est;
        prev_step = step;
        v = w / est;
    }
    let mut b = a.clone();
    let mut log_scale = 0.0_f64;
    let mut power = 1.0_f64;
    for _ in 0..48 {
        let s = b.norm();
        if s == 0.0 {
            return report(0.0, false, POWER_MAX_ITER);
        }
        b /= s;
        log_scale += s.ln();
        b = &b * &b;
        log_scale *= 2.0;
        power *= 2.0;
    }
    let radius = ((log_scale + b.norm().ln()) / power).exp();
    report(radius, false, POWER_MAX_ITER)
}

pub fn stationarity(fit: &PVARFit) -> StationarityReport {
    spectral_radius(&companion(fit).matrix)
}

/// Shape summary of a policy innovation series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PolicyProbe {
    pub n: usize,
    pub is_binary: bool,
    pub share_zero: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    /// `n·skew²/6 + n·exkurt²/24`, χ²₂ under normality.
    pub normality_stat: f64,
}

pub fn policy_regime_probe(series: &[f64]) -> Result<PolicyProbe> {
    let n = series.len();
    if n < 30 {
        return Err(Error::InvalidArgument(format!(
            "policy probe needs at least 30 observations, got {n}"
        )));
    }
    let nf = n as f64;
    let mean = stats::mean(series);
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in series {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    let (skewness, excess_kurtosis) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    } else {
        (0.0, 0.0)
    };
    let scale = series
        .iter()
        .fold(0.0_f64, |a, x| a.max((x - mean).abs()))
        .max(1.0);
    let mut distinct: Vec<f64> = Vec::new();
    for x in series {
        let d = x - mean;
        if !distinct.iter().any(|v| (v - d).abs() <= 1e-9 * scale) {
            distinct.push(d);
            if distinct.len() > 2 {
                break;
            }
        }
    }
    Ok(PolicyProbe {
        n,
        is_binary: distinct.len() <= 2,
        share_zero: series.iter().filter(|x| **x == 0.0).count() as f64 / nf,
        skewness,
        excess_kurtosis,
        normality_stat: nf * skewness * skewness / 6.0
            + nf * excess_kurtosis * excess_kurtosis / 24.0,
    })
}

/// Everything the `diagnose` command reports for one fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub autocorr: AutocorrReport,
    pub stationarity: StationarityReport,
    pub policy_probe: Option<PolicyProbe>,
}

pub fn diagnose(
    fit: &PVARFit,
    smax: usize,
    policy_var: Option<usize>,
) -> Result<DiagnosticsReport> {
    let policy_probe = match policy_var {
        Some(k) if k < fit.m() => Some(policy_regime_probe(&fit.residual_series(k))?),
        Some(k) => return Err(Error::IndexOutOfRange(format!("policy variable {k}"))),
        None => None,
    };
    Ok(DiagnosticsReport {
        autocorr: residual_autocorr(fit, smax)?,
        stationarity: stationarity(fit),
        policy_probe,
    })
}

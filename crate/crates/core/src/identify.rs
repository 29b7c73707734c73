//! Recursive identification, impulse responses and residual-bootstrap bands.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::panel::{fit_pvar, CompanionMatrix, PVARFit, PVARSpec, PanelDataset};
use crate::rng;
use crate::stats;

/// Lower-triangular factor `O` with `O Oᵀ = Σ̂`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    pub lower: DMatrix<f64>,
}

impl CholeskyFactor {
    pub fn m(&self) -> usize {
        self.lower.nrows()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.lower * self.lower.transpose()
    }
}

/// Cholesky factor of a symmetric PSD matrix. Eigenvalues down to −1e-8 are
/// treated as rounding noise; a zero pivot zeroes the rest of its column.
pub fn cholesky_lower(sigma: &DMatrix<f64>) -> Result<CholeskyFactor> {
    let m = sigma.nrows();
    if sigma.ncols() != m {
        return Err(Error::InvalidArgument(
            "covariance matrix must be square".into(),
        ));
    }
    let scale = linalg::max_abs(sigma).max(1.0);
    let asym = linalg::asymmetry(sigma);
    if asym > 1e-8 * scale {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    if m > 0 {
        let min_ev = linalg::sym_eigenvalues(sigma)[0];
        if min_ev < -1e-8 {
            return Err(Error::NotPsd {
                min_eigenvalue: min_ev,
            });
        }
    }
    let a = (sigma + sigma.transpose()) * 0.5;
    let mut l = DMatrix::<f64>::zeros(m, m);
    for j in 0..m {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        let pivot = if d > 0.0 { d.sqrt() } else { 0.0 };
        l[(j, j)] = pivot;
        if pivot == 0.0 {
            continue;
        }
        for i in (j + 1)..m {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / pivot;
        }
    }
    Ok(CholeskyFactor { lower: l })
}

/// Impact of a unit innovation in variable `k` on variable `j` (`k < j`):
/// `o^{jk} / o^{kk}`.
pub fn impact_gamma(chol: &CholeskyFactor, k: usize, j: usize) -> Result<f64> {
    let m = chol.m();
    if k >= m || j >= m {
        return Err(Error::IndexOutOfRange(format!("k = {k}, j = {j}, m = {m}")));
    }
    if k >= j {
        return Err(Error::InvalidArgument(format!(
            "recursive ordering needs the shocked variable first (k = {k}, j = {j})"
        )));
    }
    let okk = chol.lower[(k, k)];
    if okk < 1e-12 {
        return Err(Error::ZeroPolicyVariance(okk));
    }
    Ok(chol.lower[(j, k)] / okk)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Impact of variable `k` on itself is one.
    UnitShock,
    /// Column `k` of the Cholesky factor.
    OneSd,
    /// Impact vector supplied by the caller.
    Supplied,
}

/// Responses of every variable over horizons `0..=H`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponse {
    pub shock_index: Option<usize>,
    pub horizon: usize,
    /// `m × (H + 1)`; column `h` is the response at horizon `h`.
    pub responses: DMatrix<f64>,
    pub normalization: Normalization,
}

impl ImpulseResponse {
    pub fn response(&self, var: usize, h: usize) -> f64 {
        self.responses[(var, h)]
    }

    pub fn impact(&self) -> DVector<f64> {
        self.responses.column(0).into_owned()
    }
}

fn propagate(phi: &[DMatrix<f64>], impact: &DVector<f64>, horizon: usize) -> DMatrix<f64> {
    let m = impact.len();
    let comp = CompanionMatrix::from_lags(phi);
    let mut state = DVector::zeros(m * phi.len());
    state.rows_mut(0, m).copy_from(impact);
    let mut out = DMatrix::zeros(m, horizon + 1);
    for h in 0..=horizon {
        out.column_mut(h).copy_from(&state.rows(0, m));
        if h < horizon {
            state = &comp.matrix * state;
        }
    }
    out
}

fn impact_vector(
    chol: &CholeskyFactor,
    k: usize,
    normalization: Normalization,
) -> Result<DVector<f64>> {
    let m = chol.m();
    if k >= m {
        return Err(Error::IndexOutOfRange(format!("shock {k} with m = {m}")));
    }
    let col = chol.lower.column(k).into_owned();
    match normalization {
        Normalization::OneSd => Ok(col),
        _ => {
            let okk = chol.lower[(k, k)];
            if okk < 1e-12 {
                return Err(Error::ZeroPolicyVariance(okk));
            }
            Ok(col / okk)
        }
    }
}

/// Impulse response to a recursively identified shock in variable `k`.
pub fn irf(
    fit: &PVARFit,
    chol: &CholeskyFactor,
    k: usize,
    horizon: usize,
    normalization: Normalization,
) -> Result<ImpulseResponse> {
    let impact = impact_vector(chol, k, normalization)?;
    Ok(ImpulseResponse {
        shock_index: Some(k),
        horizon,
        responses: propagate(&fit.phi, &impact, horizon),
        normalization: if normalization == Normalization::Supplied {
            Normalization::UnitShock
        } else {
            normalization
        },
    })
}

/// Propagates a caller-supplied impact vector through the fitted dynamics.
pub fn irf_from_impact(
    fit: &PVARFit,
    impact: &DVector<f64>,
    horizon: usize,
) -> Result<ImpulseResponse> {
    if impact.len() != fit.m() {
        return Err(Error::InvalidArgument(format!(
            "impact has length {}, model has {} variables",
            impact.len(),
            fit.m()
        )));
    }
    if impact.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "impact vector must be finite".into(),
        ));
    }
    Ok(ImpulseResponse {
        shock_index: None,
        horizon,
        responses: propagate(&fit.phi, impact, horizon),
        normalization: Normalization::Supplied,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapOptions {
    pub reps: usize,
    pub level: f64,
    pub seed: u64,
}

/// Percentile bands from the residual bootstrap.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapBands {
    pub level: f64,
    pub lower: DMatrix<f64>,
    pub upper: DMatrix<f64>,
    pub n_reps: usize,
    pub n_failed: usize,
    pub seed: u64,
}

/// Rebuilds a panel from the fitted dynamics with resampled residual rows.
/// The first `first_time` periods of each unit are kept as observed.
fn regenerate(panel: &PanelDataset, fit: &PVARFit, draws: &[usize]) -> PanelDataset {
    let (n_units, n_times, m) = (panel.n_units(), panel.n_times(), panel.m());
    let rows = fit.rows_per_unit();
    let mut values = panel.values().to_vec();
    for u in 0..n_units {
        for r in 0..rows {
            let t = fit.first_time + r;
            let row = u * rows + r;
            let shock = draws[row];
            for v in 0..m {
                let mut x = fit.fixed_part[(row, v)] + fit.residuals[(shock, v)];
                for (l, phi) in fit.phi.iter().enumerate() {
                    let base = (u * n_times + t - l - 1) * m;
                    for c in 0..m {
                        x += phi[(v, c)] * values[base + c];
                    }
                }
                values[(u * n_times + t) * m + v] = x;
            }
        }
    }
    panel.with_values(values)
}

/// Point IRF plus percentile bands from an i.i.d. (unit, time) residual
/// bootstrap with recursive regeneration. Replication `b` draws from stream
/// `(seed, b)`, so the result does not depend on the thread count.
pub fn bootstrap_irf(
    panel: &PanelDataset,
    spec: &PVARSpec,
    k: usize,
    horizon: usize,
    options: BootstrapOptions,
    normalization: Normalization,
) -> Result<(ImpulseResponse, BootstrapBands)> {
    if options.reps < 100 {
        return Err(Error::InvalidArgument(format!(
            "bootstrap needs at least 100 replications, got {}",
            options.reps
        )));
    }
    if !(options.level > 0.0 && options.level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "level {} outside (0, 1)",
            options.level
        )));
    }
    let fit = fit_pvar(panel, spec)?;
    let chol = cholesky_lower(&fit.sigma)?;
    let point = irf(&fit, &chol, k, horizon, normalization)?;
    let n = fit.residuals.nrows();

    let draws: Vec<Option<DMatrix<f64>>> = (0..options.reps)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng::stream(options.seed, b as u64);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let sim = regenerate(panel, &fit, &idx);
            let refit = fit_pvar(&sim, spec).ok()?;
            let c = cholesky_lower(&refit.sigma).ok()?;
            irf(&refit, &c, k, horizon, normalization)
                .ok()
                .map(|r| r.responses)
        })
        .collect();

    let n_failed = draws.iter().filter(|d| d.is_none()).count();
    if n_failed as f64 > 0.05 * options.reps as f64 {
        return Err(Error::BootstrapUnstable {
            failed: n_failed,
            reps: options.reps,
        });
    }
    let ok: Vec<&DMatrix<f64>> = draws.iter().flatten().collect();
    let (m, cols) = point.responses.shape();
    let lo_p = (1.0 - options.level) / 2.0;
    let hi_p = (1.0 + options.level) / 2.0;
    let mut lower = DMatrix::zeros(m, cols);
    let mut upper = DMatrix::zeros(m, cols);
    let mut buf = Vec::with_capacity(ok.len());
    for r in 0..m {
        for c in 0..cols {
            buf.clear();
            buf.extend(ok.iter().map(|d| d[(r, c)]));
            buf.sort_by(|a, b| a.total_cmp(b));
            lower[(r, c)] = stats::quantile_sorted(&buf, lo_p);
            upper[(r, c)] = stats::quantile_sorted(&buf, hi_p);
        }
    }
    Ok((
        point,
        BootstrapBands {
            level: options.level,
            lower,
            upper,
            n_reps: options.reps,
            n_failed,
            seed: options.seed,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_factor() {
        let c = cholesky_lower(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(c.lower, DMatrix::identity(3, 3));
    }

    #[test]
    fn two_by_two_factor_and_gamma() {
        let s = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 5.0]);
        let c = cholesky_lower(&s).unwrap();
        assert_eq!(
            c.lower,
            DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 2.0])
        );
        let g = impact_gamma(&c, 0, 1).unwrap();
        assert_eq!(g, 0.5);
        assert_eq!(g, s[(0, 1)] / s[(0, 0)]);
    }

    #[test]
    fn diagonal_sigma_has_zero_impact() {
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0, 4.0]));
        let c = cholesky_lower(&s).unwrap();
        assert_eq!(impact_gamma(&c, 0, 2).unwrap(), 0.0);
    }

    #[test]
    fn rejects_indefinite_and_asymmetric() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(cholesky_lower(&s), Err(Error::NotPsd { .. })));
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            cholesky_lower(&s),
            Err(Error::NotSymmetric { .. })
        ));
    }

    #[test]
    fn tiny_negative_eigenvalues_are_clamped() {
        // rank-one matrix perturbed below zero by rounding
        let v = DVector::from_vec(vec![1.0, 2.0]);
        let mut s = &v * v.transpose();
        s[(1, 1)] -= 1e-12;
        let c = cholesky_lower(&s).unwrap();
        assert!((c.reconstruct() - &s).abs().max() < 1e-10);
    }

    #[test]
    fn zero_policy_variance() {
        let s = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        let c = cholesky_lower(&s).unwrap();
        assert!(matches!(
            impact_gamma(&c, 0, 1),
            Err(Error::ZeroPolicyVariance(_))
        ));
    }

    #[test]
    fn gamma_needs_recursive_order() {
        let c = cholesky_lower(&DMatrix::identity(2, 2)).unwrap();
        assert!(impact_gamma(&c, 1, 0).is_err());
        assert!(impact_gamma(&c, 0, 2).is_err());
    }

    #[test]
    fn propagation_without_dynamics_stops_after_impact() {
        let phi = vec![DMatrix::zeros(2, 2)];
        let r = propagate(&phi, &DVector::from_vec(vec![1.0, 0.3]), 4);
        assert_eq!(r.column(0).as_slice(), &[1.0, 0.3]);
        assert!(r.columns(1, 4).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn diagonal_recurrence() {
        let phi = vec![DMatrix::from_diagonal_element(2, 2, 0.5)];
        let gamma = 0.7;
        let r = propagate(&phi, &DVector::from_vec(vec![1.0, gamma]), 6);
        for h in 0..=6 {
            let f = 0.5_f64.powi(h as i32);
            assert!((r[(0, h)] - f).abs() < 1e-15);
            assert!((r[(1, h)] - f * gamma).abs() < 1e-15);
        }
    }
}

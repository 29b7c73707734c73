//! Balanced panel data and the fixed-effects (within) PVAR estimator.
//!
//! Layout convention: a panel holds `m = K + J` series per (unit, time) cell,
//! policies first, outcomes after. Lags are built inside each unit; the first
//! `p` periods of every unit only serve as initial conditions.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;

/// Exogenous 0/1 controls observed on the same (unit, time) grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ExogenousDummies {
    pub names: Vec<String>,
    /// Indexed `(unit * n_times + t) * n_dummies + d`.
    pub values: Vec<f64>,
}

/// Balanced (unit, time) panel with policies ordered before outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    n_units: usize,
    n_times: usize,
    n_policies: usize,
    n_outcomes: usize,
    values: Vec<f64>,
    variable_names: Vec<String>,
    unit_labels: Vec<i64>,
    time_labels: Vec<i64>,
    dummies: Option<ExogenousDummies>,
}

impl PanelDataset {
    /// Builds a panel from dense values indexed `(unit * n_times + t) * m + v`.
    pub fn from_dense(
        n_units: usize,
        n_times: usize,
        n_policies: usize,
        n_outcomes: usize,
        values: Vec<f64>,
        variable_names: Vec<String>,
    ) -> Result<Self> {
        let m = n_policies + n_outcomes;
        if n_outcomes == 0 || m < 2 || variable_names.len() != m {
            return Err(Error::BadOrdering {
                policies: n_policies,
                outcomes: n_outcomes,
                columns: variable_names.len(),
            });
        }
        if n_units == 0 || n_times == 0 {
            return Err(Error::InvalidArgument(
                "panel needs at least one unit and one period".into(),
            ));
        }
        if values.len() != n_units * n_times * m {
            return Err(Error::InvalidArgument(format!(
                "expected {} values, got {}",
                n_units * n_times * m,
                values.len()
            )));
        }
        let panel = Self {
            n_units,
            n_times,
            n_policies,
            n_outcomes,
            values,
            variable_names,
            unit_labels: (1..=n_units as i64).collect(),
            time_labels: (1..=n_times as i64).collect(),
            dummies: None,
        };
        panel.check_finite()?;
        Ok(panel)
    }

    pub fn with_labels(mut self, units: Vec<i64>, times: Vec<i64>) -> Result<Self> {
        if units.len() != self.n_units || times.len() != self.n_times {
            return Err(Error::InvalidArgument(
                "label lengths do not match panel shape".into(),
            ));
        }
        self.unit_labels = units;
        self.time_labels = times;
        Ok(self)
    }

    /// Attaches exogenous dummies indexed `(unit * n_times + t) * d + c`.
    pub fn with_dummies(mut self, names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let d = names.len();
        if values.len() != self.n_units * self.n_times * d {
            return Err(Error::InvalidArgument(
                "dummy array does not match panel shape".into(),
            ));
        }
        if let Some(bad) = values.iter().find(|v| **v != 0.0 && **v != 1.0) {
            return Err(Error::InvalidArgument(format!(
                "dummy value {bad} is not 0/1"
            )));
        }
        self.dummies = Some(ExogenousDummies { names, values });
        Ok(self)
    }

    fn check_finite(&self) -> Result<()> {
        let m = self.m();
        for (idx, v) in self.values.iter().enumerate() {
            if !v.is_finite() {
                let cell = idx / m;
                return Err(Error::NonFinite {
                    unit: self.unit_labels[cell / self.n_times],
                    time: self.time_labels[cell % self.n_times],
                    variable: self.variable_names[idx % m].clone(),
                });
            }
        }
        Ok(())
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }
    pub fn n_times(&self) -> usize {
        self.n_times
    }
    pub fn n_policies(&self) -> usize {
        self.n_policies
    }
    pub fn n_outcomes(&self) -> usize {
        self.n_outcomes
    }
    /// Number of series `m = K + J`.
    pub fn m(&self) -> usize {
        self.n_policies + self.n_outcomes
    }
    pub fn variable_names(&self) -> &[String] {
        &self.variable_names
    }
    pub fn unit_labels(&self) -> &[i64] {
        &self.unit_labels
    }
    pub fn time_labels(&self) -> &[i64] {
        &self.time_labels
    }
    pub fn dummies(&self) -> Option<&ExogenousDummies> {
        self.dummies.as_ref()
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn value(&self, unit: usize, t: usize, var: usize) -> f64 {
        self.values[(unit * self.n_times + t) * self.m() + var]
    }

    /// The `m` values of one cell.
    #[inline]
    pub fn cell(&self, unit: usize, t: usize) -> &[f64] {
        let m = self.m();
        let start = (unit * self.n_times + t) * m;
        &self.values[start..start + m]
    }

    /// One variable across all cells, unit-major.
    pub fn series(&self, var: usize) -> Vec<f64> {
        self.values
            .iter()
            .skip(var)
            .step_by(self.m())
            .copied()
            .collect()
    }

    #[inline]
    pub fn dummy(&self, unit: usize, t: usize, d: usize) -> f64 {
        let dm = self.dummies.as_ref().expect("panel has no dummies");
        dm.values[(unit * self.n_times + t) * dm.names.len() + d]
    }

    /// Same metadata, new values (used by bootstrap regeneration).
    pub(crate) fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self {
            values,
            ..self.clone()
        }
    }

    /// Reorders units; `order[new] = old`.
    pub fn permute_units(&self, order: &[usize]) -> Self {
        let m = self.m();
        let block = self.n_times * m;
        let mut values = Vec::with_capacity(self.values.len());
        for &old in order {
            values.extend_from_slice(&self.values[old * block..(old + 1) * block]);
        }
        let dummies = self.dummies.as_ref().map(|d| {
            let db = self.n_times * d.names.len();
            let mut dv = Vec::with_capacity(d.values.len());
            for &old in order {
                dv.extend_from_slice(&d.values[old * db..(old + 1) * db]);
            }
            ExogenousDummies {
                names: d.names.clone(),
                values: dv,
            }
        });
        Self {
            values,
            unit_labels: order.iter().map(|&o| self.unit_labels[o]).collect(),
            dummies,
            ..self.clone()
        }
    }
}

/// One observed (unit, time) record before validation.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelRow {
    pub unit: i64,
    pub time: i64,
    pub values: Vec<f64>,
    pub dummies: Vec<f64>,
}

/// Unvalidated long-format panel.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawPanel {
    pub n_policies: usize,
    pub n_outcomes: usize,
    pub variable_names: Vec<String>,
    pub dummy_names: Vec<String>,
    pub rows: Vec<PanelRow>,
}

/// Checks balance, finiteness and ordering metadata; sorts rows canonically.
pub fn validate_panel(raw: &RawPanel) -> Result<PanelDataset> {
    let m = raw.variable_names.len();
    if raw.n_policies + raw.n_outcomes != m || raw.n_outcomes == 0 || m < 2 {
        return Err(Error::BadOrdering {
            policies: raw.n_policies,
            outcomes: raw.n_outcomes,
            columns: m,
        });
    }
    let d = raw.dummy_names.len();
    let mut cells: BTreeMap<(i64, i64), &PanelRow> = BTreeMap::new();
    let mut units = BTreeSet::new();
    let mut times = BTreeSet::new();
    for row in &raw.rows {
        if row.values.len() != m || row.dummies.len() != d {
            return Err(Error::BadOrdering {
                policies: raw.n_policies,
                outcomes: raw.n_outcomes,
                columns: row.values.len(),
            });
        }
        if cells.insert((row.unit, row.time), row).is_some() {
            return Err(Error::DuplicateCell {
                unit: row.unit,
                time: row.time,
            });
        }
        units.insert(row.unit);
        times.insert(row.time);
    }
    if units.is_empty() {
        return Err(Error::InvalidArgument("panel has no rows".into()));
    }
    let units: Vec<i64> = units.into_iter().collect();
    let times: Vec<i64> = times.into_iter().collect();
    let mut values = Vec::with_capacity(units.len() * times.len() * m);
    let mut dummy_values = Vec::with_capacity(units.len() * times.len() * d);
    for &u in &units {
        for &t in &times {
            let row = cells
                .get(&(u, t))
                .ok_or(Error::UnbalancedPanel { unit: u, time: t })?;
            for (v, x) in row.values.iter().enumerate() {
                if !x.is_finite() {
                    return Err(Error::NonFinite {
                        unit: u,
                        time: t,
                        variable: raw.variable_names[v].clone(),
                    });
                }
            }
            values.extend_from_slice(&row.values);
            dummy_values.extend_from_slice(&row.dummies);
        }
    }
    let panel = PanelDataset::from_dense(
        units.len(),
        times.len(),
        raw.n_policies,
        raw.n_outcomes,
        values,
        raw.variable_names.clone(),
    )?
    .with_labels(units, times)?;
    if d > 0 {
        panel.with_dummies(raw.dummy_names.clone(), dummy_values)
    } else {
        Ok(panel)
    }
}

/// Estimation settings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PVARSpec {
    pub lag_order: usize,
    /// Absorb unit effects μ_i.
    pub include_unit_effects: bool,
    /// Absorb period effects as well (two-way within transformation).
    pub time_effects: bool,
    /// Indices into the panel's exogenous dummies.
    pub dummy_columns: Vec<usize>,
}

impl PVARSpec {
    pub fn new(lag_order: usize) -> Self {
        Self {
            lag_order,
            include_unit_effects: true,
            time_effects: false,
            dummy_columns: Vec::new(),
        }
    }

    pub fn with_time_effects(mut self, on: bool) -> Self {
        self.time_effects = on;
        self
    }

    pub fn with_dummies(mut self, cols: Vec<usize>) -> Self {
        self.dummy_columns = cols;
        self
    }
}

/// Frisch–Waugh absorber for unit effects, period effects and dummies on a
/// balanced block of `n_units × rows` observations (unit-major).
#[derive(Debug, Clone)]
pub(crate) struct Absorber {
    n_units: usize,
    rows: usize,
    unit_effects: bool,
    time_effects: bool,
    dummies: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

impl Absorber {
    pub(crate) fn new(
        n_units: usize,
        rows: usize,
        unit_effects: bool,
        time_effects: bool,
        raw_dummies: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let mut absorber = Self {
            n_units,
            rows,
            unit_effects,
            time_effects,
            dummies: None,
        };
        if let Some(mut d) = raw_dummies {
            if d.ncols() > 0 {
                let n = d.nrows();
                for c in 0..d.ncols() {
                    absorber.absorb_effects(&mut d.as_mut_slice()[c * n..(c + 1) * n]);
                }
                let g = linalg::gram(&d);
                if g.diagonal().iter().any(|v| *v < 1e-12) || linalg::sym_rcond(&g) < 1e-10 {
                    return Err(Error::DegenerateDummy);
                }
                absorber.dummies = Some((d, g));
            }
        }
        Ok(absorber)
    }

    fn absorb_effects(&self, col: &mut [f64]) {
        let (n_units, rows) = (self.n_units, self.rows);
        match (self.unit_effects, self.time_effects) {
            (false, false) => {}
            (true, false) => {
                for chunk in col.chunks_mut(rows) {
                    let m = chunk.iter().sum::<f64>() / rows as f64;
                    chunk.iter_mut().for_each(|v| *v -= m);
                }
            }
            (false, true) => {
                let tm = self.time_means(col);
                for (idx, v) in col.iter_mut().enumerate() {
                    *v -= tm[idx % rows];
                }
            }
            (true, true) => {
                let tm = self.time_means(col);
                let grand = tm.iter().sum::<f64>() / rows as f64;
                let um: Vec<f64> = col
                    .chunks(rows)
                    .map(|c| c.iter().sum::<f64>() / rows as f64)
                    .collect();
                for (idx, v) in col.iter_mut().enumerate() {
                    *v -= um[idx / rows] + tm[idx % rows] - grand;
                }
            }
        }
        debug_assert_eq!(col.len(), n_units * rows);
    }

    fn time_means(&self, col: &[f64]) -> Vec<f64> {
        let mut tm = vec![0.0; self.rows];
        for chunk in col.chunks(self.rows) {
            for (t, v) in chunk.iter().enumerate() {
                tm[t] += v;
            }
        }
        tm.iter_mut().for_each(|v| *v /= self.n_units as f64);
        tm
    }

    pub(crate) fn absorb(&self, col: &mut [f64]) {
        self.absorb_effects(col);
        if let Some((d, g)) = &self.dummies {
            let y = DVector::from_column_slice(col);
            let rhs = d.tr_mul(&y);
            if let Some(coef) = linalg::solve_spd_vec(g, &rhs) {
                let fitted = d * coef;
                for (v, f) in col.iter_mut().zip(fitted.iter()) {
                    *v -= f;
                }
            }
        }
    }

    fn absorb_matrix(&self, m: &mut DMatrix<f64>) {
        let n = m.nrows();
        for c in 0..m.ncols() {
            self.absorb(&mut m.as_mut_slice()[c * n..(c + 1) * n]);
        }
    }
}

fn dummy_matrix(
    panel: &PanelDataset,
    spec: &PVARSpec,
    first_t: usize,
) -> Result<Option<DMatrix<f64>>> {
    if spec.dummy_columns.is_empty() {
        return Ok(None);
    }
    let available = panel.dummies().map_or(0, |d| d.names.len());
    if let Some(bad) = spec.dummy_columns.iter().find(|c| **c >= available) {
        return Err(Error::InvalidSpec(format!(
            "dummy column {bad} out of range ({available} available)"
        )));
    }
    let rows = panel.n_times() - first_t;
    let n = panel.n_units() * rows;
    Ok(Some(DMatrix::from_fn(
        n,
        spec.dummy_columns.len(),
        |r, c| {
            let (unit, row) = (r / rows, r % rows);
            panel.dummy(unit, first_t + row, spec.dummy_columns[c])
        },
    )))
}

/// Removes unit effects (and period effects / dummies when requested) from
/// every series over the full sample.
pub fn within_demean(panel: &PanelDataset, spec: &PVARSpec) -> Result<PanelDataset> {
    let absorber = Absorber::new(
        panel.n_units(),
        panel.n_times(),
        spec.include_unit_effects,
        spec.time_effects,
        dummy_matrix(panel, spec, 0)?,
    )?;
    let m = panel.m();
    let mut out = panel.values().to_vec();
    for v in 0..m {
        let mut col = panel.series(v);
        absorber.absorb(&mut col);
        for (cell, x) in col.into_iter().enumerate() {
            out[cell * m + v] = x;
        }
    }
    Ok(panel.with_values(out))
}

/// Fitted fixed-effects PVAR.
#[derive(Debug, Clone)]
pub struct PVARFit {
    /// Slope matrices `Φ_1 … Φ_p`, each `m × m`.
    pub phi: Vec<DMatrix<f64>>,
    /// Long-run unit means μ̂_i; `None` when `I − ΣΦ` is singular.
    pub mu: Option<Vec<DVector<f64>>>,
    /// Unit intercepts `(I − ΣΦ) μ̂_i` averaged over the estimation sample.
    pub intercepts: Vec<DVector<f64>>,
    /// Residuals x̃_it, rows unit-major over t = first_time..T, one column per variable.
    pub residuals: DMatrix<f64>,
    /// Σ̂ = x̃ᵀx̃ / effective_obs.
    pub sigma: DMatrix<f64>,
    pub spec: PVARSpec,
    pub effective_obs: usize,
    pub n_units: usize,
    pub n_policies: usize,
    /// First period (0-based) entering the regression as a dependent row.
    pub first_time: usize,
    /// Deterministic part (unit/period effects, dummies) per estimation row.
    pub(crate) fixed_part: DMatrix<f64>,
    absorber: Absorber,
    design: DMatrix<f64>,
    design_gram: DMatrix<f64>,
}

impl PVARFit {
    pub fn m(&self) -> usize {
        self.sigma.nrows()
    }
    pub fn lag_order(&self) -> usize {
        self.phi.len()
    }
    pub fn rows_per_unit(&self) -> usize {
        self.residuals.nrows() / self.n_units
    }

    /// Residual column of one variable, unit-major.
    pub fn residual_series(&self, var: usize) -> Vec<f64> {
        self.residuals.column(var).iter().copied().collect()
    }

    #[inline]
    pub fn residual(&self, unit: usize, row: usize, var: usize) -> f64 {
        self.residuals[(unit * self.rows_per_unit() + row, var)]
    }

    /// Sum of lag matrices.
    pub fn phi_sum(&self) -> DMatrix<f64> {
        let m = self.m();
        self.phi.iter().fold(DMatrix::zeros(m, m), |acc, p| acc + p)
    }

    /// Applies the fit's annihilator (absorbed effects, then the lag
    /// regressors) to an extra series given over the full panel, unit-major.
    /// The result is aligned with [`PVARFit::residuals`].
    pub fn residualize(&self, full_series: &[f64], n_times: usize) -> Result<Vec<f64>> {
        if full_series.len() != self.n_units * n_times {
            return Err(Error::InvalidArgument(
                "series does not match panel shape".into(),
            ));
        }
        let rows = self.rows_per_unit();
        let mut col: Vec<f64> = (0..self.n_units)
            .flat_map(|u| {
                full_series[u * n_times + self.first_time..(u + 1) * n_times]
                    .iter()
                    .copied()
            })
            .collect();
        debug_assert_eq!(col.len(), self.n_units * rows);
        self.absorber.absorb(&mut col);
        let y = DVector::from_column_slice(&col);
        let coef = linalg::solve_spd_vec(&self.design_gram, &self.design.tr_mul(&y))
            .ok_or(Error::SingularDesign { rcond: 0.0 })?;
        let fitted = &self.design * coef;
        Ok(col.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect())
    }
}

/// Within-OLS estimation of the PVAR on t = p+1..T.
pub fn fit_pvar(panel: &PanelDataset, spec: &PVARSpec) -> Result<PVARFit> {
    fit_on_sample(panel, spec, spec.lag_order)
}

/// Within-OLS estimation using dependent rows t = first_time..T (0-based).
/// Used directly by lag selection so that every order shares one sample.
pub fn fit_on_sample(panel: &PanelDataset, spec: &PVARSpec, first_time: usize) -> Result<PVARFit> {
    let p = spec.lag_order;
    let (n_units, n_times, m) = (panel.n_units(), panel.n_times(), panel.m());
    if p == 0 || p + 1 >= n_times {
        return Err(Error::InvalidSpec(format!(
            "lag order {p} must satisfy 1 <= p < T - 1 (T = {n_times})"
        )));
    }
    if first_time < p {
        return Err(Error::InvalidSpec(
            "sample start precedes the available lags".into(),
        ));
    }
    let needed = m * p + 2;
    let have = n_times.saturating_sub(first_time);
    if have < needed {
        return Err(Error::InsufficientObs { needed, have });
    }
    let rows = n_times - first_time;
    let n = n_units * rows;
    let k = m * p;

    let y_raw = DMatrix::from_fn(n, m, |r, c| panel.value(r / rows, first_time + r % rows, c));
    let x_raw = DMatrix::from_fn(n, k, |r, c| {
        let lag = c / m + 1;
        panel.value(r / rows, first_time + r % rows - lag, c % m)
    });

    let absorber = Absorber::new(
        n_units,
        rows,
        spec.include_unit_effects,
        spec.time_effects,
        dummy_matrix(panel, spec, first_time)?,
    )?;
    let mut y = y_raw.clone();
    let mut x = x_raw.clone();
    absorber.absorb_matrix(&mut y);
    absorber.absorb_matrix(&mut x);

    let g = linalg::gram(&x);
    let rcond = linalg::sym_rcond(&g);
    if !(rcond >= 1e-12) {
        return Err(Error::SingularDesign { rcond });
    }
    let b = linalg::solve_spd(&g, &x.tr_mul(&y)).ok_or(Error::SingularDesign { rcond })?;
    let residuals = &y - &x * &b;
    let sigma = {
        let s = residuals.tr_mul(&residuals) / n as f64;
        // exact symmetry
        (&s + s.transpose()) * 0.5
    };
    let phi: Vec<DMatrix<f64>> = (0..p)
        .map(|l| DMatrix::from_fn(m, m, |r, c| b[(l * m + c, r)]))
        .collect();

    let fixed_part = &y_raw - &x_raw * &b - &residuals;
    let intercepts: Vec<DVector<f64>> = (0..n_units)
        .map(|u| {
            let block = fixed_part.rows(u * rows, rows);
            DVector::from_fn(m, |c, _| block.column(c).sum() / rows as f64)
        })
        .collect();
    let phi_sum = phi
        .iter()
        .fold(DMatrix::<f64>::zeros(m, m), |acc, q| acc + q);
    let long_run = DMatrix::<f64>::identity(m, m) - phi_sum;
    let mu = long_run
        .clone()
        .lu()
        .try_inverse()
        .filter(|inv| inv.iter().all(|v| v.is_finite()))
        .map(|inv| intercepts.iter().map(|c| &inv * c).collect());

    Ok(PVARFit {
        phi,
        mu,
        intercepts,
        residuals,
        sigma,
        spec: spec.clone(),
        effective_obs: n,
        n_units,
        n_policies: panel.n_policies(),
        first_time,
        fixed_part,
        absorber,
        design: x,
        design_gram: g,
    })
}

/// VAR(p) written as a VAR(1) on the stacked state.
#[derive(Debug, Clone, PartialEq)]
pub struct CompanionMatrix {
    pub matrix: DMatrix<f64>,
    pub m: usize,
    pub p: usize,
}

impl CompanionMatrix {
    pub fn from_lags(phi: &[DMatrix<f64>]) -> Self {
        let p = phi.len();
        let m = phi.first().map_or(0, |f| f.nrows());
        let mut c = DMatrix::zeros(m * p, m * p);
        for (l, block) in phi.iter().enumerate() {
            c.view_mut((0, l * m), (m, m)).copy_from(block);
        }
        for l in 1..p {
            for d in 0..m {
                c[(l * m + d, (l - 1) * m + d)] = 1.0;
            }
        }
        Self { matrix: c, m, p }
    }
}

pub fn companion(fit: &PVARFit) -> CompanionMatrix {
    CompanionMatrix::from_lags(&fit.phi)
}

//! Scenario configuration and the potential-outcome simulator.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::panel::PanelDataset;
use crate::rng::{self, StreamRng};
use crate::spillover::{build_exposure, Adjacency, ExposureMap, ExposureMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    HomogeneousDummy,
    GaussianContinuous,
    NonNegativeContinuous,
    HeterogeneousDummy,
    SpilloverDummy,
}

impl Regime {
    pub fn is_dummy(self) -> bool {
        matches!(
            self,
            Regime::HomogeneousDummy | Regime::HeterogeneousDummy | Regime::SpilloverDummy
        )
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Regime::HomogeneousDummy => "homogeneous_dummy",
            Regime::GaussianContinuous => "gaussian_continuous",
            Regime::NonNegativeContinuous => "non_negative_continuous",
            Regime::HeterogeneousDummy => "heterogeneous_dummy",
            Regime::SpilloverDummy => "spillover_dummy",
        };
        f.write_str(s)
    }
}

/// Structural impact of the policy innovation on the outcome innovation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImpactFn {
    Linear { beta: f64 },
    Quadratic { a: f64, b: f64 },
    Step { beta: f64, threshold: f64 },
}

impl ImpactFn {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            ImpactFn::Linear { beta } => beta * x,
            ImpactFn::Quadratic { a, b } => a * x + b * x * x,
            ImpactFn::Step { beta, threshold } => {
                if x >= threshold {
                    beta
                } else {
                    0.0
                }
            }
        }
    }

    /// Derivative where it exists; zero for the step.
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            ImpactFn::Linear { beta } => beta,
            ImpactFn::Quadratic { a, b } => a + 2.0 * b * x,
            ImpactFn::Step { .. } => 0.0,
        }
    }
}

/// Treatment timing for the heterogeneous dummy regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Treated units share a random set of treated periods.
    Block,
    /// Treated units switch on cell by cell.
    Sparse,
    /// Two groups take turns, one treated while the other serves as control.
    Alternating,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    Ring,
    Grid,
    Edges,
}

/// Where the exposure effect lands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpilloverForm {
    /// `ρ·s·(1 − w)`: only untreated outcomes move with exposure.
    UntreatedOnly,
    /// `ρ·s` regardless of own treatment.
    Additive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub regime: Regime,
    pub n_units: usize,
    pub n_times: usize,
    pub burn_in: usize,
    /// One row-major 2×2 matrix per lag, variables ordered (policy, outcome).
    pub phi: Vec<Vec<f64>>,
    pub mu_scale: f64,
    pub noise_sd: f64,
    /// Loading of the outcome innovation on a shock common to all units.
    pub common_sd: f64,
    pub impact: ImpactFn,
    /// Dispersion of unit-level effect scales around one.
    pub effect_het: f64,
    pub treat_prob: f64,
    pub treat_frac: f64,
    pub sigma: f64,
    pub zero_prob: f64,
    pub d_low: f64,
    pub d_high: f64,
    /// Strength of selection into treatment (zero means randomized).
    pub selection: f64,
    pub schedule: Schedule,
    /// Outcome shift in the period before a unit's treatment starts.
    pub anticipation: f64,
    pub rho: f64,
    pub rho_het: f64,
    pub spillover_form: SpilloverForm,
    pub graph: GraphKind,
    pub grid_cols: usize,
    pub edges: Vec<[usize; 2]>,
    pub exposure_mode: ExposureMode,
    /// Exposure mode used by the estimator when it differs from the DGP.
    pub regression_exposure_mode: Option<ExposureMode>,
    pub lag_order: usize,
    pub grid_points: usize,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            regime: Regime::HomogeneousDummy,
            n_units: 50,
            n_times: 100,
            burn_in: 50,
            phi: vec![vec![0.3, 0.0, 0.1, 0.4]],
            mu_scale: 1.0,
            noise_sd: 1.0,
            common_sd: 0.0,
            impact: ImpactFn::Linear { beta: 2.0 },
            effect_het: 0.0,
            treat_prob: 0.5,
            treat_frac: 0.3,
            sigma: 1.0,
            zero_prob: 0.5,
            d_low: 1.0,
            d_high: 2.0,
            selection: 0.0,
            schedule: Schedule::Block,
            anticipation: 0.0,
            rho: 0.5,
            rho_het: 0.0,
            spillover_form: SpilloverForm::UntreatedOnly,
            graph: GraphKind::Ring,
            grid_cols: 10,
            edges: Vec::new(),
            exposure_mode: ExposureMode::TreatedNeighborShare,
            regression_exposure_mode: None,
            lag_order: 1,
            grid_points: 101,
            seed: 1,
        }
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::BadConfig(msg.into())
}

impl ScenarioConfig {
    pub fn new(regime: Regime) -> Self {
        Self {
            regime,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_units < 2 || self.n_times < 3 {
            return Err(bad("need at least 2 units and 3 periods"));
        }
        if self.phi.is_empty()
            || self
                .phi
                .iter()
                .any(|l| l.len() != 4 || l.iter().any(|v| !v.is_finite()))
        {
            return Err(bad(
                "phi must hold one finite 2x2 matrix (4 entries) per lag",
            ));
        }
        if self.lag_order == 0 || self.lag_order + 2 >= self.n_times {
            return Err(bad("lag_order must lie in 1..n_times-2"));
        }
        if self.grid_points < 3 {
            return Err(bad("grid_points must be at least 3"));
        }
        let finite = [
            self.mu_scale,
            self.noise_sd,
            self.common_sd,
            self.effect_het,
            self.selection,
            self.anticipation,
            self.rho,
            self.rho_het,
        ];
        if finite.iter().any(|v| !v.is_finite())
            || self.noise_sd < 0.0
            || self.mu_scale < 0.0
            || self.common_sd < 0.0
        {
            return Err(bad("scale parameters must be finite and non-negative"));
        }
        match self.regime {
            Regime::HomogeneousDummy | Regime::SpilloverDummy => {
                if !(self.treat_prob > 0.0 && self.treat_prob < 1.0) {
                    return Err(bad("treat_prob must lie in (0, 1)"));
                }
            }
            Regime::HeterogeneousDummy => {
                if !(self.treat_frac > 0.0 && self.treat_frac < 1.0) {
                    return Err(bad("treat_frac must lie in (0, 1)"));
                }
                if self.schedule != Schedule::Alternating
                    && !(self.treat_prob > 0.0 && self.treat_prob < 1.0)
                {
                    return Err(bad("treat_prob must lie in (0, 1)"));
                }
            }
            Regime::GaussianContinuous => {
                if !(self.sigma > 0.0 && self.sigma.is_finite()) {
                    return Err(bad("sigma must be positive"));
                }
                if self.selection.abs() > 1.0 {
                    return Err(bad("selection must lie in [-1, 1] for the Gaussian regime"));
                }
            }
            Regime::NonNegativeContinuous => {
                if !(self.d_low > 0.0) {
                    return Err(bad("d_low must be positive"));
                }
                if !(self.d_high >= self.d_low && self.d_high.is_finite()) {
                    return Err(bad("d_high must be at least d_low"));
                }
                if !(0.0..1.0).contains(&self.zero_prob) {
                    return Err(bad("zero_prob must lie in [0, 1)"));
                }
            }
        }
        if self.regime == Regime::SpilloverDummy {
            self.adjacency()?;
        }
        Ok(())
    }

    pub fn phi_matrices(&self) -> Vec<DMatrix<f64>> {
        self.phi
            .iter()
            .map(|l| DMatrix::from_row_slice(2, 2, l))
            .collect()
    }

    pub fn adjacency(&self) -> Result<Adjacency> {
        let n = self.n_units;
        match self.graph {
            GraphKind::Ring => Ok(Adjacency::ring(n)),
            GraphKind::Grid => {
                if self.grid_cols == 0 || n % self.grid_cols != 0 {
                    return Err(bad("grid_cols must divide n_units"));
                }
                Ok(Adjacency::grid(n / self.grid_cols, self.grid_cols))
            }
            GraphKind::Edges => {
                let edges: Vec<(usize, usize)> = self.edges.iter().map(|e| (e[0], e[1])).collect();
                Adjacency::from_edges(n, &edges).map_err(|e| bad(e.to_string()))
            }
        }
    }

    /// The λ-grid on which potential outcomes are reported by default.
    pub fn default_grid(&self) -> Vec<f64> {
        match self.regime {
            Regime::GaussianContinuous => {
                linspace(-6.0 * self.sigma, 6.0 * self.sigma, self.grid_points)
            }
            Regime::NonNegativeContinuous => linspace(0.0, self.d_high, self.grid_points),
            _ => vec![0.0, 1.0],
        }
    }
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    let h = (b - a) / (n - 1) as f64;
    (0..n)
        .map(|i| if i == n - 1 { b } else { a + h * i as f64 })
        .collect()
}

/// Treated-unit and treated-period labels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Groups {
    pub unit_treated: Vec<bool>,
    pub time_treated: Vec<bool>,
}

impl Groups {
    pub fn trim_front(&self, k: usize) -> Self {
        Self {
            unit_treated: self.unit_treated.clone(),
            time_treated: self.time_treated[k..].to_vec(),
        }
    }
}

/// Exposure values and unit spillover loadings for interference regimes.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureOutcomes {
    pub map: ExposureMap,
    pub rho: Vec<f64>,
    pub form: SpilloverForm,
}

/// Ground truth behind a simulated panel. Cell `c = unit * n_times + t`.
///
/// Potential outcome innovations take the form
/// `po(λ) = baseline_c + scale_i · g(λ)`, plus the exposure term when present.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialOutcomePanel {
    pub regime: Regime,
    pub n_units: usize,
    pub n_times: usize,
    pub grid: Vec<f64>,
    pub impact: ImpactFn,
    pub assignments: Vec<f64>,
    pub baseline: Vec<f64>,
    pub effect_scale: Vec<f64>,
    pub groups: Option<Groups>,
    pub exposure: Option<ExposureOutcomes>,
    pub truth: ScenarioConfig,
}

impl PotentialOutcomePanel {
    pub fn n_cells(&self) -> usize {
        self.n_units * self.n_times
    }

    #[inline]
    pub fn po(&self, cell: usize, lambda: f64) -> f64 {
        self.baseline[cell] + self.effect_scale[cell / self.n_times] * self.impact.eval(lambda)
    }

    pub fn po_grid(&self, cell: usize) -> Vec<f64> {
        self.grid.iter().map(|&l| self.po(cell, l)).collect()
    }

    pub fn exposure_at(&self, cell: usize) -> f64 {
        self.exposure.as_ref().map_or(0.0, |e| e.map.s_values[cell])
    }

    /// `po(w, s)`; equals `po(w)` when the regime has no exposure.
    pub fn po_exposure(&self, cell: usize, w: f64, s: f64) -> f64 {
        let base = self.po(cell, w);
        match &self.exposure {
            None => base,
            Some(e) => {
                let rho = e.rho[cell / self.n_times];
                match e.form {
                    SpilloverForm::UntreatedOnly => base + rho * s * (1.0 - w),
                    SpilloverForm::Additive => base + rho * s,
                }
            }
        }
    }

    pub fn is_treated(&self, cell: usize) -> bool {
        self.assignments[cell] > 0.5
    }

    pub fn realized(&self, cell: usize) -> f64 {
        self.po_exposure(cell, self.assignments[cell], self.exposure_at(cell))
    }

    pub fn realized_outcomes(&self) -> Vec<f64> {
        (0..self.n_cells()).map(|c| self.realized(c)).collect()
    }

    /// Drops the first `k` periods of every unit.
    pub fn trim_front(&self, k: usize) -> Self {
        let t_new = self.n_times - k;
        let keep = |v: &[f64]| -> Vec<f64> {
            (0..self.n_units)
                .flat_map(|u| {
                    v[u * self.n_times + k..(u + 1) * self.n_times]
                        .iter()
                        .copied()
                })
                .collect()
        };
        Self {
            regime: self.regime,
            n_units: self.n_units,
            n_times: t_new,
            grid: self.grid.clone(),
            impact: self.impact,
            assignments: keep(&self.assignments),
            baseline: keep(&self.baseline),
            effect_scale: self.effect_scale.clone(),
            groups: self.groups.as_ref().map(|g| g.trim_front(k)),
            exposure: self.exposure.as_ref().map(|e| ExposureOutcomes {
                map: ExposureMap {
                    s_values: keep(&e.map.s_values),
                    n_units: e.map.n_units,
                    n_times: t_new,
                    mode: e.map.mode,
                },
                rho: e.rho.clone(),
                form: e.form,
            }),
            truth: self.truth.clone(),
        }
    }
}

fn normal(rng: &mut StreamRng) -> f64 {
    rng.sample(StandardNormal)
}

struct Assignment {
    values: Vec<f64>,
    groups: Option<Groups>,
    common: Vec<f64>,
}

fn assign(config: &ScenarioConfig, h: &[f64], rng: &mut StreamRng) -> Result<Assignment> {
    let (n, t_len) = (config.n_units, config.n_times);
    let common: Vec<f64> = (0..t_len).map(|_| normal(rng)).collect();
    let mut values = vec![0.0; n * t_len];
    let mut groups = None;
    match config.regime {
        Regime::HomogeneousDummy => {
            let tau: Vec<f64> = if config.selection == 0.0 {
                (0..t_len)
                    .map(|_| {
                        if rng.random::<f64>() < config.treat_prob {
                            1.0
                        } else {
                            0.0
                        }
                    })
                    .collect()
            } else {
                let cut = Normal::standard().inverse_cdf(1.0 - config.treat_prob)
                    * (1.0 + config.selection * config.selection).sqrt();
                common
                    .iter()
                    .map(|eta| {
                        let z = normal(rng);
                        if config.selection * eta + z > cut {
                            1.0
                        } else {
                            0.0
                        }
                    })
                    .collect()
            };
            for u in 0..n {
                values[u * t_len..(u + 1) * t_len].copy_from_slice(&tau);
            }
        }
        Regime::GaussianContinuous => {
            let s = config.selection;
            let idio = (1.0 - s * s).sqrt();
            for u in 0..n {
                for t in 0..t_len {
                    values[u * t_len + t] = config.sigma * (idio * normal(rng) + s * h[u]);
                }
            }
        }
        Regime::NonNegativeContinuous => {
            for v in values.iter_mut() {
                *v = draw_nonneg(config, rng);
            }
        }
        Regime::SpilloverDummy => {
            for v in values.iter_mut() {
                *v = if rng.random::<f64>() < config.treat_prob {
                    1.0
                } else {
                    0.0
                };
            }
        }
        Regime::HeterogeneousDummy => {
            let n_treat = ((config.treat_frac * n as f64).round() as usize).clamp(1, n - 1);
            let mut rank: Vec<(f64, usize)> = (0..n)
                .map(|u| (config.selection * h[u] + normal(rng), u))
                .collect();
            rank.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let mut unit_treated = vec![false; n];
            for &(_, u) in &rank[..n_treat] {
                unit_treated[u] = true;
            }
            let mut time_treated = vec![false; t_len];
            match config.schedule {
                Schedule::Block => {
                    for tt in time_treated.iter_mut() {
                        *tt = rng.random::<f64>() < config.treat_prob;
                    }
                    if time_treated.iter().all(|&x| x) || !time_treated.iter().any(|&x| x) {
                        return Err(Error::DegenerateAssignment(
                            "treated periods cover all or none of the sample",
                        ));
                    }
                    for u in (0..n).filter(|&u| unit_treated[u]) {
                        for t in (0..t_len).filter(|&t| time_treated[t]) {
                            values[u * t_len + t] = 1.0;
                        }
                    }
                }
                Schedule::Sparse => {
                    for u in (0..n).filter(|&u| unit_treated[u]) {
                        for t in 0..t_len {
                            if rng.random::<f64>() < config.treat_prob {
                                values[u * t_len + t] = 1.0;
                                time_treated[t] = true;
                            }
                        }
                    }
                }
                Schedule::Alternating => {
                    for t in 0..t_len {
                        time_treated[t] = t % 2 == 1;
                    }
                    for u in 0..n {
                        for t in 0..t_len {
                            if unit_treated[u] == time_treated[t] {
                                values[u * t_len + t] = 1.0;
                            }
                        }
                    }
                }
            }
            groups = Some(Groups {
                unit_treated,
                time_treated,
            });
        }
    }
    if config.regime.is_dummy() {
        let treated = values.iter().filter(|&&v| v > 0.5).count();
        if treated == 0 || treated == values.len() {
            return Err(Error::DegenerateAssignment(
                "every cell shares one assignment",
            ));
        }
    }
    Ok(Assignment {
        values,
        groups,
        common,
    })
}

fn draw_nonneg(config: &ScenarioConfig, rng: &mut StreamRng) -> f64 {
    if rng.random::<f64>() < config.zero_prob {
        0.0
    } else {
        config.d_low + (config.d_high - config.d_low) * rng.random::<f64>()
    }
}

/// Simulates a panel `x_it = c_i + Σ Φ_l x_{i,t−l} + x̃_it` with fully observed
/// potential outcome innovations.
pub fn simulate_scenario(config: &ScenarioConfig) -> Result<(PanelDataset, PotentialOutcomePanel)> {
    config.validate()?;
    let (n, t_len) = (config.n_units, config.n_times);
    let mut rng = rng::stream(config.seed, 0);

    let h: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
    let effect_scale: Vec<f64> = h.iter().map(|x| 1.0 + config.effect_het * x).collect();
    let Assignment {
        values: assignments,
        groups,
        common,
    } = assign(config, &h, &mut rng)?;

    let mut baseline = vec![0.0; n * t_len];
    for u in 0..n {
        for t in 0..t_len {
            baseline[u * t_len + t] =
                config.noise_sd * normal(&mut rng) + config.common_sd * common[t];
        }
    }
    if config.anticipation != 0.0 && config.regime == Regime::HeterogeneousDummy {
        for u in 0..n {
            for t in 0..t_len - 1 {
                let c = u * t_len + t;
                if assignments[c] < 0.5 && assignments[c + 1] > 0.5 {
                    baseline[c] += config.anticipation;
                }
            }
        }
    }

    let exposure = if config.regime == Regime::SpilloverDummy {
        let adj = config.adjacency()?;
        let map = build_exposure(&adj, &assignments, t_len, config.exposure_mode)?;
        let rho = (0..n)
            .map(|_| config.rho * (1.0 + config.rho_het * normal(&mut rng)))
            .collect();
        Some(ExposureOutcomes {
            map,
            rho,
            form: config.spillover_form,
        })
    } else {
        None
    };

    let pop = PotentialOutcomePanel {
        regime: config.regime,
        n_units: n,
        n_times: t_len,
        grid: config.default_grid(),
        impact: config.impact,
        assignments,
        baseline,
        effect_scale,
        groups,
        exposure,
        truth: config.clone(),
    };

    let phi = config.phi_matrices();
    let p = phi.len();
    let phi_sum = phi.iter().fold(DMatrix::<f64>::zeros(2, 2), |a, b| a + b);
    let long_run = DMatrix::<f64>::identity(2, 2) - phi_sum;
    let burn = config.burn_in;
    let mut values = vec![0.0; n * t_len * 2];
    let mut hist: Vec<DVector<f64>> = Vec::with_capacity(burn + t_len + p);
    for u in 0..n {
        let mu_policy = if config.regime.is_dummy() {
            0.0
        } else {
            config.mu_scale * normal(&mut rng)
        };
        let mu = DVector::from_vec(vec![mu_policy, config.mu_scale * normal(&mut rng)]);
        let c = &long_run * &mu;
        hist.clear();
        hist.extend(std::iter::repeat_n(mu.clone(), p));
        for s in 0..burn + t_len {
            let innov = if s < burn {
                let w = match config.regime {
                    Regime::GaussianContinuous => config.sigma * normal(&mut rng),
                    Regime::NonNegativeContinuous => draw_nonneg(config, &mut rng),
                    _ => 0.0,
                };
                DVector::from_vec(vec![w, config.noise_sd * normal(&mut rng)])
            } else {
                let cell = u * t_len + s - burn;
                DVector::from_vec(vec![pop.assignments[cell], pop.realized(cell)])
            };
            let mut x = &c + innov;
            for (l, f) in phi.iter().enumerate() {
                x += f * &hist[hist.len() - 1 - l];
            }
            if s >= burn {
                let base = (u * t_len + s - burn) * 2;
                values[base] = x[0];
                values[base + 1] = x[1];
            }
            hist.push(x);
        }
    }
    let panel = PanelDataset::from_dense(n, t_len, 1, 1, values, vec!["w".into(), "y".into()])?;
    Ok((panel, pop))
}

//! Exposure mapping on a unit graph, the two-regressor residual regression
//! with spillovers, and the ATTE/ASTE oracles.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::causal_lab::scenario::{
    simulate_scenario, PotentialOutcomePanel, Regime, ScenarioConfig, SpilloverForm,
};
use crate::causal_lab::verify::{aggregate, run_reps, CheckSpec, VerificationReport};
use crate::error::{Error, Result};
use crate::identify::{cholesky_lower, impact_gamma};
use crate::linalg;
use crate::panel::{fit_pvar, PVARFit, PVARSpec, PanelDataset};
use crate::rng;
use crate::stats;

/// Undirected graph over units, stored as sorted neighbour lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    neighbors: Vec<Vec<usize>>,
}

impl Adjacency {
    pub fn n_units(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, unit: usize) -> &[usize] {
        &self.neighbors[unit]
    }

    pub fn from_edges(n_units: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut neighbors = vec![Vec::new(); n_units];
        for &(a, b) in edges {
            if a >= n_units || b >= n_units {
                return Err(Error::IndexOutOfRange(format!(
                    "edge ({a}, {b}) with {n_units} units"
                )));
            }
            if a == b {
                return Err(Error::SelfLoop(a));
            }
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for l in &mut neighbors {
            l.sort_unstable();
            l.dedup();
        }
        Ok(Self { neighbors })
    }

    /// From a dense 0/1 matrix; must be symmetric with a zero diagonal.
    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        if m.ncols() != n {
            return Err(Error::InvalidArgument(
                "adjacency matrix must be square".into(),
            ));
        }
        let mut neighbors = vec![Vec::new(); n];
        for i in 0..n {
            if m[(i, i)] != 0.0 {
                return Err(Error::SelfLoop(i));
            }
            for j in 0..n {
                if m[(i, j)] != m[(j, i)] {
                    return Err(Error::AsymmetricAdjacency(i, j));
                }
                if m[(i, j)] != 0.0 {
                    neighbors[i].push(j);
                }
            }
        }
        Ok(Self { neighbors })
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        let n = self.n_units();
        let mut m = DMatrix::zeros(n, n);
        for (i, l) in self.neighbors.iter().enumerate() {
            for &j in l {
                m[(i, j)] = 1.0;
            }
        }
        m
    }

    /// Each unit linked to its two cyclic neighbours.
    pub fn ring(n: usize) -> Self {
        let edges: Vec<(usize, usize)> = match n {
            0 | 1 => Vec::new(),
            2 => vec![(0, 1)],
            _ => (0..n).map(|i| (i, (i + 1) % n)).collect(),
        };
        Self::from_edges(n, &edges).expect("ring edges are valid")
    }

    /// Rook-contiguity lattice, units numbered row-major.
    pub fn grid(rows: usize, cols: usize) -> Self {
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let i = r * cols + c;
                if c + 1 < cols {
                    edges.push((i, i + 1));
                }
                if r + 1 < rows {
                    edges.push((i, i + cols));
                }
            }
        }
        Self::from_edges(rows * cols, &edges).expect("grid edges are valid")
    }

    /// Parses `unit_a,unit_b` lines against the panel's unit labels. Blank
    /// lines, `#` comments and an `a,b`-style header are skipped.
    pub fn from_edge_list(text: &str, unit_labels: &[i64]) -> Result<Self> {
        let index = |tok: &str, line: usize| -> Result<usize> {
            let label: i64 = tok.trim().parse().map_err(|_| {
                Error::InvalidArgument(format!("line {line}: bad unit label {tok:?}"))
            })?;
            unit_labels
                .iter()
                .position(|&l| l == label)
                .ok_or_else(|| Error::InvalidArgument(format!("line {line}: unknown unit {label}")))
        };
        let mut edges = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 2 {
                return Err(Error::InvalidArgument(format!(
                    "line {}: expected unit_a,unit_b",
                    k + 1
                )));
            }
            if k == 0 && parts[0].trim().parse::<i64>().is_err() {
                continue;
            }
            edges.push((index(parts[0], k + 1)?, index(parts[1], k + 1)?));
        }
        Self::from_edges(unit_labels.len(), &edges)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExposureMode {
    /// Share of neighbours treated.
    #[default]
    TreatedNeighborShare,
    /// One if any neighbour is treated.
    BinaryAnyNeighbor,
}

impl FromStr for ExposureMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "share" | "treated_neighbor_share" => Ok(ExposureMode::TreatedNeighborShare),
            "binary" | "binary_any_neighbor" => Ok(ExposureMode::BinaryAnyNeighbor),
            other => Err(Error::InvalidArgument(format!(
                "unknown exposure mode {other:?}"
            ))),
        }
    }
}

/// `S_it` for every cell, unit-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExposureMap {
    pub s_values: Vec<f64>,
    pub n_units: usize,
    pub n_times: usize,
    pub mode: ExposureMode,
}

impl ExposureMap {
    pub fn get(&self, unit: usize, t: usize) -> f64 {
        self.s_values[unit * self.n_times + t]
    }
}

/// Builds exposures from a unit-major treatment panel; a cell counts as
/// treated when its value exceeds one half.
pub fn build_exposure(
    adjacency: &Adjacency,
    treatment: &[f64],
    n_times: usize,
    mode: ExposureMode,
) -> Result<ExposureMap> {
    let n = adjacency.n_units();
    if treatment.len() != n * n_times {
        return Err(Error::InvalidArgument(format!(
            "treatment panel has {} cells, expected {}",
            treatment.len(),
            n * n_times
        )));
    }
    let mut s_values = vec![0.0; n * n_times];
    for u in 0..n {
        let nb = adjacency.neighbors(u);
        if nb.is_empty() {
            continue;
        }
        for t in 0..n_times {
            let treated = nb
                .iter()
                .filter(|&&v| treatment[v * n_times + t] > 0.5)
                .count();
            s_values[u * n_times + t] = match mode {
                ExposureMode::TreatedNeighborShare => treated as f64 / nb.len() as f64,
                ExposureMode::BinaryAnyNeighbor => (treated > 0) as u8 as f64,
            };
        }
    }
    Ok(ExposureMap {
        s_values,
        n_units: n,
        n_times,
        mode,
    })
}

/// Point estimates of `Ỹ = δ·W̃ + ρ·S + η`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpilloverPoint {
    pub delta: f64,
    pub rho: f64,
    /// The exposure series was identically zero; `rho` is reported as 0.
    pub degenerate_exposure: bool,
    /// At least one series had a mean above 1e-8 and was centred.
    pub centered: bool,
}

const MEAN_GUARD: f64 = 1e-8;

fn centered(xs: &[f64]) -> (Vec<f64>, bool) {
    let m = stats::mean(xs);
    if m.abs() > MEAN_GUARD {
        (xs.iter().map(|x| x - m).collect(), true)
    } else {
        (xs.to_vec(), false)
    }
}

/// Two-regressor least squares without intercept.
pub fn spillover_point(w: &[f64], y: &[f64], s: &[f64]) -> Result<SpilloverPoint> {
    if w.len() != y.len() || w.len() != s.len() {
        return Err(Error::InvalidArgument(
            "spillover series differ in length".into(),
        ));
    }
    if w.len() < 3 {
        return Err(Error::InsufficientObs {
            needed: 3,
            have: w.len(),
        });
    }
    let s_zero = s.iter().all(|&v| v == 0.0);
    let (w, cw) = centered(w);
    let (y, cy) = centered(y);
    let (s, cs) = centered(s);
    let was_centered = cw || cy || cs;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, z)| x * z).sum::<f64>();
    let ww = dot(&w, &w);
    if !(ww > 0.0) {
        return Err(Error::ZeroPolicyVariance(ww));
    }
    if s_zero {
        return Ok(SpilloverPoint {
            delta: dot(&w, &y) / ww,
            rho: 0.0,
            degenerate_exposure: true,
            centered: was_centered,
        });
    }
    let gram = DMatrix::from_row_slice(2, 2, &[ww, dot(&w, &s), dot(&w, &s), dot(&s, &s)]);
    let rcond = linalg::sym_rcond(&gram);
    if !(rcond >= 1e-10) {
        return Err(Error::CollinearRegressors { rcond });
    }
    let rhs = DVector::from_vec(vec![dot(&w, &y), dot(&s, &y)]);
    let b = linalg::solve_spd_vec(&gram, &rhs).ok_or(Error::CollinearRegressors { rcond })?;
    Ok(SpilloverPoint {
        delta: b[0],
        rho: b[1],
        degenerate_exposure: false,
        centered: was_centered,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpilloverFit {
    pub delta: f64,
    pub rho: f64,
    pub se_delta: f64,
    pub se_rho: f64,
    pub n_reps: usize,
    pub n_failed: usize,
    pub seed: u64,
    pub degenerate_exposure: bool,
    pub centered: bool,
}

/// Point estimates plus standard errors from an i.i.d. cell bootstrap.
pub fn spillover_regression(
    w: &[f64],
    y: &[f64],
    s: &[f64],
    reps: usize,
    seed: u64,
) -> Result<SpilloverFit> {
    if reps < 2 {
        return Err(Error::InvalidArgument(
            "bootstrap needs at least 2 replications".into(),
        ));
    }
    let point = spillover_point(w, y, s)?;
    let n = w.len();
    let draws: Vec<Option<(f64, f64)>> = (0..reps as u64)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::stream(seed, b);
            let idx: Vec<usize> = (0..n).map(|_| r.random_range(0..n)).collect();
            let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();
            spillover_point(&pick(w), &pick(y), &pick(s))
                .ok()
                .map(|p| (p.delta, p.rho))
        })
        .collect();
    let ok: Vec<(f64, f64)> = draws.iter().flatten().copied().collect();
    let n_failed = reps - ok.len();
    if ok.len() < 2 || n_failed * 20 > reps {
        return Err(Error::BootstrapUnstable {
            failed: n_failed,
            reps,
        });
    }
    let d: Vec<f64> = ok.iter().map(|p| p.0).collect();
    let r: Vec<f64> = ok.iter().map(|p| p.1).collect();
    Ok(SpilloverFit {
        delta: point.delta,
        rho: point.rho,
        se_delta: stats::sd_sample(&d),
        se_rho: if point.degenerate_exposure {
            0.0
        } else {
            stats::sd_sample(&r)
        },
        n_reps: reps,
        n_failed,
        seed,
        degenerate_exposure: point.degenerate_exposure,
        centered: point.centered,
    })
}

/// Total effect and pure spillover effect on the treated, averaged over
/// treated cells at their realized exposure.
pub fn oracle_atte_aste(pop: &PotentialOutcomePanel) -> Result<(f64, f64)> {
    if pop.exposure.is_none() {
        return Err(Error::MissingExposure);
    }
    let (mut total, mut spill, mut n) = (0.0, 0.0, 0usize);
    for c in (0..pop.n_cells()).filter(|&c| pop.is_treated(c)) {
        let s = pop.exposure_at(c);
        let base = pop.po_exposure(c, 0.0, 0.0);
        total += pop.po_exposure(c, 1.0, s) - base;
        spill += pop.po_exposure(c, 0.0, s) - base;
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyTreatedSet);
    }
    Ok((total / n as f64, spill / n as f64))
}

/// Regressor for the spillover term: exposure on untreated cells.
pub fn exposure_regressor(map: &ExposureMap, treatment: &[f64]) -> Vec<f64> {
    map.s_values
        .iter()
        .zip(treatment)
        .map(|(s, &w)| if w > 0.5 { 0.0 } else { *s })
        .collect()
}

/// Spillover-adjusted and naive impact estimates from one fitted PVAR.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpilloverEstimate {
    pub fit: SpilloverFit,
    pub naive_gamma: f64,
    pub mean_exposure: f64,
}

fn adjusted_from_fit(
    fit: &PVARFit,
    treatment: &[f64],
    n_times: usize,
    adjacency: &Adjacency,
    mode: ExposureMode,
    outcome: usize,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, ExposureMap)> {
    let map = build_exposure(adjacency, treatment, n_times, mode)?;
    let s = fit.residualize(&exposure_regressor(&map, treatment), n_times)?;
    Ok((fit.residual_series(0), fit.residual_series(outcome), s, map))
}

/// Fits the PVAR and runs the spillover regression of `outcome` residuals on
/// the residuals of policy 0 and of the exposure regressor. Policy cells
/// above one half count as treated.
pub fn estimate_from_panel(
    panel: &PanelDataset,
    spec: &PVARSpec,
    adjacency: &Adjacency,
    mode: ExposureMode,
    outcome: usize,
    reps: usize,
    seed: u64,
) -> Result<SpilloverEstimate> {
    if adjacency.n_units() != panel.n_units() {
        return Err(Error::InvalidArgument(format!(
            "adjacency covers {} units, panel has {}",
            adjacency.n_units(),
            panel.n_units()
        )));
    }
    if outcome < panel.n_policies() || outcome >= panel.m() {
        return Err(Error::IndexOutOfRange(format!(
            "outcome variable {outcome}"
        )));
    }
    let fit = fit_pvar(panel, spec)?;
    let treatment = panel.series(0);
    let (w, y, s, map) =
        adjusted_from_fit(&fit, &treatment, panel.n_times(), adjacency, mode, outcome)?;
    let chol = cholesky_lower(&fit.sigma)?;
    Ok(SpilloverEstimate {
        fit: spillover_regression(&w, &y, &s, reps, seed)?,
        naive_gamma: impact_gamma(&chol, 0, outcome)?,
        mean_exposure: stats::mean(&map.s_values),
    })
}

/// Monte-Carlo check that the naive impact recovers ATTE − ASTE while the
/// spillover-adjusted coefficient recovers ATTE.
pub fn verify_interference(config: &ScenarioConfig, reps: usize) -> Result<VerificationReport> {
    if config.regime != Regime::SpilloverDummy {
        return Err(Error::RegimeMismatch {
            theorem: "T11-T12".into(),
            expected: Regime::SpilloverDummy.to_string(),
            actual: config.regime.to_string(),
        });
    }
    config.validate()?;
    let reg_mode = config
        .regression_exposure_mode
        .unwrap_or(config.exposure_mode);
    let well_specified =
        reg_mode == config.exposure_mode && config.spillover_form == SpilloverForm::UntreatedOnly;
    let specs = [
        CheckSpec {
            name: "naive gamma vs ATTE - ASTE",
            asserted: true,
        },
        CheckSpec {
            name: "adjusted delta vs ATTE",
            asserted: well_specified,
        },
        CheckSpec {
            name: "naive bias vs ASTE",
            asserted: false,
        },
        CheckSpec {
            name: "adjusted delta vs naive gamma",
            asserted: false,
        },
    ];
    let adjacency = config.adjacency()?;
    let per_rep = run_reps(config, reps, |cfg| {
        let (panel, pop) = simulate_scenario(cfg)?;
        let fit = fit_pvar(&panel, &PVARSpec::new(cfg.lag_order))?;
        let gamma = impact_gamma(&cholesky_lower(&fit.sigma)?, 0, 1)?;
        let (w, y, s, _) =
            adjusted_from_fit(&fit, &pop.assignments, cfg.n_times, &adjacency, reg_mode, 1)?;
        let delta = spillover_point(&w, &y, &s)?.delta;
        let (atte, aste) = oracle_atte_aste(&pop.trim_front(fit.first_time))?;
        Ok(vec![
            (gamma, atte - aste),
            (delta, atte),
            (atte - gamma, aste),
            (delta, gamma),
        ])
    })?;
    Ok(aggregate("T11-T12".into(), config.seed, &specs, per_rep))
}

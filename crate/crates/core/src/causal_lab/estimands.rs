//! Brute-force estimand oracles computed from stored potential outcomes.

use serde::Serialize;

use super::scenario::{Groups, PotentialOutcomePanel};
use crate::error::{Error, Result};
use crate::spillover::oracle_atte_aste;
use crate::stats;

/// Cell-level Monte-Carlo standard errors of the scalar estimands.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct EstimandSe {
    pub ate: Option<f64>,
    pub att: Option<f64>,
    pub atte: Option<f64>,
    pub aste: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimandReport {
    pub ate: Option<f64>,
    pub att: Option<f64>,
    pub grid: Vec<f64>,
    pub acr: Vec<f64>,
    pub acrt: Vec<f64>,
    /// ACRT bins without realized assignments, filled from the nearest bin.
    pub acrt_filled_bins: usize,
    pub selection_bias: Option<f64>,
    pub atte: Option<f64>,
    pub aste: Option<f64>,
    pub mc_se: EstimandSe,
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument(
            "grid must hold at least two increasing points".into(),
        ));
    }
    Ok(())
}

/// Mean potential outcome innovation at dose λ over all cells.
pub fn mean_po(pop: &PotentialOutcomePanel, lambda: f64) -> f64 {
    let n = pop.n_cells();
    (0..n).map(|c| pop.po(c, lambda)).sum::<f64>() / n as f64
}

/// `E[Ỹ(λ) − Ỹ(0)]`.
pub fn ate_at(pop: &PotentialOutcomePanel, lambda: f64) -> f64 {
    let n = pop.n_cells();
    (0..n)
        .map(|c| pop.po(c, lambda) - pop.po(c, 0.0))
        .sum::<f64>()
        / n as f64
}

fn fd_neighbors(grid: &[f64], g: usize) -> (usize, usize) {
    let last = grid.len() - 1;
    match g {
        0 => (0, 1),
        _ if g == last => (last - 1, last),
        _ => (g - 1, g + 1),
    }
}

/// Finite-difference derivative of the mean potential outcome along the grid.
pub fn acr(pop: &PotentialOutcomePanel, grid: &[f64]) -> Result<Vec<f64>> {
    check_grid(grid)?;
    let means: Vec<f64> = grid.iter().map(|&l| mean_po(pop, l)).collect();
    Ok((0..grid.len())
        .map(|g| {
            let (a, b) = fd_neighbors(grid, g);
            (means[b] - means[a]) / (grid[b] - grid[a])
        })
        .collect())
}

fn bin_of(grid: &[f64], x: f64) -> Option<usize> {
    let last = grid.len() - 1;
    let lo = grid[0] - 0.5 * (grid[1] - grid[0]);
    let hi = grid[last] + 0.5 * (grid[last] - grid[last - 1]);
    if !(x >= lo && x < hi) {
        return None;
    }
    let idx = grid.partition_point(|&g| g < x);
    Some(match idx {
        0 => 0,
        _ if idx > last => last,
        _ => {
            if x - grid[idx - 1] < grid[idx] - x {
                idx - 1
            } else {
                idx
            }
        }
    })
}

/// Finite-difference derivative of each cell's potential outcome, averaged
/// over cells whose realized dose falls in the bin of each grid point.
/// Returns the curve and the number of filled-in empty bins.
pub fn acrt(pop: &PotentialOutcomePanel, grid: &[f64]) -> Result<(Vec<f64>, usize)> {
    check_grid(grid)?;
    let k = grid.len();
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for c in 0..pop.n_cells() {
        if let Some(g) = bin_of(grid, pop.assignments[c]) {
            let (a, b) = fd_neighbors(grid, g);
            sums[g] += (pop.po(c, grid[b]) - pop.po(c, grid[a])) / (grid[b] - grid[a]);
            counts[g] += 1;
        }
    }
    let filled: Vec<usize> = (0..k).filter(|&g| counts[g] > 0).collect();
    if filled.is_empty() {
        return Err(Error::EmptyTreatedSet);
    }
    let mut out = vec![0.0; k];
    let mut n_filled = 0;
    for g in 0..k {
        let src = if counts[g] > 0 {
            g
        } else {
            n_filled += 1;
            *filled
                .iter()
                .min_by(|&&a, &&b| {
                    (grid[a] - grid[g])
                        .abs()
                        .total_cmp(&(grid[b] - grid[g]).abs())
                })
                .unwrap()
        };
        out[g] = sums[src] / counts[src] as f64;
    }
    Ok((out, n_filled))
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    (stats::mean(xs), stats::se_mean(xs))
}

/// Every estimand the stored potential outcomes define, on the given grid.
pub fn oracle_estimands(pop: &PotentialOutcomePanel, grid: &[f64]) -> Result<EstimandReport> {
    let acr_curve = acr(pop, grid)?;
    let (acrt_curve, acrt_filled_bins) = acrt(pop, grid)?;
    let mut report = EstimandReport {
        ate: None,
        att: None,
        grid: grid.to_vec(),
        acr: acr_curve,
        acrt: acrt_curve,
        acrt_filled_bins,
        selection_bias: None,
        atte: None,
        aste: None,
        mc_se: EstimandSe::default(),
    };
    if pop.regime.is_dummy() {
        let diffs: Vec<f64> = (0..pop.n_cells())
            .map(|c| pop.po(c, 1.0) - pop.po(c, 0.0))
            .collect();
        let treated: Vec<f64> = (0..pop.n_cells())
            .filter(|&c| pop.is_treated(c))
            .map(|c| diffs[c])
            .collect();
        if treated.is_empty() {
            return Err(Error::EmptyTreatedSet);
        }
        let (ate, ate_se) = mean_se(&diffs);
        let (att, att_se) = mean_se(&treated);
        report.ate = Some(ate);
        report.att = Some(att);
        report.mc_se.ate = Some(ate_se);
        report.mc_se.att = Some(att_se);
        report.selection_bias = selection_bias(pop).ok();
    }
    if pop.exposure.is_some() {
        let (atte, aste) = oracle_atte_aste(pop)?;
        let treated: Vec<usize> = (0..pop.n_cells()).filter(|&c| pop.is_treated(c)).collect();
        let s = |c: usize| pop.exposure_at(c);
        let total: Vec<f64> = treated
            .iter()
            .map(|&c| pop.po_exposure(c, 1.0, s(c)) - pop.po_exposure(c, 0.0, 0.0))
            .collect();
        let spill: Vec<f64> = treated
            .iter()
            .map(|&c| pop.po_exposure(c, 0.0, s(c)) - pop.po_exposure(c, 0.0, 0.0))
            .collect();
        report.atte = Some(atte);
        report.aste = Some(aste);
        report.mc_se.atte = Some(stats::se_mean(&total));
        report.mc_se.aste = Some(stats::se_mean(&spill));
    }
    Ok(report)
}

/// `Cov(Ỹ(1), D)/E[D] − Cov(Ỹ(0), 1−D)/E[1−D]` over cells, with 1/n moments.
pub fn selection_bias(pop: &PotentialOutcomePanel) -> Result<f64> {
    if !pop.regime.is_dummy() {
        return Err(Error::InvalidArgument(
            "selection bias needs a dummy regime".into(),
        ));
    }
    let n = pop.n_cells();
    let d: Vec<f64> = (0..n)
        .map(|c| if pop.is_treated(c) { 1.0 } else { 0.0 })
        .collect();
    let pd = stats::mean(&d);
    if pd == 0.0 || pd == 1.0 {
        return Err(Error::DegenerateAssignment(
            "every cell shares one assignment",
        ));
    }
    let y1: Vec<f64> = (0..n).map(|c| pop.po(c, 1.0)).collect();
    let y0: Vec<f64> = (0..n).map(|c| pop.po(c, 0.0)).collect();
    let nd: Vec<f64> = d.iter().map(|x| 1.0 - x).collect();
    Ok(stats::covariance_pop(&y1, &d) / pd - stats::covariance_pop(&y0, &nd) / (1.0 - pd))
}

/// Treated-group/treated-period contrast of four cell means. `values` is
/// unit-major with `groups.time_treated.len()` periods per unit.
pub fn did_four_means(values: &[f64], groups: &Groups) -> Result<f64> {
    let n = groups.unit_treated.len();
    let t_len = groups.time_treated.len();
    if values.len() != n * t_len {
        return Err(Error::InvalidArgument(format!(
            "expected {} values for {n} units and {t_len} periods, got {}",
            n * t_len,
            values.len()
        )));
    }
    // [unit treated][time treated]
    let mut sums = [[0.0; 2]; 2];
    let mut counts = [[0usize; 2]; 2];
    for u in 0..n {
        let iu = groups.unit_treated[u] as usize;
        for t in 0..t_len {
            let it = groups.time_treated[t] as usize;
            sums[iu][it] += values[u * t_len + t];
            counts[iu][it] += 1;
        }
    }
    let names = [
        [
            "control units, control periods",
            "control units, treated periods",
        ],
        [
            "treated units, control periods",
            "treated units, treated periods",
        ],
    ];
    let mut means = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            if counts[a][b] == 0 {
                return Err(Error::EmptyCell(names[a][b]));
            }
            means[a][b] = sums[a][b] / counts[a][b] as f64;
        }
    }
    Ok(means[1][1] - means[0][1] - means[1][0] + means[0][0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::causal_lab::scenario::{simulate_scenario, ImpactFn, Regime, ScenarioConfig};

    fn groups(units: &[bool], times: &[bool]) -> Groups {
        Groups {
            unit_treated: units.to_vec(),
            time_treated: times.to_vec(),
        }
    }

    #[test]
    fn four_means_arithmetic() {
        // unit 0 treated at the second period, unit 1 control
        let g = groups(&[true, false], &[false, true]);
        assert_eq!(did_four_means(&[0.0, 3.0, 0.0, 1.0], &g).unwrap(), 2.0);
        assert_eq!(did_four_means(&[5.0; 4], &g).unwrap(), 0.0);
    }

    #[test]
    fn four_means_needs_every_cell() {
        let g = groups(&[true, true], &[false, true]);
        assert!(matches!(
            did_four_means(&[0.0; 4], &g),
            Err(Error::EmptyCell(_))
        ));
    }

    #[test]
    fn constant_effect_gives_equal_ate_att() {
        let (_, pop) = simulate_scenario(&ScenarioConfig::new(Regime::HomogeneousDummy)).unwrap();
        let r = oracle_estimands(&pop, &[0.0, 1.0]).unwrap();
        assert!((r.ate.unwrap() - 2.0).abs() < 1e-12);
        assert!((r.att.unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn acr_tracks_quadratic_derivative() {
        let mut cfg = ScenarioConfig::new(Regime::GaussianContinuous);
        cfg.impact = ImpactFn::Quadratic { a: 1.0, b: 0.5 };
        let (_, pop) = simulate_scenario(&cfg).unwrap();
        let grid: Vec<f64> = (0..=200).map(|i| -1.0 + 0.01 * i as f64).collect();
        let curve = acr(&pop, &grid).unwrap();
        // central differences in the interior, one-sided at the ends
        for (l, v) in grid.iter().zip(&curve).skip(1).take(grid.len() - 2) {
            assert!((v - (1.0 + l)).abs() < 1e-4, "λ={l}: {v}");
        }
    }

    #[test]
    fn decomposition_is_exact_in_sample() {
        let mut cfg = ScenarioConfig::new(Regime::HomogeneousDummy);
        cfg.selection = 1.0;
        cfg.common_sd = 1.0;
        cfg.effect_het = 0.5;
        let (_, pop) = simulate_scenario(&cfg).unwrap();
        let y = pop.realized_outcomes();
        let d: Vec<f64> = pop.assignments.clone();
        let gamma = stats::covariance_pop(&d, &y) / stats::variance_pop(&d);
        let r = oracle_estimands(&pop, &[0.0, 1.0]).unwrap();
        assert!((gamma - r.ate.unwrap() - r.selection_bias.unwrap()).abs() < 1e-10);
    }

    #[test]
    fn constant_potential_outcomes_have_no_selection() {
        let mut cfg = ScenarioConfig::new(Regime::HomogeneousDummy);
        cfg.noise_sd = 0.0;
        let (_, pop) = simulate_scenario(&cfg).unwrap();
        assert_eq!(selection_bias(&pop).unwrap(), 0.0);
    }
}

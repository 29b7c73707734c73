//! Monte-Carlo checks that the identified impact coefficient recovers the
//! estimand each policy regime predicts.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use super::estimands::{acr, did_four_means, oracle_estimands, selection_bias};
use super::scenario::{simulate_scenario, PotentialOutcomePanel, Regime, ScenarioConfig};
use super::weights::{
    gaussian_weights, nonneg_weights, weighted_estimand, EstimandMode, NonNegInput,
};
use crate::error::{Error, Result};
use crate::identify::{cholesky_lower, impact_gamma};
use crate::panel::{fit_pvar, PVARFit, PVARSpec, PanelDataset};
use crate::rng;
use crate::stats::McSummary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Theorem {
    T1,
    T2,
    T3,
    T4,
    T5,
    T6,
    T7,
    T9,
    T10,
}

impl Theorem {
    pub const ALL: [Theorem; 9] = [
        Theorem::T1,
        Theorem::T2,
        Theorem::T3,
        Theorem::T4,
        Theorem::T5,
        Theorem::T6,
        Theorem::T7,
        Theorem::T9,
        Theorem::T10,
    ];

    pub fn regime(self) -> Regime {
        match self {
            Theorem::T1 | Theorem::T2 => Regime::HomogeneousDummy,
            Theorem::T3 | Theorem::T4 | Theorem::T5 => Regime::GaussianContinuous,
            Theorem::T6 | Theorem::T7 => Regime::NonNegativeContinuous,
            Theorem::T9 | Theorem::T10 => Regime::HeterogeneousDummy,
        }
    }
}

impl fmt::Display for Theorem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Theorem {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Theorem::ALL
            .into_iter()
            .find(|t| t.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown theorem {s:?}")))
    }
}

/// One estimate-versus-target comparison aggregated over replications.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub mean_estimate: f64,
    pub mean_target: f64,
    /// Mean and MC standard error of `estimate − target`.
    pub discrepancy: f64,
    pub se: f64,
    /// Whether the check counts toward the report's verdict.
    pub asserted: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub theorem: String,
    pub reps: usize,
    pub seed: u64,
    pub checks: Vec<Check>,
    pub pass: bool,
}

impl VerificationReport {
    pub fn check(&self, name_prefix: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name.starts_with(name_prefix))
    }
}

/// A check description; `estimate, target` pairs come from each replication.
pub(crate) struct CheckSpec {
    pub name: &'static str,
    pub asserted: bool,
}

pub(crate) fn aggregate(
    theorem: String,
    seed: u64,
    specs: &[CheckSpec],
    per_rep: Vec<Vec<(f64, f64)>>,
) -> VerificationReport {
    let reps = per_rep.len();
    let checks: Vec<Check> = specs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let est: Vec<f64> = per_rep.iter().map(|r| r[i].0).collect();
            let tgt: Vec<f64> = per_rep.iter().map(|r| r[i].1).collect();
            let diff: Vec<f64> = per_rep.iter().map(|r| r[i].0 - r[i].1).collect();
            let d = McSummary::of(&diff);
            Check {
                name: s.name.to_string(),
                mean_estimate: McSummary::of(&est).mean,
                mean_target: McSummary::of(&tgt).mean,
                discrepancy: d.mean,
                se: d.se,
                asserted: s.asserted,
                pass: d.within(0.0, 3.0) || (d.mean == 0.0 && d.se == 0.0),
            }
        })
        .collect();
    let pass = checks.iter().filter(|c| c.asserted).all(|c| c.pass);
    VerificationReport {
        theorem,
        reps,
        seed,
        checks,
        pass,
    }
}

/// Runs `rep` for `reps` derived seeds in parallel, in seed order.
pub(crate) fn run_reps<F>(
    config: &ScenarioConfig,
    reps: usize,
    rep: F,
) -> Result<Vec<Vec<(f64, f64)>>>
where
    F: Fn(&ScenarioConfig) -> Result<Vec<(f64, f64)>> + Sync,
{
    if reps < 2 {
        return Err(Error::InvalidArgument(
            "verification needs at least 2 replications".into(),
        ));
    }
    (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let cfg = ScenarioConfig {
                seed: rng::derive_seed(config.seed, r),
                ..config.clone()
            };
            rep(&cfg)
        })
        .collect()
}

/// Simulate, fit, and identify the impact of the policy on the outcome.
pub(crate) fn pipeline(
    config: &ScenarioConfig,
    time_effects: bool,
) -> Result<(PanelDataset, PotentialOutcomePanel, PVARFit, f64)> {
    let (panel, pop) = simulate_scenario(config)?;
    let spec = PVARSpec::new(config.lag_order).with_time_effects(time_effects);
    let fit = fit_pvar(&panel, &spec)?;
    let chol = cholesky_lower(&fit.sigma)?;
    let gamma = impact_gamma(&chol, 0, 1)?;
    let pop = pop.trim_front(fit.first_time);
    Ok((panel, pop, fit, gamma))
}

fn checks_for(theorem: Theorem, config: &ScenarioConfig) -> Vec<CheckSpec> {
    let c = |name, asserted| CheckSpec { name, asserted };
    match theorem {
        Theorem::T1 => vec![c("gamma vs ATE + selection bias", true)],
        Theorem::T2 => vec![c("gamma vs ATE", true), c("selection bias vs 0", true)],
        Theorem::T3 => vec![c("gamma vs weighted ACR", true)],
        Theorem::T4 => vec![c("gamma vs weighted ACRT", config.selection == 0.0)],
        Theorem::T5 => vec![c("gamma vs ACR at the mean dose", true)],
        Theorem::T6 => vec![c("gamma vs weighted ACR + ATE(d_L)/d_L", true)],
        Theorem::T7 => vec![c("gamma vs weighted ACRT + ATE(d_L)/d_L", true)],
        Theorem::T9 => vec![c("gamma vs four-mean contrast", true)],
        Theorem::T10 => vec![c("gamma vs ATT", true)],
    }
}

fn one_rep(theorem: Theorem, config: &ScenarioConfig) -> Result<Vec<(f64, f64)>> {
    let time_effects = matches!(theorem, Theorem::T9 | Theorem::T10);
    let (_, pop, _, gamma) = pipeline(config, time_effects)?;
    Ok(match theorem {
        Theorem::T1 => {
            let r = oracle_estimands(&pop, &[0.0, 1.0])?;
            vec![(gamma, r.ate.unwrap() + selection_bias(&pop)?)]
        }
        Theorem::T2 => {
            let r = oracle_estimands(&pop, &[0.0, 1.0])?;
            vec![(gamma, r.ate.unwrap()), (selection_bias(&pop)?, 0.0)]
        }
        Theorem::T3 | Theorem::T4 => {
            let w = gaussian_weights(config.sigma, &config.default_grid())?;
            let mode = if theorem == Theorem::T3 {
                EstimandMode::GaussianAcr
            } else {
                EstimandMode::GaussianAcrt
            };
            vec![(gamma, weighted_estimand(&w, &pop, mode)?)]
        }
        Theorem::T5 => {
            let grid = config.default_grid();
            let curve = acr(&pop, &grid)?;
            let mid = grid.partition_point(|&g| g < 0.0).min(grid.len() - 1);
            vec![(gamma, curve[mid])]
        }
        Theorem::T6 | Theorem::T7 => {
            let w = nonneg_weights(NonNegInput::Sample(&pop.assignments), config.grid_points)?;
            let mode = if theorem == Theorem::T6 {
                EstimandMode::NonNegativeAcrMixture
            } else {
                EstimandMode::NonNegativeMixture
            };
            vec![(gamma, weighted_estimand(&w, &pop, mode)?)]
        }
        Theorem::T9 => {
            let groups = pop.groups.as_ref().ok_or(Error::EmptyTreatedSet)?;
            vec![(gamma, did_four_means(&pop.realized_outcomes(), groups)?)]
        }
        Theorem::T10 => {
            let r = oracle_estimands(&pop, &[0.0, 1.0])?;
            vec![(gamma, r.att.unwrap())]
        }
    })
}

/// Runs `reps` seeded simulate → fit → identify pipelines and compares the
/// mean identified impact with the theorem's estimand at 3 MC standard errors.
pub fn verify_theorem(
    theorem: Theorem,
    config: &ScenarioConfig,
    reps: usize,
) -> Result<VerificationReport> {
    if config.regime != theorem.regime() {
        return Err(Error::RegimeMismatch {
            theorem: theorem.to_string(),
            expected: theorem.regime().to_string(),
            actual: config.regime.to_string(),
        });
    }
    config.validate()?;
    let per_rep = run_reps(config, reps, |cfg| one_rep(theorem, cfg))?;
    Ok(aggregate(
        theorem.to_string(),
        config.seed,
        &checks_for(theorem, config),
        per_rep,
    ))
}

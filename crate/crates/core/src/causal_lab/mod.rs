//! Simulators with fully observed potential outcomes, estimand oracles, dose
//! weights, and theorem-by-theorem Monte-Carlo verification.

pub mod estimands;
pub mod scenario;
pub mod verify;
pub mod weights;

pub use estimands::{
    acr, acrt, ate_at, did_four_means, mean_po, oracle_estimands, selection_bias, EstimandReport,
    EstimandSe,
};
pub use scenario::{
    linspace, simulate_scenario, ExposureOutcomes, GraphKind, Groups, ImpactFn,
    PotentialOutcomePanel, Regime, ScenarioConfig, Schedule, SpilloverForm,
};
pub use verify::{verify_theorem, Check, Theorem, VerificationReport};
pub use weights::{
    gaussian_weights, nonneg_weights, weighted_estimand, EstimandMode, NonNegInput, NonNegLaw,
    WeightKind, WeightProfile,
};

//! Panel vector autoregressions with a causal reading.
//!
//! The crate estimates fixed-effects PVARs by within-OLS, identifies impact
//! coefficients through a recursive (Cholesky) ordering, propagates impulse
//! responses with bootstrap bands, and ships a simulation lab in which every
//! potential outcome is observed, so the causal estimand behind the recursive
//! coefficient can be checked regime by regime.

pub mod causal_lab;
pub mod diagnostics;
pub mod error;
pub mod identify;
pub mod linalg;
pub mod panel;
pub mod rng;
pub mod spillover;
pub mod stats;

pub use error::{Error, Result};
pub use identify::{
    bootstrap_irf, cholesky_lower, impact_gamma, irf, irf_from_impact, BootstrapBands,
    BootstrapOptions, CholeskyFactor, ImpulseResponse, Normalization,
};
pub use panel::{
    companion, fit_pvar, validate_panel, within_demean, CompanionMatrix, PVARFit, PVARSpec,
    PanelDataset, PanelRow, RawPanel,
};

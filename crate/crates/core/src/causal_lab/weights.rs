//! Dose weights that map derivative and contrast curves into the estimand
//! a regression coefficient recovers.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use super::estimands::{acr, acrt, ate_at};
use super::scenario::{linspace, PotentialOutcomePanel};
use crate::error::{Error, Result};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    Gaussian,
    NonNegative,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightProfile {
    pub kind: WeightKind,
    pub grid: Vec<f64>,
    /// Gaussian weights `q(λ)`.
    pub q: Vec<f64>,
    /// Non-negative weights `q1(λ)` on `[d_L, d_U]`.
    pub q1: Vec<f64>,
    pub q0: f64,
    /// Exact `∫ q1 dλ` (or `∫ q dλ` by trapezoid for the Gaussian case).
    pub mass: f64,
    pub d_low: f64,
    pub d_high: f64,
    /// `θ(λ) = ∫_{-∞}^{λ} m f(m) dm`.
    pub theta: Vec<f64>,
    pub cdf: Vec<f64>,
    /// Set when the dose has no point mass at zero, so `q0 = 0`.
    pub no_zero_mass: bool,
}

impl WeightProfile {
    /// Total weight: `∫q` or `∫q1 + q0`.
    pub fn total(&self) -> f64 {
        match self.kind {
            WeightKind::Gaussian => self.mass,
            WeightKind::NonNegative => self.mass + self.q0,
        }
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2
        || grid.windows(2).any(|w| !(w[1] > w[0]))
        || grid.iter().any(|g| !g.is_finite())
    {
        return Err(Error::InvalidArgument(
            "grid must hold at least two increasing points".into(),
        ));
    }
    Ok(())
}

/// `q(λ) = (E[W]F(λ) − θ(λ))/σ²` for `W ~ N(0, σ²)`.
pub fn gaussian_weights(sigma: f64, grid: &[f64]) -> Result<WeightProfile> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    check_grid(grid)?;
    let dist = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mean = 0.0;
    let var = sigma * sigma;
    let cdf: Vec<f64> = grid.iter().map(|&l| dist.cdf(l)).collect();
    // ∫^λ m f(m) dm = μF(λ) − σ² f(λ) for a normal law
    let theta: Vec<f64> = grid
        .iter()
        .zip(&cdf)
        .map(|(&l, &f)| mean * f - var * dist.pdf(l))
        .collect();
    let q: Vec<f64> = cdf
        .iter()
        .zip(&theta)
        .map(|(f, th)| (mean * f - th) / var)
        .collect();
    let mass = stats::trapezoid(grid, &q);
    if mass < 1.0 - 1e-6 {
        return Err(Error::GridTooNarrow { mass });
    }
    Ok(WeightProfile {
        kind: WeightKind::Gaussian,
        grid: grid.to_vec(),
        q,
        q1: Vec::new(),
        q0: 0.0,
        mass,
        d_low: grid[0],
        d_high: grid[grid.len() - 1],
        theta,
        cdf,
        no_zero_mass: false,
    })
}

/// Zero with probability `zero_prob`, otherwise uniform on `[d_low, d_high]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonNegLaw {
    pub zero_prob: f64,
    pub d_low: f64,
    pub d_high: f64,
}

pub enum NonNegInput<'a> {
    Law(NonNegLaw),
    Sample(&'a [f64]),
}

/// Moments a non-negative dose needs for `q1`, `q0`, `θ` and `F`.
trait DoseMoments {
    fn mean(&self) -> f64;
    fn var(&self) -> f64;
    fn p_pos(&self) -> f64;
    fn mean_pos(&self) -> f64;
    /// `P(W ≥ λ)` and `E[W·1{W ≥ λ}]` for λ > 0.
    fn upper(&self, lambda: f64) -> (f64, f64);
    /// `E[(W − EW)(W − d_L)·1{W > 0}]`, the exact `var · ∫q1`.
    fn q1_mass_num(&self, d_low: f64) -> f64;
}

impl DoseMoments for NonNegLaw {
    fn mean(&self) -> f64 {
        self.p_pos() * 0.5 * (self.d_low + self.d_high)
    }
    fn var(&self) -> f64 {
        let (a, b) = (self.d_low, self.d_high);
        self.p_pos() * (a * a + a * b + b * b) / 3.0 - self.mean().powi(2)
    }
    fn p_pos(&self) -> f64 {
        1.0 - self.zero_prob
    }
    fn mean_pos(&self) -> f64 {
        0.5 * (self.d_low + self.d_high)
    }
    fn upper(&self, lambda: f64) -> (f64, f64) {
        let (a, b, p) = (self.d_low, self.d_high, self.p_pos());
        if lambda <= a {
            return (p, p * self.mean_pos());
        }
        if lambda > b {
            return (0.0, 0.0);
        }
        let w = b - a;
        (
            p * (b - lambda) / w,
            p * (b * b - lambda * lambda) / (2.0 * w),
        )
    }
    fn q1_mass_num(&self, d_low: f64) -> f64 {
        let (a, b) = (self.d_low, self.d_high);
        let e1 = 0.5 * (a + b);
        let e2 = (a * a + a * b + b * b) / 3.0;
        let m = self.mean();
        self.p_pos() * (e2 - (m + d_low) * e1 + m * d_low)
    }
}

struct SampleMoments {
    n: f64,
    mean: f64,
    var: f64,
    /// Sorted positive values and suffix sums.
    pos: Vec<f64>,
    suffix: Vec<f64>,
}

impl SampleMoments {
    fn new(xs: &[f64]) -> Result<Self> {
        if let Some(&bad) = xs.iter().find(|&&x| x < 0.0 || !x.is_finite()) {
            return Err(Error::NegativePolicy(bad));
        }
        let mut pos: Vec<f64> = xs.iter().copied().filter(|&x| x > 0.0).collect();
        if pos.is_empty() {
            return Err(Error::AllZeros);
        }
        pos.sort_by(f64::total_cmp);
        let mut suffix = vec![0.0; pos.len() + 1];
        for i in (0..pos.len()).rev() {
            suffix[i] = suffix[i + 1] + pos[i];
        }
        let var = stats::variance_pop(xs);
        if !(var > 0.0) {
            return Err(Error::DegenerateAssignment("dose has no variance"));
        }
        Ok(Self {
            n: xs.len() as f64,
            mean: stats::mean(xs),
            var,
            pos,
            suffix,
        })
    }
}

impl DoseMoments for SampleMoments {
    fn mean(&self) -> f64 {
        self.mean
    }
    fn var(&self) -> f64 {
        self.var
    }
    fn p_pos(&self) -> f64 {
        self.pos.len() as f64 / self.n
    }
    fn mean_pos(&self) -> f64 {
        self.suffix[0] / self.pos.len() as f64
    }
    fn upper(&self, lambda: f64) -> (f64, f64) {
        let i = self.pos.partition_point(|&x| x < lambda);
        (
            (self.pos.len() - i) as f64 / self.n,
            self.suffix[i] / self.n,
        )
    }
    fn q1_mass_num(&self, d_low: f64) -> f64 {
        self.pos
            .iter()
            .map(|&x| (x - self.mean) * (x - d_low))
            .sum::<f64>()
            / self.n
    }
}

fn nonneg_profile(
    m: &dyn DoseMoments,
    d_low: f64,
    d_high: f64,
    grid_points: usize,
) -> WeightProfile {
    let grid = linspace(d_low, d_high, grid_points.max(2));
    let (mean, var) = (m.mean(), m.var());
    let q1: Vec<f64> = grid
        .iter()
        .map(|&l| {
            let (p, e) = m.upper(l);
            (e - mean * p) / var
        })
        .collect();
    let (cdf, theta) = grid
        .iter()
        .map(|&l| {
            let (p_above, e_above) = m.upper(next_up(l));
            (1.0 - p_above, mean - e_above)
        })
        .unzip();
    let no_zero_mass = m.p_pos() >= 1.0;
    let q0 = if no_zero_mass {
        0.0
    } else {
        (m.mean_pos() - mean) * m.p_pos() * d_low / var
    };
    let mass = if d_high > d_low {
        m.q1_mass_num(d_low) / var
    } else {
        0.0
    };
    WeightProfile {
        kind: WeightKind::NonNegative,
        grid,
        q: Vec::new(),
        q1,
        q0,
        mass,
        d_low,
        d_high,
        theta,
        cdf,
        no_zero_mass,
    }
}

fn next_up(x: f64) -> f64 {
    if x <= 0.0 {
        f64::MIN_POSITIVE
    } else {
        f64::from_bits(x.to_bits() + 1)
    }
}

/// `q1(λ) = (E[W|W≥λ] − E[W])·P(W≥λ)/var(W)` on `[d_L, d_U]` and
/// `q0 = (E[W|W>0] − E[W])·P(W>0)·d_L/var(W)`.
pub fn nonneg_weights(input: NonNegInput<'_>, grid_points: usize) -> Result<WeightProfile> {
    match input {
        NonNegInput::Law(law) => {
            if !(law.d_low > 0.0 && law.d_high >= law.d_low && law.d_high.is_finite()) {
                return Err(Error::InvalidArgument(
                    "law needs 0 < d_low <= d_high".into(),
                ));
            }
            if !(0.0..1.0).contains(&law.zero_prob) {
                return Err(Error::InvalidArgument(
                    "zero_prob must lie in [0, 1)".into(),
                ));
            }
            if !(law.var() > 0.0) {
                return Err(Error::DegenerateAssignment("dose has no variance"));
            }
            Ok(nonneg_profile(&law, law.d_low, law.d_high, grid_points))
        }
        NonNegInput::Sample(xs) => {
            let m = SampleMoments::new(xs)?;
            let (lo, hi) = (m.pos[0], m.pos[m.pos.len() - 1]);
            Ok(nonneg_profile(&m, lo, hi, grid_points))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimandMode {
    /// `∫ q·ACR`.
    GaussianAcr,
    /// `∫ q·ACRT`.
    GaussianAcrt,
    /// `∫ q1·ACRT + q0·ATE(d_L)/d_L`.
    NonNegativeMixture,
    /// `∫ q1·ACR + q0·ATE(d_L)/d_L`.
    NonNegativeAcrMixture,
}

/// Integrates the weights against the oracle curves of `pop`.
pub fn weighted_estimand(
    profile: &WeightProfile,
    pop: &PotentialOutcomePanel,
    mode: EstimandMode,
) -> Result<f64> {
    let grid = &profile.grid;
    let weights = match (mode, profile.kind) {
        (EstimandMode::GaussianAcr | EstimandMode::GaussianAcrt, WeightKind::Gaussian) => {
            &profile.q
        }
        (
            EstimandMode::NonNegativeMixture | EstimandMode::NonNegativeAcrMixture,
            WeightKind::NonNegative,
        ) => &profile.q1,
        _ => {
            return Err(Error::GridMismatch(format!(
                "mode {mode:?} does not apply to {:?} weights",
                profile.kind
            )))
        }
    };
    if weights.len() != grid.len() {
        return Err(Error::GridMismatch(
            "weights and grid differ in length".into(),
        ));
    }
    let degenerate = profile.kind == WeightKind::NonNegative && profile.d_high <= profile.d_low;
    let integral = if degenerate {
        0.0
    } else {
        let curve = match mode {
            EstimandMode::GaussianAcr | EstimandMode::NonNegativeAcrMixture => acr(pop, grid)?,
            _ => acrt(pop, grid)?.0,
        };
        let integrand: Vec<f64> = weights.iter().zip(&curve).map(|(w, c)| w * c).collect();
        stats::trapezoid(grid, &integrand)
    };
    Ok(match profile.kind {
        WeightKind::Gaussian => integral,
        WeightKind::NonNegative => {
            integral + profile.q0 * ate_at(pop, profile.d_low) / profile.d_low
        }
    })
}

use causal_pvar::causal_lab::{
    gaussian_weights, linspace, nonneg_weights, oracle_estimands, simulate_scenario, ImpactFn,
    NonNegInput, NonNegLaw, Regime, ScenarioConfig, SpilloverForm,
};
use causal_pvar::diagnostics::spectral_radius;
use causal_pvar::spillover::{oracle_atte_aste, spillover_regression};
use causal_pvar::{
    cholesky_lower, fit_pvar, irf, irf_from_impact, CompanionMatrix, Normalization, PVARSpec,
    PanelDataset,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// m-variable VAR(p) panel with unit effects and innovations `chol · z`.
fn simulate_var(
    n: usize,
    t: usize,
    phi: &[DMatrix<f64>],
    chol: &DMatrix<f64>,
    rng: &mut ChaCha8Rng,
) -> PanelDataset {
    let m = chol.nrows();
    let p = phi.len();
    let burn = 100;
    let mut values = Vec::with_capacity(n * t * m);
    for _ in 0..n {
        let c = DVector::from_fn(m, |_, _| normal(rng));
        let mut hist: Vec<DVector<f64>> = vec![DVector::zeros(m); p];
        for s in 0..t + burn {
            let z = DVector::from_fn(m, |_, _| normal(rng));
            let mut x = &c + chol * z;
            for (l, a) in phi.iter().enumerate() {
                x += a * &hist[hist.len() - 1 - l];
            }
            if s >= burn {
                values.extend(x.iter().copied());
            }
            hist.push(x);
        }
    }
    let names = (0..m).map(|v| format!("x{v}")).collect();
    PanelDataset::from_dense(n, t, 1, m - 1, values, names).unwrap()
}

#[test]
fn irf_matches_brute_force_recursion_for_var2() {
    let phi = vec![
        DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.2, 0.3]),
        DMatrix::from_row_slice(2, 2, &[-0.2, 0.0, 0.1, 0.2]),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let chol = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.8, 0.6]);
    let panel = simulate_var(30, 60, &phi, &chol, &mut rng);
    let fit = fit_pvar(&panel, &PVARSpec::new(2)).unwrap();
    let factor = cholesky_lower(&fit.sigma).unwrap();
    let resp = irf(&fit, &factor, 0, 12, Normalization::OneSd).unwrap();

    // feed the impact into the recursion with every other innovation at zero
    let impact = factor.lower.column(0).into_owned();
    let mut path: Vec<DVector<f64>> = vec![DVector::zeros(2), DVector::zeros(2), impact.clone()];
    for _ in 0..12 {
        let k = path.len();
        path.push(&fit.phi[0] * &path[k - 1] + &fit.phi[1] * &path[k - 2]);
    }
    let comp = CompanionMatrix::from_lags(&fit.phi).matrix;
    let mut power: DMatrix<f64> = DMatrix::identity(4, 4);
    for h in 0..=12 {
        let via_companion = (&power * DVector::from_vec(vec![impact[0], impact[1], 0.0, 0.0]))
            .rows(0, 2)
            .into_owned();
        for v in 0..2 {
            assert!((resp.response(v, h) - path[h + 2][v]).abs() < 1e-12);
            assert!((resp.response(v, h) - via_companion[v]).abs() < 1e-12);
        }
        power = &comp * power;
    }
}

#[test]
fn fit_recovers_known_dynamics() {
    let phi = vec![DMatrix::from_row_slice(
        3,
        3,
        &[0.4, 0.0, 0.1, 0.2, 0.3, 0.0, 0.0, 0.1, 0.5],
    )];
    let chol = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.5, 1.0, 0.0, -0.3, 0.2, 0.7]);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let panel = simulate_var(200, 200, &phi, &chol, &mut rng);
    let fit = fit_pvar(&panel, &PVARSpec::new(1)).unwrap();
    // Nickell bias is O(1/T) = 0.005 at T = 200
    assert!((&fit.phi[0] - &phi[0]).amax() < 0.02, "{}", fit.phi[0]);
    let sigma = &chol * chol.transpose();
    assert!((&fit.sigma - &sigma).amax() < 0.03);
    let gamma = fit.sigma[(1, 0)] / fit.sigma[(0, 0)];
    assert!((gamma - 0.5).abs() < 0.02);
}

#[test]
fn supplied_impact_propagates_like_recursive_shock() {
    let phi = vec![DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.3, 0.4])];
    let chol = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.2, 0.5]);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let panel = simulate_var(20, 50, &phi, &chol, &mut rng);
    let fit = fit_pvar(&panel, &PVARSpec::new(1)).unwrap();
    let factor = cholesky_lower(&fit.sigma).unwrap();
    let unit = irf(&fit, &factor, 0, 8, Normalization::UnitShock).unwrap();
    let delta = unit.response(1, 0);
    let plugged = irf_from_impact(&fit, &DVector::from_vec(vec![1.0, delta]), 8).unwrap();
    assert!((&plugged.responses - &unit.responses).amax() < 1e-14);
    assert_eq!(plugged.impact(), DVector::from_vec(vec![1.0, delta]));
}

#[test]
fn spectral_radius_of_diagonal_is_max_abs_entry() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let d: Vec<f64> = (0..5).map(|_| rng.random_range(-1.5..1.5)).collect();
        let r = spectral_radius(&DMatrix::from_diagonal(&DVector::from_vec(d.clone())));
        let expect = d.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        assert!(
            (r.spectral_radius - expect).abs() < 1e-9,
            "{d:?} -> {}",
            r.spectral_radius
        );
    }
}

#[test]
fn gaussian_weights_integrate_a_derivative_like_quadrature() {
    let sigma = 0.8;
    let grid = linspace(-6.0 * sigma, 6.0 * sigma, 401);
    let w = gaussian_weights(sigma, &grid).unwrap();
    // E[g'(W)] for g' = cos: exp(-σ²/2)
    let integral: f64 = grid
        .windows(2)
        .enumerate()
        .map(|(i, x)| 0.5 * (x[1] - x[0]) * (w.q[i] * x[0].cos() + w.q[i + 1] * x[1].cos()))
        .sum();
    assert!((integral - (-sigma * sigma / 2.0).exp()).abs() < 1e-8);
}

fn uniform_mixture_q1(law: NonNegLaw, l: f64) -> f64 {
    let (pi, a, b) = (law.zero_prob, law.d_low, law.d_high);
    let mean = (1.0 - pi) * (a + b) / 2.0;
    let var = (1.0 - pi) * (a * a + a * b + b * b) / 3.0 - mean * mean;
    let p_above = (1.0 - pi) * (b - l) / (b - a);
    let e_above = (1.0 - pi) * (b * b - l * l) / (2.0 * (b - a));
    (e_above - mean * p_above) / var
}

#[test]
fn nonneg_law_weights_match_closed_form() {
    let law = NonNegLaw {
        zero_prob: 0.3,
        d_low: 1.0,
        d_high: 3.0,
    };
    let w = nonneg_weights(NonNegInput::Law(law), 101).unwrap();
    for (l, q1) in w.grid.iter().zip(&w.q1) {
        assert!((q1 - uniform_mixture_q1(law, *l)).abs() < 1e-12);
    }
    assert!((w.total() - 1.0).abs() < 1e-12);
}

#[test]
fn sample_weights_converge_to_law() {
    let law = NonNegLaw {
        zero_prob: 0.5,
        d_low: 1.0,
        d_high: 2.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let draws: Vec<f64> = (0..1_000_000)
        .map(|_| {
            if rng.random::<f64>() < law.zero_prob {
                0.0
            } else {
                rng.random_range(law.d_low..law.d_high)
            }
        })
        .collect();
    let exact = nonneg_weights(NonNegInput::Law(law), 51).unwrap();
    let sample = nonneg_weights(NonNegInput::Sample(&draws), 51).unwrap();
    assert!((exact.q0 - sample.q0).abs() < 1e-2);
    assert!((exact.mass - sample.mass).abs() < 1e-2);
    for (a, b) in exact.q1.iter().zip(&sample.q1) {
        assert!((a - b).abs() < 1e-2);
    }
}

#[test]
fn spillover_regression_recovers_seeded_coefficients() {
    let (n, t) = (100, 200);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let w: Vec<f64> = (0..n * t).map(|_| normal(&mut rng)).collect();
    let s: Vec<f64> = w.iter().map(|x| 0.3 * x + normal(&mut rng)).collect();
    let y: Vec<f64> = w
        .iter()
        .zip(&s)
        .map(|(a, b)| -0.5 * a + 0.2 * b + 0.1 * normal(&mut rng))
        .collect();
    let fit = spillover_regression(&w, &y, &s, 200, 3).unwrap();
    assert!((fit.delta + 0.5).abs() < 3.0 * fit.se_delta, "{fit:?}");
    assert!((fit.rho - 0.2).abs() < 3.0 * fit.se_rho, "{fit:?}");
    assert!(fit.se_delta > 0.0 && fit.se_rho > 0.0);
}

#[test]
fn additive_exposure_oracle_matches_construction() {
    let cfg = ScenarioConfig {
        spillover_form: SpilloverForm::Additive,
        impact: ImpactFn::Linear { beta: 2.0 },
        rho: 0.5,
        effect_het: 0.0,
        ..ScenarioConfig::new(Regime::SpilloverDummy)
    };
    let (_, pop) = simulate_scenario(&cfg).unwrap();
    let treated: Vec<usize> = (0..pop.n_cells()).filter(|&c| pop.is_treated(c)).collect();
    let mean_s = treated.iter().map(|&c| pop.exposure_at(c)).sum::<f64>() / treated.len() as f64;
    let (atte, aste) = oracle_atte_aste(&pop).unwrap();
    assert!((atte - (2.0 + 0.5 * mean_s)).abs() < 1e-12);
    assert!((aste - 0.5 * mean_s).abs() < 1e-12);
}

#[test]
fn heterogeneous_rho_oracle_is_cell_average() {
    let cfg = ScenarioConfig {
        rho_het: 0.4,
        effect_het: 0.3,
        ..ScenarioConfig::new(Regime::SpilloverDummy)
    };
    let (_, pop) = simulate_scenario(&cfg).unwrap();
    let (mut total, mut spill, mut k) = (0.0, 0.0, 0.0);
    for c in 0..pop.n_cells() {
        if pop.is_treated(c) {
            let s = pop.exposure_at(c);
            total += pop.po_exposure(c, 1.0, s) - pop.po_exposure(c, 0.0, 0.0);
            spill += pop.po_exposure(c, 0.0, s) - pop.po_exposure(c, 0.0, 0.0);
            k += 1.0;
        }
    }
    let (atte, aste) = oracle_atte_aste(&pop).unwrap();
    assert!((atte - total / k).abs() < 1e-12);
    assert!((aste - spill / k).abs() < 1e-12);
}

#[test]
fn no_spillover_reduces_atte_to_att() {
    let cfg = ScenarioConfig {
        rho: 0.0,
        ..ScenarioConfig::new(Regime::SpilloverDummy)
    };
    let (_, pop) = simulate_scenario(&cfg).unwrap();
    let report = oracle_estimands(&pop, &[0.0, 1.0]).unwrap();
    assert_eq!(report.aste, Some(0.0));
    assert!((report.atte.unwrap() - report.att.unwrap()).abs() < 1e-12);
}

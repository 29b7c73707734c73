//! Acceptance suite: one line per criterion, nonzero exit if any fails.

use std::fs;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use causal_pvar::causal_lab::did_four_means;
use causal_pvar::causal_lab::{
    gaussian_weights, linspace, nonneg_weights, verify_theorem, Groups, ImpactFn, NonNegInput,
    NonNegLaw, Regime, ScenarioConfig, Theorem, VerificationReport,
};
use causal_pvar::diagnostics::{lag_criteria, residual_autocorr};
use causal_pvar::spillover::verify_interference;
use causal_pvar::{
    bootstrap_irf, cholesky_lower, fit_pvar, impact_gamma, within_demean, BootstrapOptions,
    Normalization, PVARSpec, PanelDataset,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn cov(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / n
}

/// Two-variable VAR with unit effects and lag matrices `a[l]` (row-major 2×2).
fn var_panel(
    n: usize,
    t: usize,
    a: &[[f64; 4]],
    impact: f64,
    rng: &mut ChaCha8Rng,
) -> PanelDataset {
    let burn = 50;
    let p = a.len();
    let mut values = Vec::with_capacity(n * t * 2);
    for _ in 0..n {
        let c = [normal(rng), normal(rng)];
        let mut x = vec![[0.0_f64; 2]; t + burn];
        for s in p..t + burn {
            let e_w = normal(rng);
            let e = [e_w, impact * e_w + normal(rng)];
            for i in 0..2 {
                let mut v = c[i] + e[i];
                for (l, al) in a.iter().enumerate() {
                    v += al[2 * i] * x[s - l - 1][0] + al[2 * i + 1] * x[s - l - 1][1];
                }
                x[s][i] = v;
            }
        }
        for row in &x[burn..] {
            values.extend_from_slice(row);
        }
    }
    PanelDataset::from_dense(n, t, 1, 1, values, vec!["w".into(), "y".into()]).unwrap()
}

fn report_line(r: &VerificationReport) -> String {
    r.checks
        .iter()
        .map(|c| {
            format!(
                "{}{}: {:+.4} (se {:.4})",
                c.name,
                if c.asserted { "" } else { " [reported]" },
                c.discrepancy,
                c.se
            )
        })
        .collect::<Vec<_>>()
        .join("; ")
}

fn large(regime: Regime) -> ScenarioConfig {
    ScenarioConfig {
        n_units: 200,
        n_times: 200,
        seed: 20_240_601,
        ..ScenarioConfig::new(regime)
    }
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_chol = 0.0_f64;
    for i in 0..100 {
        let m = 1 + i % 6;
        let a = DMatrix::from_fn(m, m + 2, |_, _| normal(&mut rng));
        let sigma = &a * a.transpose();
        let chol = cholesky_lower(&sigma).unwrap();
        let err = (&chol.lower * chol.lower.transpose() - &sigma).amax();
        worst_chol = worst_chol.max(err);
    }

    let mut worst_ratio = 0.0_f64;
    for _ in 0..100 {
        let n = rng.random_range(5..30);
        let t = rng.random_range(10..40);
        let a = [[
            rng.random_range(-0.5..0.5),
            0.0,
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
        ]];
        let panel = var_panel(n, t, &a, rng.random_range(-2.0..2.0), &mut rng);
        let fit = fit_pvar(&panel, &PVARSpec::new(1)).unwrap();
        let gamma = impact_gamma(&cholesky_lower(&fit.sigma).unwrap(), 0, 1).unwrap();
        let (w, y) = (fit.residual_series(0), fit.residual_series(1));
        worst_ratio = worst_ratio.max((gamma - cov(&w, &y) / cov(&w, &w)).abs());
    }

    let mut worst_did = 0.0_f64;
    for _ in 0..100 {
        let n = rng.random_range(4..25);
        let t = rng.random_range(4..25);
        let mut unit_treated: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
        let mut time_treated: Vec<bool> = (0..t).map(|_| rng.random::<bool>()).collect();
        unit_treated[0] = true;
        unit_treated[1] = false;
        time_treated[0] = false;
        time_treated[1] = true;
        let mut values = Vec::with_capacity(n * t * 2);
        let mut y_raw = Vec::with_capacity(n * t);
        for u in 0..n {
            for s in 0..t {
                let w = if unit_treated[u] && time_treated[s] {
                    1.0
                } else {
                    0.0
                };
                let y = 3.0 * w + u as f64 * 0.1 + (s as f64).sin() + normal(&mut rng);
                values.extend_from_slice(&[w, y]);
                y_raw.push(y);
            }
        }
        let panel =
            PanelDataset::from_dense(n, t, 1, 1, values, vec!["w".into(), "y".into()]).unwrap();
        let demeaned = within_demean(&panel, &PVARSpec::new(1).with_time_effects(true)).unwrap();
        let (w, y) = (demeaned.series(0), demeaned.series(1));
        let sigma =
            DMatrix::from_row_slice(2, 2, &[cov(&w, &w), cov(&w, &y), cov(&y, &w), cov(&y, &y)]);
        let gamma = impact_gamma(&cholesky_lower(&sigma).unwrap(), 0, 1).unwrap();
        let groups = Groups {
            unit_treated,
            time_treated,
        };
        let did = did_four_means(&y_raw, &groups).unwrap();
        worst_did = worst_did.max((gamma - did).abs() / did.abs().max(1.0));
    }
    Outcome {
        pass: worst_chol < 1e-10 && worst_ratio < 1e-10 && worst_did < 1e-10,
        detail: format!(
            "max |OO'-S| {worst_chol:.1e}, max |gamma - cov/var| {worst_ratio:.1e}, max |gamma - DiD| {worst_did:.1e}"
        ),
    }
}

fn criterion_2() -> Outcome {
    let r = verify_theorem(Theorem::T2, &large(Regime::HomogeneousDummy), 200).unwrap();
    Outcome {
        pass: r.pass,
        detail: report_line(&r),
    }
}

fn criterion_3() -> Outcome {
    let sigma = 1.3;
    let grid = linspace(-6.0 * sigma, 6.0 * sigma, 101);
    let w = gaussian_weights(sigma, &grid).unwrap();
    let density = |x: f64| {
        (-x * x / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
    };
    let max_err = grid
        .iter()
        .zip(&w.q)
        .map(|(x, q)| (q - density(*x)).abs())
        .fold(0.0, f64::max);
    let integral: f64 = grid
        .windows(2)
        .zip(w.q.windows(2))
        .map(|(x, q)| 0.5 * (x[1] - x[0]) * (q[0] + q[1]))
        .sum();

    let cfg = ScenarioConfig {
        sigma,
        impact: ImpactFn::Quadratic { a: 1.0, b: 0.5 },
        ..large(Regime::GaussianContinuous)
    };
    let r = verify_theorem(Theorem::T3, &cfg, 200).unwrap();
    // E[g'(W)] = a for W ~ N(0, σ²)
    let analytic = (r.checks[0].mean_target - 1.0).abs();
    Outcome {
        pass: max_err < 1e-8 && (integral - 1.0).abs() < 1e-6 && r.pass && analytic < 1e-3,
        detail: format!(
            "max |q - pdf| {max_err:.1e}, integral - 1 = {:.1e}, target vs a {analytic:.1e}, {}",
            integral - 1.0,
            report_line(&r)
        ),
    }
}

fn criterion_4() -> Outcome {
    let law = NonNegLaw {
        zero_prob: 0.4,
        d_low: 0.5,
        d_high: 2.5,
    };
    let closed = nonneg_weights(NonNegInput::Law(law), 101).unwrap().total();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let draws: Vec<f64> = (0..1_000_000)
        .map(|_| {
            if rng.random::<f64>() < law.zero_prob {
                0.0
            } else {
                rng.random_range(law.d_low..law.d_high)
            }
        })
        .collect();
    let empirical = nonneg_weights(NonNegInput::Sample(&draws), 101)
        .unwrap()
        .total();

    let cfg = ScenarioConfig {
        impact: ImpactFn::Quadratic { a: 1.0, b: 0.5 },
        ..large(Regime::NonNegativeContinuous)
    };
    let r = verify_theorem(Theorem::T7, &cfg, 200).unwrap();
    Outcome {
        pass: (closed - 1.0).abs() < 1e-6 && (empirical - 1.0).abs() < 1e-6 && r.pass,
        detail: format!(
            "mass - 1: law {:.1e}, sample {:.1e}; {}",
            closed - 1.0,
            empirical - 1.0,
            report_line(&r)
        ),
    }
}

fn criterion_5() -> Outcome {
    let clean = verify_theorem(Theorem::T10, &large(Regime::HeterogeneousDummy), 200).unwrap();
    let violated_cfg = ScenarioConfig {
        anticipation: 1.0,
        ..large(Regime::HeterogeneousDummy)
    };
    let violated = verify_theorem(Theorem::T10, &violated_cfg, 200).unwrap();
    Outcome {
        pass: clean.pass && !violated.pass,
        detail: format!(
            "clean: {}; anticipation: {}",
            report_line(&clean),
            report_line(&violated)
        ),
    }
}

fn criterion_6() -> Outcome {
    let cfg = ScenarioConfig {
        rho: 0.5,
        ..large(Regime::SpilloverDummy)
    };
    let r = verify_interference(&cfg, 200).unwrap();
    let naive = r.check("naive gamma").unwrap();
    let adjusted = r.check("adjusted delta").unwrap();
    Outcome {
        pass: naive.pass && adjusted.pass && adjusted.asserted,
        detail: report_line(&r),
    }
}

fn criterion_7() -> Outcome {
    let a = [[0.4, 0.0, 0.2, 0.3], [0.0, 0.0, 0.0, 0.3]];
    let (mut flagged_mis, mut flagged_ok, mut bic_hits) = (0, 0, 0);
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
        let panel = var_panel(50, 100, &a, 0.5, &mut rng);
        let under = fit_pvar(&panel, &PVARSpec::new(1)).unwrap();
        let right = fit_pvar(&panel, &PVARSpec::new(2)).unwrap();
        flagged_mis += residual_autocorr(&under, 2).unwrap().violated as usize;
        flagged_ok += residual_autocorr(&right, 2).unwrap().violated as usize;
        bic_hits += (lag_criteria(&panel, &PVARSpec::new(1), 6)
            .unwrap()
            .chosen_bic
            == 2) as usize;
    }
    Outcome {
        pass: flagged_mis >= 90 && 100 - flagged_ok >= 90 && bic_hits >= 90,
        detail: format!(
            "VAR(1) fit flagged {flagged_mis}/100, VAR(2) fit passed {}/100, BIC chose p=2 {bic_hits}/100",
            100 - flagged_ok
        ),
    }
}

fn criterion_8() -> Outcome {
    let gamma = 1.5;
    let a = [[0.5, 0.0, 0.2, 0.3]];
    let mut covered = 0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(800 + seed);
        let panel = var_panel(30, 40, &a, gamma, &mut rng);
        let opts = BootstrapOptions {
            reps: 200,
            level: 0.9,
            seed,
        };
        let (_, bands) = bootstrap_irf(
            &panel,
            &PVARSpec::new(1),
            0,
            0,
            opts,
            Normalization::UnitShock,
        )
        .unwrap();
        covered += (bands.lower[(1, 0)] <= gamma && gamma <= bands.upper[(1, 0)]) as usize;
    }
    Outcome {
        pass: covered >= 85,
        detail: format!("90% band covered gamma = {gamma} in {covered}/100 runs"),
    }
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let bin = env!("CARGO_BIN_EXE_causal-pvar");
    let go = |args: &[String], out: &Path| -> bool {
        Command::new(bin)
            .env_remove("CAUSAL_PVAR_SEED")
            .args(args)
            .stderr(Stdio::null())
            .arg("--output")
            .arg(out)
            .status()
            .map(|s| s.success())
            .unwrap_or(false)
    };
    let sim = root.join("panel");
    let base: Vec<String> = [
        "simulate",
        "--regime",
        "spillover_dummy",
        "--units",
        "30",
        "--times",
        "40",
        "--seed",
        "3",
    ]
    .map(String::from)
    .to_vec();
    if !go(&base, &sim) {
        return Outcome {
            pass: false,
            detail: "simulate failed".into(),
        };
    }
    let panel = sim.join("panel.csv").display().to_string();
    let adj = sim.join("adjacency.csv").display().to_string();
    let mut commands: Vec<Vec<String>> = [
        "homogeneous_dummy",
        "gaussian_continuous",
        "non_negative_continuous",
        "heterogeneous_dummy",
        "spillover_dummy",
    ]
    .iter()
    .map(|r| {
        [
            "simulate", "--regime", r, "--units", "30", "--times", "40", "--seed", "3",
        ]
        .map(String::from)
        .to_vec()
    })
    .collect();
    let owned = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    commands.push(owned(&[
        "irf", "--input", &panel, "--lags", "2", "--reps", "200", "--seed", "3",
    ]));
    commands.push(owned(&[
        "spillover",
        "--input",
        &panel,
        "--adjacency",
        &adj,
        "--reps",
        "200",
        "--seed",
        "3",
    ]));
    commands.push(owned(&[
        "verify",
        "--theorem",
        "all",
        "--reps",
        "20",
        "--seed",
        "3",
    ]));
    commands.push(owned(&["fit", "--input", &panel, "--lags", "2"]));
    commands.push(owned(&["lagselect", "--input", &panel, "--pmax", "4"]));
    commands.push(owned(&["diagnose", "--input", &panel, "--smax", "3"]));

    let mut failures = Vec::new();
    for (i, cmd) in commands.iter().enumerate() {
        let mut snaps = Vec::new();
        for (j, threads) in ["1", "1", "4"].iter().enumerate() {
            let out = root.join(format!("run{i}_{j}"));
            let mut args = cmd.clone();
            args.extend(["--threads".to_string(), threads.to_string()]);
            if !go(&args, &out) {
                failures.push(format!("{} exited nonzero", cmd[0]));
                break;
            }
            snaps.push(snapshot(&out));
        }
        if snaps.len() == 3 && !(snaps[0] == snaps[1] && snaps[1] == snaps[2]) {
            failures.push(format!("{} differs", cmd.join(" ")));
        }
    }
    Outcome {
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            format!(
                "{} commands byte-identical across reruns and --threads 1/4",
                commands.len()
            )
        } else {
            failures.join("; ")
        },
    }
}

fn main() {
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let criteria: [(u32, &str, Duration, fn() -> Outcome); 9] = [
        (
            1,
            "algebraic identities",
            Duration::from_secs(10),
            criterion_1,
        ),
        (
            2,
            "ATE under a homogeneous dummy",
            Duration::from_secs(120),
            criterion_2,
        ),
        (
            3,
            "Gaussian weights and ACR",
            Duration::from_secs(120),
            criterion_3,
        ),
        (
            4,
            "non-negative mixture",
            Duration::from_secs(180),
            criterion_4,
        ),
        (
            5,
            "ATT with negative control",
            Duration::from_secs(120),
            criterion_5,
        ),
        (6, "interference", Duration::from_secs(180), criterion_6),
        (7, "diagnostics", Duration::from_secs(180), criterion_7),
        (
            8,
            "bootstrap coverage",
            Duration::from_secs(300),
            criterion_8,
        ),
        (9, "determinism", Duration::from_secs(300), criterion_9),
    ];
    let mut all = true;
    for (id, name, limit, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|s| s == &id.to_string()) {
            continue;
        }
        let start = Instant::now();
        let out = f();
        let elapsed = start.elapsed();
        let pass = out.pass && elapsed <= limit;
        all &= pass;
        println!(
            "criterion {id} ({name}): {} in {:.1}s (limit {}s) | {}",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            limit.as_secs(),
            out.detail
        );
    }
    if !all {
        std::process::exit(1);
    }
}

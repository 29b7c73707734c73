//! Command-line driver for `causal-pvar`.
//!
//! Every subcommand reads its inputs, runs one pipeline stage and writes one
//! or more tables into the `--output` directory. Stochastic commands need a
//! seed, given by `--seed` or `CAUSAL_PVAR_SEED`.

pub mod io;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use causal_pvar::causal_lab::{
    oracle_estimands, simulate_scenario, verify_theorem, PotentialOutcomePanel, Regime,
    ScenarioConfig, Theorem, VerificationReport,
};
use causal_pvar::diagnostics::{diagnose, lag_criteria};
use causal_pvar::spillover::{estimate_from_panel, verify_interference, Adjacency, ExposureMode};
use causal_pvar::{
    bootstrap_irf, cholesky_lower, fit_pvar, irf, Normalization, PVARSpec, PanelDataset,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

pub use io::{
    load_panel_csv, parse_panel_csv, render, write_panel_csv, write_results, Cell, Format, Table,
};

/// Failure of a CLI run. `Usage` maps to exit code 2, `Runtime` to 1.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<causal_pvar::Error> for CliError {
    fn from(e: causal_pvar::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormArg {
    UnitShock,
    OneSd,
}

#[derive(Debug, Parser)]
#[command(
    name = "causal-pvar",
    version,
    about = "Panel VAR estimation and causal-estimand verification"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Panel CSV (`unit,time,<variables>`).
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// Directory that receives the result tables.
    #[arg(long, global = true, default_value = "out")]
    pub output: PathBuf,
    #[arg(long = "lags", global = true, default_value_t = 1)]
    pub lags: usize,
    #[arg(long, global = true, default_value_t = 10)]
    pub horizon: usize,
    /// Bootstrap or Monte-Carlo replications.
    #[arg(long, global = true)]
    pub reps: Option<usize>,
    #[arg(long, global = true, default_value_t = 0.9)]
    pub level: f64,
    #[arg(long, global = true, env = "CAUSAL_PVAR_SEED")]
    pub seed: Option<u64>,
    /// Number of leading policy variables; overrides a `# policies=` line.
    #[arg(long, global = true)]
    pub policies: Option<usize>,
    /// Edge list `unit_a,unit_b` for the spillover regression.
    #[arg(long, global = true)]
    pub adjacency: Option<PathBuf>,
    /// Exposure mapping: share or binary.
    #[arg(long, global = true, default_value = "share")]
    pub mode: String,
    /// Worker threads for bootstrap and Monte-Carlo loops.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Absorb period effects as well as unit effects.
    #[arg(long, global = true)]
    pub time_effects: bool,
    /// Exogenous dummy columns to include (names from the `# dummies=` line).
    #[arg(long, global = true, value_delimiter = ',')]
    pub dummies: Vec<String>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Simulate a scenario with stored potential outcomes.
    Simulate {
        /// Scenario TOML; command-line values override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        regime: Option<String>,
        #[arg(long)]
        units: Option<usize>,
        #[arg(long)]
        times: Option<usize>,
    },
    /// Fit the fixed-effects PVAR.
    Fit,
    /// Impulse responses with percentile bootstrap bands.
    Irf {
        /// Shocked variable (0-based).
        #[arg(long, default_value_t = 0)]
        shock: usize,
        #[arg(long, value_enum, default_value_t = NormArg::UnitShock)]
        normalization: NormArg,
    },
    /// Log-det information criteria for lags 1..=pmax.
    Lagselect {
        #[arg(long, default_value_t = 8)]
        pmax: usize,
    },
    /// Residual autocorrelation, stationarity and policy-regime probe.
    Diagnose {
        #[arg(long, default_value_t = 10)]
        smax: usize,
    },
    /// Spillover-adjusted impact regression.
    Spillover {
        /// Outcome variable (0-based); defaults to the first outcome.
        #[arg(long)]
        response: Option<usize>,
    },
    /// Monte-Carlo verification of a theorem (T1..T10, T11, T12 or all).
    Verify {
        #[arg(long, default_value = "all")]
        theorem: String,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl Common {
    fn seed(&self) -> Result<u64, CliError> {
        self.seed
            .ok_or_else(|| usage("this command is stochastic: pass --seed or set CAUSAL_PVAR_SEED"))
    }

    fn panel(&self) -> Result<PanelDataset, CliError> {
        let path = self
            .input
            .as_ref()
            .ok_or_else(|| usage("--input is required"))?;
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let text = match self.policies {
            Some(k) => format!("# policies={k}\n{text}"),
            None => text,
        };
        parse_panel_csv(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
    }

    fn spec(&self, panel: &PanelDataset) -> Result<PVARSpec, CliError> {
        if self.lags == 0 {
            return Err(usage("--lags must be at least 1"));
        }
        let cols = self
            .dummies
            .iter()
            .map(|name| {
                panel
                    .dummies()
                    .and_then(|d| d.names.iter().position(|n| n == name))
                    .ok_or_else(|| usage(format!("no dummy column named {name:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PVARSpec::new(self.lags)
            .with_time_effects(self.time_effects)
            .with_dummies(cols))
    }
}

/// Parses arguments already split from the command line and runs them.
pub fn run(cli: &Cli) -> Result<Vec<Table>, CliError> {
    let tables = match cli.common.threads {
        Some(0) => return Err(usage("--threads must be positive")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Runtime(e.to_string()))?
            .install(|| dispatch(cli))?,
        None => dispatch(cli)?,
    };
    write_results(&cli.common.output, &tables, cli.common.format)?;
    Ok(tables)
}

fn dispatch(cli: &Cli) -> Result<Vec<Table>, CliError> {
    let c = &cli.common;
    match &cli.command {
        Command::Simulate {
            config,
            regime,
            units,
            times,
        } => simulate(c, config.as_deref(), regime.as_deref(), *units, *times),
        Command::Fit => fit(c),
        Command::Irf {
            shock,
            normalization,
        } => irf_cmd(c, *shock, *normalization),
        Command::Lagselect { pmax } => lagselect(c, *pmax),
        Command::Diagnose { smax } => diagnose_cmd(c, *smax),
        Command::Spillover { response } => spillover(c, *response),
        Command::Verify { theorem, config } => verify(c, theorem, config.as_deref()),
    }
}

fn parse_regime(s: &str) -> Result<Regime, CliError> {
    serde_json::from_value(serde_json::Value::String(s.trim().to_string()))
        .map_err(|_| usage(format!("unknown regime {s:?}")))
}

fn load_config(path: &Path) -> Result<ScenarioConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn simulate(
    c: &Common,
    config: Option<&Path>,
    regime: Option<&str>,
    units: Option<usize>,
    times: Option<usize>,
) -> Result<Vec<Table>, CliError> {
    let mut cfg = match config {
        Some(p) => load_config(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(r) = regime {
        cfg.regime = parse_regime(r)?;
    }
    if let Some(n) = units {
        cfg.n_units = n;
    }
    if let Some(t) = times {
        cfg.n_times = t;
    }
    cfg.seed = c.seed()?;
    let (panel, pop) = simulate_scenario(&cfg)?;
    fs::create_dir_all(&c.output).map_err(|e| CliError::io(&c.output, e))?;
    write_panel_csv(&panel, &c.output.join("panel.csv"))?;
    let scenario = toml::to_string(&cfg).map_err(|e| CliError::Runtime(e.to_string()))?;
    let path = c.output.join("scenario.toml");
    fs::write(&path, scenario).map_err(|e| CliError::io(&path, e))?;

    let mut tables = vec![truth_table(&panel, &pop)];
    let report = oracle_estimands(&pop, &pop.grid)?;
    let mut est = Table::new("estimands", &["estimand", "value", "mc_se"]);
    let scalars = [
        ("ate", report.ate, report.mc_se.ate),
        ("att", report.att, report.mc_se.att),
        ("selection_bias", report.selection_bias, None),
        ("atte", report.atte, report.mc_se.atte),
        ("aste", report.aste, report.mc_se.aste),
    ];
    for (name, v, se) in scalars {
        if let Some(v) = v {
            est.push(vec![name.into(), v.into(), se.unwrap_or(f64::NAN).into()]);
        }
    }
    tables.push(est);
    let mut curves = Table::new("response_curves", &["lambda", "acr", "acrt"]);
    for ((l, a), b) in report.grid.iter().zip(&report.acr).zip(&report.acrt) {
        curves.push(vec![(*l).into(), (*a).into(), (*b).into()]);
    }
    tables.push(curves);
    if pop.exposure.is_some() {
        let adj = cfg.adjacency()?;
        let mut edges = Table::new("adjacency", &["unit_a", "unit_b"]);
        for u in 0..adj.n_units() {
            for &v in adj.neighbors(u) {
                if u < v {
                    edges.push(vec![
                        panel.unit_labels()[u].into(),
                        panel.unit_labels()[v].into(),
                    ]);
                }
            }
        }
        tables.push(edges);
    }
    Ok(tables)
}

fn truth_table(panel: &PanelDataset, pop: &PotentialOutcomePanel) -> Table {
    let mut t = Table::new(
        "truth",
        &[
            "unit",
            "time",
            "assignment",
            "baseline",
            "effect_scale",
            "exposure",
            "realized",
            "treated_group",
            "treated_period",
        ],
    );
    for cell in 0..pop.n_cells() {
        let (u, s) = (cell / pop.n_times, cell % pop.n_times);
        let (gu, gt) = match &pop.groups {
            Some(g) => (g.unit_treated[u], g.time_treated[s]),
            None => (false, false),
        };
        t.push(vec![
            panel.unit_labels()[u].into(),
            panel.time_labels()[s].into(),
            pop.assignments[cell].into(),
            pop.baseline[cell].into(),
            pop.effect_scale[u].into(),
            pop.exposure_at(cell).into(),
            pop.realized(cell).into(),
            gu.into(),
            gt.into(),
        ]);
    }
    t
}

fn fit(c: &Common) -> Result<Vec<Table>, CliError> {
    let panel = c.panel()?;
    let spec = c.spec(&panel)?;
    let f = fit_pvar(&panel, &spec)?;
    let names = panel.variable_names();
    let m = f.m();

    let mut phi = Table::new("phi", &["lag", "equation", "regressor", "value"]);
    for (l, mat) in f.phi.iter().enumerate() {
        for i in 0..m {
            for j in 0..m {
                phi.push(vec![
                    (l + 1).into(),
                    names[i].as_str().into(),
                    names[j].as_str().into(),
                    mat[(i, j)].into(),
                ]);
            }
        }
    }
    let mut sigma = Table::new("sigma", &["row", "col", "value"]);
    for i in 0..m {
        for j in 0..m {
            sigma.push(vec![
                names[i].as_str().into(),
                names[j].as_str().into(),
                f.sigma[(i, j)].into(),
            ]);
        }
    }
    let mut mu = Table::new("mu", &["unit", "variable", "intercept", "mean"]);
    for u in 0..f.n_units {
        for v in 0..m {
            let mean = f.mu.as_ref().map_or(f64::NAN, |mu| mu[u][v]);
            mu.push(vec![
                panel.unit_labels()[u].into(),
                names[v].as_str().into(),
                f.intercepts[u][v].into(),
                mean.into(),
            ]);
        }
    }
    let mut header = vec!["unit", "time"];
    header.extend(names.iter().map(String::as_str));
    let mut resid = Table::new("residuals", &header);
    let rows = f.rows_per_unit();
    for u in 0..f.n_units {
        for r in 0..rows {
            let mut row: Vec<Cell> = vec![
                panel.unit_labels()[u].into(),
                panel.time_labels()[f.first_time + r].into(),
            ];
            row.extend((0..m).map(|v| Cell::from(f.residual(u, r, v))));
            resid.push(row);
        }
    }
    let mut summary = Table::new(
        "fit",
        &[
            "lag_order",
            "time_effects",
            "effective_obs",
            "n_units",
            "n_policies",
            "first_time",
        ],
    );
    summary.push(vec![
        f.lag_order().into(),
        f.spec.time_effects.into(),
        f.effective_obs.into(),
        f.n_units.into(),
        f.n_policies.into(),
        panel.time_labels()[f.first_time].into(),
    ]);
    Ok(vec![phi, sigma, mu, resid, summary])
}

fn irf_cmd(c: &Common, shock: usize, norm: NormArg) -> Result<Vec<Table>, CliError> {
    let panel = c.panel()?;
    let spec = c.spec(&panel)?;
    if shock >= panel.m() {
        return Err(usage(format!(
            "--shock {shock} is out of range for {} variables",
            panel.m()
        )));
    }
    let normalization = match norm {
        NormArg::UnitShock => Normalization::UnitShock,
        NormArg::OneSd => Normalization::OneSd,
    };
    let reps = c.reps.unwrap_or(1000);
    let (point, bands) = if reps == 0 {
        let f = fit_pvar(&panel, &spec)?;
        let chol = cholesky_lower(&f.sigma)?;
        (irf(&f, &chol, shock, c.horizon, normalization)?, None)
    } else {
        let opts = causal_pvar::BootstrapOptions {
            reps,
            level: c.level,
            seed: c.seed()?,
        };
        let (p, b) = bootstrap_irf(&panel, &spec, shock, c.horizon, opts, normalization)?;
        (p, Some(b))
    };
    let mut t = Table::new("irf", &["variable", "horizon", "point", "lower", "upper"]);
    for (v, name) in panel.variable_names().iter().enumerate() {
        for h in 0..=c.horizon {
            let (lo, hi) = bands
                .as_ref()
                .map_or((f64::NAN, f64::NAN), |b| (b.lower[(v, h)], b.upper[(v, h)]));
            t.push(vec![
                name.as_str().into(),
                h.into(),
                point.response(v, h).into(),
                lo.into(),
                hi.into(),
            ]);
        }
    }
    let mut tables = vec![t];
    if let Some(b) = bands {
        let mut meta = Table::new(
            "irf_bootstrap",
            &["shock", "level", "reps", "failed", "seed"],
        );
        meta.push(vec![
            panel.variable_names()[shock].as_str().into(),
            b.level.into(),
            b.n_reps.into(),
            b.n_failed.into(),
            b.seed.into(),
        ]);
        tables.push(meta);
    }
    Ok(tables)
}

fn lagselect(c: &Common, pmax: usize) -> Result<Vec<Table>, CliError> {
    let panel = c.panel()?;
    let spec = c.spec(&panel)?;
    let table = lag_criteria(&panel, &spec, pmax)?;
    let mut t = Table::new(
        "lag_selection",
        &["lag", "log_det", "bic_like", "aic_like", "hqic_like"],
    );
    for r in &table.rows {
        t.push(vec![
            r.lag.into(),
            r.log_det.into(),
            r.bic_like.into(),
            r.aic_like.into(),
            r.hqic_like.into(),
        ]);
    }
    let mut chosen = Table::new("lag_choice", &["criterion", "lag", "effective_obs"]);
    for (name, lag) in [
        ("bic_like", table.chosen_bic),
        ("aic_like", table.chosen_aic),
        ("hqic_like", table.chosen_hqic),
    ] {
        chosen.push(vec![name.into(), lag.into(), table.effective_obs.into()]);
    }
    Ok(vec![t, chosen])
}

fn diagnose_cmd(c: &Common, smax: usize) -> Result<Vec<Table>, CliError> {
    let panel = c.panel()?;
    let spec = c.spec(&panel)?;
    let f = fit_pvar(&panel, &spec)?;
    let report = diagnose(&f, smax, None)?;
    let names = panel.variable_names();
    let ac = &report.autocorr;
    let mut auto = Table::new(
        "autocorr",
        &["equation", "variable", "lag", "value", "bound", "exceeds"],
    );
    for j in 0..ac.m {
        for l in 0..ac.m {
            for s in 1..=ac.smax {
                let v = ac.get(j, l, s);
                auto.push(vec![
                    names[j].as_str().into(),
                    names[l].as_str().into(),
                    s.into(),
                    v.into(),
                    ac.bound.into(),
                    (v.abs() > ac.bound).into(),
                ]);
            }
        }
    }
    let st = &report.stationarity;
    let mut stat = Table::new(
        "stationarity",
        &[
            "spectral_radius",
            "stationary",
            "converged",
            "iterations",
            "max_abs_autocorr",
            "autocorr_violated",
        ],
    );
    stat.push(vec![
        st.spectral_radius.into(),
        st.stationary.into(),
        st.converged.into(),
        st.iterations.into(),
        ac.max_abs.into(),
        ac.violated.into(),
    ]);
    let mut probe = Table::new(
        "policy_probe",
        &[
            "variable",
            "n",
            "is_binary",
            "share_zero",
            "skewness",
            "excess_kurtosis",
            "normality_stat",
        ],
    );
    for k in 0..panel.n_policies() {
        let p = causal_pvar::diagnostics::policy_regime_probe(&f.residual_series(k))?;
        probe.push(vec![
            names[k].as_str().into(),
            p.n.into(),
            p.is_binary.into(),
            p.share_zero.into(),
            p.skewness.into(),
            p.excess_kurtosis.into(),
            p.normality_stat.into(),
        ]);
    }
    Ok(vec![auto, stat, probe])
}

fn spillover(c: &Common, response: Option<usize>) -> Result<Vec<Table>, CliError> {
    let panel = c.panel()?;
    let spec = c.spec(&panel)?;
    let path = c
        .adjacency
        .as_ref()
        .ok_or_else(|| usage("spillover needs --adjacency"))?;
    let mode: ExposureMode = c
        .mode
        .parse()
        .map_err(|e: causal_pvar::Error| usage(e.to_string()))?;
    let outcome = response.unwrap_or(panel.n_policies());
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let adj = Adjacency::from_edge_list(&text, panel.unit_labels())?;
    let reps = c.reps.unwrap_or(200);
    let seed = if reps > 0 {
        c.seed()?
    } else {
        c.seed.unwrap_or(0)
    };
    let est = estimate_from_panel(&panel, &spec, &adj, mode, outcome, reps, seed)?;
    let names = panel.variable_names();
    let mut coef = Table::new("spillover", &["term", "estimate", "se"]);
    coef.push(vec![
        names[0].as_str().into(),
        est.fit.delta.into(),
        est.fit.se_delta.into(),
    ]);
    coef.push(vec![
        "exposure".into(),
        est.fit.rho.into(),
        est.fit.se_rho.into(),
    ]);
    let mut summary = Table::new(
        "spillover_summary",
        &[
            "response",
            "naive_gamma",
            "mean_exposure",
            "reps",
            "failed",
            "seed",
            "degenerate_exposure",
            "centered",
        ],
    );
    summary.push(vec![
        names[outcome].as_str().into(),
        est.naive_gamma.into(),
        est.mean_exposure.into(),
        est.fit.n_reps.into(),
        est.fit.n_failed.into(),
        est.fit.seed.into(),
        est.fit.degenerate_exposure.into(),
        est.fit.centered.into(),
    ]);
    Ok(vec![coef, summary])
}

fn verify(c: &Common, theorem: &str, config: Option<&Path>) -> Result<Vec<Table>, CliError> {
    let seed = c.seed()?;
    let reps = c.reps.unwrap_or(200);
    let base = config.map(load_config).transpose()?;
    let key = theorem.trim().to_ascii_uppercase();
    let mut targets: Vec<Option<Theorem>> = match key.as_str() {
        "ALL" => Theorem::ALL.iter().copied().map(Some).collect(),
        "T11" | "T12" | "T11-T12" | "INTERFERENCE" => vec![None],
        _ => vec![Some(
            key.parse()
                .map_err(|e: causal_pvar::Error| usage(e.to_string()))?,
        )],
    };
    if key == "ALL" {
        targets.push(None);
    }
    let mut reports: Vec<VerificationReport> = Vec::new();
    for target in targets {
        let regime = target.map_or(Regime::SpilloverDummy, Theorem::regime);
        let mut cfg = match &base {
            Some(b) if b.regime == regime || key != "ALL" => b.clone(),
            _ => ScenarioConfig::new(regime),
        };
        cfg.seed = seed;
        reports.push(match target {
            Some(t) => verify_theorem(t, &cfg, reps)?,
            None => verify_interference(&cfg, reps)?,
        });
    }
    let mut checks = Table::new(
        "verify",
        &[
            "theorem",
            "check",
            "mean_estimate",
            "mean_target",
            "discrepancy",
            "se",
            "asserted",
            "pass",
        ],
    );
    let mut summary = Table::new("verify_summary", &["theorem", "reps", "seed", "pass"]);
    for r in &reports {
        for ch in &r.checks {
            checks.push(vec![
                r.theorem.as_str().into(),
                ch.name.as_str().into(),
                ch.mean_estimate.into(),
                ch.mean_target.into(),
                ch.discrepancy.into(),
                ch.se.into(),
                ch.asserted.into(),
                ch.pass.into(),
            ]);
        }
        summary.push(vec![
            r.theorem.as_str().into(),
            r.reps.into(),
            r.seed.into(),
            r.pass.into(),
        ]);
    }
    Ok(vec![checks, summary])
}

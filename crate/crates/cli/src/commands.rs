use erw_core::analytic::{
    a_and_v_at, lil_envelope, regime_prediction, v_limit_superdiffusive, VarianceLaw,
};
use erw_core::experiment::{run_experiment, ExperimentKind, ExperimentReport, PlotKind};
use erw_core::montecarlo::{dyadic_grid, run_ensemble};
use erw_core::oracle::{distribution_dp, exact_moments_at};
use erw_core::{DerivedConstants, EnsembleConfig, Error, ModelParams, Regime};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{fmt_f64, fmt_opt, Rendered, Table, SCHEMA_VERSION};
use crate::svg::{Line, Plot};

const V_LIMIT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictReport {
    pub schema_version: u32,
    pub params: ModelParams,
    pub constants: DerivedConstants,
    pub regime: Regime,
    pub lln_limit: f64,
    pub z_lln_limit: f64,
    pub variance_law: VarianceLaw,
    pub variance_formula: String,
    pub n: u64,
    pub variance_scale: f64,
    pub v_n: f64,
    pub v_asymptote: Option<f64>,
    pub v_asymptote_formula: String,
    /// `lim v_n`, superdiffusive only.
    pub v_limit: Option<f64>,
    pub phi_v_limit: Option<f64>,
    pub lil_envelope: Option<f64>,
}

pub fn cmd_predict(cfg: &RunConfig) -> Result<Rendered, CliError> {
    let pred = regime_prediction(&cfg.params)?;
    if pred.degenerate {
        return Err(Error::Degenerate.into());
    }
    let c = pred.constants;
    let n = cfg.n_steps;
    let coefficient = pred.variance_law.coefficient();
    let variance_formula = match pred.variance_law {
        VarianceLaw::Diffusive { .. } => {
            format!("Var(S_n) ~ phi/(1-2 alpha) n = {coefficient:.10} n")
        }
        VarianceLaw::Critical { .. } => format!("Var(S_n) ~ phi n ln n = {coefficient:.10} n ln n"),
        VarianceLaw::Superdiffusive { .. } => format!(
            "Var(S_n - E[S_n] - W a_n) ~ phi/(2 alpha-1) n = {coefficient:.10} n; Var(S_n) ~ E[W^2] a_n^2"
        ),
    };
    let v_asymptote_formula = match pred.regime {
        Regime::Diffusive => "v_n ~ Gamma(alpha+1)^2 n^(1-2 alpha)/(1-2 alpha)".to_string(),
        Regime::Critical => "v_n ~ (pi/4) ln n".to_string(),
        Regime::Superdiffusive => "v_n -> 3F2(1,1,1; alpha+1, alpha+1; 1)".to_string(),
    };
    let v_n = a_and_v_at(c.alpha, &[n])?[0].1;
    let v_limit = match pred.regime {
        Regime::Superdiffusive => Some(v_limit_superdiffusive(c.alpha, V_LIMIT_TOL)?),
        _ => None,
    };
    let report = PredictReport {
        schema_version: SCHEMA_VERSION,
        params: cfg.params,
        constants: c,
        regime: pred.regime,
        lln_limit: pred.lln_limit,
        z_lln_limit: pred.z_lln_limit,
        variance_law: pred.variance_law,
        variance_formula,
        n,
        variance_scale: pred.variance_scale(n),
        v_n,
        v_asymptote: pred.v_asymptote(n),
        v_asymptote_formula,
        v_limit,
        phi_v_limit: v_limit.map(|v| c.phi * v),
        lil_envelope: lil_envelope(&cfg.params, n).ok(),
    };

    let mut table = Table::new(&["quantity", "value"]);
    let mut row = |k: &str, v: String| table.push(vec![k.to_string(), v]);
    row("p", fmt_f64(cfg.params.p()));
    row("q", fmt_f64(cfg.params.q()));
    row("r", fmt_f64(cfg.params.r()));
    row("theta", fmt_f64(cfg.params.theta()));
    row("alpha", fmt_f64(c.alpha));
    row("omega", fmt_f64(c.omega));
    row("tau", fmt_f64(c.tau));
    row("gamma", fmt_f64(c.gamma));
    row("phi", fmt_f64(c.phi));
    row("beta", fmt_f64(c.beta));
    row("psi", fmt_f64(c.psi));
    row("regime", pred.regime.name().to_string());
    row("lln_limit", fmt_f64(report.lln_limit));
    row("z_lln_limit", fmt_f64(report.z_lln_limit));
    row("variance_formula", report.variance_formula.clone());
    row("variance_coefficient", fmt_f64(coefficient));
    row("n", n.to_string());
    row("variance_scale", fmt_f64(report.variance_scale));
    row("v_n", fmt_f64(v_n));
    row("v_asymptote_formula", report.v_asymptote_formula.clone());
    row("v_asymptote", fmt_opt(report.v_asymptote));
    row("v_limit", fmt_opt(report.v_limit));
    row("phi_v_limit", fmt_opt(report.phi_v_limit));
    row("lil_envelope", fmt_opt(report.lil_envelope));

    let mut summary = vec![
        format!(
            "regime={} alpha={:.6} phi={:.6}",
            pred.regime, c.alpha, c.phi
        ),
        format!(
            "lln_limit={:.6} z_lln_limit={:.6}",
            report.lln_limit, report.z_lln_limit
        ),
        report.variance_formula.clone(),
    ];
    if let Some(v) = v_limit {
        summary.push(format!("v_limit={v:.12}"));
    }
    Ok(Rendered {
        table,
        json: serde_json::to_string_pretty(&report)?,
        plot: None,
        verdict: None,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateRow {
    pub n: u64,
    pub mean_s: f64,
    pub var_s: f64,
    pub stderr_s: f64,
    pub mean_z: f64,
    pub var_z: f64,
    pub mean_m: Option<f64>,
    pub var_m: Option<f64>,
    pub exact_mean_s: f64,
    pub exact_var_s: f64,
    pub exact_mean_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub schema_version: u32,
    pub params: ModelParams,
    pub n_steps: u64,
    pub n_traj: u64,
    pub master_seed: u64,
    pub rows: Vec<SimulateRow>,
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<Rendered, CliError> {
    let snapshots = cfg
        .snapshots
        .clone()
        .unwrap_or_else(|| dyadic_grid(cfg.n_steps));
    let ens_cfg = EnsembleConfig::new(cfg.n_steps, cfg.n_traj, cfg.master_seed)
        .with_snapshots(snapshots.clone())
        .with_workers(cfg.workers);
    let ens = run_ensemble(&cfg.params, &ens_cfg)?;
    let exact = exact_moments_at(&cfg.params, &snapshots)?;
    let rows: Vec<SimulateRow> = ens
        .snapshots
        .iter()
        .zip(&exact)
        .map(|(s, ex)| SimulateRow {
            n: s.n,
            mean_s: s.acc_s.mean,
            var_s: s.acc_s.variance(),
            stderr_s: s.acc_s.std_err(),
            mean_z: s.acc_z.mean,
            var_z: s.acc_z.variance(),
            mean_m: s.acc_m.map(|m| m.mean),
            var_m: s.acc_m.map(|m| m.variance()),
            exact_mean_s: ex.mean_s,
            exact_var_s: ex.var_s,
            exact_mean_z: ex.mean_z,
        })
        .collect();
    let mut table = Table::new(&[
        "n",
        "mean_s",
        "var_s",
        "stderr_s",
        "mean_z",
        "var_z",
        "mean_m",
        "var_m",
        "exact_mean_s",
        "exact_var_s",
        "exact_mean_z",
    ]);
    for r in &rows {
        table.push(vec![
            r.n.to_string(),
            fmt_f64(r.mean_s),
            fmt_f64(r.var_s),
            fmt_f64(r.stderr_s),
            fmt_f64(r.mean_z),
            fmt_f64(r.var_z),
            fmt_opt(r.mean_m),
            fmt_opt(r.var_m),
            fmt_f64(r.exact_mean_s),
            fmt_f64(r.exact_var_s),
            fmt_f64(r.exact_mean_z),
        ]);
    }
    let x: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let plot = Plot {
        title: "Var(S_n): Monte Carlo vs exact".into(),
        x_label: "n".into(),
        y_label: "Var(S_n)".into(),
        kind: PlotKind::LogLog,
        lines: vec![
            Line {
                name: "monte carlo".into(),
                x: x.clone(),
                y: rows.iter().map(|r| r.var_s).collect(),
            },
            Line {
                name: "exact".into(),
                x,
                y: rows.iter().map(|r| r.exact_var_s).collect(),
            },
        ],
    };
    let report = SimulateReport {
        schema_version: SCHEMA_VERSION,
        params: cfg.params,
        n_steps: cfg.n_steps,
        n_traj: cfg.n_traj,
        master_seed: cfg.master_seed,
        rows,
    };
    Ok(Rendered {
        table,
        json: serde_json::to_string_pretty(&report)?,
        plot: Some(plot),
        verdict: None,
        summary: vec![format!(
            "simulated {} trajectories of {} steps",
            cfg.n_traj, cfg.n_steps
        )],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactRow {
    pub n: u64,
    pub mean_s: f64,
    pub var_s: f64,
    pub mean_z: f64,
    pub mean_sz: f64,
    /// `n omega/(1 - alpha)`
    pub lln_mean_s: f64,
    /// `n tau/(1 - gamma)`
    pub lln_mean_z: f64,
    /// Scale of the regime's limit law; absent for `alpha < 0`.
    pub variance_scale: Option<f64>,
    /// `phi a_n^2 v_n`; absent for `alpha < 0`.
    pub phi_a2_v: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactReport {
    pub schema_version: u32,
    pub params: ModelParams,
    pub rows: Vec<ExactRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub schema_version: u32,
    pub params: ModelParams,
    pub n: u64,
    /// `(s, z, probability)` with nonzero probability
    pub atoms: Vec<(i64, u64, f64)>,
}

pub fn cmd_exact(cfg: &RunConfig, distribution: bool) -> Result<Rendered, CliError> {
    if distribution {
        return exact_distribution(cfg);
    }
    let times = cfg
        .snapshots
        .clone()
        .unwrap_or_else(|| dyadic_grid(cfg.n_steps));
    let moments = exact_moments_at(&cfg.params, &times)?;
    let c = cfg.params.derive();
    let pred = regime_prediction(&cfg.params).ok();
    let av = match pred {
        Some(_) => Some(a_and_v_at(c.alpha, &times)?),
        None => None,
    };
    let rows: Vec<ExactRow> = moments
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let n = m.n as f64;
            ExactRow {
                n: m.n,
                mean_s: m.mean_s,
                var_s: m.var_s,
                mean_z: m.mean_z,
                mean_sz: m.mean_sz,
                lln_mean_s: n * c.lln_limit(),
                lln_mean_z: n * c.z_lln_limit(),
                variance_scale: pred.map(|p| p.variance_scale(m.n)),
                phi_a2_v: av.as_ref().map(|av| c.phi * av[i].0 * av[i].0 * av[i].1),
            }
        })
        .collect();
    let mut table = Table::new(&[
        "n",
        "mean_s",
        "var_s",
        "mean_z",
        "mean_sz",
        "lln_mean_s",
        "lln_mean_z",
        "variance_scale",
        "phi_a2_v",
    ]);
    for r in &rows {
        table.push(vec![
            r.n.to_string(),
            fmt_f64(r.mean_s),
            fmt_f64(r.var_s),
            fmt_f64(r.mean_z),
            fmt_f64(r.mean_sz),
            fmt_f64(r.lln_mean_s),
            fmt_f64(r.lln_mean_z),
            fmt_opt(r.variance_scale),
            fmt_opt(r.phi_a2_v),
        ]);
    }
    let x: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let mut lines = vec![Line {
        name: "exact Var(S_n)".into(),
        x: x.clone(),
        y: rows.iter().map(|r| r.var_s).collect(),
    }];
    if pred.is_some() {
        lines.push(Line {
            name: "phi a_n^2 v_n".into(),
            x,
            y: rows
                .iter()
                .map(|r| r.phi_a2_v.unwrap_or(f64::NAN))
                .collect(),
        });
    }
    let plot = Plot {
        title: "Exact variance".into(),
        x_label: "n".into(),
        y_label: "Var(S_n)".into(),
        kind: PlotKind::LogLog,
        lines,
    };
    let report = ExactReport {
        schema_version: SCHEMA_VERSION,
        params: cfg.params,
        rows,
    };
    Ok(Rendered {
        table,
        json: serde_json::to_string_pretty(&report)?,
        plot: Some(plot),
        verdict: None,
        summary: vec![format!("exact moments at {} times", times.len())],
    })
}

fn exact_distribution(cfg: &RunConfig) -> Result<Rendered, CliError> {
    let dist = distribution_dp(&cfg.params, cfg.n_steps)?;
    let atoms: Vec<(i64, u64, f64)> = dist.atoms().filter(|a| a.2 > 0.0).collect();
    let mut table = Table::new(&["n", "s", "z", "probability"]);
    for &(s, z, w) in &atoms {
        table.push(vec![
            cfg.n_steps.to_string(),
            s.to_string(),
            z.to_string(),
            fmt_f64(w),
        ]);
    }
    let marginal = dist.marginal_s();
    let plot = Plot {
        title: format!("P(S_n = s), n = {}", cfg.n_steps),
        x_label: "s".into(),
        y_label: "probability".into(),
        kind: PlotKind::Cdf,
        lines: vec![Line {
            name: "exact".into(),
            x: marginal.iter().map(|m| m.0 as f64).collect(),
            y: marginal.iter().map(|m| m.1).collect(),
        }],
    };
    let report = DistributionReport {
        schema_version: SCHEMA_VERSION,
        params: cfg.params,
        n: cfg.n_steps,
        atoms,
    };
    Ok(Rendered {
        table,
        json: serde_json::to_string_pretty(&report)?,
        plot: Some(plot),
        verdict: None,
        summary: vec![format!(
            "exact law at n={} over {} atoms",
            cfg.n_steps,
            report.atoms.len()
        )],
    })
}

pub fn cmd_experiment(cfg: &RunConfig, kind: ExperimentKind) -> Result<Rendered, CliError> {
    let report = run_experiment(&cfg.experiment_inputs(kind), cfg.workers)?;
    let mut summary: Vec<String> = report
        .checks
        .iter()
        .map(|c| {
            format!(
                "{} {}: observed={:.6e} bounds=[{}, {}]",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.observed,
                c.lower.map_or("-".into(), |v| format!("{v:.6e}")),
                c.upper.map_or("-".into(), |v| format!("{v:.6e}")),
            )
        })
        .collect();
    summary.extend(report.notes.iter().map(|n| format!("note: {n}")));
    summary.push(format!("verdict: {}", report.verdict));
    Ok(Rendered {
        table: experiment_table(&report),
        json: serde_json::to_string_pretty(&report)?,
        plot: experiment_plot(&report),
        verdict: Some(report.verdict),
        summary,
    })
}

/// One CSV for rows, gates and the verdict, told apart by `record`.
pub fn experiment_table(report: &ExperimentReport) -> Table {
    let mut t = Table::new(&[
        "kind",
        "record",
        "label",
        "n",
        "observed",
        "predicted",
        "discrepancy",
        "stderr",
        "lower",
        "upper",
        "passed",
    ]);
    let kind = report.kind.name().to_string();
    for (name, v) in &report.predictions {
        t.push(vec![
            kind.clone(),
            "prediction".into(),
            name.clone(),
            String::new(),
            String::new(),
            fmt_f64(*v),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
        ]);
    }
    for r in &report.rows {
        t.push(vec![
            kind.clone(),
            "row".into(),
            r.label.clone(),
            r.n.to_string(),
            fmt_f64(r.observed),
            fmt_opt(r.predicted),
            fmt_opt(r.discrepancy),
            fmt_opt(r.stderr),
            String::new(),
            String::new(),
            String::new(),
        ]);
    }
    for c in &report.checks {
        t.push(vec![
            kind.clone(),
            "check".into(),
            c.name.clone(),
            String::new(),
            fmt_f64(c.observed),
            String::new(),
            String::new(),
            String::new(),
            fmt_opt(c.lower),
            fmt_opt(c.upper),
            c.passed.to_string(),
        ]);
    }
    t.push(vec![
        kind,
        "verdict".into(),
        report.verdict.to_string(),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
    ]);
    t
}

fn experiment_plot(report: &ExperimentReport) -> Option<Plot> {
    let kind = report.series.first()?.plot;
    let (y_label, title) = match kind {
        PlotKind::LogLog => ("Var(S_n)", "variance against n"),
        PlotKind::Cdf => ("CDF", "standardized CDF against N(0,1)"),
        PlotKind::Trace => ("running max / envelope", "iterated-logarithm ratio"),
    };
    let x_label = if kind == PlotKind::Cdf { "x" } else { "n" };
    Some(Plot {
        title: format!("{}: {title}", report.kind),
        x_label: x_label.into(),
        y_label: y_label.into(),
        kind,
        lines: report
            .series
            .iter()
            .filter(|s| s.plot == kind)
            .map(|s| Line {
                name: s.name.clone(),
                x: s.x.clone(),
                y: s.y.clone(),
            })
            .collect(),
    })
}

//! Command-line entry points.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::config::{parse_config_with_env, ExperimentConfig};
use crate::diagnostics::{
    delta_study, energy_report, eps_study, pressure_report, sobolev_l4_estimate, tresca_report, DiscreteConstants,
    PressureDictionary, StudyTable,
};
use crate::error::{Error, Result};
use crate::io::{convergence_csv, diagnostics_csv, study_csv, Snapshot};
use crate::mms::{spatial_study, temporal_study, ManufacturedSolution};
use crate::solver::RunOptions;
use crate::verify::{verify, VerifyOptions};

#[derive(Debug, Parser)]
#[command(name = "trescaflow", version, about = "Penalized Navier-Stokes with regularized Tresca friction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `output.directory`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = VerifyOptions::default().seed)]
    pub seed: u64,
    /// Concurrent sweep members.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    /// Keep every n-th state (overrides `output.snapshot_every`).
    #[arg(long, global = true)]
    pub snapshot_every: Option<usize>,
    /// Promote monitored diagnostics to hard assertions.
    #[arg(long, global = true)]
    pub strict: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Single run with diagnostics and snapshots.
    Run,
    /// Penalty sweep over `study.deltas`.
    StudyDelta,
    /// Regularization sweep over `study.epsilons`.
    StudyEps,
    /// Property suite on built-in small cases.
    Verify,
    /// Manufactured-solution convergence study.
    Mms,
    /// Print the effective configuration.
    Config,
}

/// Outcome of a command: hard failures decide the exit code.
#[derive(Debug, Default)]
pub struct Outcome {
    pub failures: Vec<String>,
    pub out_dir: PathBuf,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            0
        } else {
            1
        }
    }
}

struct Ctx {
    cfg: ExperimentConfig,
    common: CommonArgs,
    out: PathBuf,
    failures: Vec<String>,
}

impl Ctx {
    fn assert(&mut self, hard: bool, ok: bool, what: String) {
        if !ok && (hard || self.common.strict) {
            self.failures.push(what);
        }
    }

    fn write(&self, name: impl AsRef<Path>, text: &str) -> Result<()> {
        let p = self.out.join(name);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir)?;
        }
        Ok(fs::write(p, text)?)
    }

    fn write_json(&self, name: &str, v: &Value) -> Result<()> {
        self.write(name, &(serde_json::to_string_pretty(v).expect("json values serialize") + "\n"))
    }
}

pub fn load_config(common: &CommonArgs, env: impl IntoIterator<Item = (String, String)>) -> Result<ExperimentConfig> {
    let text = match &common.config {
        Some(p) => fs::read_to_string(p)?,
        None => String::new(),
    };
    let mut cfg = parse_config_with_env(&text, env)?;
    if let Some(n) = common.snapshot_every {
        cfg.output.snapshot_every = n;
    }
    if let Some(o) = &common.out {
        cfg.output.directory = o.to_string_lossy().into_owned();
    }
    Ok(cfg)
}

/// Runs a command with explicit environment variables (for overrides).
pub fn execute(cli: &Cli, env: impl IntoIterator<Item = (String, String)>) -> Result<Outcome> {
    let cfg = load_config(&cli.common, env)?;
    let out = PathBuf::from(&cfg.output.directory);
    let mut ctx = Ctx { cfg, common: cli.common.clone(), out, failures: Vec::new() };
    match cli.command {
        Command::Config => {
            print!("{}", ctx.cfg.to_toml());
            return Ok(Outcome { failures: vec![], out_dir: ctx.out });
        }
        Command::Run => cmd_run(&mut ctx)?,
        Command::StudyDelta => cmd_study(&mut ctx, true)?,
        Command::StudyEps => cmd_study(&mut ctx, false)?,
        Command::Verify => cmd_verify(&mut ctx)?,
        Command::Mms => cmd_mms(&mut ctx)?,
    }
    ctx.write_json("failures.json", &json!({ "failures": ctx.failures }))?;
    Ok(Outcome { failures: ctx.failures, out_dir: ctx.out })
}

fn cmd_run(ctx: &mut Ctx) -> Result<()> {
    let exp = ctx.cfg.to_experiment()?;
    ctx.write("config.toml", &ctx.cfg.to_toml())?;
    let opts = RunOptions { snapshot_every: ctx.cfg.output.snapshot_every, check_energy: ctx.cfg.solver.theta == 1.0 };
    let (p, traj) = exp.run(&opts)?;
    let mesh = p.space.mesh();
    let hash = mesh.hash();
    ctx.write("mesh.txt", &mesh.to_text())?;
    let s = ctx.cfg.solver;
    let lift_state = crate::solver::FlowState {
        t: 0.0,
        step: 0,
        vtilde: crate::spaces::FieldCoefficients { values: p.space.dofs().restrict(&p.lift.g0) },
        pressure: crate::solver::divergence_field(&p.space, &p.lift.g0),
    };
    ctx.write("lifting.snap", &Snapshot::from_state(&lift_state, &hash, p.space.degree(), s.delta, s.eps).to_text())?;
    for st in &traj.snapshots {
        let snap = Snapshot::from_state(st, &hash, p.space.degree(), s.delta, s.eps);
        ctx.write(format!("snapshots/step_{:06}.snap", st.step), &snap.to_text())?;
    }
    ctx.write("diagnostics.csv", &diagnostics_csv(&traj.records)?)?;

    let mut checks = Vec::new();
    if let Some(korn) = traj.korn {
        let constants = DiscreteConstants { korn, sobolev_l4: sobolev_l4_estimate(&p.space, 24, ctx.common.seed) };
        let est = energy_report(&p.space, &traj, &exp.data, &exp.solver, &p.lift, &constants, 10.0);
        ctx.assert(true, est.per_step_ok, "per-step energy inequality violated".into());
        ctx.assert(false, est.gronwall_ok, format!("sup |v|^2 = {:e} above Gronwall bound {:e} x 10", est.sup_l2.powi(2), est.gronwall_bound));
        ctx.assert(false, est.div_ok, format!("div L2L2 {:e} above bound {:e} x 10", est.div_l2l2, est.div_bound));
        ctx.assert(false, est.h1_ok, format!("L2H1 {:e} above bound {:e} x 10", est.l2h1, est.h1_bound));
        checks.push(json!({
            "sup_l2": est.sup_l2, "l2h1": est.l2h1, "div_l2l2": est.div_l2l2,
            "c1": est.c1, "c2": est.c2, "gronwall_bound": est.gronwall_bound, "safety_factor": est.safety_factor,
            "div_bound": est.div_bound, "h1_bound": est.h1_bound,
            "per_step_ok": est.per_step_ok, "gronwall_ok": est.gronwall_ok, "div_ok": est.div_ok, "h1_ok": est.h1_ok,
            "korn": constants.korn, "sobolev_l4": constants.sobolev_l4,
        }));
    }
    let pr = pressure_report(&p.space, &traj, &PressureDictionary::default());
    ctx.assert(true, pr.max_mean_relative <= 1e-10, format!("pressure mean {:e} above 1e-10", pr.max_mean_relative));
    let quad = p.space.default_gamma0_quadrature();
    let tr = tresca_report(&p.space, &quad, &traj.final_state, &exp.data, &p.lift, s.eps, 1.0)?;
    ctx.assert(true, tr.max_traction_excess <= 0.0, "friction traction above threshold".into());
    let summary = json!({
        "name": ctx.cfg.name,
        "mesh_sha256": hash,
        "steps": traj.records.len() - 1,
        "estimates": checks.first().cloned().unwrap_or(Value::Null),
        "pressure": { "max_mean_relative": pr.max_mean_relative, "raw_l2l2": pr.raw_l2l2, "weak_surrogate": pr.weak_surrogate },
        "tresca": {
            "stick_points": tr.stick_count, "slip_points": tr.slip_count,
            "complementarity_residual": tr.complementarity_residual, "max_traction_excess": tr.max_traction_excess,
            "reconstruction_gap": tr.reconstruction_gap,
        },
        "lifting": { "div_residual": p.lift.div_residual, "flux_correction": p.lift.flux_correction, "iterations": p.lift.iterations },
        "failures": ctx.failures,
    });
    ctx.write_json("summary.json", &summary)
}

fn study_json(t: &StudyTable) -> Value {
    json!({
        "parameter": t.parameter,
        "fitted_metric": t.fitted_metric,
        "slope": t.fit.map(|f| f.slope),
        "ci_half_width": t.fit.map(|f| f.ci_half_width),
        "failures": t.rows.iter().filter_map(|r| r.failure.as_ref().map(|m| json!({ "value": r.value, "error": m }))).collect::<Vec<_>>(),
    })
}

fn cmd_study(ctx: &mut Ctx, delta: bool) -> Result<()> {
    let exp = ctx.cfg.to_experiment()?;
    let (table, tag) = if delta {
        (delta_study(&exp, &ctx.cfg.study.deltas, ctx.common.workers)?, "delta")
    } else {
        (eps_study(&exp, &ctx.cfg.study.epsilons, ctx.common.workers)?, "eps")
    };
    ctx.write(format!("study_{tag}.csv"), &study_csv(&table)?)?;
    for (i, r) in table.rows.iter().enumerate() {
        ctx.write(format!("study_{tag}/member_{i:02}/diagnostics.csv"), &diagnostics_csv(&r.records)?)?;
    }
    for r in &table.rows {
        if let Some(m) = &r.failure {
            ctx.assert(true, false, format!("{tag} = {:e}: {m}", r.value));
        }
    }
    let mut summary = study_json(&table);
    if delta {
        let slope = table.fit.map(|f| f.slope);
        let ok = slope.is_some_and(|s| (s - 0.5).abs() <= 0.1);
        ctx.assert(false, ok, format!("divergence slope {slope:?} outside 0.5 +- 0.1"));
        summary["slope_ok"] = json!(ok);
    } else {
        for r in table.rows.iter().filter(|r| r.failure.is_none()) {
            let (gap, bound) = (r.metric("functional_gap").unwrap_or(f64::NAN), r.metric("gap_bound").unwrap_or(f64::NAN));
            ctx.assert(true, gap <= bound, format!("eps = {:e}: regularization gap {gap:e} above bound {bound:e}", r.value));
        }
        let res = table.column("complementarity");
        let monotone = res.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
        ctx.assert(false, monotone, "complementarity residual not monotone in eps".into());
        summary["complementarity_monotone"] = json!(monotone);
    }
    summary["failures"] = json!(ctx.failures);
    ctx.write_json(&format!("study_{tag}_summary.json"), &summary)
}

fn cmd_verify(ctx: &mut Ctx) -> Result<()> {
    let report = verify(&VerifyOptions { seed: ctx.common.seed, strict: ctx.common.strict, ..Default::default() })?;
    ctx.write("verify.csv", &report.to_csv())?;
    for c in report.failures() {
        ctx.failures.push(format!("{} [{}]: measured {:e} vs bound {:e}", c.name, c.case, c.measured, c.bound));
    }
    ctx.write_json("verify_summary.json", &json!({ "seed": report.seed, "strict": report.strict, "passed": report.passed(), "checks": report.checks }))
}

fn cmd_mms(ctx: &mut Ctx) -> Result<()> {
    let t = temporal_study(&ManufacturedSolution::unsteady(), 16, &[0.2, 0.1, 0.05], 1.0)?;
    let s = spatial_study(&ManufacturedSolution::steady(), &[4, 8, 16])?;
    ctx.write("mms_temporal.csv", &convergence_csv(&t)?)?;
    ctx.write("mms_spatial.csv", &convergence_csv(&s)?)?;
    let temporal_ok = t.ratios.iter().all(|r| (r - 2.0).abs() <= 0.3);
    let spatial_ok = s.orders.windows(2).all(|w| (w[1] - w[0]).abs() <= 0.3) && s.orders.iter().all(|o| *o >= 1.5);
    ctx.assert(false, temporal_ok, format!("temporal ratios {:?} outside 2 +- 0.3", t.ratios));
    ctx.assert(false, spatial_ok, format!("spatial orders {:?} not stable", s.orders));
    ctx.write_json(
        "mms_summary.json",
        &json!({ "temporal_ratios": t.ratios, "spatial_orders": s.orders, "temporal_ok": temporal_ok, "spatial_ok": spatial_ok }),
    )
}

/// Process entry point: parses arguments, runs, prints failures, returns the exit code.
pub fn main_with_args(args: impl IntoIterator<Item = String>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli, std::env::vars()) {
        Ok(o) => {
            for f in &o.failures {
                eprintln!("FAIL {f}");
            }
            o.exit_code()
        }
        Err(e) => {
            let list = match &e {
                Error::Config(v) => v.clone(),
                other => vec![other.to_string()],
            };
            eprintln!("{}", json!({ "error": list }));
            1
        }
    }
}

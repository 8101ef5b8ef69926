//! Property suite over the forms, solver and diagnostics on small built-in cases.
//!
//! Every check records what was measured, the bound it was compared to and whether it is a hard
//! assertion. Monitored checks become hard under `strict`.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::diagnostics::{
    energy_report, gateaux_check, lipschitz_check, pressure_report, sobolev_l4_estimate, tresca_report, DiscreteConstants,
    PressureDictionary,
};
use crate::error::Result;
use crate::experiment::{channel, couette_stick, rest, shear_cavity, Experiment};
use crate::forms::{
    assemble_viscous, convection_apply, divergence_coupling, friction_density, plain_convection, FrictionThreshold,
    TemperatureField, ViscosityKind, ViscosityModel,
};
use crate::geometry::{build_mesh_with, Domain, HeightFunction, MeshOptions, Omega, Refinement};
use crate::solver::{korn_constant, RunOptions};
use crate::spaces::DiscreteSpace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Relation {
    /// measured <= bound
    AtMost,
    /// measured >= bound
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub criterion: u8,
    pub name: String,
    pub case: String,
    pub measured: f64,
    pub bound: f64,
    pub relation: Relation,
    pub hard: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    pub strict: bool,
    /// Random fields per algebraic check.
    pub samples: usize,
    pub lipschitz_pairs: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { seed: 20240917, strict: false, samples: 100, lipschitz_pairs: 1000 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub strict: bool,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed || !c.hard)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| c.hard && !c.passed).collect()
    }

    pub fn criterion(&self, id: u8) -> Vec<&Check> {
        self.checks.iter().filter(|c| c.criterion == id).collect()
    }

    /// Fixed-format table; identical inputs give identical bytes.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("criterion,check,case,measured,bound,relation,hard,passed\n");
        for c in &self.checks {
            let rel = match c.relation {
                Relation::AtMost => "<=",
                Relation::AtLeast => ">=",
            };
            let _ = writeln!(s, "{},{},{},{:.9e},{:.9e},{},{},{}", c.criterion, c.name, c.case, c.measured, c.bound, rel, c.hard, c.passed);
        }
        s
    }
}

struct Collector {
    strict: bool,
    checks: Vec<Check>,
}

impl Collector {
    fn push(&mut self, criterion: u8, name: &str, case: &str, measured: f64, bound: f64, relation: Relation, hard: bool) {
        let passed = match relation {
            Relation::AtMost => measured <= bound,
            Relation::AtLeast => measured >= bound,
        };
        self.checks.push(Check {
            criterion,
            name: name.into(),
            case: case.into(),
            measured,
            bound,
            relation,
            hard: hard || self.strict,
            passed,
        });
    }
}

fn bumped_space(resolution: usize, refinement: Refinement) -> Result<DiscreteSpace> {
    let h = HeightFunction::new(|x| 1.0 + 0.2 * x[0] * (1.0 - x[0]), 1.0, 1.05, 0.2)?;
    let d = Domain::new(Omega::Interval { a: 0.0, b: 1.0 }, h)?;
    let m = build_mesh_with(&d, MeshOptions { resolution, refinement })?;
    DiscreteSpace::new(Arc::new(m), 2)
}

fn random_field(s: &DiscreteSpace, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let free: Vec<f64> = (0..s.num_free()).map(|_| rng.random_range(-1.0..1.0)).collect();
    s.dofs().expand(&free)
}

fn algebraic(c: &mut Collector, opts: &VerifyOptions) -> Result<()> {
    let meshes = [("bump-plain-3", bumped_space(3, Refinement::None)?), ("bump-barycentric-2", bumped_space(2, Refinement::Barycentric)?)];
    for (k, (name, s)) in meshes.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(k as u64));
        let (mut ident, mut skew): (f64, f64) = (0.0, 0.0);
        for _ in 0..opts.samples {
            let (u, v, w) = (random_field(s, &mut rng), random_field(s, &mut rng), random_field(s, &mut rng));
            let b1 = plain_convection(s, &u, &v, &w);
            let b2 = plain_convection(s, &u, &w, &v);
            let dc = divergence_coupling(s, &u, &v, &w);
            ident = ident.max((b1 + b2 + dc).abs() / (b1.abs() + b2.abs() + dc.abs()));
            let sk = convection_apply(s, &u, &v, &v);
            let scale = plain_convection(s, &u, &v, &v).abs() + divergence_coupling(s, &u, &v, &v).abs();
            skew = skew.max(sk.abs() / scale);
        }
        c.push(1, "convection_identity_relative", name, ident, 1e-12, Relation::AtMost, true);
        c.push(1, "convection_skew_relative", name, skew, 1e-12, Relation::AtMost, true);
    }

    // two-sided bound of the viscous form
    let s = &meshes[0].1;
    let visc = ViscosityModel::new(ViscosityKind::Exponential { mu0: 0.5, beta: 0.5, t_ref: 0.0 }, 0.5, 1.5, (0.0, 1.1))?;
    let temp = TemperatureField::new(|x, _| x[1], (0.0, 1.05), false);
    let a = assemble_viscous(s, &visc, &temp, 0.0);
    let h1 = s.assemble_h1();
    let alpha = visc.mu_lower() * korn_constant(s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(17));
    let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
    for _ in 0..opts.samples {
        let u = s.dofs().restrict(&random_field(s, &mut rng));
        let r = a.quad_form(&u) / h1.quad_form(&u);
        lo = lo.min(r);
        hi = hi.max(r);
    }
    c.push(2, "korn_alpha_positive", "bump-plain-3", alpha, 0.0, Relation::AtLeast, true);
    c.push(2, "coercivity_lower_ratio", "bump-plain-3", lo, alpha * (1.0 - 1e-12), Relation::AtLeast, true);
    c.push(2, "coercivity_upper_ratio", "bump-plain-3", hi, visc.mu_upper() * (1.0 + 1e-12), Relation::AtMost, true);
    Ok(())
}

fn friction_calculus(c: &mut Collector, opts: &VerifyOptions) -> Result<()> {
    let s = bumped_space(2, Refinement::None)?;
    let quad = s.gamma0_quadrature(5);
    let ell: Vec<f64> = quad.points.iter().map(|x| 0.5 + x[0]).collect();
    let eps = 0.1;
    let g = gateaux_check(&s, &quad, &ell, eps, 1e-2, opts.seed)?;
    c.push(3, "gateaux_ratio_deviation", "bump-plain-2", (g.ratio - 4.0).abs(), 0.5, Relation::AtMost, true);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(3));
    let mut excess = f64::NEG_INFINITY;
    for k in 0..opts.lipschitz_pairs {
        let scale = [1e-3, 1e-1, 1.0, 1e2][k % 4];
        let u = [rng.random_range(-scale..scale), rng.random_range(-scale..scale), 0.0];
        let l = rng.random_range(0.0..2.0);
        let e = [1e-3, 1e-2, 1e-1][k % 3];
        let dens = friction_density(&u, l, e);
        excess = excess.max((dens[0] * dens[0] + dens[1] * dens[1]).sqrt() - l);
    }
    c.push(3, "density_excess_over_threshold", "random-traces", excess, 0.0, Relation::AtMost, true);

    let one = FrictionThreshold::constant(1.0)?;
    let lip = lipschitz_check(&quad, 2, &one, 0.0, eps, opts.lipschitz_pairs, opts.seed)?;
    c.push(3, "lipschitz_ratio", "bump-plain-2", lip.max_ratio, lip.bound, Relation::AtMost, true);
    let zero = FrictionThreshold::constant(0.0)?;
    let lip0 = lipschitz_check(&quad, 2, &zero, 0.0, eps, 10, opts.seed)?;
    c.push(3, "lipschitz_ratio_zero_threshold", "bump-plain-2", lip0.max_ratio, 0.0, Relation::AtMost, true);
    Ok(())
}

fn small_shear() -> Experiment {
    let mut e = shear_cavity().with_solver(|c| {
        c.dt = 1e-3;
        c.tau = 0.02;
    });
    e.name = "shear-cavity-small".into();
    e.mesh.resolution = 2;
    e
}

fn run_checks(c: &mut Collector, e: &Experiment, opts: &VerifyOptions) -> Result<()> {
    let (p, traj) = e.run(&RunOptions { snapshot_every: 1, check_energy: true })?;
    let case = e.name.as_str();
    let worst_energy = traj
        .records
        .iter()
        .skip(1)
        .map(|r| r.energy_lhs - r.energy_rhs)
        .fold(f64::NEG_INFINITY, f64::max);
    c.push(7, "energy_step_lhs_minus_rhs", case, worst_energy, 0.0, Relation::AtMost, true);

    let pr = pressure_report(&p.space, &traj, &PressureDictionary::default());
    c.push(5, "pressure_mean_relative", case, pr.max_mean_relative, 1e-10, Relation::AtMost, true);

    let constants = DiscreteConstants { korn: traj.korn.unwrap_or(0.0), sobolev_l4: sobolev_l4_estimate(&p.space, 24, opts.seed) };
    let est = energy_report(&p.space, &traj, &e.data, &e.solver, &p.lift, &constants, 10.0);
    c.push(7, "gronwall_sup_l2_sq", case, est.sup_l2 * est.sup_l2, est.gronwall_bound * est.safety_factor, Relation::AtMost, false);
    c.push(7, "div_l2l2_vs_bound", case, est.div_l2l2, est.div_bound * est.safety_factor, Relation::AtMost, false);
    c.push(7, "l2h1_vs_bound", case, est.l2h1, est.h1_bound * est.safety_factor, Relation::AtMost, false);

    // pressure recovered from the stored snapshots matches the per-step records
    let recheck = traj
        .snapshots
        .iter()
        .filter(|s| s.step > 0)
        .map(|s| s.pressure.l2_norm(p.space.mesh()) * s.pressure.l2_norm(p.space.mesh()) * traj.dt)
        .sum::<f64>()
        .sqrt()
        * e.solver.delta;
    c.push(7, "div_l2l2_snapshot_recheck", case, (recheck - est.div_l2l2).abs(), 1e-10 * (1.0 + est.div_l2l2), Relation::AtMost, true);

    let quad = p.space.default_gamma0_quadrature();
    let tr = tresca_report(&p.space, &quad, &traj.final_state, &e.data, &p.lift, e.solver.eps, 1.0)?;
    c.push(8, "traction_excess", case, tr.max_traction_excess, 0.0, Relation::AtMost, true);
    c.push(8, "slip_angle", case, tr.max_angle, 1e-8, Relation::AtMost, true);

    let gap: f64 = traj.records.iter().skip(1).map(|r| traj.dt * (r.friction_value - r.friction_exact).abs()).sum();
    let mut ell_sq = 0.0;
    for r in traj.records.iter().skip(1) {
        let l = e.data.friction.samples(&quad, r.t)?;
        ell_sq += traj.dt * l.iter().zip(&quad.weights).map(|(a, w)| w * a * a).sum::<f64>();
    }
    let bound = e.solver.eps * ell_sq.sqrt() * (e.solver.tau * quad.measure()).sqrt();
    c.push(6, "regularization_gap", case, gap, bound, Relation::AtMost, true);
    Ok(())
}

fn stationary(c: &mut Collector) -> Result<()> {
    let e = couette_stick();
    let (p, traj) = e.run(&RunOptions { snapshot_every: 1, check_energy: true })?;
    let first = &traj.snapshots[0].vtilde.values;
    let drift = traj
        .snapshots
        .iter()
        .map(|s| {
            let d: Vec<f64> = s.vtilde.values.iter().zip(first).map(|(a, b)| a - b).collect();
            p.space.field_norms(&p.space.dofs().expand(&d)).h1()
        })
        .fold(0.0, f64::max);
    c.push(7, "couette_h1_drift", &e.name, drift, 1e-10, Relation::AtMost, true);
    c.push(7, "couette_lifting_divergence", &e.name, p.lift.div_residual, p.lift.tolerance, Relation::AtMost, true);

    let r = rest();
    let (_, traj) = r.run(&RunOptions { snapshot_every: 0, check_energy: true })?;
    let m = traj.records.iter().map(|r| r.energy.max(r.pressure_l2).max(r.div_norm)).fold(0.0, f64::max);
    c.push(7, "rest_state_magnitude", &r.name, m, 0.0, Relation::AtMost, true);
    Ok(())
}

/// Runs the full suite. Deterministic for a fixed seed.
pub fn verify(opts: &VerifyOptions) -> Result<VerifyReport> {
    let mut c = Collector { strict: opts.strict, checks: Vec::new() };
    algebraic(&mut c, opts)?;
    friction_calculus(&mut c, opts)?;
    stationary(&mut c)?;
    run_checks(&mut c, &small_shear(), opts)?;
    run_checks(&mut c, &channel(), opts)?;
    Ok(VerifyReport { seed: opts.seed, strict: opts.strict, checks: c.checks })
}

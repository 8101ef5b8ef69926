//! Penalized, regularized Galerkin time stepping for the homogenized velocity.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::forms::{
    assemble_penalty, assemble_viscous, convection_matrix, convection_residual, evaluate_friction,
    friction_lagged_matrix, lifting_coupling_matrix, load_vector, mass_apply, psi_exact_samples,
    psi_eps_samples, self_convection_load, viscous_apply, FrictionThreshold, TemperatureField, ViscosityModel,
};
use crate::geometry::Point;
use crate::lifting::{BoundaryData, Lifting};
use crate::linalg::{dot, LuSolver, SparseMatrix, SparsePattern};
use crate::spaces::{shape_gradients, DiscreteSpace, FaceQuadrature, FieldCoefficients, FieldNorms, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonlinearKind {
    FixedPoint,
    #[default]
    Newton,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct NonlinearConfig {
    pub kind: NonlinearKind,
    pub max_iters: usize,
    /// Residual reduction, measured in the mass-dual norm.
    pub tolerance: f64,
}

impl Default for NonlinearConfig {
    fn default() -> Self {
        NonlinearConfig { kind: NonlinearKind::Newton, max_iters: 30, tolerance: 1e-10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub delta: f64,
    pub eps: f64,
    pub dt: f64,
    pub tau: f64,
    pub theta: f64,
    pub nonlinear: NonlinearConfig,
    /// Bottom-wall quadrature degree for the friction terms; `None` means velocity degree + 3.
    pub friction_quad_degree: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            delta: 1e-3,
            eps: 1e-2,
            dt: 1e-2,
            tau: 0.1,
            theta: 1.0,
            nonlinear: NonlinearConfig::default(),
            friction_quad_degree: None,
        }
    }
}

impl SolverConfig {
    /// All violated constraints.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let pos = |name: &str, x: f64, v: &mut Vec<String>| {
            if !(x > 0.0 && x.is_finite()) {
                v.push(format!("{name} must be positive and finite, got {x}"));
            }
        };
        pos("delta", self.delta, &mut v);
        pos("eps", self.eps, &mut v);
        pos("dt", self.dt, &mut v);
        pos("tau", self.tau, &mut v);
        pos("nonlinear tolerance", self.nonlinear.tolerance, &mut v);
        if !(0.5..=1.0).contains(&self.theta) {
            v.push(format!("theta must lie in [1/2, 1], got {}", self.theta));
        }
        if self.nonlinear.max_iters == 0 {
            v.push("nonlinear max_iters must be at least 1".into());
        }
        if v.is_empty() {
            let n = self.tau / self.dt;
            if (n - n.round()).abs() > 1e-9 * n.max(1.0) || n.round() < 1.0 {
                v.push(format!("tau = {} is not a positive integer multiple of dt = {}", self.tau, self.dt));
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    pub fn num_steps(&self) -> usize {
        (self.tau / self.dt).round() as usize
    }
}

type VectorField = dyn Fn(&Point, f64) -> [f64; 3] + Send + Sync;

/// Body force `f(x, t)`.
#[derive(Clone)]
pub struct Forcing {
    f: Arc<VectorField>,
    time_dependent: bool,
    zero: bool,
}

impl std::fmt::Debug for Forcing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Forcing").field("time_dependent", &self.time_dependent).field("zero", &self.zero).finish()
    }
}

impl Forcing {
    pub fn new(f: impl Fn(&Point, f64) -> [f64; 3] + Send + Sync + 'static, time_dependent: bool) -> Self {
        Forcing { f: Arc::new(f), time_dependent, zero: false }
    }

    pub fn zero() -> Self {
        Forcing { f: Arc::new(|_, _| [0.0; 3]), time_dependent: false, zero: true }
    }

    pub fn constant(v: [f64; 3]) -> Self {
        Self::new(move |_, _| v, false)
    }

    pub fn eval(&self, x: &Point, t: f64) -> [f64; 3] {
        (self.f)(x, t)
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }
}

type InitialFn = dyn Fn(&Point) -> [f64; 3] + Send + Sync;

/// Initial velocity, given either as the full field `v0` or directly as its homogenized part.
#[derive(Clone)]
pub struct InitialVelocity {
    f: Arc<InitialFn>,
    pub homogenized: bool,
}

impl std::fmt::Debug for InitialVelocity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InitialVelocity").field("homogenized", &self.homogenized).finish()
    }
}

impl InitialVelocity {
    pub fn full(f: impl Fn(&Point) -> [f64; 3] + Send + Sync + 'static) -> Self {
        InitialVelocity { f: Arc::new(f), homogenized: false }
    }

    pub fn homogenized(f: impl Fn(&Point) -> [f64; 3] + Send + Sync + 'static) -> Self {
        InitialVelocity { f: Arc::new(f), homogenized: true }
    }

    /// `vtilde0 = 0`
    pub fn rest() -> Self {
        Self::homogenized(|_| [0.0; 3])
    }

    pub fn eval(&self, x: &Point) -> [f64; 3] {
        (self.f)(x)
    }
}

/// Physical inputs of a run.
#[derive(Debug, Clone)]
pub struct PhysicalData {
    pub viscosity: ViscosityModel,
    pub temperature: TemperatureField,
    pub friction: FrictionThreshold,
    pub force: Forcing,
    pub boundary: BoundaryData,
    pub initial: InitialVelocity,
    /// Amplitude of an initial-data perturbation scaled by `h + delta + eps`; zero by default.
    pub initial_perturbation: f64,
}

impl PhysicalData {
    /// Constant viscosity `mu`, no friction, no force, homogeneous data, fluid at rest.
    pub fn simple(mu: f64) -> Result<Self> {
        Ok(PhysicalData {
            viscosity: ViscosityModel::constant(mu)?,
            temperature: TemperatureField::constant(0.0),
            friction: FrictionThreshold::constant(0.0)?,
            force: Forcing::zero(),
            boundary: BoundaryData::zero(),
            initial: InitialVelocity::rest(),
            initial_perturbation: 0.0,
        })
    }
}

/// Solution at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub t: f64,
    pub step: usize,
    pub vtilde: FieldCoefficients,
    pub pressure: ScalarField,
}

/// Per-step scalar diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    /// `|vtilde|^2 / 2`
    pub energy: f64,
    pub norms: FieldNorms,
    pub div_norm: f64,
    /// `Psi_eps` of the homogenized trace at `t`.
    pub friction_value: f64,
    /// `Psi` (unregularized) of the same trace.
    pub friction_exact: f64,
    /// `<Psi_eps'(vtilde), v_T>` with the full velocity trace.
    pub friction_pairing: f64,
    pub nonlinear_iters: usize,
    pub residual: f64,
    pub used_fallback: bool,
    pub pressure_mean: f64,
    pub pressure_l2: f64,
    /// `|zeta| |div G0| / delta`
    pub lifting_pressure: f64,
    /// Left and right sides of the per-step energy inequality (NaN when not checked).
    pub energy_lhs: f64,
    pub energy_rhs: f64,
}

impl StepRecord {
    pub fn energy_ok(&self) -> bool {
        !(self.energy_lhs > self.energy_rhs * (1.0 + 1e-10) + 1e-300)
    }

    /// `|int p| / (|p|_{L2} |Omega|^(1/2))`, zero for a vanishing pressure.
    pub fn pressure_mean_relative(&self, volume: f64) -> f64 {
        let scale = self.pressure_l2 * volume.sqrt();
        if scale == 0.0 {
            0.0
        } else {
            self.pressure_mean.abs() / scale
        }
    }
}

/// Options of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    /// Keep every n-th state; 0 keeps only the initial and final states.
    pub snapshot_every: usize,
    /// Evaluate the per-step energy inequality (only meaningful for theta = 1).
    pub check_energy: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { snapshot_every: 0, check_energy: true }
    }
}

/// Output of a run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dt: f64,
    pub records: Vec<StepRecord>,
    pub snapshots: Vec<FlowState>,
    pub final_state: FlowState,
    /// Discrete Korn constant used for the energy check.
    pub korn: Option<f64>,
}

impl Trajectory {
    pub fn sup_l2(&self) -> f64 {
        self.records.iter().map(|r| r.norms.l2).fold(0.0, f64::max)
    }

    /// `(sum dt |div vtilde^n|^2)^(1/2)` over steps `1..=N`.
    pub fn div_l2l2(&self) -> f64 {
        (self.records.iter().skip(1).map(|r| self.dt * r.div_norm * r.div_norm).sum::<f64>()).sqrt()
    }

    pub fn l2h1(&self) -> f64 {
        (self.records.iter().skip(1).map(|r| self.dt * r.norms.h1().powi(2)).sum::<f64>()).sqrt()
    }

    pub fn pressure_l2l2(&self) -> f64 {
        (self.records.iter().skip(1).map(|r| self.dt * r.pressure_l2 * r.pressure_l2).sum::<f64>()).sqrt()
    }

    pub fn energy_ok(&self) -> bool {
        self.records.iter().all(|r| r.energy_ok())
    }
}

/// L2 projection of a vector function onto the constrained space.
pub fn project_initial(space: &DiscreteSpace, v0: impl Fn(&Point) -> [f64; 3]) -> Result<FieldCoefficients> {
    let mass = space.assemble_mass();
    project_with(space, &mass.lu()?, v0, None)
}

fn project_with(space: &DiscreteSpace, mass_lu: &LuSolver, v0: impl Fn(&Point) -> [f64; 3], minus: Option<&[f64]>) -> Result<FieldCoefficients> {
    let mut rhs = load_vector(space, v0);
    if let Some(g) = minus {
        let mg = mass_apply(space, g);
        rhs.iter_mut().zip(&mg).for_each(|(r, m)| *r -= m);
    }
    Ok(FieldCoefficients { values: mass_lu.solve(&rhs)? })
}

/// Cellwise divergence of a full field as a discontinuous field of one degree lower.
pub fn divergence_field(space: &DiscreteSpace, full: &[f64]) -> ScalarField {
    let d = space.dim();
    let p = space.degree();
    let per = if p == 1 { 1 } else { d + 1 };
    let mut values = Vec::with_capacity(space.mesh().num_cells() * per);
    let mut g = vec![[0.0; 3]; space.nloc()];
    for c in 0..space.mesh().num_cells() {
        let geo = space.cell_geometry(c);
        let nodes = space.cell_nodes(c);
        for k in 0..per {
            let mut lam = [0.0; 4];
            if p == 1 {
                lam[..=d].iter_mut().for_each(|l| *l = 1.0 / (d + 1) as f64);
            } else {
                lam[k] = 1.0;
            }
            shape_gradients(p, d, &lam, &geo.grad_lambda, &mut g);
            let mut div = 0.0;
            for (a, &node) in nodes.iter().enumerate() {
                for comp in 0..d {
                    div += full[node * d + comp] * g[a][comp];
                }
            }
            values.push(div);
        }
    }
    ScalarField { degree: p - 1, dim: d, values }
}

/// Pressure `-(1/delta) div vtilde`; the lifting's own divergence is reported separately.
pub fn recover_pressure(space: &DiscreteSpace, vtilde_full: &[f64], delta: f64) -> Result<ScalarField> {
    if !(delta > 0.0) {
        return Err(Error::InvalidInput(format!("penalty parameter must be positive, got {delta}")));
    }
    let mut p = divergence_field(space, vtilde_full);
    p.values.iter_mut().for_each(|v| *v *= -1.0 / delta);
    Ok(p)
}

/// Discrete Korn constant: smallest `u^T A u / |u|_{H1}^2` for `2 mu = 1`.
pub fn korn_constant(space: &DiscreteSpace) -> Result<f64> {
    let a = assemble_viscous(space, &ViscosityModel::constant(0.5)?, &TemperatureField::constant(0.0), 0.0);
    crate::linalg::smallest_generalized_eigenvalue(&a, &space.assemble_h1())
}

struct TimeParts {
    t: f64,
    zeta: f64,
    viscous: Arc<SparseMatrix>,
    /// `F(t)` on the free dofs.
    load: Vec<f64>,
    ell: Vec<f64>,
    f_l2_sq: f64,
}

/// Time integrator holding the assembled time-independent operators.
pub struct Solver<'a> {
    space: &'a DiscreteSpace,
    cfg: SolverConfig,
    data: &'a PhysicalData,
    lift: &'a Lifting,
    pattern: Arc<SparsePattern>,
    mass: SparseMatrix,
    mass_lu: LuSolver,
    penalty: SparseMatrix,
    coupling: Option<SparseMatrix>,
    lift_mass: Vec<f64>,
    lift_self: Vec<f64>,
    viscous_cache: Option<(Arc<SparseMatrix>, Vec<f64>)>,
    force_cache: Option<(Vec<f64>, f64)>,
    quad: FaceQuadrature,
    korn: Option<f64>,
    check_energy: bool,
}

impl<'a> Solver<'a> {
    pub fn new(space: &'a DiscreteSpace, cfg: SolverConfig, data: &'a PhysicalData, lift: &'a Lifting, check_energy: bool) -> Result<Self> {
        cfg.validate()?;
        if lift.g0.len() != space.num_full() {
            return Err(Error::DimensionMismatch { expected: space.num_full(), got: lift.g0.len() });
        }
        let pattern = space.pattern();
        let mass = space.assemble_mass();
        let mass_lu = mass.lu()?;
        let penalty = assemble_penalty(space);
        let zero_lift = lift.is_zero();
        let coupling = (!zero_lift).then(|| lifting_coupling_matrix(space, &pattern, &lift.g0));
        let lift_mass = if zero_lift { vec![0.0; space.num_free()] } else { mass_apply(space, &lift.g0) };
        let lift_self = if zero_lift { vec![0.0; space.num_free()] } else { self_convection_load(space, &lift.g0) };
        let quad = space.gamma0_quadrature(cfg.friction_quad_degree.unwrap_or(space.degree() + 3));
        let check_energy = check_energy && cfg.theta == 1.0;
        let korn = if check_energy { Some(korn_constant(space)?) } else { None };
        let mut s = Solver {
            space,
            cfg,
            data,
            lift,
            pattern,
            mass,
            mass_lu,
            penalty,
            coupling,
            lift_mass,
            lift_self,
            viscous_cache: None,
            force_cache: None,
            quad,
            korn,
            check_energy,
        };
        if !data.temperature.is_time_dependent() {
            s.viscous_cache = Some(s.viscous_at(0.0));
        }
        if !data.force.time_dependent {
            s.force_cache = Some(s.force_at(0.0));
        }
        Ok(s)
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn korn(&self) -> Option<f64> {
        self.korn
    }

    pub fn friction_quadrature(&self) -> &FaceQuadrature {
        &self.quad
    }

    fn viscous_at(&self, t: f64) -> (Arc<SparseMatrix>, Vec<f64>) {
        let a = assemble_viscous(self.space, &self.data.viscosity, &self.data.temperature, t);
        let ag = if self.lift.is_zero() {
            vec![0.0; self.space.num_free()]
        } else {
            viscous_apply(self.space, &self.data.viscosity, &self.data.temperature, t, &self.lift.g0)
        };
        (Arc::new(a), ag)
    }

    fn force_at(&self, t: f64) -> (Vec<f64>, f64) {
        if self.data.force.is_zero() {
            return (vec![0.0; self.space.num_free()], 0.0);
        }
        let f = &self.data.force;
        let v = load_vector(self.space, |x| f.eval(x, t));
        let n2 = self.space.integrate(self.space.default_quad_degree(), |view, q| {
            let y = f.eval(&view.points[q], t);
            y[0] * y[0] + y[1] * y[1] + y[2] * y[2]
        });
        (v, n2)
    }

    fn parts(&self, t: f64) -> Result<TimeParts> {
        let (viscous, ag) = match &self.viscous_cache {
            Some((a, ag)) => (a.clone(), ag.clone()),
            None => self.viscous_at(t),
        };
        let (fv, f_l2_sq) = match &self.force_cache {
            Some(c) => c.clone(),
            None => self.force_at(t),
        };
        let zeta = self.data.boundary.zeta.value(t);
        let zd = self.data.boundary.zeta.derivative(t);
        let load = (0..fv.len()).map(|i| fv[i] - zeta * ag[i] - zd * self.lift_mass[i] - zeta * zeta * self.lift_self[i]).collect();
        let ell = self.data.friction.samples(&self.quad, t)?;
        Ok(TimeParts { t, zeta, viscous, load, ell, f_l2_sq })
    }

    /// `N(u, t)` and optionally its Jacobian.
    fn operator(&self, u: &[f64], parts: &TimeParts, jacobian: bool) -> Result<(Vec<f64>, Option<SparseMatrix>)> {
        let full = self.space.dofs().expand(u);
        let (mut n, cj) = convection_residual(self.space, &self.pattern, &full, jacobian);
        let fr = evaluate_friction(self.space, &self.quad, &self.pattern, &full, &parts.ell, self.cfg.eps, jacobian)?;
        let pu = self.penalty.mul_vec(u);
        let au = parts.viscous.mul_vec(u);
        let bu = self.coupling.as_ref().map(|b| b.mul_vec(u));
        for i in 0..n.len() {
            n[i] += pu[i] / self.cfg.delta + au[i] + fr.gradient[i] - parts.load[i];
            if let Some(bu) = &bu {
                n[i] += parts.zeta * bu[i];
            }
        }
        let jac = if jacobian {
            let mut j = cj.unwrap();
            j.axpy(1.0 / self.cfg.delta, &self.penalty);
            j.axpy(1.0, &parts.viscous);
            j.axpy(1.0, fr.jacobian.as_ref().unwrap());
            if let Some(b) = &self.coupling {
                j.axpy(parts.zeta, b);
            }
            Some(j)
        } else {
            None
        };
        Ok((n, jac))
    }

    fn dual_norm(&self, r: &[f64]) -> Result<f64> {
        let y = self.mass_lu.solve(r)?;
        Ok(dot(r, &y).max(0.0).sqrt())
    }

    /// Initial homogenized state: L2 projection of `v0 - G0` (or of the homogenized data).
    pub fn initial_state(&self) -> Result<FlowState> {
        let init = &self.data.initial;
        let minus = (!init.homogenized && !self.lift.is_zero()).then_some(self.lift.g0.as_slice());
        let mut v = project_with(self.space, &self.mass_lu, |x| init.eval(x), minus)?;
        if self.data.initial_perturbation != 0.0 {
            let amp = self.data.initial_perturbation * (self.space.mesh().mesh_size() + self.cfg.delta + self.cfg.eps);
            let (lo, hi) = bounding_box(self.space);
            let bump = move |x: &Point| {
                let mut b = amp;
                for i in 0..3 {
                    if hi[i] > lo[i] {
                        b *= (std::f64::consts::PI * (x[i] - lo[i]) / (hi[i] - lo[i])).sin();
                    }
                }
                [b, 0.0, 0.0]
            };
            let pert = project_with(self.space, &self.mass_lu, bump, None)?;
            v.values.iter_mut().zip(&pert.values).for_each(|(a, b)| *a += b);
        }
        let full = self.space.dofs().expand(&v.values);
        Ok(FlowState { t: 0.0, step: 0, pressure: recover_pressure(self.space, &full, self.cfg.delta)?, vtilde: v })
    }

    /// Advances one step of length `dt`.
    pub fn step(&self, state: &FlowState) -> Result<(FlowState, StepRecord)> {
        let dt = self.cfg.dt;
        let theta = self.cfg.theta;
        let t1 = (state.step + 1) as f64 * dt;
        let un = &state.vtilde.values;
        let parts = self.parts(t1)?;
        let old = if theta < 1.0 {
            let p0 = self.parts(state.t)?;
            Some(self.operator(un, &p0, false)?.0)
        } else {
            None
        };
        let mun = self.mass.mul_vec(un);
        let residual = |u: &[f64], jac: bool| -> Result<(Vec<f64>, Option<SparseMatrix>)> {
            let (n, j) = self.operator(u, &parts, jac)?;
            let mu = self.mass.mul_vec(u);
            let mut r: Vec<f64> = (0..n.len()).map(|i| (mu[i] - mun[i]) / dt + theta * n[i]).collect();
            if let Some(o) = &old {
                r.iter_mut().zip(o).for_each(|(ri, oi)| *ri += (1.0 - theta) * oi);
            }
            let j = j.map(|mut j| {
                j.scale(theta);
                j.axpy(1.0 / dt, &self.mass);
                j
            });
            Ok((r, j))
        };
        // roundoff floor from the magnitudes of the individual terms
        let scale = self.dual_norm(&mun)? / dt
            + self.dual_norm(&parts.load)?
            + self.data.viscosity.mu_upper() * parts.zeta.abs() * self.lift.norms.h1()
            + parts.f_l2_sq.sqrt()
            + self.dual_norm(&parts.viscous.mul_vec(un))?;
        let floor = 1e-12 * scale;

        let newton = |u0: &[f64]| -> Result<(Vec<f64>, usize, f64)> {
            let mut u = u0.to_vec();
            let (mut r, _) = residual(&u, false)?;
            let mut rn = self.dual_norm(&r)?;
            let target = (self.cfg.nonlinear.tolerance * rn).max(floor);
            for it in 0..self.cfg.nonlinear.max_iters {
                if rn <= target {
                    return Ok((u, it, rn));
                }
                let (_, j) = residual(&u, true)?;
                let neg: Vec<f64> = r.iter().map(|v| -v).collect();
                let du = j.unwrap().lu()?.solve(&neg)?;
                let mut lambda = 1.0;
                loop {
                    let trial: Vec<f64> = u.iter().zip(&du).map(|(a, b)| a + lambda * b).collect();
                    let (rt, _) = residual(&trial, false)?;
                    let rtn = self.dual_norm(&rt)?;
                    if rtn <= (1.0 - 1e-4 * lambda) * rn || rtn <= target {
                        u = trial;
                        r = rt;
                        rn = rtn;
                        break;
                    }
                    lambda *= 0.5;
                    if lambda < 1.0 / 256.0 {
                        // stagnation at roundoff level counts as converged
                        if rn <= 100.0 * floor {
                            return Ok((u, it + 1, rn));
                        }
                        return Err(Error::NonConvergence { iterations: it + 1, residual: rn });
                    }
                }
            }
            if rn <= target {
                Ok((u, self.cfg.nonlinear.max_iters, rn))
            } else {
                Err(Error::NonConvergence { iterations: self.cfg.nonlinear.max_iters, residual: rn })
            }
        };

        let fixed_point = |u0: &[f64], max_iters: usize| -> Result<(Vec<f64>, usize, f64)> {
            let mut u = u0.to_vec();
            let (r, _) = residual(&u, false)?;
            let mut rn = self.dual_norm(&r)?;
            let target = (self.cfg.nonlinear.tolerance * rn).max(floor);
            let mut rhs: Vec<f64> = (0..mun.len()).map(|i| mun[i] / dt + theta * parts.load[i]).collect();
            if let Some(o) = &old {
                rhs.iter_mut().zip(o).for_each(|(ri, oi)| *ri -= (1.0 - theta) * oi);
            }
            for it in 0..max_iters {
                if rn <= target {
                    return Ok((u, it, rn));
                }
                let full = self.space.dofs().expand(&u);
                let mut k = convection_matrix(self.space, &self.pattern, &full);
                k.axpy(1.0 / self.cfg.delta, &self.penalty);
                k.axpy(1.0, &parts.viscous);
                k.axpy(1.0, &friction_lagged_matrix(self.space, &self.quad, &self.pattern, &full, &parts.ell, self.cfg.eps)?);
                if let Some(b) = &self.coupling {
                    k.axpy(parts.zeta, b);
                }
                k.scale(theta);
                k.axpy(1.0 / dt, &self.mass);
                u = k.lu()?.solve(&rhs)?;
                let (r, _) = residual(&u, false)?;
                rn = self.dual_norm(&r)?;
            }
            if rn <= target {
                Ok((u, max_iters, rn))
            } else {
                Err(Error::NonConvergence { iterations: max_iters, residual: rn })
            }
        };

        let (u, iters, rn, used_fallback) = match self.cfg.nonlinear.kind {
            NonlinearKind::Newton => match newton(un) {
                Ok((u, i, r)) => (u, i, r, false),
                Err(_) => {
                    let (u, i, r) = fixed_point(un, 4 * self.cfg.nonlinear.max_iters)?;
                    (u, i, r, true)
                }
            },
            NonlinearKind::FixedPoint => {
                let (u, i, r) = fixed_point(un, self.cfg.nonlinear.max_iters)?;
                (u, i, r, false)
            }
        };
        let full = self.space.dofs().expand(&u);
        let pressure = recover_pressure(self.space, &full, self.cfg.delta)?;
        let new_state = FlowState { t: t1, step: state.step + 1, vtilde: FieldCoefficients { values: u }, pressure };
        let mut rec = self.record(&new_state, &parts, iters, rn)?;
        rec.used_fallback = used_fallback;
        if self.check_energy {
            let (r, _) = residual(&new_state.vtilde.values, false)?;
            let ru = dot(&r, &new_state.vtilde.values).abs();
            let (lhs, rhs) = self.energy_sides(state, &rec, &parts, ru)?;
            rec.energy_lhs = lhs;
            rec.energy_rhs = rhs;
        }
        Ok((new_state, rec))
    }

    /// Per-step energy inequality at theta = 1, with the source terms split by Young's inequality
    /// and the algebraic residual pairing `|R(u) . u|` added to the right side.
    fn energy_sides(&self, prev: &FlowState, rec: &StepRecord, parts: &TimeParts, ru: f64) -> Result<(f64, f64)> {
        let alpha = self.data.viscosity.mu_lower() * self.korn.unwrap_or(0.0);
        let dt = self.cfg.dt;
        let n = &rec.norms;
        let prev_l2_sq = self.mass.quad_form(&prev.vtilde.values);
        let lhs = 0.5 * n.l2 * n.l2 + dt / self.cfg.delta * rec.div_norm * rec.div_norm + dt * 0.5 * alpha * n.h1().powi(2);
        let g = &self.lift.norms;
        let zeta = parts.zeta;
        let zd = self.data.boundary.zeta.derivative(parts.t);
        let mut s = 0.5 * parts.f_l2_sq + 1.5 * n.l2 * n.l2;
        if !self.lift.is_zero() {
            let mu_up = self.data.viscosity.mu_upper();
            let ku = if n.h1() > 0.0 { n.l4 / n.h1() } else { 0.0 };
            s += mu_up * mu_up / alpha * zeta * zeta * g.h1().powi(2)
                + 0.5 * zd * zd * g.l2 * g.l2
                + 0.5 * zeta.powi(4) * g.l4 * g.l4 * g.grad_l4 * g.grad_l4
                + ku * ku / alpha * zeta * zeta * g.grad_l4 * g.grad_l4 * n.l2 * n.l2
                + 0.5 * zeta.abs() * g.div_l2 * n.l4 * n.l4;
        }
        let rhs = 0.5 * prev_l2_sq + dt * s + dt * ru;
        Ok((lhs, rhs))
    }

    fn record(&self, state: &FlowState, parts: &TimeParts, iters: usize, residual: f64) -> Result<StepRecord> {
        let full = self.space.dofs().expand(&state.vtilde.values);
        let norms = self.space.field_norms(&full);
        let traces = self.space.trace_gamma0(&self.quad, &full);
        let friction_value = psi_eps_samples(&self.quad, &traces, &parts.ell, self.cfg.eps)?;
        let friction_exact = psi_exact_samples(&self.quad, &traces, &parts.ell);
        let mut pairing = 0.0;
        for q in 0..self.quad.len() {
            let u = traces[q];
            let s = self.data.boundary.s(&self.quad.points[q]);
            let dens = crate::forms::friction_density(&u, parts.ell[q], self.cfg.eps);
            let mut v = [0.0; 3];
            for c in 0..self.space.dim() - 1 {
                v[c] = u[c] + parts.zeta * s[c];
            }
            pairing += self.quad.weights[q] * (dens[0] * v[0] + dens[1] * v[1] + dens[2] * v[2]);
        }
        let mesh = self.space.mesh();
        Ok(StepRecord {
            step: state.step,
            t: state.t,
            energy: 0.5 * norms.l2 * norms.l2,
            norms,
            div_norm: norms.div_l2,
            friction_value,
            friction_exact,
            friction_pairing: pairing,
            nonlinear_iters: iters,
            residual,
            used_fallback: false,
            pressure_mean: state.pressure.integral(mesh),
            pressure_l2: state.pressure.l2_norm(mesh),
            lifting_pressure: parts.zeta.abs() * self.lift.div_residual / self.cfg.delta,
            energy_lhs: f64::NAN,
            energy_rhs: f64::NAN,
        })
    }

    /// Runs from the initial state to `tau`, calling `observer` after every step (and for step 0).
    pub fn run_observed(&self, opts: &RunOptions, observer: &mut dyn FnMut(&FlowState, &StepRecord)) -> Result<Trajectory> {
        let mut state = self.initial_state()?;
        let parts0 = self.parts(0.0)?;
        let rec0 = self.record(&state, &parts0, 0, 0.0)?;
        observer(&state, &rec0);
        let mut records = vec![rec0];
        let mut snapshots = vec![state.clone()];
        let n = self.cfg.num_steps();
        for k in 1..=n {
            let (next, rec) = self.step(&state)?;
            observer(&next, &rec);
            records.push(rec);
            if opts.snapshot_every > 0 && k % opts.snapshot_every == 0 && k != n {
                snapshots.push(next.clone());
            }
            state = next;
        }
        snapshots.push(state.clone());
        Ok(Trajectory { dt: self.cfg.dt, records, snapshots, final_state: state, korn: self.korn })
    }

    pub fn run(&self, opts: &RunOptions) -> Result<Trajectory> {
        self.run_observed(opts, &mut |_, _| {})
    }
}

fn bounding_box(space: &DiscreteSpace) -> ([f64; 3], [f64; 3]) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for v in space.mesh().vertices() {
        for i in 0..3 {
            lo[i] = lo[i].min(v[i]);
            hi[i] = hi[i].max(v[i]);
        }
    }
    (lo, hi)
}

/// Convenience wrapper: builds the solver and runs it.
pub fn run(space: &DiscreteSpace, cfg: SolverConfig, data: &PhysicalData, lift: &Lifting, opts: &RunOptions) -> Result<Trajectory> {
    Solver::new(space, cfg, data, lift, opts.check_energy)?.run(opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_mesh_with, Domain, HeightFunction, MeshOptions, Omega, Refinement};
    use crate::lifting::{build_lifting, LiftingOptions, TimeProfile};
    use crate::spaces::BottomCondition;

    fn mesh(res: usize) -> Arc<crate::geometry::Mesh> {
        let d = Domain::new(Omega::Interval { a: 0.0, b: 1.0 }, HeightFunction::constant(1.0).unwrap()).unwrap();
        Arc::new(build_mesh_with(&d, MeshOptions { resolution: res, refinement: Refinement::Barycentric }).unwrap())
    }

    fn cfg(dt: f64, tau: f64) -> SolverConfig {
        SolverConfig { delta: 1e-2, eps: 1e-2, dt, tau, ..Default::default() }
    }

    #[test]
    fn config_validation() {
        let c = SolverConfig { delta: 0.0, eps: -1.0, ..Default::default() };
        let v = c.violations();
        assert_eq!(v.len(), 2);
        assert!(SolverConfig { tau: 0.105, dt: 0.01, ..Default::default() }.validate().is_err());
        assert_eq!(SolverConfig { tau: 0.1, dt: 0.01, ..Default::default() }.num_steps(), 10);
        assert_eq!(SolverConfig { tau: 0.01, dt: 0.01, ..Default::default() }.num_steps(), 1);
    }

    #[test]
    fn rest_state_stays_zero() {
        let s = DiscreteSpace::new(mesh(2), 2).unwrap();
        let data = PhysicalData::simple(0.5).unwrap();
        let lift = Lifting::zero(&s);
        let tr = run(&s, cfg(0.01, 0.03), &data, &lift, &RunOptions::default()).unwrap();
        assert_eq!(tr.records.len(), 4);
        assert!(tr.final_state.vtilde.values.iter().all(|&v| v == 0.0));
        assert!(tr.final_state.pressure.values.iter().all(|&v| v == 0.0));
        assert!(tr.energy_ok());
    }

    #[test]
    fn couette_is_stationary_under_stick() {
        let s = DiscreteSpace::with_bottom(mesh(2), 2, BottomCondition::NoSlip).unwrap();
        let mut data = PhysicalData::simple(0.5).unwrap();
        data.boundary = BoundaryData::couette(2, 1.0, 1.0, TimeProfile::Constant).unwrap();
        data.initial = InitialVelocity::full(|x| [1.0 - x[1], 0.0, 0.0]);
        let lift = build_lifting(&s, &data.boundary, &LiftingOptions::default()).unwrap();
        let tr = run(&s, cfg(0.01, 0.05), &data, &lift, &RunOptions::default()).unwrap();
        for r in &tr.records {
            assert!(r.norms.h1() < 1e-10, "{}", r.norms.h1());
        }
        assert!(tr.energy_ok());
    }

    #[test]
    fn projection_properties() {
        let s = DiscreteSpace::new(mesh(2), 2).unwrap();
        // a field in the space is reproduced
        let free: Vec<f64> = (0..s.num_free()).map(|i| ((i * 37) % 11) as f64 / 11.0 - 0.5).collect();
        let full = s.dofs().expand(&free);
        let p = project_initial(&s, |x| s.eval_at(&full, x).unwrap()).unwrap();
        for (a, b) in p.values.iter().zip(&free) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(project_initial(&s, |_| [0.0; 3]).unwrap().values.iter().all(|&v| v == 0.0));
        let hf = |x: &Point| [(17.0 * x[0]).sin() * (13.0 * x[1]).cos(), (11.0 * x[0] * x[1]).sin(), 0.0];
        let p = project_initial(&s, hf).unwrap();
        let pn = s.field_norms(&s.dofs().expand(&p.values)).l2;
        let raw = s.integrate(8, |v, q| {
            let y = hf(&v.points[q]);
            y[0] * y[0] + y[1] * y[1]
        });
        assert!(pn <= raw.sqrt() + 1e-12);
    }

    #[test]
    fn pressure_of_constant_divergence() {
        let s = DiscreteSpace::new(mesh(1), 2).unwrap();
        let u = s.interpolate(|x| [0.5 * x[0], 0.5 * x[1], 0.0]);
        let p = recover_pressure(&s, &u.values, 0.1).unwrap();
        assert!(p.values.iter().all(|v| (v + 10.0).abs() < 1e-12));
        assert!(recover_pressure(&s, &u.values, 0.0).is_err());
    }

    #[test]
    fn driven_flow_energy_inequality_and_pressure_mean() {
        let s = DiscreteSpace::new(mesh(2), 2).unwrap();
        let mut data = PhysicalData::simple(0.5).unwrap();
        data.friction = FrictionThreshold::constant(0.5).unwrap();
        data.boundary = BoundaryData::new(|_| [0.0; 3], |x| [16.0 * x[0] * x[0] * (1.0 - x[0]).powi(2), 0.0, 0.0], TimeProfile::Cosine { omega: 2.0 }).unwrap();
        data.force = Forcing::constant([0.0, -10.0, 0.0]);
        data.initial = InitialVelocity::homogenized(|x| [0.0, (std::f64::consts::PI * x[0]).sin() * (std::f64::consts::PI * x[1]).sin(), 0.0]);
        let lift = build_lifting(&s, &data.boundary, &LiftingOptions::default()).unwrap();
        for kind in [NonlinearKind::Newton, NonlinearKind::FixedPoint] {
            let mut c = cfg(0.005, 0.02);
            c.nonlinear.kind = kind;
            c.nonlinear.max_iters = 60;
            let tr = run(&s, c, &data, &lift, &RunOptions::default()).unwrap();
            for r in &tr.records[1..] {
                assert!(r.energy_ok(), "{kind:?}: {} > {}", r.energy_lhs, r.energy_rhs);
                assert!(r.pressure_mean_relative(1.0) < 1e-10);
                assert!(r.friction_value >= 0.0);
            }
        }
    }
}

//! Computable checks of the a-priori estimates, parameter studies and friction-law residuals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::experiment::Experiment;
use crate::forms::{evaluate_friction, friction_density, psi_eps_samples, FrictionThreshold};
use crate::geometry::Point;
use crate::lifting::Lifting;
use crate::quadrature::gauss_legendre;
use crate::solver::{FlowState, PhysicalData, RunOptions, SolverConfig, StepRecord, Trajectory};
use crate::spaces::{shape_gradients, BottomCondition, DiscreteSpace, FaceQuadrature, ScalarField};

/// Least-squares line through `(log x, log y)` with a 95% confidence half-width on the slope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub ci_half_width: f64,
    pub points: usize,
}

/// `None` when fewer than three usable points (positive and finite) are given.
pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> Option<SlopeFit> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0 && x.is_finite() && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    let n = pts.len();
    if n < 3 {
        return None;
    }
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let se = (sse / (nf - 2.0) / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, nf - 2.0).map(|d| d.inverse_cdf(0.975)).unwrap_or(f64::NAN);
    Some(SlopeFit { slope, intercept, ci_half_width: t * se, points: n })
}

/// Composite Gauss rule on `[0, tau]`.
fn time_integral(tau: f64, f: impl Fn(f64) -> f64) -> f64 {
    let (xs, ws) = gauss_legendre(4);
    let m = 64;
    let h = tau / m as f64;
    let mut s = 0.0;
    for k in 0..m {
        for (x, w) in xs.iter().zip(&ws) {
            s += h * w * f((k as f64 + x) * h);
        }
    }
    s
}

/// Discrete surrogates of the continuous constants in the energy estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteConstants {
    /// Smallest `|D u|^2 / |u|_{H1}^2` on the space.
    pub korn: f64,
    /// Largest observed `|u|_{L4} / |u|_{H1}` over random fields (a lower bound of the embedding constant).
    pub sobolev_l4: f64,
}

/// Lower estimate of the `H1 -> L4` embedding constant from seeded random smooth and rough fields.
pub fn sobolev_l4_estimate(space: &DiscreteSpace, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = bounds(space);
    let d = space.dim();
    let mut best: f64 = 0.0;
    for k in 0..samples {
        let full = if k % 4 == 3 {
            let free: Vec<f64> = (0..space.num_free()).map(|_| rng.random_range(-1.0..1.0)).collect();
            space.dofs().expand(&free)
        } else {
            let modes: Vec<(usize, [f64; 3], [f64; 3])> = (0..3)
                .map(|_| {
                    let c = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                    let w = [rng.random_range(0.0..3.0), rng.random_range(0.0..3.0), rng.random_range(0.0..3.0)];
                    (rng.random_range(0..d), c, w)
                })
                .collect();
            let f = |x: &Point| {
                let mut cut = 1.0;
                for i in 0..d {
                    let s = (x[i] - lo[i]) / (hi[i] - lo[i]);
                    cut *= s * (1.0 - s);
                }
                let mut v = [0.0; 3];
                for (comp, c, w) in &modes {
                    let mut m = c[0];
                    for i in 0..d {
                        m *= (std::f64::consts::PI * w[i] * x[i] + c[1 + i.min(1)]).cos();
                    }
                    v[*comp] += cut * m;
                }
                v
            };
            let g = space.interpolate(f);
            space.dofs().expand(&space.dofs().restrict(&g.values))
        };
        let n = space.field_norms(&full);
        if n.h1() > 0.0 {
            best = best.max(n.l4 / n.h1());
        }
    }
    best
}

fn bounds(space: &DiscreteSpace) -> ([f64; 3], [f64; 3]) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for v in space.mesh().vertices() {
        for i in 0..3 {
            lo[i] = lo[i].min(v[i]);
            hi[i] = hi[i].max(v[i]);
        }
    }
    for i in 0..3 {
        if hi[i] <= lo[i] {
            hi[i] = lo[i] + 1.0;
        }
    }
    (lo, hi)
}

/// Estimate quantities of one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateReport {
    pub sup_l2: f64,
    pub l2h1: f64,
    pub div_l2l2: f64,
    pub c1: f64,
    pub c2: f64,
    /// `2 C1 exp(2 tau C2)`
    pub gronwall_bound: f64,
    pub safety_factor: f64,
    /// `(delta (C1 + C2 int |v|^2))^(1/2)`
    pub div_bound: f64,
    /// `(2 (C1 + C2 int |v|^2) / alpha)^(1/2)`
    pub h1_bound: f64,
    pub per_step_ok: bool,
    pub gronwall_ok: bool,
    pub div_ok: bool,
    pub h1_ok: bool,
}

/// Estimate report from a finished trajectory and the data that produced it.
pub fn energy_report(
    space: &DiscreteSpace,
    traj: &Trajectory,
    data: &PhysicalData,
    cfg: &SolverConfig,
    lift: &Lifting,
    constants: &DiscreteConstants,
    safety_factor: f64,
) -> EstimateReport {
    let tau = cfg.tau;
    let alpha = data.viscosity.mu_lower() * constants.korn;
    let k4 = constants.sobolev_l4.powi(4);
    let z = &data.boundary.zeta;
    let c0 = traj.records.first().map(|r| r.norms.l2).unwrap_or(0.0);
    let f2 = if data.force.is_zero() {
        0.0
    } else {
        time_integral(tau, |t| {
            space.integrate(space.default_quad_degree(), |v, q| {
                let y = data.force.eval(&v.points[q], t);
                y[0] * y[0] + y[1] * y[1] + y[2] * y[2]
            })
        })
    };
    let g = &lift.norms;
    let mu_up = data.viscosity.mu_upper();
    let (mut c1, mut c2) = (0.5 * c0 * c0 + 0.5 * f2, 1.5);
    if !lift.is_zero() {
        let z2 = time_integral(tau, |t| z.value(t).powi(2));
        let zd2 = time_integral(tau, |t| z.derivative(t).powi(2));
        let z4 = time_integral(tau, |t| z.value(t).powi(4));
        let zinf = (0..=2000).map(|k| z.value(tau * k as f64 / 2000.0).abs()).fold(0.0, f64::max);
        c1 += mu_up * mu_up / alpha * g.h1().powi(2) * z2
            + 0.5 * g.l2 * g.l2 * zd2
            + 0.5 * k4 * g.h1().powi(2) * g.grad_h1_broken.powi(2) * z4;
        c2 += k4 / alpha * g.grad_h1_broken.powi(2) * zinf * zinf;
    }
    let gronwall_bound = 2.0 * c1 * (2.0 * tau * c2).exp();
    let sup_l2 = traj.sup_l2();
    let int_l2: f64 = traj.records.iter().skip(1).map(|r| traj.dt * r.norms.l2 * r.norms.l2).sum();
    let budget = c1 + c2 * int_l2;
    let div_bound = (cfg.delta * budget).sqrt();
    let h1_bound = (2.0 * budget / alpha).sqrt();
    let (div_l2l2, l2h1) = (traj.div_l2l2(), traj.l2h1());
    EstimateReport {
        sup_l2,
        l2h1,
        div_l2l2,
        c1,
        c2,
        gronwall_bound,
        safety_factor,
        div_bound,
        h1_bound,
        per_step_ok: traj.energy_ok(),
        gronwall_ok: sup_l2 * sup_l2 <= gronwall_bound * safety_factor,
        div_ok: div_l2l2 <= div_bound * safety_factor,
        h1_ok: l2h1 <= h1_bound * safety_factor,
    }
}

/// Smooth space-time test functions `w_j(x) chi_k(t)`. The temporal factor is
/// `sin^2(k pi (t - t0) / (tau - t0))` on `[t0, tau]` and zero before `t0 = window_start * tau`,
/// so the initial penalty layer does not enter the pairing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PressureDictionary {
    pub spatial_modes: usize,
    pub temporal_modes: usize,
    pub window_start: f64,
}

impl Default for PressureDictionary {
    fn default() -> Self {
        PressureDictionary { spatial_modes: 3, temporal_modes: 3, window_start: 0.8 }
    }
}

impl PressureDictionary {
    fn temporal(&self, k: usize, t: f64, tau: f64) -> f64 {
        let t0 = self.window_start * tau;
        if t <= t0 {
            return 0.0;
        }
        (std::f64::consts::PI * (k + 1) as f64 * (t - t0) / (tau - t0)).sin().powi(2)
    }

    /// `|chi_k|_{H1(0, tau)}`
    fn temporal_norm(&self, k: usize, tau: f64) -> f64 {
        let len = tau * (1.0 - self.window_start);
        let kk = (k + 1) as f64 * std::f64::consts::PI / len;
        (3.0 * len / 8.0 + kk * kk * len / 2.0).sqrt()
    }

    fn spatial(&self, j: usize, x: &Point, lo: &[f64; 3], hi: &[f64; 3]) -> f64 {
        let a = (j % self.spatial_modes) as f64;
        let b = (j / self.spatial_modes + 1) as f64;
        let s = |i: usize| (x[i] - lo[i]) / (hi[i] - lo[i]);
        (std::f64::consts::PI * a * s(0)).cos() * (std::f64::consts::PI * b * s(1)).cos()
    }

    fn len(&self) -> usize {
        self.spatial_modes * self.spatial_modes
    }
}

/// Pressure summary of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PressureReport {
    /// Largest per-step `|int p| / (|p|_{L2} |Omega|^(1/2))`.
    pub max_mean_relative: f64,
    pub raw_l2l2: f64,
    /// `max |int int p w chi| / |w chi|_{H1(0,tau;L2)}` over the dictionary.
    pub weak_surrogate: f64,
}

fn integrate_scalar(space: &DiscreteSpace, p: &ScalarField, w: impl Fn(&Point) -> f64) -> f64 {
    let mesh = space.mesh();
    let quad = space.quadrature(6);
    let mut s = 0.0;
    for c in 0..mesh.num_cells() {
        let view = space.cell_view(&quad, c);
        for q in 0..view.nq {
            let x = view.points[q];
            s += view.weights[q] * p.eval(c, &mesh.barycentric(c, &x)) * w(&x);
        }
    }
    s
}

/// Pressure report from the stored snapshots; exact when every step was kept.
pub fn pressure_report(space: &DiscreteSpace, traj: &Trajectory, dict: &PressureDictionary) -> PressureReport {
    let volume = space.mesh().volume();
    let max_mean_relative = traj.records.iter().skip(1).map(|r| r.pressure_mean_relative(volume)).fold(0.0, f64::max);
    let tau = traj.final_state.t;
    let (lo, hi) = bounds(space);
    let nj = dict.len();
    let nk = dict.temporal_modes;
    let mut pair = vec![0.0; nj * nk];
    let mut prev = 0;
    for s in traj.snapshots.iter().filter(|s| s.step > 0) {
        let w = traj.dt * (s.step - prev) as f64;
        prev = s.step;
        for j in 0..nj {
            let pw = integrate_scalar(space, &s.pressure, |x| dict.spatial(j, x, &lo, &hi));
            for k in 0..nk {
                let chi = dict.temporal(k, s.t, tau);
                pair[j * nk + k] += w * chi * pw;
            }
        }
    }
    let mut weak: f64 = 0.0;
    for j in 0..nj {
        let wn = space
            .integrate(6, |v, q| dict.spatial(j, &v.points[q], &lo, &hi).powi(2))
            .sqrt();
        for k in 0..nk {
            let chi_norm = dict.temporal_norm(k, tau);
            weak = weak.max(pair[j * nk + k].abs() / (wn * chi_norm));
        }
    }
    PressureReport { max_mean_relative, raw_l2l2: traj.pressure_l2l2(), weak_surrogate: weak }
}

/// Friction-law state at one bottom quadrature point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrescaPoint {
    pub x: Point,
    pub weight: f64,
    pub threshold: f64,
    /// Relative tangential velocity `v_T - zeta s`.
    pub slip: [f64; 3],
    /// Regularized friction traction `-l u / sqrt(eps^2 + |u|^2)`.
    pub traction: [f64; 3],
    /// Tangential traction from `2 mu D(v) n` of the volume solution.
    pub reconstructed: [f64; 3],
    pub stick: bool,
}

impl TrescaPoint {
    pub fn slip_magnitude(&self) -> f64 {
        norm(&self.slip)
    }

    pub fn traction_magnitude(&self) -> f64 {
        norm(&self.traction)
    }
}

fn norm(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrescaReport {
    pub points: Vec<TrescaPoint>,
    pub stick_count: usize,
    pub slip_count: usize,
    /// `max (|sigma_T| - l)_+ + sum over slip points of w |sigma_T + l dir(slip)|`
    pub complementarity_residual: f64,
    pub max_traction_excess: f64,
    /// Largest angle (radians) between the traction and the reversed slip at slip points.
    pub max_angle: f64,
    /// `L2(Gamma0)` distance between the reconstructed and the regularized traction.
    pub reconstruction_gap: f64,
}

/// Tresca report of a state. A point sticks when its slip magnitude is at most `stick_factor * eps`.
#[allow(clippy::too_many_arguments)]
pub fn tresca_report(
    space: &DiscreteSpace,
    quad: &FaceQuadrature,
    state: &FlowState,
    data: &PhysicalData,
    lift: &Lifting,
    eps: f64,
    stick_factor: f64,
) -> Result<TrescaReport> {
    let d = space.dim();
    let full = space.dofs().expand(&state.vtilde.values);
    let zeta = data.boundary.zeta.value(state.t);
    let v = lift.reconstruct(&full, zeta);
    let ell = data.friction.samples(quad, state.t)?;
    let traces = space.trace_gamma0(quad, &full);
    let mut points = Vec::with_capacity(quad.len());
    let mut grads = vec![[0.0; 3]; space.nloc()];
    let (mut stick_count, mut slip_count) = (0, 0);
    let (mut excess, mut sum, mut max_angle, mut gap): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    for q in 0..quad.len() {
        let x = quad.points[q];
        let u = traces[q];
        let dens = friction_density(&u, ell[q], eps);
        let traction = [-dens[0], -dens[1], -dens[2]];
        // reconstructed traction (2 mu D(v) n)_T with n the outward normal of the bottom
        let c = quad.cells[q];
        let lam = space.mesh().barycentric(c, &x);
        shape_gradients(space.degree(), d, &lam, &space.cell_geometry(c).grad_lambda, &mut grads);
        let mut g = [[0.0; 3]; 3];
        for (a, &node) in space.cell_nodes(c).iter().enumerate() {
            for i in 0..d {
                for j in 0..d {
                    g[i][j] += v[node * d + i] * grads[a][j];
                }
            }
        }
        let mu = data.viscosity.mu(data.temperature.eval(&x, state.t));
        let n = quad.normals[q];
        let mut rec = [0.0; 3];
        for i in 0..d - 1 {
            for j in 0..d {
                rec[i] += mu * (g[i][j] + g[j][i]) * n[j];
            }
        }
        let su = norm(&u);
        let stick = su <= stick_factor * eps;
        let tm = norm(&traction);
        excess = excess.max(tm - ell[q]);
        if stick {
            stick_count += 1;
        } else {
            slip_count += 1;
            let dir = [u[0] / su, u[1] / su, u[2] / su];
            let dev = [traction[0] + ell[q] * dir[0], traction[1] + ell[q] * dir[1], traction[2] + ell[q] * dir[2]];
            sum += quad.weights[q] * norm(&dev);
            if tm > 0.0 {
                let cosang = -(traction[0] * dir[0] + traction[1] * dir[1] + traction[2] * dir[2]) / tm;
                max_angle = max_angle.max(cosang.clamp(-1.0, 1.0).acos());
            }
        }
        gap += quad.weights[q] * ((rec[0] - traction[0]).powi(2) + (rec[1] - traction[1]).powi(2) + (rec[2] - traction[2]).powi(2));
        points.push(TrescaPoint { x, weight: quad.weights[q], threshold: ell[q], slip: u, traction, reconstructed: rec, stick });
    }
    Ok(TrescaReport {
        points,
        stick_count,
        slip_count,
        complementarity_residual: excess.max(0.0) + sum,
        max_traction_excess: excess,
        max_angle,
        reconstruction_gap: gap.sqrt(),
    })
}

/// Largest observed `|Psi_eps'(u) - Psi_eps'(w)|_{L2(Gamma0)} / |u - w|_{L2(Gamma0)}` and its bound `2 d |l|_inf / eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzResult {
    pub max_ratio: f64,
    pub bound: f64,
    pub pairs: usize,
}

pub fn lipschitz_check(quad: &FaceQuadrature, dim: usize, ell: &FrictionThreshold, t: f64, eps: f64, trials: usize, seed: u64) -> Result<LipschitzResult> {
    if trials == 0 {
        return Err(Error::InvalidInput("at least one trial is required".into()));
    }
    let l = ell.samples(quad, t)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_ratio: f64 = 0.0;
    let mut pairs = 0;
    for k in 0..trials {
        let scale = [eps, 10.0 * eps, 1.0][k % 3];
        let mut num = 0.0;
        let mut den = 0.0;
        for q in 0..quad.len() {
            let mut u = [0.0; 3];
            let mut w = [0.0; 3];
            for c in 0..dim - 1 {
                u[c] = rng.random_range(-scale..scale);
                w[c] = rng.random_range(-scale..scale);
            }
            let (a, b) = (friction_density(&u, l[q], eps), friction_density(&w, l[q], eps));
            num += quad.weights[q] * ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2));
            den += quad.weights[q] * ((u[0] - w[0]).powi(2) + (u[1] - w[1]).powi(2) + (u[2] - w[2]).powi(2));
        }
        if den == 0.0 {
            continue;
        }
        pairs += 1;
        max_ratio = max_ratio.max((num / den).sqrt());
    }
    Ok(LipschitzResult { max_ratio, bound: crate::forms::friction_lipschitz_bound(dim, ell.sup_norm(), eps), pairs })
}

/// Central-difference check of the friction gradient: errors at `h` and `h/2` and their ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateauxResult {
    pub pairing: f64,
    pub error_h: f64,
    pub error_half: f64,
    pub ratio: f64,
}

pub fn gateaux_check(space: &DiscreteSpace, quad: &FaceQuadrature, ell: &[f64], eps: f64, h: f64, seed: u64) -> Result<GateauxResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: Vec<f64> = (0..space.num_free()).map(|_| rng.random_range(-2.0 * eps..2.0 * eps)).collect();
    let w: Vec<f64> = (0..space.num_free()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let pattern = space.pattern();
    let uf = space.dofs().expand(&u);
    let ev = evaluate_friction(space, quad, &pattern, &uf, ell, eps, false)?;
    let pairing = crate::linalg::dot(&ev.gradient, &w);
    let psi = |s: f64| -> Result<f64> {
        let shifted: Vec<f64> = u.iter().zip(&w).map(|(a, b)| a + s * b).collect();
        let full = space.dofs().expand(&shifted);
        psi_eps_samples(quad, &space.trace_gamma0(quad, &full), ell, eps)
    };
    let fd = |h: f64| -> Result<f64> { Ok((psi(h)? - psi(-h)?) / (2.0 * h)) };
    let error_h = (fd(h)? - pairing).abs();
    let error_half = (fd(0.5 * h)? - pairing).abs();
    Ok(GateauxResult { pairing, error_h, error_half, ratio: error_h / error_half })
}

/// Runs jobs on up to `workers` threads, preserving order.
pub fn run_parallel<T: Send, R: Send>(items: Vec<T>, workers: usize, f: impl Fn(T) -> R + Sync) -> Vec<R> {
    let n = items.len();
    let slots: Vec<std::sync::Mutex<Option<T>>> = items.into_iter().map(|t| std::sync::Mutex::new(Some(t))).collect();
    let results: Vec<std::sync::Mutex<Option<R>>> = (0..n).map(|_| std::sync::Mutex::new(None)).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..workers.max(1).min(n.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let item = slots[i].lock().expect("poisoned").take().expect("taken once");
                let r = f(item);
                *results[i].lock().expect("poisoned") = Some(r);
            });
        }
    });
    results.into_iter().map(|m| m.into_inner().expect("poisoned").expect("job finished")).collect()
}

/// One row of a parameter study.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub value: f64,
    pub metrics: Vec<(&'static str, f64)>,
    pub failure: Option<String>,
    /// Per-step records of the member run.
    pub records: Vec<StepRecord>,
}

impl StudyRow {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }
}

/// Table of a parameter sweep with a fitted log-log slope of one metric.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyTable {
    pub parameter: &'static str,
    pub fitted_metric: &'static str,
    pub rows: Vec<StudyRow>,
    pub fit: Option<SlopeFit>,
}

impl StudyTable {
    pub fn column(&self, name: &str) -> Vec<f64> {
        self.rows.iter().map(|r| r.metric(name).unwrap_or(f64::NAN)).collect()
    }

    fn refit(&mut self) {
        let xs: Vec<f64> = self.rows.iter().filter(|r| r.failure.is_none()).map(|r| r.value).collect();
        let ys: Vec<f64> = self.rows.iter().filter(|r| r.failure.is_none()).map(|r| r.metric(self.fitted_metric).unwrap_or(f64::NAN)).collect();
        self.fit = fit_loglog(&xs, &ys);
    }
}

fn check_sweep(values: &[f64], name: &str) -> Result<()> {
    if values.len() < 3 {
        return Err(Error::InvalidInput(format!("{name} study: ≥ 3 values required, got {}", values.len())));
    }
    if values.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidInput(format!("{name} study: values must be positive")));
    }
    Ok(())
}

struct Member {
    space: DiscreteSpace,
    lift: Lifting,
    traj: Trajectory,
}

fn run_member(e: &Experiment) -> Result<Member> {
    let (p, traj) = e.run(&RunOptions { snapshot_every: 1, check_energy: true })?;
    Ok(Member { space: p.space, lift: p.lift, traj })
}

/// `(sum dt |a^n - b^n|_{H1}^2)^(1/2)` over common steps of two runs on the same space.
fn cauchy_l2h1(space: &DiscreteSpace, a: &Trajectory, b: &Trajectory) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.snapshots.iter().zip(&b.snapshots).filter(|(x, _)| x.step > 0) {
        let diff: Vec<f64> = x.vtilde.values.iter().zip(&y.vtilde.values).map(|(p, q)| p - q).collect();
        s += a.dt * space.field_norms(&space.dofs().expand(&diff)).h1().powi(2);
    }
    s.sqrt()
}

/// Penalty sweep: divergence and pressure norms against `delta`.
pub fn delta_study(base: &Experiment, deltas: &[f64], workers: usize) -> Result<StudyTable> {
    check_sweep(deltas, "delta")?;
    let exps: Vec<Experiment> = deltas.iter().map(|&d| base.with_solver(|c| c.delta = d)).collect();
    let members = run_parallel(exps, workers, |e| run_member(&e));
    let dict = PressureDictionary::default();
    let mut rows = Vec::new();
    let mut prev: Option<&Member> = None;
    for (d, m) in deltas.iter().zip(&members) {
        match m {
            Ok(m) => {
                let pr = pressure_report(&m.space, &m.traj, &dict);
                let cauchy = prev.map(|p| cauchy_l2h1(&m.space, &p.traj, &m.traj)).unwrap_or(f64::NAN);
                rows.push(StudyRow {
                    value: *d,
                    metrics: vec![
                        ("div_l2l2", m.traj.div_l2l2()),
                        ("pressure_l2l2", pr.raw_l2l2),
                        ("pressure_weak", pr.weak_surrogate),
                        ("pressure_mean_max", pr.max_mean_relative),
                        ("sup_l2", m.traj.sup_l2()),
                        ("l2h1", m.traj.l2h1()),
                        ("cauchy_l2h1", cauchy),
                        ("lifting_div", m.lift.div_residual),
                        ("energy_ok", if m.traj.energy_ok() { 1.0 } else { 0.0 }),
                    ],
                    failure: None,
                    records: m.traj.records.clone(),
                });
                prev = Some(m);
            }
            Err(e) => {
                rows.push(StudyRow { value: *d, metrics: Vec::new(), failure: Some(e.to_string()), records: Vec::new() });
                prev = None;
            }
        }
    }
    let mut t = StudyTable { parameter: "delta", fitted_metric: "div_l2l2", rows, fit: None };
    t.refit();
    Ok(t)
}

/// Regularization sweep: friction functional gap against its bound, Tresca residual and solution differences.
pub fn eps_study(base: &Experiment, epsilons: &[f64], workers: usize) -> Result<StudyTable> {
    check_sweep(epsilons, "eps")?;
    let exps: Vec<Experiment> = epsilons.iter().map(|&e| base.with_solver(|c| c.eps = e)).collect();
    let members = run_parallel(exps, workers, |e| run_member(&e));
    let mut rows = Vec::new();
    let mut prev: Option<&Member> = None;
    for (eps, m) in epsilons.iter().zip(&members) {
        match m {
            Ok(m) => {
                let quad = m.space.gamma0_quadrature(base.solver.friction_quad_degree.unwrap_or(m.space.degree() + 3));
                let dt = m.traj.dt;
                let gap: f64 = m.traj.records.iter().skip(1).map(|r| dt * (r.friction_value - r.friction_exact).abs()).sum();
                let mut ell_sq = 0.0;
                for r in m.traj.records.iter().skip(1) {
                    let l = base.data.friction.samples(&quad, r.t)?;
                    ell_sq += dt * l.iter().zip(&quad.weights).map(|(a, w)| w * a * a).sum::<f64>();
                }
                let tau = m.traj.final_state.t;
                let bound = eps * ell_sq.sqrt() * (tau * quad.measure()).sqrt();
                let tr = tresca_report(&m.space, &quad, &m.traj.final_state, &base.data, &m.lift, *eps, 1.0)?;
                let cauchy = prev.map(|p| cauchy_l2h1(&m.space, &p.traj, &m.traj)).unwrap_or(f64::NAN);
                rows.push(StudyRow {
                    value: *eps,
                    metrics: vec![
                        ("functional_gap", gap),
                        ("gap_bound", bound),
                        ("complementarity", tr.complementarity_residual),
                        ("stick_points", tr.stick_count as f64),
                        ("slip_points", tr.slip_count as f64),
                        ("max_traction_excess", tr.max_traction_excess),
                        ("cauchy_l2h1", cauchy),
                        ("energy_ok", if m.traj.energy_ok() { 1.0 } else { 0.0 }),
                    ],
                    failure: None,
                    records: m.traj.records.clone(),
                });
                prev = Some(m);
            }
            Err(e) => {
                rows.push(StudyRow { value: *eps, metrics: Vec::new(), failure: Some(e.to_string()), records: Vec::new() });
                prev = None;
            }
        }
    }
    let mut t = StudyTable { parameter: "eps", fitted_metric: "complementarity", rows, fit: None };
    t.refit();
    Ok(t)
}

/// Comparison of a large-threshold run with the stick (Dirichlet) solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StickComparison {
    /// `|v_l - v_D,h|_{L2}` at the final time.
    pub difference: f64,
    /// `|v_D,h - v_D,h/2|_{L2}` at the final time.
    pub discretization: f64,
    pub slip_max: f64,
}

impl StickComparison {
    pub fn within(&self, factor: f64) -> bool {
        self.difference <= factor * self.discretization
    }
}

fn final_velocity(space: &DiscreteSpace, lift: &Lifting, traj: &Trajectory, data: &PhysicalData) -> Vec<f64> {
    let full = space.dofs().expand(&traj.final_state.vtilde.values);
    lift.reconstruct(&full, data.boundary.zeta.value(traj.final_state.t))
}

pub fn stick_limit_comparison(base: &Experiment, large_threshold: f64) -> Result<StickComparison> {
    let friction = base.with_data(|d| d.friction = FrictionThreshold::constant(large_threshold).expect("nonnegative"));
    let mut stick = base.clone();
    stick.bottom = BottomCondition::NoSlip;
    let mut fine = stick.clone();
    fine.mesh.resolution *= 2;
    let opts = RunOptions { snapshot_every: 0, check_energy: false };
    let runs = run_parallel(vec![friction, stick, fine], 3, |e| e.run(&opts));
    let mut it = runs.into_iter();
    let (pf, tf) = it.next().expect("three runs")?;
    let (ps, ts) = it.next().expect("three runs")?;
    let (ph, th) = it.next().expect("three runs")?;
    let vf = final_velocity(&pf.space, &pf.lift, &tf, &base.data);
    let vs = final_velocity(&ps.space, &ps.lift, &ts, &base.data);
    let vh = final_velocity(&ph.space, &ph.lift, &th, &base.data);
    let diff: Vec<f64> = vf.iter().zip(&vs).map(|(a, b)| a - b).collect();
    let difference = pf.space.field_norms(&diff).l2;
    let quad = ps.space.quadrature(2 * ps.space.degree() + 2);
    let mut disc = 0.0;
    for c in 0..ps.space.mesh().num_cells() {
        let view = ps.space.cell_view(&quad, c);
        for q in 0..view.nq {
            let a = view.value(&vs, q);
            let b = ph.space.eval_at(&vh, &view.points[q]).unwrap_or(a);
            disc += view.weights[q] * ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2));
        }
    }
    let gq = pf.space.default_gamma0_quadrature();
    let slip_max = pf
        .space
        .trace_gamma0(&gq, &pf.space.dofs().expand(&tf.final_state.vtilde.values))
        .iter()
        .map(norm)
        .fold(0.0, f64::max);
    Ok(StickComparison { difference, discretization: disc.sqrt(), slip_max })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_fit_exact_line() {
        let xs = [1e-2, 1e-3, 1e-4];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.sqrt()).collect();
        let f = fit_loglog(&xs, &ys).unwrap();
        assert!((f.slope - 0.5).abs() < 1e-12);
        assert!(f.ci_half_width < 1e-9);
        assert!(fit_loglog(&xs[..2], &ys[..2]).is_none());
        assert!(fit_loglog(&xs, &[0.0, 0.0, 0.0]).is_none());
    }

    #[test]
    fn parallel_preserves_order() {
        let r = run_parallel((0..17).collect(), 4, |i: usize| i * i);
        assert_eq!(r, (0..17).map(|i| i * i).collect::<Vec<_>>());
    }

    #[test]
    fn sweep_needs_three_values() {
        let e = crate::experiment::rest();
        let err = delta_study(&e, &[1e-2, 1e-3], 1).unwrap_err();
        assert!(err.to_string().contains("≥ 3 values required"));
    }

    #[test]
    fn temporal_norm_matches_quadrature() {
        let d = PressureDictionary::default();
        let tau = 0.3;
        let h = 1e-6;
        let t0 = d.window_start * tau;
        assert_eq!(d.temporal(0, 0.5 * t0, tau), 0.0);
        for k in 0..3 {
            let v = time_integral(tau - t0, |s| d.temporal(k, t0 + s, tau).powi(2));
            let g = time_integral(tau - t0, |s| ((d.temporal(k, t0 + s + h, tau) - d.temporal(k, t0 + s - h, tau)) / (2.0 * h)).powi(2));
            assert!(((v + g).sqrt() - d.temporal_norm(k, tau)).abs() < 1e-6 * d.temporal_norm(k, tau));
        }
    }

    #[test]
    fn time_integral_of_polynomial() {
        assert!((time_integral(2.0, |t| t * t) - 8.0 / 3.0).abs() < 1e-13);
    }
}

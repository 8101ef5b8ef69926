//! Bilinear and trilinear forms, the divergence penalty and the regularized friction functional.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::linalg::{SparseMatrix, SparsePattern};
use crate::spaces::{DiscreteSpace, DofMap, FaceQuadrature, NONE};

/// Temperature dependence of the viscosity.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ViscosityKind {
    Constant { mu: f64 },
    /// `mu0 + slope * T`
    Affine { mu0: f64, slope: f64 },
    /// `mu0 * exp(-beta * (T - t_ref))`, clamped into the declared bounds.
    Exponential { mu0: f64, beta: f64, t_ref: f64 },
}

/// Viscosity law with declared bounds `mu_lower <= 2 mu(T) <= mu_upper`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViscosityModel {
    pub kind: ViscosityKind,
    mu_lower: f64,
    mu_upper: f64,
}

impl ViscosityModel {
    /// Checks the bounds over the declared temperature range.
    pub fn new(kind: ViscosityKind, mu_lower: f64, mu_upper: f64, temperature_range: (f64, f64)) -> Result<Self> {
        if !(mu_lower > 0.0) || !(mu_upper >= mu_lower) || !mu_upper.is_finite() {
            return Err(Error::InvalidInput(format!(
                "viscosity bounds must satisfy 0 < lower <= upper, got [{mu_lower}, {mu_upper}]"
            )));
        }
        let m = ViscosityModel { kind, mu_lower, mu_upper };
        match kind {
            ViscosityKind::Exponential { mu0, beta, .. } => {
                if !(mu0 > 0.0) || !beta.is_finite() {
                    return Err(Error::InvalidInput("exponential viscosity needs mu0 > 0 and finite beta".into()));
                }
            }
            _ => {
                let (t0, t1) = temperature_range;
                for k in 0..=200 {
                    let t = t0 + (t1 - t0) * k as f64 / 200.0;
                    let two_mu = 2.0 * m.raw(t);
                    if !(two_mu >= mu_lower * (1.0 - 1e-14) && two_mu <= mu_upper * (1.0 + 1e-14)) {
                        return Err(Error::InvalidInput(format!(
                            "2 mu(T) = {two_mu} at T = {t} violates the bounds [{mu_lower}, {mu_upper}]"
                        )));
                    }
                }
            }
        }
        Ok(m)
    }

    pub fn constant(mu: f64) -> Result<Self> {
        Self::new(ViscosityKind::Constant { mu }, 2.0 * mu, 2.0 * mu, (0.0, 0.0))
    }

    fn raw(&self, t: f64) -> f64 {
        match self.kind {
            ViscosityKind::Constant { mu } => mu,
            ViscosityKind::Affine { mu0, slope } => mu0 + slope * t,
            ViscosityKind::Exponential { mu0, beta, t_ref } => mu0 * (-beta * (t - t_ref)).exp(),
        }
    }

    /// Viscosity at temperature `t`.
    pub fn mu(&self, t: f64) -> f64 {
        let v = self.raw(t);
        match self.kind {
            ViscosityKind::Exponential { .. } => v.clamp(0.5 * self.mu_lower, 0.5 * self.mu_upper),
            _ => v,
        }
    }

    /// Lower bound on `2 mu`.
    pub fn mu_lower(&self) -> f64 {
        self.mu_lower
    }

    /// Upper bound on `2 mu`.
    pub fn mu_upper(&self) -> f64 {
        self.mu_upper
    }
}

type ScalarField = dyn Fn(&Point, f64) -> f64 + Send + Sync;

/// Prescribed temperature `T(x, t)` with declared bounds.
#[derive(Clone)]
pub struct TemperatureField {
    f: Arc<ScalarField>,
    bounds: (f64, f64),
    time_dependent: bool,
}

impl std::fmt::Debug for TemperatureField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TemperatureField").field("bounds", &self.bounds).finish()
    }
}

impl TemperatureField {
    pub fn new(f: impl Fn(&Point, f64) -> f64 + Send + Sync + 'static, bounds: (f64, f64), time_dependent: bool) -> Self {
        TemperatureField { f: Arc::new(f), bounds, time_dependent }
    }

    pub fn constant(t: f64) -> Self {
        Self::new(move |_, _| t, (t, t), false)
    }

    pub fn eval(&self, x: &Point, t: f64) -> f64 {
        (self.f)(x, t)
    }

    pub fn bounds(&self) -> (f64, f64) {
        self.bounds
    }

    pub fn is_time_dependent(&self) -> bool {
        self.time_dependent
    }
}

type BoundaryScalar = dyn Fn(f64, &Point) -> f64 + Send + Sync;

/// Friction threshold `l(t, x')` on the bottom wall, nonnegative with a declared sup norm.
#[derive(Clone)]
pub struct FrictionThreshold {
    f: Arc<BoundaryScalar>,
    sup: f64,
}

impl std::fmt::Debug for FrictionThreshold {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FrictionThreshold").field("sup", &self.sup).finish()
    }
}

impl FrictionThreshold {
    pub fn new(f: impl Fn(f64, &Point) -> f64 + Send + Sync + 'static, sup: f64) -> Result<Self> {
        if !(sup >= 0.0) || !sup.is_finite() {
            return Err(Error::InvalidInput(format!("friction threshold sup norm must be finite and >= 0, got {sup}")));
        }
        Ok(FrictionThreshold { f: Arc::new(f), sup })
    }

    pub fn constant(l: f64) -> Result<Self> {
        if l < 0.0 {
            return Err(Error::InvalidInput(format!("friction threshold must be nonnegative, got {l}")));
        }
        Self::new(move |_, _| l, l)
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup
    }

    pub fn eval(&self, t: f64, x: &Point) -> f64 {
        (self.f)(t, x)
    }

    /// Values at the bottom quadrature points; negative or oversized values are rejected.
    pub fn samples(&self, quad: &FaceQuadrature, t: f64) -> Result<Vec<f64>> {
        quad.points
            .iter()
            .map(|x| {
                let l = self.eval(t, x);
                if !(l >= 0.0) {
                    Err(Error::InvalidInput(format!("friction threshold negative ({l}) at t = {t}, x = {x:?}")))
                } else if l > self.sup * (1.0 + 1e-12) {
                    Err(Error::InvalidInput(format!("friction threshold {l} exceeds declared sup {}", self.sup)))
                } else {
                    Ok(l)
                }
            })
            .collect()
    }
}

/// `int 2 mu(T) D(u):D(w)` on the constrained space.
pub fn assemble_viscous(space: &DiscreteSpace, visc: &ViscosityModel, temp: &TemperatureField, t: f64) -> SparseMatrix {
    assemble_viscous_on(space, space.dofs(), &space.pattern(), visc, temp, t, None).0
}

/// Viscous matrix on `map`, optionally returning `-K_{free,fixed} g` for fixed values `g`.
pub fn assemble_viscous_on(
    space: &DiscreteSpace,
    map: &DofMap,
    pattern: &Arc<SparsePattern>,
    visc: &ViscosityModel,
    temp: &TemperatureField,
    t: f64,
    fixed: Option<&[f64]>,
) -> (SparseMatrix, Vec<f64>) {
    let d = space.dim();
    let nloc = space.nloc();
    let nl = nloc * d;
    space.assemble_matrix(map, pattern, 2 * space.degree(), fixed, |v, m| {
        for q in 0..v.nq {
            let w = v.weights[q] * visc.mu(temp.eval(&v.points[q], t));
            for a in 0..nloc {
                let ga = v.dn(q, a);
                for b in 0..nloc {
                    let gb = v.dn(q, b);
                    let g = ga[0] * gb[0] + ga[1] * gb[1] + ga[2] * gb[2];
                    for c in 0..d {
                        m[(a * d + c) * nl + b * d + c] += w * g;
                        for e in 0..d {
                            m[(a * d + c) * nl + b * d + e] += w * ga[e] * gb[c];
                        }
                    }
                }
            }
        }
    })
}

/// `a(T; g, w)` for a full nodal field `g` and every free test function `w`.
pub fn viscous_apply(space: &DiscreteSpace, visc: &ViscosityModel, temp: &TemperatureField, t: f64, g: &[f64]) -> Vec<f64> {
    let d = space.dim();
    space.assemble_vector(space.dofs(), 2 * space.degree(), |v, out| {
        for q in 0..v.nq {
            let w = v.weights[q] * visc.mu(temp.eval(&v.points[q], t));
            let gr = v.grad(g, q);
            for a in 0..v.nloc {
                let dn = v.dn(q, a);
                for c in 0..d {
                    let mut s = 0.0;
                    for j in 0..d {
                        s += (gr[c][j] + gr[j][c]) * dn[j];
                    }
                    out[a * d + c] += w * s;
                }
            }
        }
    })
}

/// `int div u div w` on the constrained space.
pub fn assemble_penalty(space: &DiscreteSpace) -> SparseMatrix {
    assemble_penalty_on(space, space.dofs(), &space.pattern(), None).0
}

pub fn assemble_penalty_on(space: &DiscreteSpace, map: &DofMap, pattern: &Arc<SparsePattern>, fixed: Option<&[f64]>) -> (SparseMatrix, Vec<f64>) {
    let d = space.dim();
    let nloc = space.nloc();
    let nl = nloc * d;
    let qdeg = 2 * (space.degree() - 1);
    space.assemble_matrix(map, pattern, qdeg, fixed, |v, m| {
        for q in 0..v.nq {
            let w = v.weights[q];
            for a in 0..nloc {
                let ga = v.dn(q, a);
                for b in 0..nloc {
                    let gb = v.dn(q, b);
                    for c in 0..d {
                        for e in 0..d {
                            m[(a * d + c) * nl + b * d + e] += w * ga[c] * gb[e];
                        }
                    }
                }
            }
        }
    })
}

/// Gradient (H1 seminorm) matrix on an arbitrary dof map.
pub fn assemble_gradient_on(space: &DiscreteSpace, map: &DofMap, pattern: &Arc<SparsePattern>, fixed: Option<&[f64]>) -> (SparseMatrix, Vec<f64>) {
    let d = space.dim();
    let nloc = space.nloc();
    space.assemble_matrix(map, pattern, 2 * space.degree(), fixed, |v, m| crate::spaces::gradient_kernel(v, d, nloc, m))
}

fn trilinear<F>(space: &DiscreteSpace, u: &[f64], v: &[f64], w: &[f64], mut f: F) -> f64
where
    F: FnMut([f64; 3], [[f64; 3]; 3], [f64; 3], [f64; 3]) -> f64,
{
    space.integrate(space.default_quad_degree(), |view, q| {
        let uu = view.value(u, q);
        let gu = view.grad(u, q);
        let vv = view.value(v, q);
        let gv = view.grad(v, q);
        let ww = view.value(w, q);
        let mut conv = [0.0; 3];
        for j in 0..3 {
            conv[j] = uu[0] * gv[j][0] + uu[1] * gv[j][1] + uu[2] * gv[j][2];
        }
        f(conv, gu, vv, ww)
    })
}

/// `b(u, v, w) = int u_i d_i v_j w_j` for full nodal fields.
pub fn plain_convection(space: &DiscreteSpace, u: &[f64], v: &[f64], w: &[f64]) -> f64 {
    trilinear(space, u, v, w, |conv, _, _, ww| conv[0] * ww[0] + conv[1] * ww[1] + conv[2] * ww[2])
}

/// `int div(u) (v . w)` for full nodal fields.
pub fn divergence_coupling(space: &DiscreteSpace, u: &[f64], v: &[f64], w: &[f64]) -> f64 {
    trilinear(space, u, v, w, |_, gu, vv, ww| (gu[0][0] + gu[1][1] + gu[2][2]) * (vv[0] * ww[0] + vv[1] * ww[1] + vv[2] * ww[2]))
}

/// Skew-corrected convection `b(u, v, w) + 1/2 int div(u) (v . w)`.
pub fn convection_apply(space: &DiscreteSpace, u: &[f64], v: &[f64], w: &[f64]) -> f64 {
    trilinear(space, u, v, w, |conv, gu, vv, ww| {
        let div_u = gu[0][0] + gu[1][1] + gu[2][2];
        (0..3).map(|j| (conv[j] + 0.5 * div_u * vv[j]) * ww[j]).sum()
    })
}

/// Corrected convection `c(u; u, w)` for every free `w` and, optionally, its Jacobian in `u`.
pub fn convection_residual(space: &DiscreteSpace, pattern: &Arc<SparsePattern>, u: &[f64], jacobian: bool) -> (Vec<f64>, Option<SparseMatrix>) {
    let d = space.dim();
    let nloc = space.nloc();
    let nl = nloc * d;
    let map = space.dofs();
    let res = space.assemble_vector(map, space.default_quad_degree(), |v, out| {
        for q in 0..v.nq {
            let w = v.weights[q];
            let uu = v.value(u, q);
            let gu = v.grad(u, q);
            let div_u: f64 = (0..d).map(|i| gu[i][i]).sum();
            for c in 0..d {
                let conv: f64 = (0..d).map(|i| uu[i] * gu[c][i]).sum();
                let val = w * (conv + 0.5 * div_u * uu[c]);
                for a in 0..nloc {
                    out[a * d + c] += val * v.n(q, a);
                }
            }
        }
    });
    if !jacobian {
        return (res, None);
    }
    let (jac, _) = space.assemble_matrix(map, pattern, space.default_quad_degree(), None, |v, m| {
        for q in 0..v.nq {
            let w = v.weights[q];
            let uu = v.value(u, q);
            let gu = v.grad(u, q);
            let div_u: f64 = (0..d).map(|i| gu[i][i]).sum();
            for a in 0..nloc {
                let na = w * v.n(q, a);
                for b in 0..nloc {
                    let nb = v.n(q, b);
                    let gb = v.dn(q, b);
                    let adv: f64 = (0..d).map(|i| uu[i] * gb[i]).sum();
                    for c in 0..d {
                        m[(a * d + c) * nl + b * d + c] += na * (adv + 0.5 * div_u * nb);
                        for e in 0..d {
                            m[(a * d + c) * nl + b * d + e] += na * (nb * gu[c][e] + 0.5 * gb[e] * uu[c]);
                        }
                    }
                }
            }
        }
    });
    (res, Some(jac))
}

/// Matrix of `w, z -> c(u; z, w)` with the advecting field frozen.
pub fn convection_matrix(space: &DiscreteSpace, pattern: &Arc<SparsePattern>, u: &[f64]) -> SparseMatrix {
    let d = space.dim();
    let nloc = space.nloc();
    let nl = nloc * d;
    space
        .assemble_matrix(space.dofs(), pattern, space.default_quad_degree(), None, |v, m| {
            for q in 0..v.nq {
                let w = v.weights[q];
                let uu = v.value(u, q);
                let gu = v.grad(u, q);
                let div_u: f64 = (0..d).map(|i| gu[i][i]).sum();
                for a in 0..nloc {
                    let na = w * v.n(q, a);
                    for b in 0..nloc {
                        let gb = v.dn(q, b);
                        let adv: f64 = (0..d).map(|i| uu[i] * gb[i]).sum();
                        let val = na * (adv + 0.5 * div_u * v.n(q, b));
                        for c in 0..d {
                            m[(a * d + c) * nl + b * d + c] += val;
                        }
                    }
                }
            }
        })
        .0
}

/// Matrix of `w, z -> b(g, z, w) + b(z, g, w)` for a fixed full field `g` (the lifting).
pub fn lifting_coupling_matrix(space: &DiscreteSpace, pattern: &Arc<SparsePattern>, g: &[f64]) -> SparseMatrix {
    let d = space.dim();
    let nloc = space.nloc();
    let nl = nloc * d;
    space
        .assemble_matrix(space.dofs(), pattern, space.default_quad_degree(), None, |v, m| {
            for q in 0..v.nq {
                let w = v.weights[q];
                let gg = v.value(g, q);
                let gr = v.grad(g, q);
                for a in 0..nloc {
                    let na = w * v.n(q, a);
                    for b in 0..nloc {
                        let nb = v.n(q, b);
                        let gb = v.dn(q, b);
                        let adv: f64 = (0..d).map(|i| gg[i] * gb[i]).sum();
                        for c in 0..d {
                            m[(a * d + c) * nl + b * d + c] += na * adv;
                            for e in 0..d {
                                m[(a * d + c) * nl + b * d + e] += na * nb * gr[c][e];
                            }
                        }
                    }
                }
            }
        })
        .0
}

/// `b(g, g, w)` for every free `w`.
pub fn self_convection_load(space: &DiscreteSpace, g: &[f64]) -> Vec<f64> {
    let d = space.dim();
    space.assemble_vector(space.dofs(), space.default_quad_degree(), |v, out| {
        for q in 0..v.nq {
            let w = v.weights[q];
            let gg = v.value(g, q);
            let gr = v.grad(g, q);
            for c in 0..d {
                let conv: f64 = (0..d).map(|i| gg[i] * gr[c][i]).sum();
                for a in 0..v.nloc {
                    out[a * d + c] += w * conv * v.n(q, a);
                }
            }
        }
    })
}

/// `(g, w)` for every free `w`.
pub fn mass_apply(space: &DiscreteSpace, g: &[f64]) -> Vec<f64> {
    let d = space.dim();
    space.assemble_vector(space.dofs(), 2 * space.degree(), |v, out| {
        for q in 0..v.nq {
            let gg = v.value(g, q);
            for a in 0..v.nloc {
                let na = v.weights[q] * v.n(q, a);
                for c in 0..d {
                    out[a * d + c] += na * gg[c];
                }
            }
        }
    })
}

/// `(f(., t), w)` for every free `w`.
pub fn load_vector<F: Fn(&Point) -> [f64; 3]>(space: &DiscreteSpace, f: F) -> Vec<f64> {
    let d = space.dim();
    space.assemble_vector(space.dofs(), space.default_quad_degree(), |v, out| {
        for q in 0..v.nq {
            let fx = f(&v.points[q]);
            for a in 0..v.nloc {
                let na = v.weights[q] * v.n(q, a);
                for c in 0..d {
                    out[a * d + c] += na * fx[c];
                }
            }
        }
    })
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidInput(format!("regularization parameter must be positive, got {eps}")));
    }
    Ok(())
}

fn norm3(u: &[f64; 3]) -> f64 {
    (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt()
}

/// Pointwise friction density `l u / sqrt(eps^2 + |u|^2)`; its norm never exceeds `l`.
pub fn friction_density(u: &[f64; 3], ell: f64, eps: f64) -> [f64; 3] {
    let s = ell / (eps * eps + u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
    [s * u[0], s * u[1], s * u[2]]
}

/// Jacobian of the unit density: `delta_ij / r - u_i u_j / r^3` with `r = sqrt(eps^2 + |u|^2)`.
pub fn friction_density_jacobian(u: &[f64; 3], eps: f64) -> [[f64; 3]; 3] {
    let r2 = eps * eps + u[0] * u[0] + u[1] * u[1] + u[2] * u[2];
    let r = r2.sqrt();
    let r3 = r2 * r;
    let mut j = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            j[a][b] = if a == b { 1.0 / r } else { 0.0 } - u[a] * u[b] / r3;
        }
    }
    j
}

/// `Psi_eps(u) = int l sqrt(eps^2 + |u|^2)` from sampled traces.
pub fn psi_eps_samples(quad: &FaceQuadrature, traces: &[[f64; 3]], ell: &[f64], eps: f64) -> Result<f64> {
    check_eps(eps)?;
    Ok(traces
        .iter()
        .zip(ell)
        .zip(&quad.weights)
        .map(|((u, l), w)| w * l * (eps * eps + u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt())
        .sum())
}

/// `Psi(u) = int l |u|` from sampled traces.
pub fn psi_exact_samples(quad: &FaceQuadrature, traces: &[[f64; 3]], ell: &[f64]) -> f64 {
    traces.iter().zip(ell).zip(&quad.weights).map(|((u, l), w)| w * l * norm3(u)).sum()
}

/// Friction functional, gradient and Jacobian for a field in the constrained space.
#[derive(Debug, Clone)]
pub struct FrictionEval {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub jacobian: Option<SparseMatrix>,
}

/// Evaluates `Psi_eps` of the tangential trace of `full` (plus an optional trace shift) together
/// with its gradient on the free dofs and, optionally, its Jacobian.
pub fn evaluate_friction(
    space: &DiscreteSpace,
    quad: &FaceQuadrature,
    pattern: &Arc<SparsePattern>,
    full: &[f64],
    ell: &[f64],
    eps: f64,
    jacobian: bool,
) -> Result<FrictionEval> {
    check_eps(eps)?;
    let d = space.dim();
    let map = space.dofs();
    let traces = space.trace_gamma0(quad, full);
    let value = psi_eps_samples(quad, &traces, ell, eps)?;
    let mut gradient = vec![0.0; map.num_free()];
    let mut jac = jacobian.then(|| SparseMatrix::zeros(pattern.clone()));
    let nloc = space.nloc();
    let mut idx = vec![NONE; nloc * d];
    for q in 0..quad.len() {
        let nodes = space.cell_nodes(quad.cells[q]);
        for (a, &node) in nodes.iter().enumerate() {
            for c in 0..d {
                idx[a * d + c] = if c < d - 1 { map.free_of(node * d + c).unwrap_or(NONE) } else { NONE };
            }
        }
        let w = quad.weights[q] * ell[q];
        if w == 0.0 {
            continue;
        }
        let dens = friction_density(&traces[q], 1.0, eps);
        for a in 0..nloc {
            let na = quad.n(q, a);
            if na == 0.0 {
                continue;
            }
            for c in 0..d - 1 {
                if idx[a * d + c] != NONE {
                    gradient[idx[a * d + c]] += w * dens[c] * na;
                }
            }
        }
        if let Some(m) = jac.as_mut() {
            let jd = friction_density_jacobian(&traces[q], eps);
            for a in 0..nloc {
                let na = quad.n(q, a);
                for b in 0..nloc {
                    let nb = quad.n(q, b);
                    if na == 0.0 || nb == 0.0 {
                        continue;
                    }
                    for c in 0..d - 1 {
                        let i = idx[a * d + c];
                        if i == NONE {
                            continue;
                        }
                        for e in 0..d - 1 {
                            let j = idx[b * d + e];
                            if j != NONE {
                                m.add(i, j, w * jd[c][e] * na * nb);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(FrictionEval { value, gradient, jacobian: jac })
}

/// Lagged friction matrix `int l/sqrt(eps^2 + |u_k|^2) z . w` for fixed-point iterations.
pub fn friction_lagged_matrix(
    space: &DiscreteSpace,
    quad: &FaceQuadrature,
    pattern: &Arc<SparsePattern>,
    full: &[f64],
    ell: &[f64],
    eps: f64,
) -> Result<SparseMatrix> {
    check_eps(eps)?;
    let d = space.dim();
    let map = space.dofs();
    let traces = space.trace_gamma0(quad, full);
    let mut m = SparseMatrix::zeros(pattern.clone());
    for q in 0..quad.len() {
        let u = &traces[q];
        let s = quad.weights[q] * ell[q] / (eps * eps + u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
        if s == 0.0 {
            continue;
        }
        let nodes = space.cell_nodes(quad.cells[q]);
        for (a, &na_node) in nodes.iter().enumerate() {
            let na = quad.n(q, a);
            for (b, &nb_node) in nodes.iter().enumerate() {
                let nb = quad.n(q, b);
                if na == 0.0 || nb == 0.0 {
                    continue;
                }
                for c in 0..d - 1 {
                    if let (Some(i), Some(j)) = (map.free_of(na_node * d + c), map.free_of(nb_node * d + c)) {
                        m.add(i, j, s * na * nb);
                    }
                }
            }
        }
    }
    Ok(m)
}

/// Lipschitz bound `2 d |l|_inf / eps` of the friction density.
pub fn friction_lipschitz_bound(dim: usize, ell_sup: f64, eps: f64) -> f64 {
    2.0 * dim as f64 * ell_sup / eps
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_mesh_with, Domain, HeightFunction, MeshOptions, Omega, Refinement};
    use crate::linalg::generalized_eigenvalues;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn space(res: usize, refine: Refinement) -> DiscreteSpace {
        let h = HeightFunction::new(|x| 1.0 + 0.2 * x[0] * (1.0 - x[0]), 1.0, 1.05, 0.2).unwrap();
        let d = Domain::new(Omega::Interval { a: 0.0, b: 1.0 }, h).unwrap();
        let m = build_mesh_with(&d, MeshOptions { resolution: res, refinement: refine }).unwrap();
        DiscreteSpace::new(Arc::new(m), 2).unwrap()
    }

    fn random_field(s: &DiscreteSpace, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let free: Vec<f64> = (0..s.num_free()).map(|_| rng.random_range(-1.0..1.0)).collect();
        s.dofs().expand(&free)
    }

    #[test]
    fn viscosity_bounds() {
        assert!(ViscosityModel::new(ViscosityKind::Constant { mu: 0.25 }, 0.5, 2.0, (0.0, 1.0)).is_ok());
        assert!(ViscosityModel::new(ViscosityKind::Constant { mu: 2.0 }, 0.5, 2.0, (0.0, 1.0)).is_err());
        assert!(ViscosityModel::new(ViscosityKind::Affine { mu0: 0.5, slope: -1.0 }, 0.1, 2.0, (0.0, 1.0)).is_err());
        let e = ViscosityModel::new(ViscosityKind::Exponential { mu0: 1.0, beta: 5.0, t_ref: 0.0 }, 0.4, 1.6, (0.0, 1.0)).unwrap();
        for t in [-10.0, 0.0, 0.3, 10.0] {
            let two_mu = 2.0 * e.mu(t);
            assert!((0.4..=1.6).contains(&two_mu));
        }
    }

    #[test]
    fn convection_identity_and_skew() {
        let s = space(3, Refinement::None);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let (u, v, w) = (random_field(&s, &mut rng), random_field(&s, &mut rng), random_field(&s, &mut rng));
            let b1 = plain_convection(&s, &u, &v, &w);
            let b2 = plain_convection(&s, &u, &w, &v);
            let dc = divergence_coupling(&s, &u, &v, &w);
            let scale = b1.abs() + b2.abs() + dc.abs();
            assert!((b1 + b2 + dc).abs() <= 1e-12 * scale);
            let skew = convection_apply(&s, &u, &v, &v);
            let scale = plain_convection(&s, &u, &v, &v).abs() + divergence_coupling(&s, &u, &v, &v).abs();
            assert!(skew.abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn convection_jacobian_matches_finite_differences() {
        let s = space(2, Refinement::None);
        let pat = s.pattern();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_field(&s, &mut rng);
        let dz: Vec<f64> = s.dofs().restrict(&random_field(&s, &mut rng));
        let (r0, jac) = convection_residual(&s, &pat, &u, true);
        let jac = jac.unwrap();
        let h = 1e-6;
        let dz_full = s.dofs().expand(&dz);
        let up: Vec<f64> = u.iter().zip(&dz_full).map(|(a, b)| a + h * b).collect();
        let um: Vec<f64> = u.iter().zip(&dz_full).map(|(a, b)| a - h * b).collect();
        let (rp, _) = convection_residual(&s, &pat, &up, false);
        let (rm, _) = convection_residual(&s, &pat, &um, false);
        let jd = jac.mul_vec(&dz);
        for i in 0..r0.len() {
            let fd = (rp[i] - rm[i]) / (2.0 * h);
            assert!((fd - jd[i]).abs() < 1e-7 * (1.0 + jd[i].abs()), "{i}: {fd} vs {}", jd[i]);
        }
        // frozen matrix reproduces the residual
        let c = convection_matrix(&s, &pat, &u);
        let cu = c.mul_vec(&s.dofs().restrict(&u));
        for (a, b) in cu.iter().zip(&r0) {
            assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn viscous_form_symmetric_and_coercive() {
        let s = space(2, Refinement::None);
        let visc = ViscosityModel::new(ViscosityKind::Affine { mu0: 0.5, slope: 0.25 }, 0.9, 1.6, (0.0, 1.0)).unwrap();
        let temp = TemperatureField::new(|x, _| x[0] * x[1], (0.0, 1.05), false);
        let a = assemble_viscous(&s, &visc, &temp, 0.0);
        assert!(a.max_asymmetry() < 1e-14);
        let h1 = s.assemble_h1();
        let ev = generalized_eigenvalues(&a.to_dense(), &h1.to_dense()).unwrap();
        assert!(ev[0] > 0.0);
        assert!(*ev.last().unwrap() <= visc.mu_upper() * (1.0 + 1e-12));
        // applying the matrix to a constrained field equals the field-based apply
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = random_field(&s, &mut rng);
        let au = a.mul_vec(&s.dofs().restrict(&u));
        let au2 = viscous_apply(&s, &visc, &temp, 0.0, &u);
        for (x, y) in au.iter().zip(&au2) {
            assert!((x - y).abs() < 1e-12 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn penalty_psd_and_vanishes_on_divergence_free() {
        let s = space(2, Refinement::Barycentric);
        let p = assemble_penalty(&s);
        assert!(p.max_asymmetry() < 1e-13);
        let ev = crate::linalg::symmetric_eigenvalues(&p.to_dense()).unwrap();
        assert!(ev[0] > -1e-10 * ev.last().unwrap());
        // a quadratic divergence-free field is reproduced exactly, boundary dofs included
        let map = s.unconstrained_map();
        let pat = s.build_pattern(&map);
        let (pu, _) = assemble_penalty_on(&s, &map, &pat, None);
        let g = s.interpolate(|x| [x[1] * x[1] + x[0], x[0] * x[0] - x[1], 0.0]);
        let gn = crate::linalg::norm2(&g.values);
        assert!(pu.quad_form(&g.values).abs() < 1e-12 * gn * gn);
        let g = s.interpolate(|x| [x[0] * x[0], 0.0, 0.0]);
        assert!(pu.quad_form(&g.values) > 0.1);
    }

    #[test]
    fn friction_density_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let u = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), 0.0];
            let ell = rng.random_range(0.0..3.0);
            let eps = 10f64.powf(rng.random_range(-3.0..0.0));
            let d = friction_density(&u, ell, eps);
            assert!(norm3(&d) <= ell * (1.0 + 1e-15));
            let j = friction_density_jacobian(&u, eps);
            for r in j {
                for v in r {
                    assert!(v.abs() <= 2.0 / eps);
                }
            }
        }
        let d = friction_density(&[0.0; 3], 1.0, 0.1);
        assert_eq!(d, [0.0; 3]);
    }

    #[test]
    fn friction_functional_examples() {
        let s = space(4, Refinement::None);
        let quad = s.default_gamma0_quadrature();
        let meas = quad.measure();
        let ell = vec![1.0; quad.len()];
        let zero = vec![[0.0; 3]; quad.len()];
        let v = psi_eps_samples(&quad, &zero, &ell, 0.1).unwrap();
        assert!((v - 0.1 * meas).abs() < 1e-14);
        assert!(psi_eps_samples(&quad, &zero, &ell, 0.0).is_err());
        let c = vec![[0.3, 0.4, 0.0]; quad.len()];
        let v = psi_eps_samples(&quad, &c, &ell, 1e-3).unwrap();
        assert!((v - (0.25f64 + 1e-6).sqrt() * meas).abs() < 1e-13);
        assert!((psi_exact_samples(&quad, &c, &ell) - 0.5 * meas).abs() < 1e-14);
    }

    #[test]
    fn friction_gradient_and_jacobian_match_finite_differences() {
        let s = space(3, Refinement::None);
        let quad = s.default_gamma0_quadrature();
        let pat = s.pattern();
        let ell: Vec<f64> = quad.points.iter().map(|x| 0.5 + x[0]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random_field(&s, &mut rng);
        let eps = 0.05;
        let ev = evaluate_friction(&s, &quad, &pat, &u, &ell, eps, true).unwrap();
        let dz = s.dofs().restrict(&random_field(&s, &mut rng));
        let dzf = s.dofs().expand(&dz);
        let h = 1e-6;
        let shift = |sgn: f64| -> Vec<f64> { u.iter().zip(&dzf).map(|(a, b)| a + sgn * h * b).collect() };
        let ep = evaluate_friction(&s, &quad, &pat, &shift(1.0), &ell, eps, false).unwrap();
        let em = evaluate_friction(&s, &quad, &pat, &shift(-1.0), &ell, eps, false).unwrap();
        let fd = (ep.value - em.value) / (2.0 * h);
        let an = crate::linalg::dot(&ev.gradient, &dz);
        assert!((fd - an).abs() < 1e-7 * (1.0 + an.abs()));
        let jd = ev.jacobian.as_ref().unwrap().mul_vec(&dz);
        for i in 0..jd.len() {
            let fdi = (ep.gradient[i] - em.gradient[i]) / (2.0 * h);
            assert!((fdi - jd[i]).abs() < 1e-6 * (1.0 + jd[i].abs()));
        }
        let jac = ev.jacobian.unwrap();
        assert!(jac.max_asymmetry() < 1e-14);
        let evs = crate::linalg::symmetric_eigenvalues(&jac.to_dense()).unwrap();
        assert!(evs[0] > -1e-12);
    }
}

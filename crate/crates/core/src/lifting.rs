//! Divergence-free extension of the boundary data into the domain.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::forms::{assemble_gradient_on, assemble_penalty_on};
use crate::geometry::{BoundaryTag, Point};
use crate::spaces::{BottomCondition, DiscreteSpace, FieldNorms};

/// Time profile `zeta` multiplying the boundary data, with `zeta(0) = 1`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeProfile {
    Constant,
    /// `1 + slope * t`
    Affine { slope: f64 },
    /// `cos(omega * t)`
    Cosine { omega: f64 },
    /// `exp(rate * t)`
    Exponential { rate: f64 },
    /// `1 + amplitude * sin(omega * t)`
    Sinusoidal { amplitude: f64, omega: f64 },
    /// Piecewise linear through `(times[i], values[i])`, constant past the last knot.
    Tabulated { times: Vec<f64>, values: Vec<f64> },
}

impl TimeProfile {
    pub fn validate(&self) -> Result<()> {
        if let TimeProfile::Tabulated { times, values } = self {
            if times.len() != values.len() || times.len() < 2 {
                return Err(Error::InvalidInput("tabulated profile needs at least two (time, value) pairs".into()));
            }
            if times[0] != 0.0 || times.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::InvalidInput("tabulated profile times must start at 0 and increase".into()));
            }
        }
        let z0 = self.value(0.0);
        if z0 != 1.0 {
            return Err(Error::InvalidInput(format!("time profile must satisfy ζ(0)=1, got {z0}")));
        }
        Ok(())
    }

    pub fn value(&self, t: f64) -> f64 {
        match self {
            TimeProfile::Constant => 1.0,
            TimeProfile::Affine { slope } => 1.0 + slope * t,
            TimeProfile::Cosine { omega } => (omega * t).cos(),
            TimeProfile::Exponential { rate } => (rate * t).exp(),
            TimeProfile::Sinusoidal { amplitude, omega } => 1.0 + amplitude * (omega * t).sin(),
            TimeProfile::Tabulated { times, values } => {
                let k = segment(times, t);
                if t >= *times.last().unwrap() {
                    return *values.last().unwrap();
                }
                let s = (t - times[k]) / (times[k + 1] - times[k]);
                values[k] + s * (values[k + 1] - values[k])
            }
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            TimeProfile::Constant => 0.0,
            TimeProfile::Affine { slope } => *slope,
            TimeProfile::Cosine { omega } => -omega * (omega * t).sin(),
            TimeProfile::Exponential { rate } => rate * (rate * t).exp(),
            TimeProfile::Sinusoidal { amplitude, omega } => amplitude * omega * (omega * t).cos(),
            TimeProfile::Tabulated { times, values } => {
                if t >= *times.last().unwrap() {
                    return 0.0;
                }
                let k = segment(times, t);
                (values[k + 1] - values[k]) / (times[k + 1] - times[k])
            }
        }
    }
}

fn segment(times: &[f64], t: f64) -> usize {
    times.partition_point(|&x| x <= t).saturating_sub(1).min(times.len() - 2)
}

type VectorFn = dyn Fn(&Point) -> [f64; 3] + Send + Sync;

/// Lateral data `g`, bottom shear `s` (tangential components first) and time profile `zeta`.
#[derive(Clone)]
pub struct BoundaryData {
    g: Arc<VectorFn>,
    s: Arc<VectorFn>,
    pub zeta: TimeProfile,
    zero: bool,
}

impl std::fmt::Debug for BoundaryData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BoundaryData").field("zeta", &self.zeta).field("zero", &self.zero).finish()
    }
}

impl BoundaryData {
    pub fn new(
        g: impl Fn(&Point) -> [f64; 3] + Send + Sync + 'static,
        s: impl Fn(&Point) -> [f64; 3] + Send + Sync + 'static,
        zeta: TimeProfile,
    ) -> Result<Self> {
        zeta.validate()?;
        Ok(BoundaryData { g: Arc::new(g), s: Arc::new(s), zeta, zero: false })
    }

    /// Homogeneous data.
    pub fn zero() -> Self {
        BoundaryData { g: Arc::new(|_| [0.0; 3]), s: Arc::new(|_| [0.0; 3]), zeta: TimeProfile::Constant, zero: true }
    }

    /// Plane Couette data `(speed (1 - y / height), 0)` driven by the bottom wall.
    pub fn couette(dim: usize, speed: f64, height: f64, zeta: TimeProfile) -> Result<Self> {
        let d = dim;
        Self::new(move |x| {
            let mut v = [0.0; 3];
            v[0] = speed * (1.0 - x[d - 1] / height);
            v
        }, move |_| [speed, 0.0, 0.0], zeta)
    }

    /// Parabolic inflow/outflow `(4 u y (H - y) / H^2, 0)` with no bottom shear.
    pub fn poiseuille(dim: usize, peak: f64, height: f64, zeta: TimeProfile) -> Result<Self> {
        let d = dim;
        Self::new(move |x| {
            let y = x[d - 1];
            [4.0 * peak * y * (height - y) / (height * height), 0.0, 0.0]
        }, |_| [0.0; 3], zeta)
    }

    pub fn g(&self, x: &Point) -> [f64; 3] {
        (self.g)(x)
    }

    pub fn s(&self, x: &Point) -> [f64; 3] {
        (self.s)(x)
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }

    /// `int_{Gamma_L} g . n` by high-order quadrature, together with the boundary measure and velocity scale.
    pub fn lateral_flux(&self, space: &DiscreteSpace) -> (f64, f64, f64) {
        let quad = space.boundary_quadrature(BoundaryTag::GammaL, 10);
        let mut flux = 0.0;
        let mut scale: f64 = 0.0;
        for ((x, n), w) in quad.points.iter().zip(&quad.normals).zip(&quad.weights) {
            let g = self.g(x);
            flux += w * (g[0] * n[0] + g[1] * n[1] + g[2] * n[2]);
            scale = scale.max(g.iter().map(|v| v.abs()).fold(0.0, f64::max));
        }
        (flux, quad.measure(), scale)
    }
}

/// Settings of the lifting construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiftingOptions {
    /// Residual tolerance relative to `|G0|_{H1}`.
    pub relative_tolerance: f64,
    /// Penalty weight of the augmented Lagrangian iteration, relative to the gradient term.
    pub penalty: f64,
    pub max_iterations: usize,
    /// Tolerance on the net lateral flux, relative to boundary measure times velocity scale.
    pub compatibility_tolerance: f64,
    /// Whether a residual above tolerance is an error.
    pub strict: bool,
}

impl Default for LiftingOptions {
    fn default() -> Self {
        LiftingOptions { relative_tolerance: 1e-8, penalty: 1e4, max_iterations: 200, compatibility_tolerance: 1e-10, strict: true }
    }
}

/// Discrete extension `G0` of the boundary data.
#[derive(Debug, Clone)]
pub struct Lifting {
    /// Full nodal coefficients, nonzero on the boundary.
    pub g0: Vec<f64>,
    /// `|div G0|_{L2}`
    pub div_residual: f64,
    pub tolerance: f64,
    /// Amplitude of the normal correction added on the lateral wall to cancel the interpolated flux.
    pub flux_correction: f64,
    pub iterations: usize,
    pub norms: FieldNorms,
}

impl Lifting {
    pub fn zero(space: &DiscreteSpace) -> Self {
        Lifting {
            g0: vec![0.0; space.num_full()],
            div_residual: 0.0,
            tolerance: 0.0,
            flux_correction: 0.0,
            iterations: 0,
            norms: FieldNorms::default(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.g0.iter().all(|&v| v == 0.0)
    }

    /// Reconstructed velocity `vtilde + zeta G0` from a full homogenized field.
    pub fn reconstruct(&self, vtilde_full: &[f64], zeta: f64) -> Vec<f64> {
        vtilde_full.iter().zip(&self.g0).map(|(v, g)| v + zeta * g).collect()
    }
}

/// `(zeta(t) G0, zeta'(t) G0)`
pub fn lifting_time_slice(lift: &Lifting, data: &BoundaryData, t: f64) -> (Vec<f64>, Vec<f64>) {
    let (z, zd) = (data.zeta.value(t), data.zeta.derivative(t));
    (lift.g0.iter().map(|g| z * g).collect(), lift.g0.iter().map(|g| zd * g).collect())
}

/// Boundary values of the lifting at every node: `g` on the lateral wall, zero on the top and
/// `(s, 0)` on the bottom, with corner conflicts checked.
fn boundary_values(space: &DiscreteSpace, data: &BoundaryData) -> Result<(Vec<f64>, Vec<bool>)> {
    let d = space.dim();
    let n = space.num_nodes();
    let mut vals = vec![0.0; n * d];
    let mut fixed = vec![false; n];
    let mut scale: f64 = 0.0;
    let mut conflicts = Vec::new();
    for i in 0..n {
        let on = space.node_boundary(i);
        if !(on[0] || on[1] || on[2]) {
            continue;
        }
        fixed[i] = true;
        let x = space.node(i);
        let bottom = {
            let s = data.s(&x);
            let mut b = [0.0; 3];
            b[..d - 1].copy_from_slice(&s[..d - 1]);
            b
        };
        let v = if on[2] {
            let g = data.g(&x);
            if on[0] {
                conflicts.push((x, (0..d).map(|c| (g[c] - bottom[c]).abs()).fold(0.0, f64::max)));
            }
            if on[1] {
                conflicts.push((x, g[..d].iter().map(|v| v.abs()).fold(0.0, f64::max)));
            }
            g
        } else if on[1] {
            [0.0; 3]
        } else {
            bottom
        };
        scale = scale.max(v[..d].iter().map(|a| a.abs()).fold(0.0, f64::max));
        vals[i * d..(i + 1) * d].copy_from_slice(&v[..d]);
    }
    let tol = 1e-8 * scale.max(1e-300);
    if let Some((x, gap)) = conflicts.iter().find(|(_, gap)| *gap > tol) {
        return Err(Error::BoundaryData(format!(
            "boundary traces conflict at corner {:?}: mismatch {gap:e} between lateral data and bottom/top values",
            &x[..d]
        )));
    }
    Ok((vals, fixed))
}

/// Builds the lifting: boundary dofs from the data, interior dofs minimizing `|grad G|^2` subject
/// to `div G = 0` through an augmented Lagrangian iteration.
pub fn build_lifting(space: &DiscreteSpace, data: &BoundaryData, opts: &LiftingOptions) -> Result<Lifting> {
    if data.is_zero() {
        return Ok(Lifting::zero(space));
    }
    let d = space.dim();
    let (flux, meas, vscale) = data.lateral_flux(space);
    if flux.abs() > opts.compatibility_tolerance * meas * vscale.max(1.0) {
        return Err(Error::BoundaryData(format!(
            "incompatible lateral data: net flux {flux:e} violates ∫_{{Γ_L}} g·n = 0"
        )));
    }
    let (mut g, fixed) = boundary_values(space, data)?;

    // cancel the flux of the interpolated trace with a normal correction on the lateral wall
    let quad = space.boundary_quadrature(BoundaryTag::GammaL, 2 * space.degree() + 2);
    let discrete_flux = |g: &[f64]| -> f64 {
        space
            .face_values(&quad, g)
            .iter()
            .zip(&quad.normals)
            .zip(&quad.weights)
            .map(|((u, n), w)| w * (u[0] * n[0] + u[1] * n[1] + u[2] * n[2]))
            .sum()
    };
    let fh = discrete_flux(&g);
    let mut flux_correction = 0.0;
    if fh.abs() > 1e-13 * meas * vscale.max(1e-300) {
        let mut phi = vec![0.0; g.len()];
        let mut normal_sum = vec![[0.0; 3]; space.num_nodes()];
        for (f, face) in (0..space.mesh().num_faces()).map(|f| (f, space.mesh().face(f))) {
            if space.mesh().face_tag(f) != BoundaryTag::GammaL {
                continue;
            }
            let nrm = space.mesh().face_normal(f);
            for &v in face {
                for c in 0..3 {
                    normal_sum[v][c] += nrm[c];
                }
            }
        }
        for i in 0..space.num_nodes() {
            let on = space.node_boundary(i);
            if !on[2] || on[0] || on[1] {
                continue;
            }
            // edge nodes inherit the normal of the face they lie on
            let nrm = if i < space.mesh().num_vertices() { normal_sum[i] } else { lateral_normal(space, i) };
            let len = (nrm[0] * nrm[0] + nrm[1] * nrm[1] + nrm[2] * nrm[2]).sqrt();
            if len > 0.0 {
                for c in 0..d {
                    phi[i * d + c] = nrm[c] / len;
                }
            }
        }
        let fphi = discrete_flux(&phi);
        if fphi.abs() < 1e-14 {
            return Err(Error::BoundaryData("cannot correct the interpolated lateral flux on this mesh".into()));
        }
        let c = -fh / fphi;
        flux_correction = c.abs();
        for (gi, p) in g.iter_mut().zip(&phi) {
            *gi += c * p;
        }
    }

    let map = space.dof_map_for(BottomCondition::NoSlip);
    for i in 0..space.num_nodes() {
        debug_assert_eq!(fixed[i], map.free_of(i * d).is_none());
    }
    let pattern = space.build_pattern(&map);
    let (k, rk) = assemble_gradient_on(space, &map, &pattern, Some(&g));
    let (p, rp) = assemble_penalty_on(space, &map, &pattern, Some(&g));
    let r = opts.penalty;
    let mut a = k.clone();
    a.axpy(r, &p);
    let lu = a.lu()?;
    let mut w_free = vec![0.0; map.num_free()];
    let mut full = g.clone();
    let mut best = f64::INFINITY;
    let mut stalled = 0;
    let mut iterations = 0;
    let mut residual = space.field_norms(&full).div_l2;
    for it in 1..=opts.max_iterations {
        let pw = p.mul_vec(&w_free);
        let n = (it - 1) as f64;
        let rhs: Vec<f64> = (0..map.num_free()).map(|i| rk[i] + r * rp[i] - pw[i] + r * n * rp[i]).collect();
        let u = lu.solve(&rhs)?;
        for (wi, ui) in w_free.iter_mut().zip(&u) {
            *wi += r * ui;
        }
        full = g.clone();
        for (i, ui) in u.iter().enumerate() {
            full[map.full_of(i)] = *ui;
        }
        iterations = it;
        let prev = residual;
        residual = space.field_norms(&full).div_l2;
        let h1 = space.field_norms(&full).h1();
        if residual <= 1e-3 * opts.relative_tolerance * h1 {
            break;
        }
        if residual > 0.9 * prev.min(best) {
            stalled += 1;
            if stalled >= 5 {
                break;
            }
        } else {
            stalled = 0;
        }
        best = best.min(residual);
    }
    let norms = space.field_norms(&full);
    let tolerance = opts.relative_tolerance * norms.h1();
    let lift = Lifting { g0: full, div_residual: norms.div_l2, tolerance, flux_correction, iterations, norms };
    if opts.strict && lift.div_residual > tolerance {
        return Err(Error::LiftingResidual { residual: lift.div_residual, tolerance });
    }
    Ok(lift)
}

fn lateral_normal(space: &DiscreteSpace, node: usize) -> [f64; 3] {
    let x = space.node(node);
    let mesh = space.mesh();
    for f in mesh.faces_with_tag(BoundaryTag::GammaL) {
        let vs: Vec<Point> = mesh.face(f).iter().map(|&v| mesh.vertices()[v]).collect();
        let n = mesh.face_normal(f);
        // node lies in the face plane and within its bounding box
        let off: f64 = (0..3).map(|c| (x[c] - vs[0][c]) * n[c]).sum();
        let inside = (0..3).all(|c| {
            let lo = vs.iter().map(|p| p[c]).fold(f64::INFINITY, f64::min);
            let hi = vs.iter().map(|p| p[c]).fold(f64::NEG_INFINITY, f64::max);
            x[c] >= lo - 1e-12 && x[c] <= hi + 1e-12
        });
        if off.abs() < 1e-12 && inside {
            return n;
        }
    }
    [0.0; 3]
}

/// Largest deviation of a reconstructed field from the essential boundary values at boundary nodes.
pub fn boundary_mismatch(space: &DiscreteSpace, data: &BoundaryData, v_full: &[f64], zeta: f64) -> f64 {
    let d = space.dim();
    let mut worst: f64 = 0.0;
    for i in 0..space.num_nodes() {
        let on = space.node_boundary(i);
        let x = space.node(i);
        let val = &v_full[i * d..(i + 1) * d];
        if on[2] {
            let g = data.g(&x);
            for c in 0..d {
                worst = worst.max((val[c] - zeta * g[c]).abs());
            }
        } else if on[1] {
            worst = worst.max(val.iter().map(|v| v.abs()).fold(0.0, f64::max));
        } else if on[0] {
            worst = worst.max(val[d - 1].abs());
        }
    }
    worst
}

/// Net flux of a full field through the vertical line `x = x0` in two dimensions.
pub fn vertical_cut_flux(space: &DiscreteSpace, full: &[f64], x0: f64, height: f64, points: usize) -> f64 {
    let (xs, ws) = crate::quadrature::gauss_legendre(points);
    let mut total = 0.0;
    let segs = 16;
    for s in 0..segs {
        for (t, w) in xs.iter().zip(&ws) {
            let y = height * (s as f64 + t) / segs as f64;
            if let Some(v) = space.eval_at(full, &[x0, y, 0.0]) {
                total += w * height / segs as f64 * v[0];
            }
        }
    }
    total
}

/// `L2` inner product of two full fields.
pub fn l2_pairing(space: &DiscreteSpace, a: &[f64], b: &[f64]) -> f64 {
    space.integrate(2 * space.degree(), |v, q| {
        let (x, y) = (v.value(a, q), v.value(b, q));
        x[0] * y[0] + x[1] * y[1] + x[2] * y[2]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_mesh_with, Domain, HeightFunction, MeshOptions, Omega, Refinement};

    fn space(len: f64, res: usize, refinement: Refinement, degree: usize) -> DiscreteSpace {
        let d = Domain::new(Omega::Interval { a: 0.0, b: len }, HeightFunction::constant(1.0).unwrap()).unwrap();
        let m = build_mesh_with(&d, MeshOptions { resolution: res, refinement }).unwrap();
        DiscreteSpace::new(Arc::new(m), degree).unwrap()
    }

    #[test]
    fn profiles() {
        assert!(TimeProfile::Cosine { omega: 3.0 }.validate().is_ok());
        assert_eq!(TimeProfile::Cosine { omega: 3.0 }.derivative(0.0), 0.0);
        assert_eq!(TimeProfile::Affine { slope: 1.0 }.derivative(0.3), 1.0);
        let t = TimeProfile::Tabulated { times: vec![0.0, 1.0, 2.0], values: vec![1.0, 3.0, 2.0] };
        t.validate().unwrap();
        assert_eq!(t.value(0.5), 2.0);
        assert_eq!(t.derivative(1.5), -1.0);
        assert_eq!(t.value(5.0), 2.0);
        let bad = TimeProfile::Tabulated { times: vec![0.0, 1.0], values: vec![0.9, 1.0] };
        assert!(bad.validate().unwrap_err().to_string().contains("ζ(0)=1"));
    }

    #[test]
    fn zero_data_gives_zero_lifting() {
        let s = space(1.0, 2, Refinement::None, 2);
        let l = build_lifting(&s, &BoundaryData::zero(), &LiftingOptions::default()).unwrap();
        assert!(l.is_zero() && l.div_residual == 0.0);
    }

    #[test]
    fn couette_is_reproduced() {
        for refinement in [Refinement::None, Refinement::Barycentric] {
            let s = space(1.0, 3, refinement, 2);
            let data = BoundaryData::couette(2, 1.0, 1.0, TimeProfile::Constant).unwrap();
            let l = build_lifting(&s, &data, &LiftingOptions::default()).unwrap();
            let exact = s.interpolate(|x| [1.0 - x[1], 0.0, 0.0]);
            let err = l.g0.iter().zip(&exact.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-9, "{refinement:?}: {err}");
            assert!(l.div_residual <= l.tolerance);
        }
    }

    #[test]
    fn poiseuille_flux_through_cuts() {
        let s = space(2.0, 3, Refinement::Barycentric, 2);
        let data = BoundaryData::poiseuille(2, 1.5, 1.0, TimeProfile::Constant).unwrap();
        let l = build_lifting(&s, &data, &LiftingOptions::default()).unwrap();
        let inflow = 4.0 * 1.5 / 6.0;
        for x0 in [0.0, 0.37, 1.0, 1.81] {
            let f = vertical_cut_flux(&s, &l.g0, x0, 1.0, 5);
            assert!((f - inflow).abs() < 1e-8, "x0 = {x0}: {f}");
        }
        assert_eq!(l.flux_correction, 0.0);
        assert!(boundary_mismatch(&s, &data, &l.g0, 1.0) < 1e-14);
    }

    #[test]
    fn net_flux_rejected() {
        let s = space(1.0, 2, Refinement::None, 2);
        let inflow_only = |x: &Point| if x[0] < 0.5 { [x[1] * (1.0 - x[1]), 0.0, 0.0] } else { [0.0; 3] };
        let data = BoundaryData::new(inflow_only, |_| [0.0; 3], TimeProfile::Constant).unwrap();
        let e = build_lifting(&s, &data, &LiftingOptions::default()).unwrap_err();
        assert!(e.to_string().contains("∫_{Γ_L} g·n = 0"), "{e}");
    }

    #[test]
    fn corner_conflict_rejected() {
        let s = space(1.0, 2, Refinement::None, 2);
        let data = BoundaryData::new(|_| [0.0; 3], |_| [1.0, 0.0, 0.0], TimeProfile::Constant).unwrap();
        assert!(matches!(build_lifting(&s, &data, &LiftingOptions::default()), Err(Error::BoundaryData(_))));
    }

    #[test]
    fn smooth_shear_on_barycentric_mesh_is_divergence_free() {
        let s = space(1.0, 4, Refinement::Barycentric, 2);
        let data = BoundaryData::new(|_| [0.0; 3], |x| [16.0 * x[0] * x[0] * (1.0 - x[0]).powi(2), 0.0, 0.0], TimeProfile::Constant).unwrap();
        let l = build_lifting(&s, &data, &LiftingOptions::default()).unwrap();
        assert!(l.div_residual <= 1e-8 * l.norms.h1(), "{}", l.div_residual);
        let (a, b) = lifting_time_slice(&l, &data, 0.4);
        assert_eq!(a, l.g0);
        assert!(b.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn time_slice_derivative_part() {
        let s = space(1.0, 2, Refinement::Barycentric, 2);
        let data = BoundaryData::couette(2, 1.0, 1.0, TimeProfile::Affine { slope: 1.0 }).unwrap();
        let l = build_lifting(&s, &data, &LiftingOptions::default()).unwrap();
        let (a, b) = lifting_time_slice(&l, &data, 0.5);
        assert_eq!(b, l.g0);
        for (x, y) in a.iter().zip(&l.g0) {
            assert_eq!(*x, 1.5 * y);
        }
        let v = l.reconstruct(&vec![0.0; l.g0.len()], 1.5);
        assert!(boundary_mismatch(&s, &data, &v, 1.5) < 1e-14);
    }
}

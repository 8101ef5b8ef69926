//! Manufactured solutions and observed convergence orders.

use std::f64::consts::PI;

use crate::error::Result;
use crate::experiment::manufactured;
use crate::geometry::Point;
use crate::solver::{RunOptions, Trajectory};
use crate::spaces::DiscreteSpace;

/// Divergence-free field `v = A T(t) (X Y', -X' Y)` from the stream function `A T(t) X(x) Y(y)` with
/// `X = x^2 (1-x)^2` and `Y = y - 3 y^3 + 2 y^4`. It vanishes on the lateral walls and the top,
/// has zero normal velocity and zero shear stress on the bottom, and zero pressure.
#[derive(Debug, Clone, PartialEq)]
pub struct ManufacturedSolution {
    pub amplitude: f64,
    pub mu: f64,
    /// `T(t) = cos(omega t)`; zero gives a steady field.
    pub omega: f64,
}

fn xs(x: f64) -> [f64; 4] {
    [
        x * x * (1.0 - x).powi(2),
        2.0 * x * (1.0 - x) * (1.0 - 2.0 * x),
        2.0 * (1.0 - 6.0 * x + 6.0 * x * x),
        12.0 * (2.0 * x - 1.0),
    ]
}

fn ys(y: f64) -> [f64; 4] {
    [y - 3.0 * y.powi(3) + 2.0 * y.powi(4), 1.0 - 9.0 * y * y + 8.0 * y.powi(3), -18.0 * y + 24.0 * y * y, -18.0 + 48.0 * y]
}

impl ManufacturedSolution {
    pub fn unsteady() -> Self {
        ManufacturedSolution { amplitude: 16.0, mu: 0.5, omega: PI }
    }

    pub fn steady() -> Self {
        ManufacturedSolution { amplitude: 16.0, mu: 0.5, omega: 0.0 }
    }

    pub fn is_steady(&self) -> bool {
        self.omega == 0.0
    }

    fn time(&self, t: f64) -> (f64, f64) {
        (self.amplitude * (self.omega * t).cos(), -self.amplitude * self.omega * (self.omega * t).sin())
    }

    pub fn velocity(&self, x: &Point, t: f64) -> [f64; 3] {
        let (a, _) = self.time(t);
        let (x, y) = (xs(x[0]), ys(x[1]));
        [a * x[0] * y[1], -a * x[1] * y[0], 0.0]
    }

    /// `g[i][j] = d_j v_i`
    pub fn gradient(&self, x: &Point, t: f64) -> [[f64; 3]; 3] {
        let (a, _) = self.time(t);
        let (x, y) = (xs(x[0]), ys(x[1]));
        [[a * x[1] * y[1], a * x[0] * y[2], 0.0], [-a * x[2] * y[0], -a * x[1] * y[1], 0.0], [0.0; 3]]
    }

    /// `2 mu D(v)`
    fn stress(&self, x: &Point, t: f64) -> [[f64; 3]; 3] {
        let g = self.gradient(x, t);
        let mut s = [[0.0; 3]; 3];
        for i in 0..2 {
            for j in 0..2 {
                s[i][j] = self.mu * (g[i][j] + g[j][i]);
            }
        }
        s
    }

    /// `f = dv/dt - div(2 mu D(v)) + (v . grad) v`, with the stress divergence by central differences.
    pub fn forcing(&self, x: &Point, t: f64) -> [f64; 3] {
        let (_, ad) = self.time(t);
        let (xx, yy) = (xs(x[0]), ys(x[1]));
        let dvdt = [ad * xx[0] * yy[1], -ad * xx[1] * yy[0]];
        let h = 1e-5;
        let mut div = [0.0; 2];
        for j in 0..2 {
            let mut p = *x;
            let mut m = *x;
            p[j] += h;
            m[j] -= h;
            let (sp, sm) = (self.stress(&p, t), self.stress(&m, t));
            for i in 0..2 {
                div[i] += (sp[i][j] - sm[i][j]) / (2.0 * h);
            }
        }
        let v = self.velocity(x, t);
        let g = self.gradient(x, t);
        let mut f = [0.0; 3];
        for i in 0..2 {
            f[i] = dvdt[i] - div[i] + v[0] * g[i][0] + v[1] * g[i][1];
        }
        f
    }
}

/// `|v_h(t) - v(t)|_{L2}` and `|grad (v_h(t) - v(t))|_{L2}`.
pub fn state_errors(space: &DiscreteSpace, full: &[f64], mms: &ManufacturedSolution, t: f64) -> (f64, f64) {
    let mut e0 = 0.0;
    let mut e1 = 0.0;
    let qd = 2 * space.degree() + 3;
    let quad = space.quadrature(qd);
    for c in 0..space.mesh().num_cells() {
        let view = space.cell_view(&quad, c);
        for q in 0..view.nq {
            let w = view.weights[q];
            let x = view.points[q];
            let (u, g) = (view.value(full, q), view.grad(full, q));
            let (ue, ge) = (mms.velocity(&x, t), mms.gradient(&x, t));
            for i in 0..2 {
                e0 += w * (u[i] - ue[i]).powi(2);
                for j in 0..2 {
                    e1 += w * (g[i][j] - ge[i][j]).powi(2);
                }
            }
        }
    }
    (e0.sqrt(), e1.sqrt())
}

/// Time-integrated `L2 L2` and `L2 H1` errors over steps `1..=N`.
pub fn trajectory_errors(space: &DiscreteSpace, traj: &Trajectory, mms: &ManufacturedSolution) -> (f64, f64) {
    let mut l2 = 0.0;
    let mut h1 = 0.0;
    let mut prev_step = 0;
    for s in traj.snapshots.iter().filter(|s| s.step > 0) {
        let w = traj.dt * (s.step - prev_step) as f64;
        prev_step = s.step;
        let (a, b) = state_errors(space, &space.dofs().expand(&s.vtilde.values), mms, s.t);
        l2 += w * a * a;
        h1 += w * (a * a + b * b);
    }
    (l2.sqrt(), h1.sqrt())
}

/// Errors and observed orders of a refinement sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    /// Refined parameter (time step or mesh size) of each row.
    pub parameter: Vec<f64>,
    pub l2: Vec<f64>,
    pub h1: Vec<f64>,
    /// `log2(e_k / e_{k+1})` of the `L2` errors.
    pub orders: Vec<f64>,
    pub ratios: Vec<f64>,
    /// Same for the `H1` seminorm errors.
    pub h1_orders: Vec<f64>,
}

impl ConvergenceTable {
    fn new(parameter: Vec<f64>, l2: Vec<f64>, h1: Vec<f64>) -> Self {
        let ratios: Vec<f64> = l2.windows(2).map(|w| w[0] / w[1]).collect();
        let orders = ratios.iter().map(|r| r.log2()).collect();
        let h1_orders = h1.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
        ConvergenceTable { parameter, l2, h1, orders, ratios, h1_orders }
    }
}

/// Temporal study at fixed fine mesh: `L2 L2` errors for each time step.
pub fn temporal_study(mms: &ManufacturedSolution, resolution: usize, dts: &[f64], tau: f64) -> Result<ConvergenceTable> {
    let mut l2 = Vec::new();
    let mut h1 = Vec::new();
    for &dt in dts {
        let e = manufactured(mms, resolution, dt, tau);
        let (p, tr) = e.run(&RunOptions { snapshot_every: 1, check_energy: false })?;
        let (a, b) = trajectory_errors(&p.space, &tr, mms);
        l2.push(a);
        h1.push(b);
    }
    Ok(ConvergenceTable::new(dts.to_vec(), l2, h1))
}

/// Spatial study on the steady field: final-state errors after relaxing to the discrete steady state.
pub fn spatial_study(mms: &ManufacturedSolution, resolutions: &[usize]) -> Result<ConvergenceTable> {
    let mut l2 = Vec::new();
    let mut h1 = Vec::new();
    let mut hs = Vec::new();
    for &r in resolutions {
        let e = manufactured(mms, r, 1.0, 20.0);
        let (p, tr) = e.run(&RunOptions { snapshot_every: 0, check_energy: false })?;
        let full = p.space.dofs().expand(&tr.final_state.vtilde.values);
        let (a, b) = state_errors(&p.space, &full, mms, tr.final_state.t);
        l2.push(a);
        h1.push(b);
        hs.push(1.0 / r as f64);
    }
    Ok(ConvergenceTable::new(hs, l2, h1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_conditions_and_divergence() {
        let m = ManufacturedSolution::unsteady();
        for s in [0.0, 0.13, 0.5, 0.77, 1.0] {
            for p in [[0.0, s, 0.0], [1.0, s, 0.0], [s, 1.0, 0.0]] {
                let v = m.velocity(&p, 0.3);
                assert!(v[0].abs() < 1e-14 && v[1].abs() < 1e-14);
            }
            // bottom: no normal flow and no shear stress
            let p = [s, 0.0, 0.0];
            assert!(m.velocity(&p, 0.3)[1].abs() < 1e-14);
            let g = m.gradient(&p, 0.3);
            assert!((g[0][1] + g[1][0]).abs() < 1e-13);
        }
        let g = m.gradient(&[0.3, 0.6, 0.0], 0.2);
        assert!((g[0][0] + g[1][1]).abs() < 1e-14);
    }

    #[test]
    fn forcing_matches_analytic_laplacian() {
        let m = ManufacturedSolution::unsteady();
        for p in [[0.2, 0.3, 0.0], [0.71, 0.45, 0.0], [0.5, 0.9, 0.0]] {
            let t = 0.37;
            let a = 16.0 * (PI * t).cos();
            let ad = -16.0 * PI * (PI * t).sin();
            let (x, y) = (xs(p[0]), ys(p[1]));
            let lap = [x[2] * y[1] + x[0] * y[3], -x[3] * y[0] - x[1] * y[2]];
            let v = m.velocity(&p, t);
            let g = m.gradient(&p, t);
            let f = m.forcing(&p, t);
            let expect = [
                ad * x[0] * y[1] - 0.5 * a * lap[0] + v[0] * g[0][0] + v[1] * g[0][1],
                -ad * x[1] * y[0] - 0.5 * a * lap[1] + v[0] * g[1][0] + v[1] * g[1][1],
            ];
            for i in 0..2 {
                assert!((f[i] - expect[i]).abs() < 1e-8 * (1.0 + expect[i].abs()), "{} vs {}", f[i], expect[i]);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = ManufacturedSolution::unsteady();
        let p = [0.31, 0.62, 0.0];
        let g = m.gradient(&p, 0.1);
        let h = 1e-6;
        for j in 0..2 {
            let mut a = p;
            let mut b = p;
            a[j] += h;
            b[j] -= h;
            let (va, vb) = (m.velocity(&a, 0.1), m.velocity(&b, 0.1));
            for i in 0..2 {
                assert!(((va[i] - vb[i]) / (2.0 * h) - g[i][j]).abs() < 1e-8);
            }
        }
    }
}

//! Continuous Lagrange vector spaces with homogeneous essential constraints.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::geometry::{BoundaryTag, Mesh, Point};
use crate::linalg::{SparseMatrix, SparsePattern};
use crate::quadrature::{simplex_rule, Rule};

pub const NONE: usize = usize::MAX;

const EDGES_2D: [(usize, usize); 3] = [(0, 1), (1, 2), (0, 2)];
const EDGES_3D: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

fn edges(dim: usize) -> &'static [(usize, usize)] {
    if dim == 2 {
        &EDGES_2D
    } else {
        &EDGES_3D
    }
}

/// How the velocity is constrained on the bottom wall.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BottomCondition {
    /// Only the normal component vanishes; the tangential trace is free.
    #[default]
    Slip,
    /// All components vanish (stick limit).
    NoSlip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeConstraint {
    Free,
    NormalOnly,
    Full,
}

/// Numbering of unconstrained vector dofs. Full dof index is `node * dim + component`.
#[derive(Debug, Clone)]
pub struct DofMap {
    free_index: Vec<usize>,
    free_dofs: Vec<usize>,
}

impl DofMap {
    fn from_constraints(dim: usize, constraints: &[NodeConstraint]) -> Self {
        let mut free_index = vec![NONE; constraints.len() * dim];
        let mut free_dofs = Vec::new();
        for (node, c) in constraints.iter().enumerate() {
            for comp in 0..dim {
                let fixed = match c {
                    NodeConstraint::Free => false,
                    NodeConstraint::NormalOnly => comp == dim - 1,
                    NodeConstraint::Full => true,
                };
                if !fixed {
                    free_index[node * dim + comp] = free_dofs.len();
                    free_dofs.push(node * dim + comp);
                }
            }
        }
        DofMap { free_index, free_dofs }
    }

    pub fn num_free(&self) -> usize {
        self.free_dofs.len()
    }

    pub fn num_full(&self) -> usize {
        self.free_index.len()
    }

    pub fn free_of(&self, full: usize) -> Option<usize> {
        let i = self.free_index[full];
        (i != NONE).then_some(i)
    }

    pub fn full_of(&self, free: usize) -> usize {
        self.free_dofs[free]
    }

    /// Full vector with zeros at constrained dofs.
    pub fn expand(&self, free: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_full()];
        for (i, &f) in self.free_dofs.iter().enumerate() {
            out[f] = free[i];
        }
        out
    }

    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.free_dofs.iter().map(|&f| full[f]).collect()
    }
}

/// Integral norms of a vector field.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FieldNorms {
    pub l2: f64,
    pub grad_l2: f64,
    pub l4: f64,
    pub grad_l4: f64,
    pub div_l2: f64,
    /// `(|grad u|^2 + sum over cells |grad grad u|^2)^(1/2)`
    pub grad_h1_broken: f64,
}

impl FieldNorms {
    pub fn h1(&self) -> f64 {
        (self.l2 * self.l2 + self.grad_l2 * self.grad_l2).sqrt()
    }
}

/// Coefficients of a field in the constrained space, indexed by free dof.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldCoefficients {
    pub values: Vec<f64>,
}

impl FieldCoefficients {
    pub fn zeros(n: usize) -> Self {
        FieldCoefficients { values: vec![0.0; n] }
    }
}

/// Nodal values of an unconstrained vector field, indexed by full dof.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalField {
    pub values: Vec<f64>,
}

/// Affine cell data.
#[derive(Debug, Clone)]
pub struct CellGeometry {
    pub volume: f64,
    pub points: [Point; 4],
    /// Gradients of the barycentric coordinates.
    pub grad_lambda: [[f64; 3]; 4],
}

fn cell_geometry(mesh: &Mesh, c: usize) -> CellGeometry {
    let d = mesh.dim();
    let p = mesh.cell_points(c);
    let mut points = [[0.0; 3]; 4];
    points[..=d].copy_from_slice(&p);
    // Jacobian columns e_k = p_{k+1} - p_0; grad lambda_{k+1} are rows of J^{-1}
    let mut jac = [[0.0; 3]; 3];
    for k in 0..d {
        for i in 0..d {
            jac[i][k] = p[k + 1][i] - p[0][i];
        }
    }
    let inv = invert(d, &jac);
    let mut grad_lambda = [[0.0; 3]; 4];
    for k in 0..d {
        for i in 0..d {
            grad_lambda[k + 1][i] = inv[k][i];
            grad_lambda[0][i] -= inv[k][i];
        }
    }
    CellGeometry { volume: mesh.cell_volume(c), points, grad_lambda }
}

fn invert(d: usize, a: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    if d == 2 {
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        out[0][0] = a[1][1] / det;
        out[0][1] = -a[0][1] / det;
        out[1][0] = -a[1][0] / det;
        out[1][1] = a[0][0] / det;
    } else {
        let det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
        for i in 0..3 {
            for j in 0..3 {
                let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
                let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
                out[i][j] = (a[r0][c0] * a[r1][c1] - a[r0][c1] * a[r1][c0]) / det;
            }
        }
    }
    out
}

/// Values of the local Lagrange basis at barycentric coordinates `lam`.
pub fn shape_values(degree: usize, dim: usize, lam: &[f64; 4], out: &mut [f64]) {
    if degree == 1 {
        out[..=dim].copy_from_slice(&lam[..=dim]);
        return;
    }
    for i in 0..=dim {
        out[i] = lam[i] * (2.0 * lam[i] - 1.0);
    }
    for (k, &(i, j)) in edges(dim).iter().enumerate() {
        out[dim + 1 + k] = 4.0 * lam[i] * lam[j];
    }
}

/// Physical gradients of the local basis.
pub fn shape_gradients(degree: usize, dim: usize, lam: &[f64; 4], gl: &[[f64; 3]; 4], out: &mut [[f64; 3]]) {
    if degree == 1 {
        out[..=dim].copy_from_slice(&gl[..=dim]);
        return;
    }
    for i in 0..=dim {
        let s = 4.0 * lam[i] - 1.0;
        out[i] = [s * gl[i][0], s * gl[i][1], s * gl[i][2]];
    }
    for (k, &(i, j)) in edges(dim).iter().enumerate() {
        let mut g = [0.0; 3];
        for c in 0..3 {
            g[c] = 4.0 * (lam[j] * gl[i][c] + lam[i] * gl[j][c]);
        }
        out[dim + 1 + k] = g;
    }
}

/// Constant second derivatives of the local basis (zero for degree 1).
pub fn shape_hessians(degree: usize, dim: usize, gl: &[[f64; 3]; 4], out: &mut [[[f64; 3]; 3]]) {
    let nloc = local_count(degree, dim);
    for h in out.iter_mut().take(nloc) {
        *h = [[0.0; 3]; 3];
    }
    if degree == 1 {
        return;
    }
    for i in 0..=dim {
        for r in 0..3 {
            for c in 0..3 {
                out[i][r][c] = 4.0 * gl[i][r] * gl[i][c];
            }
        }
    }
    for (k, &(i, j)) in edges(dim).iter().enumerate() {
        for r in 0..3 {
            for c in 0..3 {
                out[dim + 1 + k][r][c] = 4.0 * (gl[i][r] * gl[j][c] + gl[j][r] * gl[i][c]);
            }
        }
    }
}

pub fn local_count(degree: usize, dim: usize) -> usize {
    if degree == 1 {
        dim + 1
    } else {
        (dim + 1) + edges(dim).len()
    }
}

/// Quadrature data for all cells: shared basis values, per-cell points, weights and gradients.
#[derive(Debug)]
pub struct CellQuadrature {
    pub degree: usize,
    pub nq: usize,
    pub nloc: usize,
    lam: Vec<[f64; 4]>,
    values: Vec<f64>,
    points: Vec<Point>,
    weights: Vec<f64>,
    grads: Vec<[f64; 3]>,
}

/// Quadrature data of one cell.
pub struct CellView<'a> {
    pub cell: usize,
    pub dim: usize,
    pub nq: usize,
    pub nloc: usize,
    pub nodes: &'a [usize],
    pub lam: &'a [[f64; 4]],
    values: &'a [f64],
    pub points: &'a [Point],
    pub weights: &'a [f64],
    grads: &'a [[f64; 3]],
}

impl CellView<'_> {
    #[inline]
    pub fn n(&self, q: usize, a: usize) -> f64 {
        self.values[q * self.nloc + a]
    }

    #[inline]
    pub fn dn(&self, q: usize, a: usize) -> &[f64; 3] {
        &self.grads[q * self.nloc + a]
    }

    /// Value of a full nodal vector field at point `q`.
    pub fn value(&self, full: &[f64], q: usize) -> [f64; 3] {
        let d = self.dim;
        let mut u = [0.0; 3];
        for (a, &node) in self.nodes.iter().enumerate() {
            let na = self.n(q, a);
            for c in 0..d {
                u[c] += na * full[node * d + c];
            }
        }
        u
    }

    /// Gradient `g[i][j] = d u_i / d x_j` of a full nodal vector field at point `q`.
    pub fn grad(&self, full: &[f64], q: usize) -> [[f64; 3]; 3] {
        let d = self.dim;
        let mut g = [[0.0; 3]; 3];
        for (a, &node) in self.nodes.iter().enumerate() {
            let dn = self.dn(q, a);
            for i in 0..d {
                let ui = full[node * d + i];
                if ui != 0.0 {
                    for j in 0..d {
                        g[i][j] += ui * dn[j];
                    }
                }
            }
        }
        g
    }
}

/// Quadrature on tagged boundary faces, with basis values of the parent cells.
#[derive(Debug, Clone)]
pub struct FaceQuadrature {
    pub degree: usize,
    pub nloc: usize,
    pub cells: Vec<usize>,
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
    pub normals: Vec<Point>,
    values: Vec<f64>,
}

impl FaceQuadrature {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    #[inline]
    pub fn n(&self, q: usize, a: usize) -> f64 {
        self.values[q * self.nloc + a]
    }

    pub fn measure(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Vector Lagrange space of degree 1 or 2 on a tagged mesh.
#[derive(Debug)]
pub struct DiscreteSpace {
    mesh: Arc<Mesh>,
    degree: usize,
    dim: usize,
    nloc: usize,
    nodes: Vec<Point>,
    cell_nodes: Vec<usize>,
    node_on: Vec<[bool; 3]>,
    geometry: Vec<CellGeometry>,
    bottom: BottomCondition,
    dofs: DofMap,
    quad_cache: Mutex<HashMap<usize, Arc<CellQuadrature>>>,
    pattern_cache: Mutex<Option<Arc<SparsePattern>>>,
}

fn tag_index(t: BoundaryTag) -> usize {
    match t {
        BoundaryTag::Gamma0 => 0,
        BoundaryTag::Gamma1 => 1,
        BoundaryTag::GammaL => 2,
    }
}

impl DiscreteSpace {
    pub fn new(mesh: Arc<Mesh>, degree: usize) -> Result<Self> {
        Self::with_bottom(mesh, degree, BottomCondition::Slip)
    }

    pub fn with_bottom(mesh: Arc<Mesh>, degree: usize, bottom: BottomCondition) -> Result<Self> {
        if degree == 0 {
            return Err(Error::InvalidInput("velocity degree must be at least 1".into()));
        }
        if degree > 2 {
            return Err(Error::InvalidInput(format!("velocity degree {degree} is not supported (use 1 or 2)")));
        }
        if !mesh.is_tagged() {
            return Err(Error::InvalidInput("mesh boundary faces are not tagged".into()));
        }
        let dim = mesh.dim();
        let nloc = local_count(degree, dim);
        let mut nodes: Vec<Point> = mesh.vertices().to_vec();
        let mut cell_nodes = Vec::with_capacity(mesh.num_cells() * nloc);
        let mut edge_ids: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for c in 0..mesh.num_cells() {
            let vs = mesh.cell(c);
            cell_nodes.extend_from_slice(vs);
            if degree == 2 {
                for &(i, j) in edges(dim) {
                    let key = (vs[i].min(vs[j]), vs[i].max(vs[j]));
                    let id = *edge_ids.entry(key).or_insert_with(|| {
                        let (a, b) = (nodes[key.0], nodes[key.1]);
                        nodes.push([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1]), 0.5 * (a[2] + b[2])]);
                        nodes.len() - 1
                    });
                    cell_nodes.push(id);
                }
            }
        }
        let mut node_on = vec![[false; 3]; nodes.len()];
        for f in 0..mesh.num_faces() {
            let t = tag_index(mesh.face_tag(f));
            let fv = mesh.face(f);
            for &v in fv {
                node_on[v][t] = true;
            }
            if degree == 2 {
                for a in 0..fv.len() {
                    for b in a + 1..fv.len() {
                        let key = (fv[a].min(fv[b]), fv[a].max(fv[b]));
                        if let Some(&id) = edge_ids.get(&key) {
                            node_on[id][t] = true;
                        }
                    }
                }
            }
        }
        let geometry = (0..mesh.num_cells()).map(|c| cell_geometry(&mesh, c)).collect();
        let constraints = Self::constraints_for(&node_on, bottom);
        let dofs = DofMap::from_constraints(dim, &constraints);
        Ok(DiscreteSpace {
            mesh,
            degree,
            dim,
            nloc,
            nodes,
            cell_nodes,
            node_on,
            geometry,
            bottom,
            dofs,
            quad_cache: Mutex::new(HashMap::new()),
            pattern_cache: Mutex::new(None),
        })
    }

    fn constraints_for(node_on: &[[bool; 3]], bottom: BottomCondition) -> Vec<NodeConstraint> {
        node_on
            .iter()
            .map(|on| {
                if on[1] || on[2] {
                    NodeConstraint::Full
                } else if on[0] {
                    match bottom {
                        BottomCondition::Slip => NodeConstraint::NormalOnly,
                        BottomCondition::NoSlip => NodeConstraint::Full,
                    }
                } else {
                    NodeConstraint::Free
                }
            })
            .collect()
    }

    /// Dof map of the same nodes under a different bottom condition.
    pub fn dof_map_for(&self, bottom: BottomCondition) -> DofMap {
        DofMap::from_constraints(self.dim, &Self::constraints_for(&self.node_on, bottom))
    }

    /// Dof map leaving every dof free.
    pub fn unconstrained_map(&self) -> DofMap {
        DofMap::from_constraints(self.dim, &vec![NodeConstraint::Free; self.nodes.len()])
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bottom(&self) -> BottomCondition {
        self.bottom
    }

    pub fn nloc(&self) -> usize {
        self.nloc
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, i: usize) -> Point {
        self.nodes[i]
    }

    /// Whether node `i` lies on the bottom, top and lateral boundary.
    pub fn node_boundary(&self, i: usize) -> [bool; 3] {
        self.node_on[i]
    }

    pub fn cell_nodes(&self, c: usize) -> &[usize] {
        &self.cell_nodes[c * self.nloc..(c + 1) * self.nloc]
    }

    pub fn cell_geometry(&self, c: usize) -> &CellGeometry {
        &self.geometry[c]
    }

    pub fn dofs(&self) -> &DofMap {
        &self.dofs
    }

    pub fn num_free(&self) -> usize {
        self.dofs.num_free()
    }

    pub fn num_full(&self) -> usize {
        self.nodes.len() * self.dim
    }

    /// Default cell quadrature degree, exact for products of degree `2p + 1`.
    pub fn default_quad_degree(&self) -> usize {
        2 * self.degree + 1
    }

    pub fn quadrature(&self, degree: usize) -> Arc<CellQuadrature> {
        let mut cache = self.quad_cache.lock().expect("quadrature cache poisoned");
        cache.entry(degree).or_insert_with(|| Arc::new(self.build_quadrature(degree))).clone()
    }

    fn build_quadrature(&self, degree: usize) -> CellQuadrature {
        let d = self.dim;
        let rule: Rule = simplex_rule(d, degree);
        let nq = rule.len();
        let nloc = self.nloc;
        let lam: Vec<[f64; 4]> = rule
            .points
            .iter()
            .map(|x| {
                let mut l = [0.0; 4];
                l[1..=d].copy_from_slice(&x[..d]);
                l[0] = 1.0 - x[..d].iter().sum::<f64>();
                l
            })
            .collect();
        let mut values = vec![0.0; nq * nloc];
        for q in 0..nq {
            shape_values(self.degree, d, &lam[q], &mut values[q * nloc..(q + 1) * nloc]);
        }
        let ref_volume = if d == 2 { 0.5 } else { 1.0 / 6.0 };
        let nc = self.mesh.num_cells();
        let mut points = Vec::with_capacity(nc * nq);
        let mut weights = Vec::with_capacity(nc * nq);
        let mut grads = vec![[0.0; 3]; nc * nq * nloc];
        for c in 0..nc {
            let g = &self.geometry[c];
            for q in 0..nq {
                let mut x = [0.0; 3];
                for k in 0..=d {
                    for i in 0..d {
                        x[i] += lam[q][k] * g.points[k][i];
                    }
                }
                points.push(x);
                weights.push(rule.weights[q] * g.volume / ref_volume);
                let off = (c * nq + q) * nloc;
                shape_gradients(self.degree, d, &lam[q], &g.grad_lambda, &mut grads[off..off + nloc]);
            }
        }
        CellQuadrature { degree, nq, nloc, lam, values, points, weights, grads }
    }

    pub fn cell_view<'a>(&'a self, quad: &'a CellQuadrature, c: usize) -> CellView<'a> {
        let (nq, nloc) = (quad.nq, quad.nloc);
        CellView {
            cell: c,
            dim: self.dim,
            nq,
            nloc,
            nodes: self.cell_nodes(c),
            lam: &quad.lam,
            values: &quad.values,
            points: &quad.points[c * nq..(c + 1) * nq],
            weights: &quad.weights[c * nq..(c + 1) * nq],
            grads: &quad.grads[c * nq * nloc..(c + 1) * nq * nloc],
        }
    }

    /// Bottom-wall quadrature exact to `degree` on each face.
    pub fn gamma0_quadrature(&self, degree: usize) -> FaceQuadrature {
        self.boundary_quadrature(BoundaryTag::Gamma0, degree)
    }

    /// Quadrature of the given degree on all faces carrying `tag`.
    pub fn boundary_quadrature(&self, tag: BoundaryTag, degree: usize) -> FaceQuadrature {
        let d = self.dim;
        let rule = simplex_rule(d - 1, degree);
        let ref_measure = if d == 2 { 1.0 } else { 0.5 };
        let mut out = FaceQuadrature {
            degree,
            nloc: self.nloc,
            cells: Vec::new(),
            points: Vec::new(),
            weights: Vec::new(),
            normals: Vec::new(),
            values: Vec::new(),
        };
        let mut buf = vec![0.0; self.nloc];
        for f in self.mesh.faces_with_tag(tag) {
            let c = self.mesh.face_cell(f);
            let fv = self.mesh.face(f);
            let cv = self.mesh.cell(c);
            let meas = self.mesh.face_measure(f);
            for (x, w) in rule.points.iter().zip(&rule.weights) {
                let mut mu = [0.0; 3];
                mu[1..d].copy_from_slice(&x[..d - 1]);
                mu[0] = 1.0 - x[..d - 1].iter().sum::<f64>();
                let mut lam = [0.0; 4];
                let mut p = [0.0; 3];
                for (k, &v) in fv.iter().enumerate() {
                    let j = cv.iter().position(|&u| u == v).expect("face vertex not in parent cell");
                    lam[j] = mu[k];
                    let pv = self.mesh.vertices()[v];
                    for i in 0..d {
                        p[i] += mu[k] * pv[i];
                    }
                }
                shape_values(self.degree, d, &lam, &mut buf);
                out.cells.push(c);
                out.points.push(p);
                out.weights.push(w * meas / ref_measure);
                out.normals.push(self.mesh.face_normal(f));
                out.values.extend_from_slice(&buf);
            }
        }
        out
    }

    /// Default bottom-wall quadrature of degree `p + 3`.
    pub fn default_gamma0_quadrature(&self) -> FaceQuadrature {
        self.gamma0_quadrature(self.degree + 3)
    }

    /// Sparsity pattern of the free dofs of `map`.
    pub fn build_pattern(&self, map: &DofMap) -> Arc<SparsePattern> {
        let d = self.dim;
        let mut entries = Vec::new();
        let mut local = Vec::with_capacity(self.nloc * d);
        for c in 0..self.mesh.num_cells() {
            local.clear();
            for &node in self.cell_nodes(c) {
                for comp in 0..d {
                    if let Some(i) = map.free_of(node * d + comp) {
                        local.push(i);
                    }
                }
            }
            for &i in &local {
                for &j in &local {
                    entries.push((i, j));
                }
            }
        }
        Arc::new(SparsePattern::from_entries(map.num_free(), entries))
    }

    /// Pattern of the space's own constrained dofs (cached).
    pub fn pattern(&self) -> Arc<SparsePattern> {
        let mut cache = self.pattern_cache.lock().expect("pattern cache poisoned");
        cache.get_or_insert_with(|| self.build_pattern(&self.dofs)).clone()
    }

    /// Assembles a matrix from per-cell local matrices on `map`'s free dofs.
    ///
    /// The local matrix is row-major over local dofs `a * dim + c`. When `fixed` is given, the
    /// returned vector holds `-K_{free, fixed} * fixed` for the constrained dofs.
    pub fn assemble_matrix<K>(
        &self,
        map: &DofMap,
        pattern: &Arc<SparsePattern>,
        quad_degree: usize,
        fixed: Option<&[f64]>,
        mut kernel: K,
    ) -> (SparseMatrix, Vec<f64>)
    where
        K: FnMut(&CellView, &mut [f64]),
    {
        let d = self.dim;
        let quad = self.quadrature(quad_degree);
        let nl = self.nloc * d;
        let mut local = vec![0.0; nl * nl];
        let mut mat = SparseMatrix::zeros(pattern.clone());
        let mut rhs = vec![0.0; map.num_free()];
        let mut idx = vec![NONE; nl];
        let mut full = vec![0; nl];
        for c in 0..self.mesh.num_cells() {
            let view = self.cell_view(&quad, c);
            local.iter_mut().for_each(|v| *v = 0.0);
            kernel(&view, &mut local);
            for (a, &node) in view.nodes.iter().enumerate() {
                for comp in 0..d {
                    full[a * d + comp] = node * d + comp;
                    idx[a * d + comp] = map.free_of(node * d + comp).unwrap_or(NONE);
                }
            }
            for i in 0..nl {
                if idx[i] == NONE {
                    continue;
                }
                for j in 0..nl {
                    let v = local[i * nl + j];
                    if v == 0.0 {
                        continue;
                    }
                    if idx[j] != NONE {
                        mat.add(idx[i], idx[j], v);
                    } else if let Some(g) = fixed {
                        rhs[idx[i]] -= v * g[full[j]];
                    }
                }
            }
        }
        (mat, rhs)
    }

    /// Assembles a vector from per-cell local vectors on `map`'s free dofs.
    pub fn assemble_vector<K>(&self, map: &DofMap, quad_degree: usize, mut kernel: K) -> Vec<f64>
    where
        K: FnMut(&CellView, &mut [f64]),
    {
        let d = self.dim;
        let quad = self.quadrature(quad_degree);
        let nl = self.nloc * d;
        let mut local = vec![0.0; nl];
        let mut out = vec![0.0; map.num_free()];
        for c in 0..self.mesh.num_cells() {
            let view = self.cell_view(&quad, c);
            local.iter_mut().for_each(|v| *v = 0.0);
            kernel(&view, &mut local);
            for (a, &node) in view.nodes.iter().enumerate() {
                for comp in 0..d {
                    if let Some(i) = map.free_of(node * d + comp) {
                        out[i] += local[a * d + comp];
                    }
                }
            }
        }
        out
    }

    /// Integrates a scalar quantity over all cells.
    pub fn integrate<K>(&self, quad_degree: usize, mut kernel: K) -> f64
    where
        K: FnMut(&CellView, usize) -> f64,
    {
        let quad = self.quadrature(quad_degree);
        let mut total = 0.0;
        for c in 0..self.mesh.num_cells() {
            let view = self.cell_view(&quad, c);
            let mut cell_sum = 0.0;
            for q in 0..view.nq {
                cell_sum += view.weights[q] * kernel(&view, q);
            }
            total += cell_sum;
        }
        total
    }

    /// Mass matrix on the constrained space.
    pub fn assemble_mass(&self) -> SparseMatrix {
        let d = self.dim;
        let nloc = self.nloc;
        self.assemble_matrix(&self.dofs, &self.pattern(), 2 * self.degree, None, |v, m| mass_kernel(v, d, nloc, m)).0
    }

    /// Gradient (H1 seminorm) matrix on the constrained space.
    pub fn assemble_gradient(&self) -> SparseMatrix {
        let d = self.dim;
        let nloc = self.nloc;
        self.assemble_matrix(&self.dofs, &self.pattern(), 2 * self.degree, None, |v, m| gradient_kernel(v, d, nloc, m)).0
    }

    /// Full H1 inner product matrix `M + G`.
    pub fn assemble_h1(&self) -> SparseMatrix {
        let mut m = self.assemble_mass();
        m.axpy(1.0, &self.assemble_gradient());
        m
    }

    /// Nodal interpolation of a vector function (all nodes, no constraints applied).
    pub fn interpolate<F: Fn(&Point) -> [f64; 3]>(&self, f: F) -> NodalField {
        let d = self.dim;
        let mut values = vec![0.0; self.num_full()];
        for (i, x) in self.nodes.iter().enumerate() {
            let v = f(x);
            values[i * d..(i + 1) * d].copy_from_slice(&v[..d]);
        }
        NodalField { values }
    }

    /// Evaluates a full nodal field at an arbitrary point.
    pub fn eval_at(&self, full: &[f64], x: &Point) -> Option<[f64; 3]> {
        let (c, lam) = self.mesh.locate(x)?;
        let mut n = vec![0.0; self.nloc];
        shape_values(self.degree, self.dim, &lam, &mut n);
        let mut u = [0.0; 3];
        for (a, &node) in self.cell_nodes(c).iter().enumerate() {
            for comp in 0..self.dim {
                u[comp] += n[a] * full[node * self.dim + comp];
            }
        }
        Some(u)
    }

    /// Full nodal vector of constrained coefficients.
    pub fn expand(&self, u: &FieldCoefficients) -> Vec<f64> {
        self.dofs.expand(&u.values)
    }

    pub fn check_len(&self, u: &FieldCoefficients) -> Result<()> {
        if u.values.len() != self.num_free() {
            return Err(Error::DimensionMismatch { expected: self.num_free(), got: u.values.len() });
        }
        Ok(())
    }

    /// All components of a full field at the points of a face quadrature.
    pub fn face_values(&self, quad: &FaceQuadrature, full: &[f64]) -> Vec<[f64; 3]> {
        let d = self.dim;
        (0..quad.len())
            .map(|q| {
                let mut u = [0.0; 3];
                for (a, &node) in self.cell_nodes(quad.cells[q]).iter().enumerate() {
                    let na = quad.n(q, a);
                    for c in 0..d {
                        u[c] += na * full[node * d + c];
                    }
                }
                u
            })
            .collect()
    }

    /// Norms of a full nodal field.
    pub fn field_norms(&self, full: &[f64]) -> FieldNorms {
        let mut acc = [0.0; 6];
        let quad = self.quadrature(4 * self.degree);
        for c in 0..self.mesh.num_cells() {
            let view = self.cell_view(&quad, c);
            for q in 0..view.nq {
                let w = view.weights[q];
                let u = view.value(full, q);
                let g = view.grad(full, q);
                let u2 = u[0] * u[0] + u[1] * u[1] + u[2] * u[2];
                let g2: f64 = g.iter().flatten().map(|x| x * x).sum();
                let div = g[0][0] + g[1][1] + g[2][2];
                acc[0] += w * u2;
                acc[1] += w * g2;
                acc[2] += w * u2 * u2;
                acc[3] += w * g2 * g2;
                acc[4] += w * div * div;
            }
            if self.degree == 2 {
                let mut hs = vec![[[0.0; 3]; 3]; self.nloc];
                shape_hessians(2, self.dim, &self.geometry[c].grad_lambda, &mut hs);
                let nodes = self.cell_nodes(c);
                for comp in 0..self.dim {
                    let mut h = [[0.0; 3]; 3];
                    for (a, &node) in nodes.iter().enumerate() {
                        let v = full[node * self.dim + comp];
                        for i in 0..3 {
                            for j in 0..3 {
                                h[i][j] += v * hs[a][i][j];
                            }
                        }
                    }
                    acc[5] += self.geometry[c].volume * h.iter().flatten().map(|x| x * x).sum::<f64>();
                }
            }
        }
        FieldNorms {
            l2: acc[0].sqrt(),
            grad_l2: acc[1].sqrt(),
            l4: acc[2].powf(0.25),
            grad_l4: acc[3].powf(0.25),
            div_l2: acc[4].sqrt(),
            grad_h1_broken: (acc[1] + acc[5]).sqrt(),
        }
    }

    /// Values of the tangential trace (first `dim - 1` components) of a full field on the bottom wall.
    pub fn trace_gamma0(&self, quad: &FaceQuadrature, full: &[f64]) -> Vec<[f64; 3]> {
        let d = self.dim;
        (0..quad.len())
            .map(|q| {
                let mut u = [0.0; 3];
                for (a, &node) in self.cell_nodes(quad.cells[q]).iter().enumerate() {
                    let na = quad.n(q, a);
                    for c in 0..d - 1 {
                        u[c] += na * full[node * d + c];
                    }
                }
                u
            })
            .collect()
    }
}

pub(crate) fn mass_kernel(v: &CellView, d: usize, nloc: usize, m: &mut [f64]) {
    let nl = nloc * d;
    for q in 0..v.nq {
        let w = v.weights[q];
        for a in 0..nloc {
            let na = w * v.n(q, a);
            for b in 0..nloc {
                let val = na * v.n(q, b);
                for c in 0..d {
                    m[(a * d + c) * nl + b * d + c] += val;
                }
            }
        }
    }
}

pub(crate) fn gradient_kernel(v: &CellView, d: usize, nloc: usize, m: &mut [f64]) {
    let nl = nloc * d;
    for q in 0..v.nq {
        let w = v.weights[q];
        for a in 0..nloc {
            let ga = v.dn(q, a);
            for b in 0..nloc {
                let gb = v.dn(q, b);
                let val = w * (ga[0] * gb[0] + ga[1] * gb[1] + ga[2] * gb[2]);
                for c in 0..d {
                    m[(a * d + c) * nl + b * d + c] += val;
                }
            }
        }
    }
}

/// Piecewise polynomial scalar field of degree `p - 1` without continuity, stored as per-cell
/// coefficients in the barycentric basis (degree 1) or one constant per cell (degree 0).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub degree: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn per_cell(&self) -> usize {
        if self.degree == 0 {
            1
        } else {
            self.dim + 1
        }
    }

    pub fn cell_values(&self, c: usize) -> &[f64] {
        let k = self.per_cell();
        &self.values[c * k..(c + 1) * k]
    }

    /// Value at barycentric coordinates `lam` in cell `c`.
    pub fn eval(&self, c: usize, lam: &[f64; 4]) -> f64 {
        let v = self.cell_values(c);
        if self.degree == 0 {
            v[0]
        } else {
            v.iter().zip(lam).map(|(a, b)| a * b).sum()
        }
    }

    pub fn integral(&self, mesh: &Mesh) -> f64 {
        (0..mesh.num_cells())
            .map(|c| {
                let v = self.cell_values(c);
                mesh.cell_volume(c) * v.iter().sum::<f64>() / v.len() as f64
            })
            .sum()
    }

    pub fn l2_norm(&self, mesh: &Mesh) -> f64 {
        let d = self.dim as f64;
        (0..mesh.num_cells())
            .map(|c| {
                let v = self.cell_values(c);
                let vol = mesh.cell_volume(c);
                if self.degree == 0 {
                    vol * v[0] * v[0]
                } else {
                    let s: f64 = v.iter().sum();
                    let s2: f64 = v.iter().map(|x| x * x).sum();
                    vol * (s2 + s * s) / ((d + 1.0) * (d + 2.0))
                }
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn l1_norm_bound(&self, mesh: &Mesh) -> f64 {
        (0..mesh.num_cells())
            .map(|c| mesh.cell_volume(c) * self.cell_values(c).iter().fold(0.0f64, |m, v| m.max(v.abs())))
            .sum()
    }
}

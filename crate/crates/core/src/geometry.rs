//! Thin-layer domains `{x' in omega, 0 < x_d < h(x')}`, simplicial meshes and boundary tags.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type Point = [f64; 3];

/// Horizontal cross-section of the domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Omega {
    /// `(a, b)`, giving a two-dimensional domain.
    Interval { a: f64, b: f64 },
    /// `(x0, x1) x (y0, y1)`, giving a three-dimensional domain.
    Rectangle { x: (f64, f64), y: (f64, f64) },
}

impl Omega {
    /// Ambient dimension of the domain built over this cross-section.
    pub fn dim(&self) -> usize {
        match self {
            Omega::Interval { .. } => 2,
            Omega::Rectangle { .. } => 3,
        }
    }

    pub fn measure(&self) -> f64 {
        match *self {
            Omega::Interval { a, b } => b - a,
            Omega::Rectangle { x, y } => (x.1 - x.0) * (y.1 - y.0),
        }
    }

    fn extents(&self) -> Vec<(f64, f64)> {
        match *self {
            Omega::Interval { a, b } => vec![(a, b)],
            Omega::Rectangle { x, y } => vec![x, y],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (lo, hi) in self.extents() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Geometry(format!("empty or invalid horizontal extent ({lo}, {hi})")));
            }
        }
        Ok(())
    }
}

type ScalarOfXp = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Upper boundary `x_d = h(x')` with declared bounds and Lipschitz constant.
#[derive(Clone)]
pub struct HeightFunction {
    f: Arc<ScalarOfXp>,
    h_min: f64,
    h_max: f64,
    lipschitz: f64,
}

impl std::fmt::Debug for HeightFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HeightFunction")
            .field("h_min", &self.h_min)
            .field("h_max", &self.h_max)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

impl HeightFunction {
    pub fn constant(h: f64) -> Result<Self> {
        Self::new(move |_| h, h, h, 0.0)
    }

    pub fn new(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static, h_min: f64, h_max: f64, lipschitz: f64) -> Result<Self> {
        if !(h_min > 0.0) {
            return Err(Error::Geometry(format!("height lower bound must be positive, got {h_min}")));
        }
        if !(h_max >= h_min) || !h_max.is_finite() {
            return Err(Error::Geometry(format!("height bounds inverted: [{h_min}, {h_max}]")));
        }
        if !(lipschitz >= 0.0) || !lipschitz.is_finite() {
            return Err(Error::Geometry(format!("invalid Lipschitz constant {lipschitz}")));
        }
        Ok(HeightFunction { f: Arc::new(f), h_min, h_max, lipschitz })
    }

    pub fn eval(&self, xp: &[f64]) -> f64 {
        (self.f)(xp)
    }

    pub fn h_min(&self) -> f64 {
        self.h_min
    }

    pub fn h_max(&self) -> f64 {
        self.h_max
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn is_constant(&self) -> bool {
        self.h_min == self.h_max
    }

    /// Samples `h` over `omega` and checks the declared bounds and Lipschitz constant.
    pub fn validate_on(&self, omega: &Omega) -> Result<()> {
        let ext = omega.extents();
        let n = if ext.len() == 1 { 400 } else { 60 };
        let grid = |k: usize, i: usize| ext[k].0 + (ext[k].1 - ext[k].0) * i as f64 / n as f64;
        let slack = 1e-12 * self.h_max.max(1.0);
        let mut samples = Vec::new();
        if ext.len() == 1 {
            for i in 0..=n {
                samples.push(([grid(0, i), 0.0], (i, 0)));
            }
        } else {
            for i in 0..=n {
                for j in 0..=n {
                    samples.push(([grid(0, i), grid(1, j)], (i, j)));
                }
            }
        }
        let dim = ext.len();
        let mut values = BTreeMap::new();
        for (xp, key) in &samples {
            let h = self.eval(&xp[..dim]);
            if !h.is_finite() || h < self.h_min - slack || h > self.h_max + slack {
                return Err(Error::Geometry(format!(
                    "h({:?}) = {h} outside declared bounds [{}, {}]",
                    &xp[..dim],
                    self.h_min,
                    self.h_max
                )));
            }
            values.insert(*key, (*xp, h));
        }
        for (&(i, j), &(xp, h)) in &values {
            for nb in [(i + 1, j), (i, j + 1)] {
                if let Some(&(xq, hq)) = values.get(&nb) {
                    let d = ((xp[0] - xq[0]).powi(2) + (xp[1] - xq[1]).powi(2)).sqrt();
                    if (h - hq).abs() > self.lipschitz * d * (1.0 + 1e-9) + slack {
                        return Err(Error::Geometry(format!(
                            "h violates declared Lipschitz constant {} near x' = {:?}",
                            self.lipschitz,
                            &xp[..dim]
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Cross-section together with the height function.
#[derive(Debug, Clone)]
pub struct Domain {
    pub omega: Omega,
    pub height: HeightFunction,
}

impl Domain {
    pub fn new(omega: Omega, height: HeightFunction) -> Result<Self> {
        omega.validate()?;
        height.validate_on(&omega)?;
        if omega.dim() == 3 && !height.is_constant() {
            return Err(Error::Geometry("three-dimensional domains require a constant height".into()));
        }
        Ok(Domain { omega, height })
    }

    pub fn dim(&self) -> usize {
        self.omega.dim()
    }

    /// Bounding-box diagonal.
    pub fn diameter(&self) -> f64 {
        let ext = self.omega.extents();
        let mut s: f64 = ext.iter().map(|(a, b)| (b - a).powi(2)).sum();
        s += self.height.h_max().powi(2);
        s.sqrt()
    }

    /// Default boundary tag tolerance: `1e-10` times the domain diameter.
    pub fn tag_tolerance(&self) -> f64 {
        1e-10 * self.diameter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BoundaryTag {
    /// Bottom wall `x_d = 0`, carrying friction.
    Gamma0,
    /// Top `x_d = h(x')`.
    Gamma1,
    /// Lateral walls.
    GammaL,
}

impl BoundaryTag {
    pub fn name(self) -> &'static str {
        match self {
            BoundaryTag::Gamma0 => "gamma0",
            BoundaryTag::Gamma1 => "gamma1",
            BoundaryTag::GammaL => "gammaL",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "gamma0" => Some(BoundaryTag::Gamma0),
            "gamma1" => Some(BoundaryTag::Gamma1),
            "gammaL" => Some(BoundaryTag::GammaL),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Refinement {
    #[default]
    None,
    /// Split every simplex at its barycenter (2D only).
    Barycentric,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshOptions {
    /// Cells per unit length along each axis.
    pub resolution: usize,
    pub refinement: Refinement,
}

/// Conforming simplicial mesh with tagged boundary faces.
#[derive(Debug, Clone)]
pub struct Mesh {
    dim: usize,
    vertices: Vec<Point>,
    cells: Vec<usize>,
    faces: Vec<usize>,
    face_cells: Vec<usize>,
    face_normals: Vec<Point>,
    face_tags: Vec<BoundaryTag>,
}

fn sub(a: &Point, b: &Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: &Point, b: &Point) -> Point {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot3(a: &Point, b: &Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn simplex_det(dim: usize, p: &[Point]) -> f64 {
    let e1 = sub(&p[1], &p[0]);
    let e2 = sub(&p[2], &p[0]);
    if dim == 2 {
        e1[0] * e2[1] - e1[1] * e2[0]
    } else {
        let e3 = sub(&p[3], &p[0]);
        dot3(&e1, &cross(&e2, &e3))
    }
}

impl Mesh {
    /// Builds a mesh from raw cells, orienting them positively and extracting boundary faces.
    pub fn from_cells(dim: usize, vertices: Vec<Point>, mut cells: Vec<usize>) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::Geometry(format!("unsupported dimension {dim}")));
        }
        let nv = dim + 1;
        if !cells.len().is_multiple_of(nv) || cells.is_empty() {
            return Err(Error::Geometry("cell array length is not a multiple of the simplex size".into()));
        }
        if let Some(&bad) = cells.iter().find(|&&v| v >= vertices.len()) {
            return Err(Error::Geometry(format!("cell references missing vertex {bad}")));
        }
        let scale = vertices.iter().flat_map(|p| p.iter()).fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        for c in cells.chunks_mut(nv) {
            let p: Vec<Point> = c.iter().map(|&i| vertices[i]).collect();
            let det = simplex_det(dim, &p);
            if det.abs() <= 1e-14 * scale.powi(dim as i32) {
                return Err(Error::Geometry(format!("degenerate cell {c:?}")));
            }
            if det < 0.0 {
                c.swap(0, 1);
            }
        }
        let mut count: BTreeMap<Vec<usize>, (usize, usize, usize)> = BTreeMap::new();
        for (ci, c) in cells.chunks(nv).enumerate() {
            for skip in 0..nv {
                let mut f: Vec<usize> = c.iter().enumerate().filter(|(k, _)| *k != skip).map(|(_, &v)| v).collect();
                f.sort_unstable();
                let e = count.entry(f).or_insert((0, ci, c[skip]));
                e.0 += 1;
            }
        }
        let mut faces = Vec::new();
        let mut face_cells = Vec::new();
        let mut face_normals = Vec::new();
        for (f, (n, ci, opposite)) in count {
            if n > 2 {
                return Err(Error::Geometry(format!("non-manifold face {f:?}")));
            }
            if n == 1 {
                let p: Vec<Point> = f.iter().map(|&i| vertices[i]).collect();
                let mut nrm = if dim == 2 {
                    let t = sub(&p[1], &p[0]);
                    [t[1], -t[0], 0.0]
                } else {
                    cross(&sub(&p[1], &p[0]), &sub(&p[2], &p[0]))
                };
                let len = dot3(&nrm, &nrm).sqrt();
                nrm.iter_mut().for_each(|v| *v /= len);
                if dot3(&nrm, &sub(&vertices[opposite], &p[0])) > 0.0 {
                    nrm[..dim].iter_mut().for_each(|v| *v = -*v);
                }
                faces.extend_from_slice(&f);
                face_cells.push(ci);
                face_normals.push(nrm);
            }
        }
        Ok(Mesh { dim, vertices, cells, faces, face_cells, face_normals, face_tags: Vec::new() })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len() / (self.dim + 1)
    }

    pub fn cell(&self, i: usize) -> &[usize] {
        let nv = self.dim + 1;
        &self.cells[i * nv..(i + 1) * nv]
    }

    pub fn num_faces(&self) -> usize {
        self.face_cells.len()
    }

    pub fn face(&self, i: usize) -> &[usize] {
        &self.faces[i * self.dim..(i + 1) * self.dim]
    }

    pub fn face_cell(&self, i: usize) -> usize {
        self.face_cells[i]
    }

    pub fn face_normal(&self, i: usize) -> Point {
        self.face_normals[i]
    }

    pub fn face_tag(&self, i: usize) -> BoundaryTag {
        self.face_tags[i]
    }

    pub fn is_tagged(&self) -> bool {
        self.face_tags.len() == self.num_faces()
    }

    pub fn cell_points(&self, i: usize) -> Vec<Point> {
        self.cell(i).iter().map(|&v| self.vertices[v]).collect()
    }

    pub fn cell_volume(&self, i: usize) -> f64 {
        let det = simplex_det(self.dim, &self.cell_points(i));
        det.abs() / if self.dim == 2 { 2.0 } else { 6.0 }
    }

    pub fn volume(&self) -> f64 {
        (0..self.num_cells()).map(|i| self.cell_volume(i)).sum()
    }

    pub fn face_measure(&self, i: usize) -> f64 {
        let p: Vec<Point> = self.face(i).iter().map(|&v| self.vertices[v]).collect();
        if self.dim == 2 {
            let t = sub(&p[1], &p[0]);
            dot3(&t, &t).sqrt()
        } else {
            let c = cross(&sub(&p[1], &p[0]), &sub(&p[2], &p[0]));
            0.5 * dot3(&c, &c).sqrt()
        }
    }

    pub fn tag_measure(&self, tag: BoundaryTag) -> f64 {
        (0..self.num_faces()).filter(|&f| self.face_tags[f] == tag).map(|f| self.face_measure(f)).sum()
    }

    pub fn faces_with_tag(&self, tag: BoundaryTag) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_faces()).filter(move |&f| self.face_tags[f] == tag)
    }

    /// Largest cell diameter.
    pub fn mesh_size(&self) -> f64 {
        (0..self.num_cells())
            .map(|c| {
                let p = self.cell_points(c);
                let mut m = 0.0f64;
                for a in 0..p.len() {
                    for b in a + 1..p.len() {
                        let d = sub(&p[a], &p[b]);
                        m = m.max(dot3(&d, &d).sqrt());
                    }
                }
                m
            })
            .fold(0.0, f64::max)
    }

    /// Barycentric coordinates of `x` in cell `c`.
    pub fn barycentric(&self, c: usize, x: &Point) -> [f64; 4] {
        let p = self.cell_points(c);
        let d = self.dim;
        let mut lam = [0.0; 4];
        let det = simplex_det(d, &p);
        for k in 0..=d {
            let mut q = p.clone();
            q[k] = *x;
            lam[k] = simplex_det(d, &q) / det;
        }
        lam
    }

    /// Cell containing `x` and its barycentric coordinates.
    pub fn locate(&self, x: &Point) -> Option<(usize, [f64; 4])> {
        let mut best: Option<(usize, [f64; 4], f64)> = None;
        for c in 0..self.num_cells() {
            let lam = self.barycentric(c, x);
            let worst = lam[..=self.dim].iter().cloned().fold(f64::INFINITY, f64::min);
            if worst >= -1e-12 {
                return Some((c, lam));
            }
            if best.as_ref().is_none_or(|b| worst > b.2) {
                best = Some((c, lam, worst));
            }
        }
        best.filter(|b| b.2 > -1e-9).map(|b| (b.0, b.1))
    }

    /// Serializes to the plain-text mesh format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "trescaflow-mesh 1");
        let _ = writeln!(s, "dim {}", self.dim);
        let _ = writeln!(s, "vertices {}", self.vertices.len());
        for p in &self.vertices {
            let coords: Vec<String> = p[..self.dim].iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(s, "{}", coords.join(" "));
        }
        let _ = writeln!(s, "cells {}", self.num_cells());
        for c in 0..self.num_cells() {
            let ids: Vec<String> = self.cell(c).iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{}", ids.join(" "));
        }
        let _ = writeln!(s, "faces {}", self.num_faces());
        for f in 0..self.num_faces() {
            let tag = self.face_tags.get(f).map_or("untagged", |t| t.name());
            let ids: Vec<String> = self.face(f).iter().map(|v| v.to_string()).collect();
            let nrm: Vec<String> = self.face_normals[f][..self.dim].iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(s, "{tag} {} {} {}", ids.join(" "), self.face_cells[f], nrm.join(" "));
        }
        s
    }

    /// Parses the plain-text mesh format written by [`Mesh::to_text`].
    pub fn from_text(text: &str) -> Result<Self> {
        let mut rd = LineReader::new(text);
        let (ln, header) = rd.next("header")?;
        if header != "trescaflow-mesh 1" {
            return Err(parse_err(ln, "unknown mesh header"));
        }
        let (ln, dim) = rd.keyed("dim")?;
        if dim != 2 && dim != 3 {
            return Err(parse_err(ln, "dimension must be 2 or 3"));
        }
        let (_, nv) = rd.keyed("vertices")?;
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let (ln, l) = rd.next("vertex")?;
            let v: Vec<f64> = parse_all(l).ok_or_else(|| parse_err(ln, "bad coordinate"))?;
            if v.len() != dim {
                return Err(parse_err(ln, "wrong number of coordinates"));
            }
            let mut p = [0.0; 3];
            p[..dim].copy_from_slice(&v);
            vertices.push(p);
        }
        let (_, nc) = rd.keyed("cells")?;
        let mut cells = Vec::with_capacity(nc * (dim + 1));
        for _ in 0..nc {
            let (ln, l) = rd.next("cell")?;
            let ids: Vec<usize> = parse_all(l).ok_or_else(|| parse_err(ln, "bad vertex index"))?;
            if ids.len() != dim + 1 || ids.iter().any(|&i| i >= nv) {
                return Err(parse_err(ln, "bad cell"));
            }
            cells.extend(ids);
        }
        let (_, nf) = rd.keyed("faces")?;
        let mut faces = Vec::with_capacity(nf * dim);
        let mut face_cells = Vec::with_capacity(nf);
        let mut face_normals = Vec::with_capacity(nf);
        let mut face_tags = Vec::with_capacity(nf);
        let mut untagged = false;
        for _ in 0..nf {
            let (ln, l) = rd.next("face")?;
            let (tag, rest) = l.split_once(' ').ok_or_else(|| parse_err(ln, "bad face record"))?;
            match BoundaryTag::parse(tag) {
                Some(t) => face_tags.push(t),
                None if tag == "untagged" => untagged = true,
                None => return Err(parse_err(ln, "unknown boundary tag")),
            }
            let toks: Vec<&str> = rest.split_whitespace().collect();
            if toks.len() != 2 * dim + 1 {
                return Err(parse_err(ln, "bad face record"));
            }
            let ids: Vec<usize> = parse_all(&toks[..=dim].join(" ")).ok_or_else(|| parse_err(ln, "bad face index"))?;
            if ids[..dim].iter().any(|&i| i >= nv) || ids[dim] >= nc {
                return Err(parse_err(ln, "face index out of range"));
            }
            faces.extend_from_slice(&ids[..dim]);
            face_cells.push(ids[dim]);
            let n: Vec<f64> = parse_all(&toks[dim + 1..].join(" ")).ok_or_else(|| parse_err(ln, "bad normal"))?;
            let mut nrm = [0.0; 3];
            nrm[..dim].copy_from_slice(&n);
            face_normals.push(nrm);
        }
        if untagged {
            face_tags.clear();
        }
        Ok(Mesh { dim, vertices, cells, faces, face_cells, face_normals, face_tags })
    }

    /// Hex digest of the text serialization.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Exact equality including the bit patterns of all coordinates.
    pub fn bitwise_eq(&self, other: &Mesh) -> bool {
        let bits = |v: &[Point]| -> Vec<u64> { v.iter().flat_map(|p| p.iter().map(|x| x.to_bits())).collect() };
        self.dim == other.dim
            && bits(&self.vertices) == bits(&other.vertices)
            && self.cells == other.cells
            && self.faces == other.faces
            && self.face_cells == other.face_cells
            && bits(&self.face_normals) == bits(&other.face_normals)
            && self.face_tags == other.face_tags
    }
}

fn parse_err(line: usize, message: &str) -> Error {
    Error::Parse { line, message: message.to_string() }
}

fn parse_all<T: std::str::FromStr>(l: &str) -> Option<Vec<T>> {
    l.split_whitespace().map(|t| t.parse().ok()).collect()
}

/// Non-empty lines with their 1-based line numbers.
pub(crate) struct LineReader<'a> {
    lines: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> LineReader<'a> {
    pub(crate) fn new(text: &'a str) -> Self {
        let lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty()).collect();
        LineReader { lines, pos: 0 }
    }

    pub(crate) fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        let last = self.lines.last().map_or(0, |l| l.0);
        let r = self.lines.get(self.pos).copied().ok_or_else(|| parse_err(last + 1, &format!("unexpected end of input, expected {what}")))?;
        self.pos += 1;
        Ok(r)
    }

    /// Reads a `key value` line.
    pub(crate) fn keyed<T: std::str::FromStr>(&mut self, key: &str) -> Result<(usize, T)> {
        let (ln, l) = self.next(key)?;
        let mut it = l.split_whitespace();
        if it.next() != Some(key) {
            return Err(parse_err(ln, &format!("expected '{key}'")));
        }
        let v = it.next().and_then(|v| v.parse().ok()).ok_or_else(|| parse_err(ln, &format!("bad value for '{key}'")))?;
        Ok((ln, v))
    }
}

/// Classifies every boundary face as bottom, top or lateral.
///
/// A face is bottom if all its vertices satisfy `x_d <= tol`, top if all satisfy `|x_d - h(x')| <= tol`,
/// lateral otherwise. Faces matching both rules are rejected.
pub fn tag_boundaries(mut mesh: Mesh, height: &HeightFunction, tol: f64) -> Result<Mesh> {
    let d = mesh.dim;
    let mut tags = Vec::with_capacity(mesh.num_faces());
    for f in 0..mesh.num_faces() {
        let pts: Vec<Point> = mesh.face(f).iter().map(|&v| mesh.vertices[v]).collect();
        let bottom = pts.iter().all(|p| p[d - 1].abs() <= tol);
        let top = pts.iter().all(|p| (p[d - 1] - height.eval(&p[..d - 1])).abs() <= tol);
        let tag = match (bottom, top) {
            (true, true) => {
                return Err(Error::Geometry(format!("face {f} matches both bottom and top within tolerance {tol}")));
            }
            (true, false) => BoundaryTag::Gamma0,
            (false, true) => BoundaryTag::Gamma1,
            (false, false) => BoundaryTag::GammaL,
        };
        tags.push(tag);
    }
    mesh.face_tags = tags;
    Ok(mesh)
}

pub fn build_mesh(domain: &Domain, resolution: usize) -> Result<Mesh> {
    build_mesh_with(domain, MeshOptions { resolution, refinement: Refinement::None })
}

/// Structured mesh: the reference box is subdivided uniformly and the vertical coordinate is scaled by `h`.
pub fn build_mesh_with(domain: &Domain, opts: MeshOptions) -> Result<Mesh> {
    if opts.resolution == 0 {
        return Err(Error::Geometry("resolution must be positive".into()));
    }
    let count = |len: f64| ((opts.resolution as f64 * len).round() as usize).max(1);
    let h = &domain.height;
    let nz = count(h.h_max());
    let mesh = match domain.omega {
        Omega::Interval { a, b } => {
            let nx = count(b - a);
            let mut vertices = Vec::with_capacity((nx + 1) * (nz + 1));
            for i in 0..=nx {
                let x = a + (b - a) * i as f64 / nx as f64;
                let top = h.eval(&[x]);
                for j in 0..=nz {
                    vertices.push([x, top * j as f64 / nz as f64, 0.0]);
                }
            }
            let id = |i: usize, j: usize| i * (nz + 1) + j;
            let mut cells = Vec::with_capacity(nx * nz * 6);
            for i in 0..nx {
                for j in 0..nz {
                    let (v00, v10, v01, v11) = (id(i, j), id(i + 1, j), id(i, j + 1), id(i + 1, j + 1));
                    cells.extend_from_slice(&[v00, v10, v11, v00, v11, v01]);
                }
            }
            if opts.refinement == Refinement::Barycentric {
                let coarse = cells;
                cells = Vec::with_capacity(coarse.len() * 3);
                for t in coarse.chunks(3) {
                    let c = vertices.len();
                    let mut g = [0.0; 3];
                    for &v in t {
                        for k in 0..2 {
                            g[k] += vertices[v][k] / 3.0;
                        }
                    }
                    vertices.push(g);
                    cells.extend_from_slice(&[t[0], t[1], c, t[1], t[2], c, t[2], t[0], c]);
                }
            }
            Mesh::from_cells(2, vertices, cells)?
        }
        Omega::Rectangle { x, y } => {
            if opts.refinement != Refinement::None {
                return Err(Error::Geometry("barycentric refinement is only available in 2D".into()));
            }
            let (nx, ny) = (count(x.1 - x.0), count(y.1 - y.0));
            let top = h.h_max();
            let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
            for i in 0..=nx {
                for j in 0..=ny {
                    for k in 0..=nz {
                        vertices.push([
                            x.0 + (x.1 - x.0) * i as f64 / nx as f64,
                            y.0 + (y.1 - y.0) * j as f64 / ny as f64,
                            top * k as f64 / nz as f64,
                        ]);
                    }
                }
            }
            let id = |i: usize, j: usize, k: usize| (i * (ny + 1) + j) * (nz + 1) + k;
            let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
            let mut cells = Vec::with_capacity(nx * ny * nz * 24);
            for i in 0..nx {
                for j in 0..ny {
                    for k in 0..nz {
                        // Kuhn subdivision along monotone paths from (0,0,0) to (1,1,1)
                        for p in &perms {
                            let mut c = [i, j, k];
                            cells.push(id(c[0], c[1], c[2]));
                            for &axis in p {
                                c[axis] += 1;
                                cells.push(id(c[0], c[1], c[2]));
                            }
                        }
                    }
                }
            }
            Mesh::from_cells(3, vertices, cells)?
        }
    };
    tag_boundaries(mesh, h, domain.tag_tolerance())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square() -> Domain {
        Domain::new(Omega::Interval { a: 0.0, b: 1.0 }, HeightFunction::constant(1.0).unwrap()).unwrap()
    }

    #[test]
    fn unit_square_area_and_tags() {
        let m = build_mesh(&unit_square(), 2).unwrap();
        assert_eq!(m.num_cells(), 8);
        assert!((m.volume() - 1.0).abs() < 1e-14);
        assert!((m.tag_measure(BoundaryTag::Gamma0) - 1.0).abs() < 1e-14);
        assert!((m.tag_measure(BoundaryTag::Gamma1) - 1.0).abs() < 1e-14);
        assert!((m.tag_measure(BoundaryTag::GammaL) - 2.0).abs() < 1e-14);
        for f in m.faces_with_tag(BoundaryTag::Gamma0) {
            let n = m.face_normal(f);
            assert!((n[0]).abs() < 1e-15 && (n[1] + 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn linear_top_area() {
        let h = HeightFunction::new(|x| 1.0 + 0.5 * x[0], 1.0, 1.5, 0.5).unwrap();
        let d = Domain::new(Omega::Interval { a: 0.0, b: 1.0 }, h).unwrap();
        let m = build_mesh(&d, 8).unwrap();
        assert!((m.volume() - 1.25).abs() < 1e-13);
        let top_len = (1.0f64 + 0.25).sqrt();
        assert!((m.tag_measure(BoundaryTag::Gamma1) - top_len).abs() < 1e-13);
        assert!((m.tag_measure(BoundaryTag::GammaL) - 2.5).abs() < 1e-13);
    }

    #[test]
    fn box_volume_and_tags() {
        let d = Domain::new(Omega::Rectangle { x: (0.0, 1.0), y: (0.0, 2.0) }, HeightFunction::constant(0.5).unwrap()).unwrap();
        let m = build_mesh(&d, 2).unwrap();
        assert!((m.volume() - 1.0).abs() < 1e-13);
        assert!((m.tag_measure(BoundaryTag::Gamma0) - 2.0).abs() < 1e-13);
        assert!((m.tag_measure(BoundaryTag::Gamma1) - 2.0).abs() < 1e-13);
        assert!((m.tag_measure(BoundaryTag::GammaL) - 3.0).abs() < 1e-13);
        for c in 0..m.num_cells() {
            assert!(m.cell_volume(c) > 0.0);
        }
    }

    #[test]
    fn barycentric_refinement_preserves_measures() {
        let opts = MeshOptions { resolution: 3, refinement: Refinement::Barycentric };
        let m = build_mesh_with(&unit_square(), opts).unwrap();
        assert_eq!(m.num_cells(), 3 * 2 * 9);
        assert!((m.volume() - 1.0).abs() < 1e-14);
        assert!((m.tag_measure(BoundaryTag::Gamma0) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(HeightFunction::constant(0.0).is_err());
        assert!(HeightFunction::new(|_| 1.0, 2.0, 1.0, 0.0).is_err());
        let wrong_bounds = HeightFunction::new(|x| 1.0 + x[0], 1.0, 1.5, 1.0).unwrap();
        assert!(Domain::new(Omega::Interval { a: 0.0, b: 1.0 }, wrong_bounds).is_err());
        let wrong_lip = HeightFunction::new(|x| 1.0 + 0.5 * x[0], 1.0, 1.5, 0.1).unwrap();
        assert!(Domain::new(Omega::Interval { a: 0.0, b: 1.0 }, wrong_lip).is_err());
        assert!(Domain::new(Omega::Interval { a: 1.0, b: 1.0 }, HeightFunction::constant(1.0).unwrap()).is_err());
    }

    #[test]
    fn ambiguous_face_is_rejected() {
        // a vertical sliver whose bottom and top are both within tolerance of the wall
        let mesh = Mesh::from_cells(2, vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1e-12, 0.0]], vec![0, 1, 2]);
        let h = HeightFunction::constant(1e-12).unwrap();
        if let Ok(m) = mesh {
            assert!(tag_boundaries(m, &h, 1e-10).is_err());
        }
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        let h = HeightFunction::new(|x| 1.0 + 0.1 * (3.0 * x[0]).sin(), 0.9, 1.1, 0.3).unwrap();
        let d = Domain::new(Omega::Interval { a: 0.0, b: 1.0 }, h).unwrap();
        let m = build_mesh(&d, 5).unwrap();
        let text = m.to_text();
        let back = Mesh::from_text(&text).unwrap();
        assert!(m.bitwise_eq(&back));
        assert_eq!(back.to_text(), text);
        assert_eq!(m.hash(), back.hash());
    }

    #[test]
    fn malformed_text_reports_line() {
        let bad = "trescaflow-mesh 1\ndim 2\nvertices 1\n0.0 abc\n";
        match Mesh::from_text(bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn locate_finds_points() {
        let m = build_mesh(&unit_square(), 3).unwrap();
        let (c, lam) = m.locate(&[0.3, 0.7, 0.0]).unwrap();
        assert!(lam[..3].iter().all(|&l| l >= -1e-12));
        let p = m.cell_points(c);
        let x: f64 = (0..3).map(|k| lam[k] * p[k][0]).sum();
        assert!((x - 0.3).abs() < 1e-14);
    }
}

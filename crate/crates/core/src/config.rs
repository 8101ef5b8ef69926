//! TOML experiment configuration with named coefficient functions.
//!
//! Unknown keys are rejected. Every constraint violation is reported, not only the first.
//! Values can be overridden from the environment: `TRESCAFLOW_SOLVER__DELTA=1e-4` sets
//! `solver.delta`; the value is read as a TOML literal and falls back to a string.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{cavity_shear, Experiment};
use crate::forms::{FrictionThreshold, TemperatureField, ViscosityKind, ViscosityModel};
use crate::geometry::{Domain, HeightFunction, MeshOptions, Omega, Point, Refinement};
use crate::lifting::{BoundaryData, LiftingOptions, TimeProfile};
use crate::solver::{Forcing, InitialVelocity, PhysicalData, SolverConfig};
use crate::spaces::BottomCondition;

pub const ENV_PREFIX: &str = "TRESCAFLOW_";

/// Scalar coefficient of position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarSpec {
    Constant { value: f64 },
    /// `value + gradient . x`
    Linear { value: f64, gradient: Vec<f64> },
    /// `mean + amplitude * sin(pi * wavenumber . x + phase)`
    Sinusoidal { mean: f64, amplitude: f64, wavenumber: Vec<f64>, phase: f64 },
    /// Piecewise linear in coordinate `axis`, constant outside the table.
    Tabulated { axis: usize, points: Vec<f64>, values: Vec<f64> },
}

fn dot(a: &[f64], x: &[f64]) -> f64 {
    a.iter().zip(x).map(|(p, q)| p * q).sum()
}

fn interp(points: &[f64], values: &[f64], x: f64) -> f64 {
    if x <= points[0] {
        return values[0];
    }
    for k in 1..points.len() {
        if x <= points[k] {
            let s = (x - points[k - 1]) / (points[k] - points[k - 1]);
            return values[k - 1] + s * (values[k] - values[k - 1]);
        }
    }
    *values.last().expect("non-empty table")
}

impl ScalarSpec {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            ScalarSpec::Constant { value } => *value,
            ScalarSpec::Linear { value, gradient } => value + dot(gradient, x),
            ScalarSpec::Sinusoidal { mean, amplitude, wavenumber, phase } => mean + amplitude * (PI * dot(wavenumber, x) + phase).sin(),
            ScalarSpec::Tabulated { axis, points, values } => interp(points, values, x.get(*axis).copied().unwrap_or(0.0)),
        }
    }

    fn violations(&self, what: &str, dim: usize, out: &mut Vec<String>) {
        let long = |v: &Vec<f64>| v.len() > dim;
        match self {
            ScalarSpec::Linear { gradient, .. } if long(gradient) => out.push(format!("{what}: gradient has more than {dim} entries")),
            ScalarSpec::Sinusoidal { wavenumber, .. } if long(wavenumber) => out.push(format!("{what}: wavenumber has more than {dim} entries")),
            ScalarSpec::Tabulated { axis, points, values } => {
                if *axis >= dim {
                    out.push(format!("{what}: axis {axis} out of range for dimension {dim}"));
                }
                if points.len() < 2 || points.len() != values.len() {
                    out.push(format!("{what}: table needs at least two points and matching values"));
                } else if points.windows(2).any(|w| !(w[1] > w[0])) {
                    out.push(format!("{what}: table points must increase"));
                }
            }
            _ => {}
        }
    }

    /// Conservative `(min, max, lipschitz)` over the box `[lo, hi]`.
    pub fn range(&self, lo: &[f64], hi: &[f64]) -> (f64, f64, f64) {
        match self {
            ScalarSpec::Constant { value } => (*value, *value, 0.0),
            ScalarSpec::Linear { value, gradient } => {
                let (mut a, mut b) = (*value, *value);
                for (i, g) in gradient.iter().enumerate().take(lo.len()) {
                    let (p, q) = (g * lo[i], g * hi[i]);
                    a += p.min(q);
                    b += p.max(q);
                }
                (a, b, dot(gradient, gradient).sqrt())
            }
            ScalarSpec::Sinusoidal { mean, amplitude, wavenumber, .. } => {
                (mean - amplitude.abs(), mean + amplitude.abs(), amplitude.abs() * PI * dot(wavenumber, wavenumber).sqrt())
            }
            ScalarSpec::Tabulated { points, values, .. } => {
                let a = values.iter().copied().fold(f64::INFINITY, f64::min);
                let b = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lip = points
                    .windows(2)
                    .zip(values.windows(2))
                    .map(|(p, v)| ((v[1] - v[0]) / (p[1] - p[0])).abs())
                    .fold(0.0, f64::max);
                (a, b, lip)
            }
        }
    }
}

/// Vector coefficient of position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VectorSpec {
    Zero,
    Constant { value: Vec<f64> },
    /// First component `amplitude * 16 x^2 (1 - x)^2` on the unit interval.
    Bump { amplitude: f64 },
    /// Second component `amplitude * sin(pi x) sin(pi y)`.
    CavityMode { amplitude: f64 },
    /// `(speed (1 - y / height), 0)`
    Couette { speed: f64, height: f64 },
    /// `(4 peak y (height - y) / height^2, 0)`
    Poiseuille { peak: f64, height: f64 },
    /// Each component piecewise linear in coordinate `axis`.
    Tabulated { axis: usize, points: Vec<f64>, values: Vec<Vec<f64>> },
}

impl VectorSpec {
    pub fn eval(&self, x: &Point, dim: usize) -> [f64; 3] {
        let mut v = [0.0; 3];
        let y = x[dim - 1];
        match self {
            VectorSpec::Zero => {}
            VectorSpec::Constant { value } => value.iter().take(3).enumerate().for_each(|(i, c)| v[i] = *c),
            VectorSpec::Bump { amplitude } => v[0] = amplitude * cavity_shear(x[0]),
            VectorSpec::CavityMode { amplitude } => v[dim - 1] = amplitude * (PI * x[0]).sin() * (PI * y).sin(),
            VectorSpec::Couette { speed, height } => v[0] = speed * (1.0 - y / height),
            VectorSpec::Poiseuille { peak, height } => v[0] = 4.0 * peak * y * (height - y) / (height * height),
            VectorSpec::Tabulated { axis, points, values } => {
                for (i, vi) in v.iter_mut().enumerate().take(dim) {
                    let comp: Vec<f64> = values.iter().map(|r| r.get(i).copied().unwrap_or(0.0)).collect();
                    *vi = interp(points, &comp, x[*axis]);
                }
            }
        }
        v
    }

    fn violations(&self, what: &str, dim: usize, out: &mut Vec<String>) {
        match self {
            VectorSpec::Constant { value } if value.len() > dim => out.push(format!("{what}: more than {dim} components")),
            VectorSpec::Couette { height, .. } | VectorSpec::Poiseuille { height, .. } if !(*height > 0.0) => {
                out.push(format!("{what}: height must be positive"))
            }
            VectorSpec::Tabulated { axis, points, values } => {
                if *axis >= dim {
                    out.push(format!("{what}: axis {axis} out of range for dimension {dim}"));
                }
                if points.len() < 2 || points.len() != values.len() {
                    out.push(format!("{what}: table needs at least two points and matching values"));
                } else if points.windows(2).any(|w| !(w[1] > w[0])) {
                    out.push(format!("{what}: table points must increase"));
                }
            }
            _ => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OmegaSpec {
    Interval { a: f64, b: f64 },
    Rectangle { x: [f64; 2], y: [f64; 2] },
}

impl OmegaSpec {
    fn omega(&self) -> Omega {
        match self {
            OmegaSpec::Interval { a, b } => Omega::Interval { a: *a, b: *b },
            OmegaSpec::Rectangle { x, y } => Omega::Rectangle { x: (x[0], x[1]), y: (y[0], y[1]) },
        }
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            OmegaSpec::Interval { a, b } => (vec![*a], vec![*b]),
            OmegaSpec::Rectangle { x, y } => (vec![x[0], y[0]], vec![x[1], y[1]]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub omega: OmegaSpec,
    pub height: ScalarSpec,
    pub resolution: usize,
    pub refinement: Refinement,
    pub degree: usize,
    pub bottom: BottomCondition,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            omega: OmegaSpec::Interval { a: 0.0, b: 1.0 },
            height: ScalarSpec::Constant { value: 1.0 },
            resolution: 4,
            refinement: Refinement::Barycentric,
            degree: 2,
            bottom: BottomCondition::Slip,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViscosityConfig {
    pub model: ViscosityKind,
    /// Bounds on `2 mu`.
    pub lower: f64,
    pub upper: f64,
}

impl Default for ViscosityConfig {
    fn default() -> Self {
        ViscosityConfig { model: ViscosityKind::Exponential { mu0: 0.5, beta: 0.5, t_ref: 0.0 }, lower: 0.5, upper: 1.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialConfig {
    pub field: VectorSpec,
    /// The field is the homogenized velocity rather than the full one.
    pub homogenized: bool,
}

impl Default for InitialConfig {
    fn default() -> Self {
        InitialConfig { field: VectorSpec::CavityMode { amplitude: 1.0 }, homogenized: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsConfig {
    pub viscosity: ViscosityConfig,
    pub temperature: ScalarSpec,
    pub friction: ScalarSpec,
    pub force: VectorSpec,
    /// Velocity on the lateral boundary.
    pub lateral: VectorSpec,
    /// Tangential velocity of the bottom wall.
    pub shear: VectorSpec,
    pub zeta: TimeProfile,
    pub initial: InitialConfig,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        PhysicsConfig {
            viscosity: ViscosityConfig::default(),
            temperature: ScalarSpec::Linear { value: 0.0, gradient: vec![0.0, 1.0] },
            friction: ScalarSpec::Constant { value: 0.3 },
            force: VectorSpec::Constant { value: vec![0.0, -1.0] },
            lateral: VectorSpec::Zero,
            shear: VectorSpec::Bump { amplitude: 1.0 },
            zeta: TimeProfile::Constant,
            initial: InitialConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub deltas: Vec<f64>,
    pub epsilons: Vec<f64>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig { deltas: vec![1e-2, 1e-3, 1e-4], epsilons: vec![1e-1, 1e-2, 1e-3] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: String,
    /// Keep every n-th step; 0 keeps only the first and last.
    pub snapshot_every: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { directory: "out".into(), snapshot_every: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub geometry: GeometryConfig,
    pub physics: PhysicsConfig,
    pub solver: SolverConfig,
    pub study: StudyConfig,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "shear-cavity".into(),
            geometry: GeometryConfig::default(),
            physics: PhysicsConfig::default(),
            solver: SolverConfig { delta: 1e-3, eps: 1e-2, dt: 2e-6, tau: 0.0125, ..SolverConfig::default() },
            study: StudyConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

/// Dotted paths present in `input` but absent from `known`.
fn unknown_keys(input: &toml::Value, known: &toml::Value, path: &str, out: &mut Vec<String>) {
    if let (toml::Value::Table(a), toml::Value::Table(b)) = (input, known) {
        for (k, v) in a {
            let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
            match b.get(k) {
                Some(w) => unknown_keys(v, w, &p, out),
                None => out.push(format!("unknown key `{p}`")),
            }
        }
    }
}

fn parse_env_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(root: &mut toml::Table, path: &[String], value: toml::Value) {
    let mut table = root;
    for key in &path[..path.len() - 1] {
        let entry = table.entry(key.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        if !entry.is_table() {
            *entry = toml::Value::Table(toml::Table::new());
        }
        table = entry.as_table_mut().expect("just made a table");
    }
    table.insert(path[path.len() - 1].clone(), value);
}

/// Applies `TRESCAFLOW_A__B=value` overrides, sorted by variable name.
pub fn apply_env_overrides(table: &mut toml::Table, vars: impl IntoIterator<Item = (String, String)>) {
    let mut vars: Vec<(String, String)> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    vars.sort();
    for (k, v) in vars {
        let path: Vec<String> = k[ENV_PREFIX.len()..].split("__").map(|s| s.to_ascii_lowercase()).collect();
        if path.iter().any(|p| p.is_empty()) {
            continue;
        }
        set_path(table, &path, parse_env_value(&v));
    }
}

/// Parses and validates a configuration. All problems are returned together.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    parse_config_with_env(text, std::iter::empty())
}

pub fn parse_config_with_env(text: &str, env: impl IntoIterator<Item = (String, String)>) -> Result<ExperimentConfig> {
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(vec![e.to_string()]))?;
    apply_env_overrides(&mut table, env);
    let input = toml::Value::Table(table.clone());
    let cfg: ExperimentConfig = match toml::Value::Table(table).try_into() {
        Ok(c) => c,
        Err(e) => {
            // field errors stop deserialization; still list every unknown key we can find
            let mut v = Vec::new();
            let known = toml::Value::try_from(ExperimentConfig::default()).expect("defaults serialize");
            unknown_keys(&input, &known, "", &mut v);
            if v.is_empty() {
                v.push(e.to_string());
            }
            return Err(Error::Config(v));
        }
    };
    let known = toml::Value::try_from(&cfg).map_err(|e| Error::Config(vec![e.to_string()]))?;
    let mut v = Vec::new();
    unknown_keys(&input, &known, "", &mut v);
    v.extend(cfg.violations());
    if v.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(v))
    }
}

impl ExperimentConfig {
    pub fn dim(&self) -> usize {
        self.geometry.omega.omega().dim()
    }

    fn domain_box(&self) -> (Vec<f64>, Vec<f64>) {
        let (mut lo, mut hi) = self.geometry.omega.bounds();
        let (_, hmax, _) = self.geometry.height.range(&lo, &hi);
        lo.push(0.0);
        hi.push(hmax.max(0.0));
        (lo, hi)
    }

    /// Every constraint violation, in a stable order.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let dim = self.dim();
        let g = &self.geometry;
        if let Err(e) = g.omega.omega().validate() {
            v.push(format!("geometry.omega: {e}"));
        }
        g.height.violations("geometry.height", dim - 1, &mut v);
        let (lo, hi) = g.omega.bounds();
        let (hmin, _, _) = g.height.range(&lo, &hi);
        if !(hmin > 0.0) {
            v.push(format!("geometry.height: must stay positive, minimum {hmin}"));
        }
        if g.resolution == 0 {
            v.push("geometry.resolution must be at least 1".into());
        }
        if !(1..=2).contains(&g.degree) {
            v.push(format!("geometry.degree must be 1 or 2, got {}", g.degree));
        }
        if g.refinement == Refinement::Barycentric && dim != 2 {
            v.push("geometry.refinement: barycentric refinement needs a two-dimensional domain".into());
        }

        let p = &self.physics;
        let visc = &p.viscosity;
        if !(visc.lower > 0.0 && visc.upper >= visc.lower) {
            v.push(format!("physics.viscosity: bounds must satisfy 0 < lower <= upper, got {} and {}", visc.lower, visc.upper));
        }
        p.temperature.violations("physics.temperature", dim, &mut v);
        p.friction.violations("physics.friction", dim, &mut v);
        let (blo, bhi) = self.domain_box();
        let (tlo, thi, _) = p.temperature.range(&blo, &bhi);
        if v.is_empty() {
            if let Err(e) = ViscosityModel::new(visc.model, visc.lower, visc.upper, (tlo, thi)) {
                v.push(format!("physics.viscosity: {e}"));
            }
        }
        let (llo, _, _) = p.friction.range(&blo, &bhi);
        if llo < 0.0 {
            v.push(format!("physics.friction: threshold must be nonnegative, minimum {llo}"));
        }
        p.force.violations("physics.force", dim, &mut v);
        p.lateral.violations("physics.lateral", dim, &mut v);
        p.shear.violations("physics.shear", dim, &mut v);
        p.initial.field.violations("physics.initial.field", dim, &mut v);
        if let Err(e) = p.zeta.validate() {
            v.push(format!("physics.zeta: {e}"));
        }

        v.extend(self.solver.violations().into_iter().map(|m| format!("solver: {m}")));
        for (name, list) in [("study.deltas", &self.study.deltas), ("study.epsilons", &self.study.epsilons)] {
            if list.iter().any(|x| !(*x > 0.0)) {
                v.push(format!("{name}: values must be positive"));
            }
        }
        if self.output.directory.is_empty() {
            v.push("output.directory must not be empty".into());
        }

        // lateral data compatibility needs the mesh
        if v.is_empty() {
            if let Err(e) = self.to_experiment().and_then(|e| e.prepare()) {
                v.push(format!("physics.lateral: {e}"));
            }
        }
        v
    }

    /// The runnable experiment described by this configuration.
    pub fn to_experiment(&self) -> Result<Experiment> {
        let dim = self.dim();
        let g = &self.geometry;
        let (lo, hi) = g.omega.bounds();
        let (hmin, hmax, hlip) = g.height.range(&lo, &hi);
        let hs = g.height.clone();
        let height = HeightFunction::new(move |x| hs.eval(x), hmin, hmax, hlip)?;
        let domain = Domain::new(g.omega.omega(), height)?;

        let p = &self.physics;
        let (blo, bhi) = self.domain_box();
        let (tlo, thi, _) = p.temperature.range(&blo, &bhi);
        let viscosity = ViscosityModel::new(p.viscosity.model, p.viscosity.lower, p.viscosity.upper, (tlo, thi))?;
        let ts = p.temperature.clone();
        let temperature = TemperatureField::new(move |x, _| ts.eval(&x[..dim]), (tlo, thi), false);
        let (_, lhi, _) = p.friction.range(&blo, &bhi);
        let fs = p.friction.clone();
        let friction = FrictionThreshold::new(move |_, x| fs.eval(&x[..dim]), lhi)?;
        let force = match &p.force {
            VectorSpec::Zero => Forcing::zero(),
            f => {
                let f = f.clone();
                Forcing::new(move |x, _| f.eval(x, dim), false)
            }
        };
        let boundary = if p.lateral == VectorSpec::Zero && p.shear == VectorSpec::Zero {
            BoundaryData::zero()
        } else {
            let (gl, sh) = (p.lateral.clone(), p.shear.clone());
            BoundaryData::new(move |x| gl.eval(x, dim), move |x| sh.eval(x, dim), p.zeta.clone())?
        };
        let init = p.initial.field.clone();
        let initial = if p.initial.field == VectorSpec::Zero && p.initial.homogenized {
            InitialVelocity::rest()
        } else if p.initial.homogenized {
            InitialVelocity::homogenized(move |x| init.eval(x, dim))
        } else {
            InitialVelocity::full(move |x| init.eval(x, dim))
        };
        Ok(Experiment {
            name: self.name.clone(),
            domain,
            mesh: MeshOptions { resolution: g.resolution, refinement: g.refinement },
            degree: g.degree,
            bottom: g.bottom,
            data: PhysicalData { viscosity, temperature, friction, force, boundary, initial, initial_perturbation: 0.0 },
            solver: self.solver,
            lifting: LiftingOptions::default(),
        })
    }

    /// The effective configuration, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_defaults() {
        let c = parse_config("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        let again = parse_config(&c.to_toml()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn zeta_not_one_at_zero_is_rejected() {
        let err = parse_config("[physics.zeta]\nkind = \"tabulated\"\ntimes = [0.0, 1.0]\nvalues = [0.9, 1.0]\n").unwrap_err();
        assert!(err.to_string().contains("ζ(0)=1"), "{err}");
    }

    #[test]
    fn zero_delta_is_rejected() {
        let err = parse_config("[solver]\ndelta = 0.0\n").unwrap_err();
        assert!(err.to_string().contains("delta"), "{err}");
    }

    #[test]
    fn all_violations_are_listed() {
        let text = "bogus = 1\n[solver]\ndelta = 0.0\neps = -1.0\nfoo = 2\n[geometry]\ndegree = 5\n";
        let Error::Config(v) = parse_config(text).unwrap_err() else { panic!("expected config error") };
        assert!(v.iter().any(|m| m.contains("`bogus`")), "{v:?}");
        assert!(v.iter().any(|m| m.contains("`solver.foo`")), "{v:?}");
        // unknown keys block deserialization of the typed tree, so we only see them here
        let text = "[solver]\ndelta = 0.0\neps = -1.0\n[geometry]\ndegree = 5\n";
        let Error::Config(v) = parse_config(text).unwrap_err() else { panic!("expected config error") };
        assert!(v.len() >= 3, "{v:?}");
    }

    #[test]
    fn env_overrides_nested_keys() {
        let env = vec![
            ("TRESCAFLOW_SOLVER__DELTA".to_string(), "1e-4".to_string()),
            ("TRESCAFLOW_NAME".to_string(), "from-env".to_string()),
            ("OTHER".to_string(), "x".to_string()),
        ];
        let c = parse_config_with_env("", env).unwrap();
        assert_eq!(c.solver.delta, 1e-4);
        assert_eq!(c.name, "from-env");
    }

    #[test]
    fn incompatible_lateral_data_is_rejected() {
        let text = "[physics.lateral]\nkind = \"constant\"\nvalue = [1.0, 0.0]\n[physics.shear]\nkind = \"zero\"\n";
        let err = parse_config(text).unwrap_err();
        assert!(err.to_string().contains("physics.lateral"), "{err}");
    }

    #[test]
    fn scalar_ranges_contain_samples() {
        let specs = [
            ScalarSpec::Linear { value: 1.0, gradient: vec![0.5, -2.0] },
            ScalarSpec::Sinusoidal { mean: 1.0, amplitude: 0.3, wavenumber: vec![2.0, 1.0], phase: 0.4 },
            ScalarSpec::Tabulated { axis: 1, points: vec![0.0, 0.5, 1.0], values: vec![0.0, 2.0, 1.0] },
        ];
        for s in &specs {
            let (a, b, _) = s.range(&[0.0, 0.0], &[1.0, 1.0]);
            for i in 0..=20 {
                for j in 0..=20 {
                    let v = s.eval(&[i as f64 / 20.0, j as f64 / 20.0]);
                    assert!(v >= a - 1e-12 && v <= b + 1e-12);
                }
            }
        }
    }

    #[test]
    fn default_config_matches_builtin_case() {
        let e = ExperimentConfig::default().to_experiment().unwrap();
        let b = crate::experiment::shear_cavity();
        assert_eq!(e.solver, b.solver);
        assert_eq!(e.mesh, b.mesh);
        let x = [0.3, 0.7, 0.0];
        assert_eq!(e.data.initial.eval(&x), b.data.initial.eval(&x));
        assert_eq!(e.data.boundary.s(&x), b.data.boundary.s(&x));
        assert_eq!(e.data.force.eval(&x, 0.0), b.data.force.eval(&x, 0.0));
        assert_eq!(e.data.viscosity.mu(0.4), b.data.viscosity.mu(0.4));
    }
}

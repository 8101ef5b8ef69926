//! On-disk formats: field snapshots, per-step diagnostics and study tables.
//!
//! Column lists and snapshot header fields are frozen in `schema/v1.json`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diagnostics::StudyTable;
use crate::error::{Error, Result};
use crate::mms::ConvergenceTable;
use crate::solver::{FlowState, StepRecord};
use crate::spaces::{FieldCoefficients, ScalarField};

pub const SCHEMA_V1: &str = include_str!("../schema/v1.json");
pub const SCHEMA_VERSION: u32 = 1;
const MAGIC: &str = "trescaflow-snapshot";

/// Per-step row of `diagnostics.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRow {
    pub t: f64,
    pub energy: f64,
    pub div_norm: f64,
    pub friction_value: f64,
    pub nonlinear_iters: usize,
    pub pressure_mean: f64,
}

impl From<&StepRecord> for DiagnosticsRow {
    fn from(r: &StepRecord) -> Self {
        DiagnosticsRow {
            t: r.t,
            energy: r.energy,
            div_norm: r.div_norm,
            friction_value: r.friction_value,
            nonlinear_iters: r.nonlinear_iters,
            pressure_mean: r.pressure_mean,
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Snapshot(format!("csv: {e}"))
}

fn write_rows<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Snapshot(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Snapshot(e.to_string()))
}

fn read_rows<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>> {
    csv::Reader::from_reader(text.as_bytes()).deserialize().map(|r| r.map_err(csv_err)).collect()
}

pub fn diagnostics_csv(records: &[StepRecord]) -> Result<String> {
    let rows: Vec<DiagnosticsRow> = records.iter().map(DiagnosticsRow::from).collect();
    if rows.is_empty() {
        // header only
        return Ok("t,energy,div_norm,friction_value,nonlinear_iters,pressure_mean\n".into());
    }
    write_rows(rows)
}

pub fn read_diagnostics_csv(text: &str) -> Result<Vec<DiagnosticsRow>> {
    read_rows(text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyCsvRow {
    pub parameter: String,
    pub value: f64,
    pub metric: String,
    pub measured: f64,
}

/// Long-format table: one line per (parameter value, metric).
pub fn study_csv(table: &StudyTable) -> Result<String> {
    let mut rows = Vec::new();
    for r in &table.rows {
        for (m, v) in &r.metrics {
            rows.push(StudyCsvRow { parameter: table.parameter.into(), value: r.value, metric: (*m).into(), measured: *v });
        }
        if r.failure.is_some() {
            rows.push(StudyCsvRow { parameter: table.parameter.into(), value: r.value, metric: "failed".into(), measured: 1.0 });
        }
    }
    write_rows(rows)
}

pub fn read_study_csv(text: &str) -> Result<Vec<StudyCsvRow>> {
    read_rows(text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceCsvRow {
    pub parameter: f64,
    pub l2_error: f64,
    pub h1_error: f64,
    pub l2_order: Option<f64>,
    pub h1_order: Option<f64>,
}

pub fn convergence_csv(table: &ConvergenceTable) -> Result<String> {
    let rows: Vec<ConvergenceCsvRow> = (0..table.parameter.len())
        .map(|i| ConvergenceCsvRow {
            parameter: table.parameter[i],
            l2_error: table.l2[i],
            h1_error: table.h1[i],
            l2_order: i.checked_sub(1).map(|k| table.orders[k]),
            h1_order: i.checked_sub(1).map(|k| table.h1_orders[k]),
        })
        .collect();
    write_rows(rows)
}

/// A stored solution state.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub mesh_sha256: String,
    pub degree: usize,
    pub t: f64,
    pub delta: f64,
    pub eps: f64,
    pub step: usize,
    /// Free coefficients of the homogenized velocity.
    pub vtilde: Vec<f64>,
    pub pressure: ScalarField,
}

impl Snapshot {
    pub fn from_state(state: &FlowState, mesh_sha256: &str, degree: usize, delta: f64, eps: f64) -> Self {
        Snapshot {
            mesh_sha256: mesh_sha256.into(),
            degree,
            t: state.t,
            delta,
            eps,
            step: state.step,
            vtilde: state.vtilde.values.clone(),
            pressure: state.pressure.clone(),
        }
    }

    pub fn to_state(&self) -> FlowState {
        FlowState { t: self.t, step: self.step, vtilde: FieldCoefficients { values: self.vtilde.clone() }, pressure: self.pressure.clone() }
    }

    /// Text form; numbers use the shortest representation that reads back exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC} {SCHEMA_VERSION}");
        let _ = writeln!(s, "mesh_sha256 {}", self.mesh_sha256);
        let _ = writeln!(s, "degree {}", self.degree);
        let _ = writeln!(s, "t {:e}", self.t);
        let _ = writeln!(s, "delta {:e}", self.delta);
        let _ = writeln!(s, "eps {:e}", self.eps);
        let _ = writeln!(s, "step {}", self.step);
        let _ = writeln!(s, "vtilde {}", self.vtilde.len());
        for v in &self.vtilde {
            let _ = writeln!(s, "{v:e}");
        }
        let p = &self.pressure;
        let _ = writeln!(s, "pressure {} {} {}", p.degree, p.dim, p.values.len());
        for v in &p.values {
            let _ = writeln!(s, "{v:e}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let mut next = |what: &str| -> Result<(usize, Vec<&str>)> {
            let (i, l) = lines.next().ok_or_else(|| Error::Snapshot(format!("truncated before {what}")))?;
            Ok((i + 1, l.split_whitespace().collect()))
        };
        fn bad(line: usize, m: &str) -> Error {
            Error::Parse { line, message: m.into() }
        }
        fn num<T: std::str::FromStr>(line: usize, s: Option<&&str>) -> Result<T> {
            s.and_then(|v| v.parse().ok()).ok_or_else(|| bad(line, "malformed number"))
        }
        let (l, w) = next("magic")?;
        if w.first() != Some(&MAGIC) {
            return Err(bad(l, "not a snapshot"));
        }
        let version: u32 = num(l, w.get(1))?;
        if version != SCHEMA_VERSION {
            return Err(Error::Snapshot(format!("unsupported snapshot version {version}")));
        }
        let mut field = |key: &str| -> Result<(usize, String)> {
            let (l, w) = next(key)?;
            if w.first() != Some(&key) || w.len() != 2 {
                return Err(bad(l, &format!("expected `{key} <value>`")));
            }
            Ok((l, w[1].to_string()))
        };
        let (_, mesh_sha256) = field("mesh_sha256")?;
        let (l, v) = field("degree")?;
        let degree = num(l, Some(&v.as_str()))?;
        let (l, v) = field("t")?;
        let t = num(l, Some(&v.as_str()))?;
        let (l, v) = field("delta")?;
        let delta = num(l, Some(&v.as_str()))?;
        let (l, v) = field("eps")?;
        let eps = num(l, Some(&v.as_str()))?;
        let (l, v) = field("step")?;
        let step = num(l, Some(&v.as_str()))?;
        let (l, v) = field("vtilde")?;
        let n: usize = num(l, Some(&v.as_str()))?;
        let mut vtilde = Vec::with_capacity(n);
        for _ in 0..n {
            let (l, w) = next("vtilde values")?;
            vtilde.push(num(l, w.first())?);
        }
        let (l, w) = next("pressure")?;
        if w.first() != Some(&"pressure") || w.len() != 4 {
            return Err(bad(l, "expected `pressure <degree> <dim> <n>`"));
        }
        let (pd, dim, m): (usize, usize, usize) = (num(l, w.get(1))?, num(l, w.get(2))?, num(l, w.get(3))?);
        let mut values = Vec::with_capacity(m);
        for _ in 0..m {
            let (l, w) = next("pressure values")?;
            values.push(num(l, w.first())?);
        }
        Ok(Snapshot { mesh_sha256, degree, t, delta, eps, step, vtilde, pressure: ScalarField { degree: pd, dim, values } })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        Ok(fs::write(path, self.to_text())?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema_columns(key: &str) -> Vec<String> {
        let v: serde_json::Value = serde_json::from_str(SCHEMA_V1).unwrap();
        v[key]["columns"].as_array().unwrap().iter().map(|c| c.as_str().unwrap().to_string()).collect()
    }

    fn header(csv_text: &str) -> Vec<String> {
        csv_text.lines().next().unwrap().split(',').map(String::from).collect()
    }

    #[test]
    fn snapshot_round_trip_is_exact() {
        let s = Snapshot {
            mesh_sha256: "ab12".into(),
            degree: 2,
            t: 0.1 + 0.2,
            delta: 1e-3,
            eps: 1e-2,
            step: 7,
            vtilde: vec![1.0 / 3.0, -2.5e-300, 0.0, f64::MIN_POSITIVE],
            pressure: ScalarField { degree: 1, dim: 2, values: vec![std::f64::consts::PI, -1e10, 5.0, 6.0, 7.0, 8.0] },
        };
        let back = Snapshot::from_text(&s.to_text()).unwrap();
        assert_eq!(back, s);
        assert!(Snapshot::from_text("nonsense").is_err());
        let truncated: String = s.to_text().lines().take(9).map(|l| format!("{l}\n")).collect();
        assert!(Snapshot::from_text(&truncated).is_err());
    }

    #[test]
    fn snapshot_header_matches_schema() {
        let v: serde_json::Value = serde_json::from_str(SCHEMA_V1).unwrap();
        let fields: Vec<&str> = v["snapshot"]["header"].as_array().unwrap().iter().map(|c| c.as_str().unwrap()).collect();
        let s = Snapshot {
            mesh_sha256: "x".into(),
            degree: 1,
            t: 0.0,
            delta: 1.0,
            eps: 1.0,
            step: 0,
            vtilde: vec![],
            pressure: ScalarField { degree: 0, dim: 2, values: vec![] },
        };
        let text = s.to_text();
        let keys: Vec<&str> = text.lines().skip(1).take(fields.len()).map(|l| l.split_whitespace().next().unwrap()).collect();
        assert_eq!(keys, fields);
    }

    #[test]
    fn diagnostics_csv_round_trip_and_schema() {
        let rows = [
            DiagnosticsRow { t: 0.0, energy: 0.5, div_norm: 1.0 / 3.0, friction_value: 0.0, nonlinear_iters: 0, pressure_mean: 0.0 },
            DiagnosticsRow { t: 0.1, energy: 0.25, div_norm: 1e-17, friction_value: 2.0, nonlinear_iters: 3, pressure_mean: -1e-15 },
        ];
        let text = write_rows(rows).unwrap();
        assert_eq!(header(&text), schema_columns("diagnostics_csv"));
        assert_eq!(read_diagnostics_csv(&text).unwrap(), rows.to_vec());
        assert_eq!(header(&diagnostics_csv(&[]).unwrap()), schema_columns("diagnostics_csv"));
    }

    #[test]
    fn study_csv_matches_schema() {
        let t = StudyTable {
            parameter: "delta",
            fitted_metric: "div_l2l2",
            rows: vec![crate::diagnostics::StudyRow { value: 0.1, metrics: vec![("div_l2l2", 0.3)], failure: None, records: vec![] }],
            fit: None,
        };
        let text = study_csv(&t).unwrap();
        assert_eq!(header(&text), schema_columns("study_csv"));
        let back = read_study_csv(&text).unwrap();
        assert_eq!(back[0].measured, 0.3);
    }

    #[test]
    fn verify_csv_matches_schema() {
        let r = crate::verify::VerifyReport { seed: 1, strict: false, checks: vec![] };
        assert_eq!(header(&r.to_csv()), schema_columns("verify_csv"));
    }
}

//! File formats: plain-text curve snapshots, the `energy.csv` log and the
//! `summary.json` run summary.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diagnostics::ClassificationResult;
use crate::error::{Error, Result};
use crate::flow::EnergyRecord;
use crate::spline::{DiscreteCurve, Mesh, DOFS_PER_NODE};

/// A curve together with the step it was taken at.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub curve: DiscreteCurve,
    pub step: usize,
}

/// Renders a snapshot: `#` header lines (element count, closed flag, length,
/// step), then `i px py pz dx dy dz` per node with 17 significant digits.
/// The mesh is assumed uniform.
pub fn format_snapshot(curve: &DiscreteCurve, step: usize) -> String {
    let mesh = curve.mesh();
    let mut out = String::new();
    out.push_str(&format!("# elements {}\n", mesh.n_elements()));
    out.push_str(&format!("# closed {}\n", mesh.closed()));
    out.push_str(&format!("# length {:?}\n", mesh.length()));
    out.push_str(&format!("# step {step}\n"));
    for (i, node) in curve.dofs().chunks(DOFS_PER_NODE).enumerate() {
        out.push_str(&i.to_string());
        for v in node {
            out.push_str(&format!(" {v:.16e}"));
        }
        out.push('\n');
    }
    out
}

pub fn write_snapshot(path: &Path, curve: &DiscreteCurve, step: usize) -> Result<()> {
    std::fs::write(path, format_snapshot(curve, step))?;
    Ok(())
}

/// Parses the snapshot format written by [`format_snapshot`].
pub fn parse_snapshot(text: &str) -> Result<Snapshot> {
    let err = |line: usize, msg: String| Error::Snapshot { line, msg };
    let (mut elements, mut closed, mut length, mut step) = (None, None, None, None);
    let mut dofs = Vec::new();
    let mut expected = 0usize;
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('#') {
            let mut parts = header.split_whitespace();
            let (Some(key), Some(value), None) = (parts.next(), parts.next(), parts.next()) else {
                continue;
            };
            let bad = |what: &str| err(line_no, format!("invalid {what} `{value}`"));
            match key {
                "elements" => elements = Some(value.parse::<usize>().map_err(|_| bad("element count"))?),
                "closed" => closed = Some(value.parse::<bool>().map_err(|_| bad("closed flag"))?),
                "length" => length = Some(value.parse::<f64>().map_err(|_| bad("length"))?),
                "step" => step = Some(value.parse::<usize>().map_err(|_| bad("step"))?),
                _ => {}
            }
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 1 + DOFS_PER_NODE {
            return Err(err(line_no, format!("expected {} columns, found {}", 1 + DOFS_PER_NODE, fields.len())));
        }
        let index: usize = fields[0].parse().map_err(|_| err(line_no, format!("invalid node index `{}`", fields[0])))?;
        if index != expected {
            return Err(err(line_no, format!("expected node {expected}, found {index}")));
        }
        for f in &fields[1..] {
            let v: f64 = f.parse().map_err(|_| err(line_no, format!("invalid number `{f}`")))?;
            if !v.is_finite() {
                return Err(err(line_no, format!("non-finite value `{f}`")));
            }
            dofs.push(v);
        }
        expected += 1;
    }
    let last = text.lines().count().max(1);
    let missing = |what: &str| err(last, format!("missing `# {what}` header"));
    let elements = elements.ok_or_else(|| missing("elements"))?;
    let closed = closed.ok_or_else(|| missing("closed"))?;
    let length = length.ok_or_else(|| missing("length"))?;
    let mesh = Mesh::uniform(elements, length, closed).map_err(|e| err(1, e.to_string()))?;
    if expected != mesh.n_nodes() {
        return Err(err(last, format!("expected {} nodes, found {expected}", mesh.n_nodes())));
    }
    let curve = DiscreteCurve::from_dofs(mesh, dofs)?;
    Ok(Snapshot { curve, step: step.unwrap_or(0) })
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    parse_snapshot(&std::fs::read_to_string(path)?)
}

pub const ENERGY_HEADER: [&str; 8] =
    ["step", "time", "E_bend", "E_conf", "E_total", "dtu_norm", "arclen_violation", "max_penetration"];

/// Streaming writer for `energy.csv`.
pub struct EnergyLog<W: Write> {
    writer: csv::Writer<W>,
}

impl EnergyLog<BufWriter<File>> {
    pub fn create(path: &Path) -> Result<Self> {
        Self::new(BufWriter::new(File::create(path)?))
    }
}

impl<W: Write> EnergyLog<W> {
    pub fn new(inner: W) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(inner);
        writer.write_record(ENERGY_HEADER)?;
        Ok(Self { writer })
    }

    pub fn push(&mut self, r: &EnergyRecord) -> Result<()> {
        let floats = [r.time, r.e_bend, r.e_conf, r.e_total, r.dtu_norm, r.arclen_violation, r.max_penetration];
        let mut row = Vec::with_capacity(ENERGY_HEADER.len());
        row.push(r.step.to_string());
        row.extend(floats.iter().map(|v| format!("{v:?}")));
        self.writer.write_record(&row)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.writer.flush()?;
        self.writer.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

/// Reads an `energy.csv` file back into records.
pub fn read_energy_log(path: &Path) -> Result<Vec<EnergyRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.iter().ne(ENERGY_HEADER) {
        return Err(Error::Snapshot { line: 1, msg: format!("unexpected energy log header {headers:?}") });
    }
    let mut out = Vec::new();
    for (n, rec) in reader.records().enumerate() {
        let rec = rec?;
        let bad = |msg: String| Error::Snapshot { line: n + 2, msg };
        let f = |i: usize| -> Result<f64> { rec[i].parse().map_err(|_| bad(format!("invalid number `{}`", &rec[i]))) };
        out.push(EnergyRecord {
            step: rec[0].parse().map_err(|_| bad(format!("invalid step `{}`", &rec[0])))?,
            time: f(1)?,
            e_bend: f(2)?,
            e_conf: f(3)?,
            e_total: f(4)?,
            dtu_norm: f(5)?,
            arclen_violation: f(6)?,
            max_penetration: f(7)?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    Stationary,
    StepBudget,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEnergies {
    pub bend: f64,
    pub conf: f64,
    pub total: f64,
    /// `sqrt(E_bend / E_L)` with `E_L` the energy of the unconfined circle.
    pub normalized: f64,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub termination_reason: TerminationReason,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub steps: usize,
    pub time: f64,
    pub n_elements: usize,
    pub length: f64,
    pub kappa: f64,
    pub epsilon: f64,
    pub tau: f64,
    pub seed: u64,
    pub energies: Option<SummaryEnergies>,
    pub dtu_norm: Option<f64>,
    pub arclen_violation: Option<f64>,
    pub max_penetration: Option<f64>,
    /// Shape label such as `clew(1,2)`.
    pub shape: Option<String>,
    pub classification: Option<ClassificationResult>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n")?;
    file.flush()?;
    Ok(())
}

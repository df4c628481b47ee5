//! CSV ingestion and output records for the command-line front end.

use std::fmt::Write as _;
use std::path::Path;

use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::Dataset;
use crate::solver::{Estimate, FitConfig};

/// Which CSV column holds the response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResponseColumn {
    /// Zero-based column index.
    Index(usize),
    /// Header name; requires a header row.
    Name(String),
}

impl ResponseColumn {
    /// Digits select by index, anything else by header name.
    pub fn parse(s: &str) -> Self {
        match s.parse::<usize>() {
            Ok(i) => ResponseColumn::Index(i),
            Err(_) => ResponseColumn::Name(s.to_string()),
        }
    }
}

/// A parsed CSV file together with the SHA-256 digest of its bytes.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub data: Dataset,
    pub digest: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read_csv_file(path: &Path, header: bool, response: &ResponseColumn) -> Result<LoadedData> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_csv_bytes(&bytes, header, response)
}

/// Parses numeric CSV. Rows and columns in error messages are 1-based and
/// count the header row when present.
pub fn read_csv_bytes(bytes: &[u8], header: bool, response: &ResponseColumn) -> Result<LoadedData> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(header)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let names: Option<Vec<String>> = if header {
        let h = reader.headers().map_err(csv_error)?;
        Some(h.iter().map(str::to_string).collect())
    } else {
        None
    };
    let offset = usize::from(header);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(csv_error)?;
        let mut row = Vec::with_capacity(record.len());
        for (c, cell) in record.iter().enumerate() {
            let value: f64 = cell.parse().map_err(|_| Error::Parse {
                row: r + 1 + offset,
                column: c + 1,
                message: format!("'{cell}' is not a number"),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    row: r + 1 + offset,
                    column: c + 1,
                    message: format!("'{cell}' is not finite"),
                });
            }
            row.push(value);
        }
        rows.push(row);
    }
    let width = match (rows.first(), &names) {
        (Some(r), _) => r.len(),
        (None, Some(n)) => n.len(),
        (None, None) => 0,
    };
    if rows.is_empty() {
        return Err(Error::Parse {
            row: 1 + offset,
            column: 1,
            message: "no data rows".into(),
        });
    }
    let col = match response {
        ResponseColumn::Index(i) => *i,
        ResponseColumn::Name(name) => names
            .as_ref()
            .and_then(|n| n.iter().position(|h| h == name))
            .ok_or_else(|| Error::invalid(format!("response column '{name}' not found in the header")))?,
    };
    if col >= width {
        return Err(Error::invalid(format!("response column {col} is out of range for {width} columns")));
    }
    if width < 2 {
        return Err(Error::invalid("need at least one predictor column besides the response"));
    }
    let y: Vec<f64> = rows.iter().map(|r| r[col]).collect();
    let x: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().enumerate().filter(|(j, _)| *j != col).map(|(_, v)| *v).collect())
        .collect();
    let mut data = Dataset::from_rows(&x, &y)?;
    if let Some(names) = names {
        let features = names.into_iter().enumerate().filter(|(j, _)| *j != col).map(|(_, n)| n).collect();
        data = data.with_feature_names(features)?;
    }
    Ok(LoadedData {
        data,
        digest: sha256_hex(bytes),
    })
}

fn csv_error(e: csv::Error) -> Error {
    let (row, column) = match e.position() {
        Some(p) => (p.line() as usize, 0),
        None => (0, 0),
    };
    Error::Parse {
        row,
        column,
        message: e.to_string(),
    }
}

/// Provenance of an output file. Wall-clock time is deliberately absent so
/// that equal inputs give byte-identical outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub config: Map<String, Value>,
    pub seed: u64,
    pub version: &'static str,
    pub input_digest: Option<String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            config: Map::new(),
            seed,
            version: env!("CARGO_PKG_VERSION"),
            input_digest: None,
        }
    }

    pub fn set(&mut self, key: &str, value: impl Into<Value>) -> &mut Self {
        self.config.insert(key.to_string(), value.into());
        self
    }

    pub fn to_json(&self) -> Value {
        json!({
            "command": self.command,
            "config": Value::Object(self.config.clone()),
            "seed": self.seed,
            "version": self.version,
            "input_digest": self.input_digest,
        })
    }

    /// `# manifest: {...}` header line for CSV outputs.
    pub fn csv_comment(&self) -> String {
        format!("# manifest: {}\n", self.to_json())
    }
}

pub fn config_json(cfg: &FitConfig) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("solver".into(), cfg.solver.name().into());
    m.insert("q_gamma".into(), cfg.q_gamma.into());
    m.insert("q_beta".into(), json!(cfg.q_beta));
    m.insert("nu".into(), cfg.nu.into());
    m.insert("nu_beta".into(), cfg.nu_beta.into());
    m.insert("lambda".into(), json!(cfg.lambda));
    m.insert("beta_rule".into(), format!("{:?}", cfg.beta_rule).to_lowercase().into());
    m.insert("stepsize".into(), format!("{:?}", cfg.stepsize).into());
    m.insert("cooling".into(), cfg.cooling.name().into());
    m.insert("horizon".into(), cfg.horizon.into());
    m.insert("max_iters".into(), cfg.max_iters.into());
    m.insert("tol_objective".into(), cfg.tol_objective.into());
    m.insert("tol_iterate".into(), cfg.tol_iterate.into());
    m
}

/// Estimate as a JSON object with a compact trace summary.
pub fn estimate_json(est: &Estimate, data: &Dataset, manifest: &RunManifest) -> Value {
    let eta = data.linear_predictor(&est.beta, &est.gamma);
    let residual: Vec<f64> = if est.loss.is_classification() {
        Vec::new()
    } else {
        (data.y() - data.x() * &est.beta).iter().cloned().collect()
    };
    let settled = est.settled_trace();
    let metadata: Map<String, Value> = est.metadata.iter().map(|(k, v)| (k.clone(), Value::from(v.clone()))).collect();
    json!({
        "manifest": manifest.to_json(),
        "solver": est.solver.name(),
        "loss": est.loss.to_string(),
        "q_gamma": est.q_gamma,
        "q_beta": est.q_beta,
        "nu": est.nu,
        "nu_beta": est.nu_beta,
        "converged": est.converged,
        "iterations": est.iterations,
        "tie_events": est.tie_events,
        "fixed_point_residual": est.fixed_point_residual,
        "step_scale": est.step_scale,
        "feature_names": data.feature_names(),
        "beta": est.beta.as_slice(),
        "gamma": est.gamma.as_slice(),
        "support_beta": est.support_beta,
        "support_gamma": est.support_gamma,
        "trace": {
            "initial": est.initial_objective,
            "final": est.objective_trace.last(),
            "settled_at": est.settled_at,
            "settled_first": settled.first(),
            "length": est.objective_trace.len(),
        },
        "linear_predictor_range": [eta.min(), eta.max()],
        "residuals": residual,
        "metadata": Value::Object(metadata),
    })
}

/// Joins rows of already formatted cells into CSV text.
pub fn csv_lines(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", header.join(","));
    for row in rows {
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

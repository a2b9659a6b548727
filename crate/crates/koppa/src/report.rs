//! Schema-versioned JSON report and CSV matrices.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const SCHEMA: &str = "koppa-report/1";

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed report: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported report schema {found:?} (expected {SCHEMA:?})")]
    Schema { found: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task: usize,
    pub classes: [usize; 2],
    pub train_size: usize,
    pub test_size: usize,
    /// Epoch-mean losses: unconstrained (first task / coda), look-ahead,
    /// fine-tune.
    pub standard_loss: Vec<f64>,
    pub lookahead_loss: Vec<f64>,
    pub finetune_loss: Vec<f64>,
    pub basis_columns: usize,
    /// `max |K^t Q^{t-1}|`, absent for the first task.
    pub orthogonality: Option<f64>,
    pub probes: usize,
    pub probes_in_span: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    /// `W(features at end of task t, features at end of run)` over in-span
    /// probes of each old task; `None` when the task has no such probe.
    pub per_task: Vec<Option<f64>>,
    pub cumulative: Vec<f64>,
    /// Same distance over all probes regardless of their query residual.
    pub per_task_all: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub basis_bytes: usize,
    pub prototype_bytes: usize,
    pub total_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: String,
    pub status: Status,
    pub error: Option<String>,
    pub config: RunConfig,
    pub tasks: Vec<TaskRecord>,
    /// Row `i`: accuracy on tasks `0..=i` after training task `i`.
    pub accuracy: Vec<Vec<f64>>,
    pub average_accuracy: Option<f64>,
    pub average_forgetting: Option<f64>,
    /// Rows: query task (in-span probes), columns: key task.
    pub heatmap: Vec<Vec<f64>>,
    pub shift: Option<ShiftReport>,
    pub triggering: Vec<f64>,
    pub memory: MemoryReport,
}

impl RunReport {
    pub fn new(config: RunConfig) -> Self {
        Self {
            schema: SCHEMA.to_string(),
            status: Status::Failed,
            error: None,
            config,
            tasks: Vec::new(),
            accuracy: Vec::new(),
            average_accuracy: None,
            average_forgetting: None,
            heatmap: Vec::new(),
            shift: None,
            triggering: Vec::new(),
            memory: MemoryReport {
                basis_bytes: 0,
                prototype_bytes: 0,
                total_bytes: 0,
            },
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        let found = raw
            .get("schema")
            .and_then(|v| v.as_str())
            .unwrap_or_default();
        if found != SCHEMA {
            return Err(ReportError::Schema {
                found: found.to_string(),
            });
        }
        Ok(serde_json::from_value(raw)?)
    }

    pub fn load(path: &Path) -> Result<Self, ReportError> {
        let text = std::fs::read_to_string(path).map_err(|source| ReportError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Writes `report.json`, `accuracy.csv` and `heatmap.csv` into `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<(), ReportError> {
        let write = |name: &str, body: String| {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|source| ReportError::Io {
                path: path.display().to_string(),
                source,
            })
        };
        write("report.json", self.to_json())?;
        write("accuracy.csv", accuracy_csv(&self.accuracy))?;
        write("heatmap.csv", matrix_csv(&self.heatmap, "query_task"))?;
        Ok(())
    }
}

/// Lower-triangular accuracy matrix, blanks above the diagonal.
pub fn accuracy_csv(stages: &[Vec<f64>]) -> String {
    let n = stages.len();
    let mut out = String::from("after_task");
    for t in 0..n {
        let _ = write!(out, ",task_{t}");
    }
    out.push('\n');
    for (i, row) in stages.iter().enumerate() {
        let _ = write!(out, "{i}");
        for t in 0..n {
            match row.get(t) {
                Some(v) => {
                    let _ = write!(out, ",{v}");
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

pub fn matrix_csv(rows: &[Vec<f64>], row_label: &str) -> String {
    let cols = rows.first().map_or(0, Vec::len);
    let mut out = String::from(row_label);
    for j in 0..cols {
        let _ = write!(out, ",key_task_{j}");
    }
    out.push('\n');
    for (i, row) in rows.iter().enumerate() {
        let _ = write!(out, "{i}");
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

//! Run reports and file output.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cost::CrossCheck;
use crate::error::{Error, Result};
use crate::model::AppMode;

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Serializes rows with a header line.
pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Config(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Per-task (or pooled, with `task = "all"`) evaluation summary.
///
/// `psi_e` / `psi_h` are 0 when no query took the corresponding route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: String,
    pub queries: usize,
    pub accuracy_baseline: f64,
    pub accuracy_adaptive: f64,
    pub zeta_e: f64,
    pub fp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
    pub p_r: f64,
    pub psi_e: f64,
    pub psi_h: f64,
    pub flops_baseline_mean: f64,
    pub flops_adaptive_mean: f64,
    pub cr_analytic: f64,
    pub cr_measured: f64,
    pub gap_rel: f64,
    pub wall_ns_baseline: f64,
    pub wall_ns_adaptive: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub mode: AppMode,
    pub zero_skip: Option<f64>,
    pub pruned: bool,
    pub tasks: Vec<TaskReport>,
    pub pooled: TaskReport,
    pub cross_check: CrossCheck,
}

impl RunReport {
    /// Task rows followed by the pooled row.
    pub fn rows(&self) -> Vec<TaskReport> {
        self.tasks.iter().cloned().chain(std::iter::once(self.pooled.clone())).collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        to_csv(&self.rows())
    }

    /// Writes `<prefix>.json` and `<prefix>.csv`.
    pub fn write(&self, prefix: &Path) -> Result<()> {
        write_json(&prefix.with_extension("json"), self)?;
        write_atomic(&prefix.with_extension("csv"), self.to_csv()?.as_bytes())
    }
}

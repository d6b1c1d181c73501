//! Result records and the artifacts written from them.
//!
//! `records.csv` and `series.csv` carry only the numeric payload: wall-clock
//! time lives in `records.json` alone, so the CSV files of two runs with the
//! same config and seed compare equal byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{Cell, ExperimentConfig};
use crate::HarnessError;

/// Bumped whenever a column of the CSV files changes.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub experiment_id: String,
    pub version: String,
    pub config_hash: String,
    pub diagnostic: String,
    /// Battery entry, test function or other target the numbers belong to.
    pub target: String,
    pub cell: Cell,
    pub metrics: BTreeMap<String, f64>,
    pub passed: bool,
    /// Per-step values of the diagnostic's main quantity, on the grid `k·dt`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub series: Vec<f64>,
    pub wall_clock_s: f64,
}

impl ResultRecord {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_float(x: f64) -> String {
    format!("{x:?}")
}

fn cell_columns(cell: &Cell) -> [String; 6] {
    [
        format_float(cell.dt),
        cell.n_filt.to_string(),
        cell.n_law.to_string(),
        cell.ensemble.to_string(),
        cell.epsilon.map(format_float).unwrap_or_default(),
        cell.replicate.to_string(),
    ]
}

const CELL_HEADER: [&str; 6] = ["dt", "n_filt", "n_law", "ensemble", "epsilon", "replicate"];

/// One row per metric of every record.
pub fn records_csv(records: &[ResultRecord]) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["experiment_id", "version", "config_hash", "diagnostic", "target"];
    header.extend(CELL_HEADER);
    header.extend(["metric", "value", "passed"]);
    w.write_record(&header)?;
    for r in records {
        for (name, value) in &r.metrics {
            let mut row = vec![r.experiment_id.clone(), r.version.clone(), r.config_hash.clone(), r.diagnostic.clone(), r.target.clone()];
            row.extend(cell_columns(&r.cell));
            row.extend([name.clone(), format_float(*value), r.passed.to_string()]);
            w.write_record(&row)?;
        }
    }
    w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))
}

/// One row per step of every record that carries a series.
pub fn series_csv(records: &[ResultRecord]) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["experiment_id", "diagnostic", "target"];
    header.extend(CELL_HEADER);
    header.extend(["step", "time", "value"]);
    w.write_record(&header)?;
    for r in records {
        for (k, value) in r.series.iter().enumerate() {
            let mut row = vec![r.experiment_id.clone(), r.diagnostic.clone(), r.target.clone()];
            row.extend(cell_columns(&r.cell));
            row.extend([k.to_string(), format_float(k as f64 * r.cell.dt), format_float(*value)]);
            w.write_record(&row)?;
        }
    }
    w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))
}

/// Writes `config.json`, `records.json`, `records.csv` and `series.csv` into `dir`.
pub fn write_artifacts(dir: &Path, cfg: &ExperimentConfig, records: &[ResultRecord]) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.json"), cfg.to_json())?;
    let doc = RecordFile { schema: SCHEMA_VERSION, records: records.to_vec() };
    fs::write(dir.join("records.json"), serde_json::to_string_pretty(&doc)?)?;
    fs::write(dir.join("records.csv"), records_csv(records)?)?;
    fs::write(dir.join("series.csv"), series_csv(records)?)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct RecordFile {
    schema: u32,
    records: Vec<ResultRecord>,
}

pub fn read_records(path: &Path) -> Result<Vec<ResultRecord>, HarnessError> {
    let doc: RecordFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    if doc.schema != SCHEMA_VERSION {
        return Err(HarnessError::Config(format!("records schema {} is not {}", doc.schema, SCHEMA_VERSION)));
    }
    Ok(doc.records)
}

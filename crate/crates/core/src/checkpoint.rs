//! Run checkpoints: everything needed to continue a run bit-for-bit.
//!
//! Model parameters, optimizer accumulators and logged metrics are stored as
//! hexadecimal floating point so a reload reproduces every bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::hexfloat::{Hex, HexVec};
use crate::host::NnpnnRecord;
use crate::metrics::MetricsRow;
use crate::networks::MetaRecord;
use crate::rng::RngState;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelRecords {
    Inverse { host: NnpnnRecord },
    Compress { encoder: NnpnnRecord, decoder: MetaRecord },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerRecord {
    pub name: String,
    pub lr: Hex,
    pub rho: Hex,
    pub eps: Hex,
    pub v: HexVec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RowRecord {
    pub iteration: u64,
    pub loss: Hex,
    pub ratio_mean: Hex,
    pub ratio_median: Hex,
    pub frac10: Hex,
    pub frac25: Hex,
}

impl From<&MetricsRow> for RowRecord {
    fn from(r: &MetricsRow) -> Self {
        Self {
            iteration: r.iteration,
            loss: Hex(r.loss),
            ratio_mean: Hex(r.ratio_mean),
            ratio_median: Hex(r.ratio_median),
            frac10: Hex(r.frac10),
            frac25: Hex(r.frac25),
        }
    }
}

impl From<&RowRecord> for MetricsRow {
    fn from(r: &RowRecord) -> Self {
        Self {
            iteration: r.iteration,
            loss: r.loss.0,
            ratio_mean: r.ratio_mean.0,
            ratio_median: r.ratio_median.0,
            frac10: r.frac10.0,
            frac25: r.frac25.0,
        }
    }
}

/// Rows logged so far plus the running loss window that feeds the next row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsRecord {
    pub rows: Vec<RowRecord>,
    pub window_sum: Hex,
    pub window_count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: RunConfig,
    pub iteration: u64,
    pub rng: RngState,
    pub models: ModelRecords,
    pub optimizer: Vec<OptimizerRecord>,
    pub metrics: MetricsRecord,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("corrupt checkpoint: {e}")))?;
        match value.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(FORMAT_VERSION) => {}
            Some(v) => {
                return Err(Error::Checkpoint(format!(
                    "version mismatch: file has format_version {v}, this build reads {FORMAT_VERSION}"
                )))
            }
            None => return Err(Error::Checkpoint("missing format_version".into())),
        }
        serde_json::from_value(value).map_err(|e| Error::Checkpoint(format!("corrupt checkpoint: {e}")))
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint.to_json()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_json(&text)
}

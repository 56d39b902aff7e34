use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStopping,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train: LossReport,
    pub val: LossReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Index into `epochs` of the lowest validation `l_global`.
    pub best: usize,
    pub stop_reason: StopReason,
}

impl TrainHistory {
    pub fn best_epoch(&self) -> &EpochRecord {
        &self.epochs[self.best]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,split");
        for c in LossReport::COLUMNS {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for e in &self.epochs {
            for (split, r) in [("train", &e.train), ("val", &e.val)] {
                write!(out, "{},{split}", e.epoch).expect("write to String");
                for v in r.values() {
                    write!(out, ",{v}").expect("write to String");
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

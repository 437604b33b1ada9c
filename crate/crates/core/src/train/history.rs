use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::Metrics;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Sample-weighted mean training loss over the epoch (dropout active).
    pub loss: f64,
    /// Learning rate of the epoch's first optimiser step.
    pub lr: f64,
    pub train: Metrics,
    pub val: Option<Metrics>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

const COLUMNS: [&str; 10] = [
    "epoch", "loss", "lr", "train_acc", "train_prec", "train_rec", "train_f1", "val_acc", "val_f1", "seconds",
];

impl TrainHistory {
    pub fn push(&mut self, record: EpochRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.epoch <= last.epoch || record.lr > last.lr {
                return Err(Error::Contract(format!(
                    "epoch {} (lr {}) cannot follow epoch {} (lr {})",
                    record.epoch, record.lr, last.epoch, last.lr
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// Tab-separated log, one header line then one line per epoch. Missing
    /// validation values are written as `-`.
    pub fn to_tsv(&self) -> String {
        let mut out = COLUMNS.join("\t");
        out.push('\n');
        for r in &self.records {
            let (va, vf) = match &r.val {
                Some(v) => (format!("{:.6}", v.accuracy), format!("{:.6}", v.f1)),
                None => ("-".into(), "-".into()),
            };
            let _ = writeln!(
                out,
                "{}\t{:.6}\t{:.3e}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{va}\t{vf}\t{:.3}",
                r.epoch, r.loss, r.lr, r.train.accuracy, r.train.precision, r.train.recall, r.train.f1, r.seconds
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("history serializes")
    }

    /// Writes `<stem>.tsv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        for (ext, text) in [("tsv", self.to_tsv()), ("json", self.to_json())] {
            let path = dir.join(format!("{stem}.{ext}"));
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

use std::io;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean weighted loss over the epoch's training segments, mmHg^2.
    pub train_loss: f64,
    pub val_mae_sbp: f64,
    pub val_mae_dbp: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
}

impl EpochRecord {
    pub fn selection_metric(&self) -> f64 {
        (self.val_mae_sbp + self.val_mae_dbp) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch number (1-based) of the selected model.
    pub best_epoch: usize,
    pub learning_rate: f64,
}

#[derive(Serialize, Deserialize)]
struct Row {
    epoch: usize,
    train_loss: f64,
    val_mae_sbp: f64,
    val_mae_dbp: f64,
    is_best: bool,
}

impl TrainHistory {
    /// Epoch number of the first minimum of the selection metric.
    pub fn argmin(epochs: &[EpochRecord]) -> Option<usize> {
        let mut best: Option<&EpochRecord> = None;
        for e in epochs {
            if best.is_none_or(|b| e.selection_metric() < b.selection_metric()) {
                best = Some(e);
            }
        }
        best.map(|e| e.epoch)
    }

    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }

    pub fn write_csv<W: io::Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        for e in &self.epochs {
            out.serialize(Row {
                epoch: e.epoch,
                train_loss: e.train_loss,
                val_mae_sbp: e.val_mae_sbp,
                val_mae_dbp: e.val_mae_dbp,
                is_best: e.epoch == self.best_epoch,
            })?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// Parses the CSV form. The learning rate is not part of it and reads as NaN.
    pub fn from_csv<R: io::Read>(r: R) -> Result<Self, csv::Error> {
        let mut epochs = Vec::new();
        let mut best_epoch = 0;
        for row in csv::Reader::from_reader(r).deserialize() {
            let row: Row = row?;
            if row.is_best {
                best_epoch = row.epoch;
            }
            epochs.push(EpochRecord {
                epoch: row.epoch,
                train_loss: row.train_loss,
                val_mae_sbp: row.val_mae_sbp,
                val_mae_dbp: row.val_mae_dbp,
                checkpoint: None,
            });
        }
        Ok(Self {
            epochs,
            best_epoch,
            learning_rate: f64::NAN,
        })
    }
}

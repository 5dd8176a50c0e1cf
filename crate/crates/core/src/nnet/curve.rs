use std::io::{Read, Write};

use super::{NnetError, Result};

/// Per-epoch training and validation loss of one run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossCurve {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
}

impl LossCurve {
    pub fn new(train_loss: Vec<f64>, val_loss: Vec<f64>) -> Result<Self> {
        if train_loss.len() != val_loss.len() {
            return Err(NnetError::InvalidConfig(format!(
                "train curve has {} epochs, validation curve {}",
                train_loss.len(),
                val_loss.len()
            )));
        }
        Ok(Self {
            train_loss,
            val_loss,
        })
    }

    pub fn epochs(&self) -> usize {
        self.train_loss.len()
    }
}

/// `epoch,train_loss,val_loss` with epochs numbered from 1.
pub fn write_curve_csv(curve: &LossCurve, out: impl Write) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "train_loss", "val_loss"])?;
    for (e, (t, v)) in curve.train_loss.iter().zip(&curve.val_loss).enumerate() {
        w.write_record([(e + 1).to_string(), t.to_string(), v.to_string()])?;
    }
    w.flush()
}

/// Reads the first three columns of a curve file, header required.
pub fn read_curve_csv(input: impl Read) -> Result<LossCurve> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let bad = |m: String| NnetError::InvalidConfig(format!("curve row {}: {m}", i + 1));
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() < 3 {
            return Err(bad(format!("{} columns, need 3", rec.len())));
        }
        let num = |c: usize| rec[c].parse::<f64>().map_err(|e| bad(format!("{:?}: {e}", &rec[c])));
        train.push(num(1)?);
        val.push(num(2)?);
    }
    LossCurve::new(train, val)
}

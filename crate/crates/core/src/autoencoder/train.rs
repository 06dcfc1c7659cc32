use std::io::Write;
use std::path::Path;

use log::{debug, info, warn};
use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::OptimizerState;
use super::model::{AutoencoderModel, Batch, LossBreakdown};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.02,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training objective over the epoch's batches.
    pub train_loss: f64,
    pub val_loss: f64,
    /// Mean per-sequence reconstruction error on the validation split.
    pub val_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub curve: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

impl TrainReport {
    /// `epoch,train_loss,val_loss,val_error` CSV.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "epoch,train_loss,val_loss,val_error")?;
        for r in &self.curve {
            writeln!(f, "{},{:e},{:e},{:e}", r.epoch, r.train_loss, r.val_loss, r.val_error)?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Loss over a whole split in batches of `batch_size`; totals are averaged
/// per sequence, errors returned in input order.
pub fn evaluate_split(
    model: &AutoencoderModel,
    sequences: &[Array2<f64>],
    batch_size: usize,
) -> Result<LossBreakdown> {
    if sequences.is_empty() {
        return Err(Error::Argument("cannot evaluate an empty split".into()));
    }
    let mut total = 0.0;
    let mut reconstruction = 0.0;
    let mut code_l1 = 0.0;
    let mut per_sequence = Vec::with_capacity(sequences.len());
    for chunk in sequences.chunks(batch_size.max(1)) {
        let batch = Batch::from_sequences(chunk.iter().map(|s| s.view()))?;
        let l = model.loss(&batch)?;
        let n = chunk.len() as f64;
        total += l.total * n;
        reconstruction += l.reconstruction * n;
        code_l1 += l.code_l1 * n;
        per_sequence.extend(l.per_sequence);
    }
    let n = sequences.len() as f64;
    Ok(LossBreakdown {
        total: total / n,
        reconstruction: reconstruction / n,
        code_l1: code_l1 / n,
        per_sequence,
    })
}

/// Adam training on clean sequences with early stopping on validation loss.
///
/// On return `model` holds the parameters of the best validation epoch. If
/// the loss diverges, `model` is rolled back to the last finite epoch and a
/// training fault is returned.
pub fn train(
    model: &mut AutoencoderModel,
    train_split: &[Array2<f64>],
    val_split: &[Array2<f64>],
    config: &TrainConfig,
) -> Result<TrainReport> {
    if train_split.is_empty() || val_split.is_empty() {
        return Err(Error::Argument("training and validation splits must be non-empty".into()));
    }
    if config.batch_size == 0 || config.max_epochs == 0 {
        return Err(Error::Config("batch size and epoch budget must be positive".into()));
    }
    let mut optimizer = OptimizerState::new(&model.params, config.learning_rate);
    let mut order: Vec<usize> = (0..train_split.len()).collect();
    let mut best_params = model.params.clone();
    let mut best_val = evaluate_split(model, val_split, config.batch_size)?.total;
    let mut best_epoch = 0;
    let mut last_good = model.params.clone();
    let mut curve = Vec::new();
    let mut stale = 0;
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        let mut rng = seed::rng(seed::derive_labeled(config.seed, "shuffle", &[epoch as u64]));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = Batch::from_sequences(chunk.iter().map(|&i| train_split[i].view()))?;
            let step = model.backprop(&batch).and_then(|(loss, grad)| {
                if loss.total.is_finite() {
                    Ok((loss, grad))
                } else {
                    Err(Error::Training(format!("loss became {}", loss.total)))
                }
            });
            let (loss, grad) = match step {
                Ok(v) => v,
                Err(e) => {
                    model.params = last_good;
                    return Err(Error::Training(format!(
                        "diverged in epoch {epoch}, rolled back to epoch {}: {e}",
                        epoch - 1
                    )));
                }
            };
            epoch_loss += loss.total * chunk.len() as f64;
            optimizer.update(&mut model.params, &grad);
        }
        if !model.params.is_finite() {
            model.params = last_good;
            return Err(Error::Training(format!("parameters became non-finite in epoch {epoch}")));
        }
        last_good = model.params.clone();

        let val = evaluate_split(model, val_split, config.batch_size)?;
        let val_error = val.per_sequence.iter().sum::<f64>() / val.per_sequence.len() as f64;
        let record = EpochRecord {
            epoch,
            train_loss: epoch_loss / train_split.len() as f64,
            val_loss: val.total,
            val_error,
        };
        debug!("epoch {epoch}: train {:.5e} val {:.5e}", record.train_loss, record.val_loss);
        curve.push(record);

        if val.total < best_val {
            best_val = val.total;
            best_epoch = epoch;
            best_params = model.params.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                stopped_early = true;
                info!("early stop at epoch {epoch}, best epoch {best_epoch}");
                break;
            }
        }
    }
    if best_epoch == 0 {
        warn!("validation loss never improved on the initial model");
    }
    model.params = best_params;
    Ok(TrainReport {
        curve,
        best_epoch,
        best_val_loss: best_val,
        stopped_early,
    })
}

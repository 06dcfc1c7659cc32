//! Percentile-threshold anomaly detector over reconstruction errors.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use log::warn;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{evaluate_split, AutoencoderModel};
use crate::dataset::{AnomalyKind, ImageSequence, Label};
use crate::error::{Error, Result};

pub const DEFAULT_PERCENTILE: f64 = 95.0;
const EVAL_BATCH: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorThreshold {
    pub threshold: f64,
    pub percentile: f64,
    pub calibration_size: usize,
}

impl DetectorThreshold {
    pub fn validate(&self) -> Result<()> {
        if self.threshold.is_nan() || self.threshold < 0.0 {
            return Err(Error::Config(format!("threshold {} is negative", self.threshold)));
        }
        if !(self.percentile > 0.0 && self.percentile < 100.0) {
            return Err(Error::Config(format!("percentile {} is outside (0, 100)", self.percentile)));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let t: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        t.validate()?;
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    /// Strictly greater than the threshold is anomalous.
    pub fn is_anomalous(&self, error: f64) -> bool {
        error > self.threshold
    }
}

/// Linear-interpolation quantile: position `(n−1)·p/100` in the sorted data.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Argument("percentile of an empty set".into()));
    }
    if !(p > 0.0 && p < 100.0) {
        return Err(Error::Argument(format!("percentile {p} is outside (0, 100)")));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Argument("percentile input contains NaN".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * p / 100.0;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

pub fn threshold_from_errors(errors: &[f64], p: f64) -> Result<DetectorThreshold> {
    Ok(DetectorThreshold {
        threshold: percentile(errors, p)?,
        percentile: p,
        calibration_size: errors.len(),
    })
}

/// Per-sequence reconstruction errors, in input order.
pub fn reconstruction_errors(model: &AutoencoderModel, features: &[Array2<f64>]) -> Result<Vec<f64>> {
    if features.is_empty() {
        return Ok(Vec::new());
    }
    for f in features {
        if f.ncols() != model.config.input_dim {
            return Err(Error::Argument(format!(
                "sequence has {} features, model expects {}",
                f.ncols(),
                model.config.input_dim
            )));
        }
    }
    Ok(evaluate_split(model, features, EVAL_BATCH)?.per_sequence)
}

/// Threshold at the `p`-th percentile of the training errors.
pub fn calibrate(model: &AutoencoderModel, training: &[Array2<f64>], p: f64) -> Result<DetectorThreshold> {
    if training.is_empty() {
        return Err(Error::Argument("cannot calibrate on an empty split".into()));
    }
    threshold_from_errors(&reconstruction_errors(model, training)?, p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Clean,
    Anomalous,
}

pub fn classify(
    model: &AutoencoderModel,
    threshold: &DetectorThreshold,
    features: &Array2<f64>,
) -> Result<(Decision, f64)> {
    let err = reconstruction_errors(model, std::slice::from_ref(features))?[0];
    let decision = if threshold.is_anomalous(err) {
        Decision::Anomalous
    } else {
        Decision::Clean
    };
    Ok((decision, err))
}

/// Scenario cell of the accuracy table. Clean sequences have no INR, kind,
/// or jammers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    /// INR in milli-dB so the key is totally ordered.
    pub inr_mdb: Option<i64>,
    pub kind: Option<AnomalyKind>,
    pub n_jammers: usize,
}

impl CellKey {
    pub fn inr_db(&self) -> Option<f64> {
        self.inr_mdb.map(|m| m as f64 / 1000.0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub correct: usize,
    pub total: usize,
}

impl Tally {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            f64::NAN
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub overall: Tally,
    pub cells: BTreeMap<CellKey, Tally>,
    /// `(error, label)` for every scored sequence.
    pub errors: Vec<(f64, Label)>,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        self.overall.accuracy()
    }

    pub fn clean(&self) -> Tally {
        self.cells
            .iter()
            .filter(|(k, _)| k.kind.is_none())
            .fold(Tally::default(), |a, (_, t)| Tally {
                correct: a.correct + t.correct,
                total: a.total + t.total,
            })
    }

    /// Accuracy of one kind at one INR, pooled over jammer counts.
    pub fn kind_at(&self, kind: AnomalyKind, inr_db: f64) -> Tally {
        self.pooled(|k| k.kind == Some(kind) && k.inr_db() == Some(inr_db))
    }

    pub fn cell(&self, kind: AnomalyKind, n_jammers: usize, inr_db: f64) -> Tally {
        self.pooled(|k| k.kind == Some(kind) && k.n_jammers == n_jammers && k.inr_db() == Some(inr_db))
    }

    /// Clean sequences plus every anomalous sequence at `inr_db`.
    pub fn overall_at(&self, inr_db: f64) -> Tally {
        self.pooled(|k| k.kind.is_none() || k.inr_db() == Some(inr_db))
    }

    fn pooled(&self, pred: impl Fn(&CellKey) -> bool) -> Tally {
        self.cells
            .iter()
            .filter(|(k, _)| pred(k))
            .fold(Tally::default(), |a, (_, t)| Tally {
                correct: a.correct + t.correct,
                total: a.total + t.total,
            })
    }

    /// `inr_db,kind,n_jammers,accuracy,n`; clean rows carry an empty INR
    /// and kind `clean`.
    pub fn write_accuracy_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "inr_db,kind,n_jammers,accuracy,n")?;
        for (k, t) in &self.cells {
            let inr = k.inr_db().map(|v| v.to_string()).unwrap_or_default();
            let kind = k.kind.map_or("clean".to_string(), |k| k.to_string());
            writeln!(f, "{inr},{kind},{},{:.6},{}", k.n_jammers, t.accuracy(), t.total)?;
        }
        f.flush()?;
        Ok(())
    }

    /// `error,label` per sequence.
    pub fn write_error_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "error,label")?;
        for (e, l) in &self.errors {
            let label = match l {
                Label::Clean => "clean",
                Label::Anomalous => "anomalous",
            };
            writeln!(f, "{e:e},{label}")?;
        }
        f.flush()?;
        Ok(())
    }
}

fn cell_of(seq: &ImageSequence) -> Option<CellKey> {
    match seq.label {
        Label::Clean => Some(CellKey {
            inr_mdb: None,
            kind: None,
            n_jammers: 0,
        }),
        Label::Anomalous => {
            let (Some(inr), Some(kind)) = (seq.meta.inr_db, seq.anomaly_kind) else {
                return None;
            };
            Some(CellKey {
                inr_mdb: Some((inr * 1000.0).round() as i64),
                kind: Some(kind),
                n_jammers: seq.meta.n_jammers,
            })
        }
    }
}

/// Scores labeled errors against the threshold.
pub fn tabulate(threshold: &DetectorThreshold, scored: &[(f64, &ImageSequence)]) -> Evaluation {
    let mut eval = Evaluation {
        overall: Tally::default(),
        cells: BTreeMap::new(),
        errors: Vec::with_capacity(scored.len()),
    };
    for &(err, seq) in scored {
        let Some(key) = cell_of(seq) else {
            warn!("sequence with seed {} has incomplete labels; skipped", seq.meta.seed);
            continue;
        };
        let predicted_anomalous = threshold.is_anomalous(err);
        let correct = predicted_anomalous == (seq.label == Label::Anomalous);
        let cell = eval.cells.entry(key).or_default();
        cell.total += 1;
        eval.overall.total += 1;
        if correct {
            cell.correct += 1;
            eval.overall.correct += 1;
        }
        eval.errors.push((err, seq.label));
    }
    eval
}

pub fn evaluate(
    model: &AutoencoderModel,
    threshold: &DetectorThreshold,
    test: &[ImageSequence],
) -> Result<Evaluation> {
    let features = crate::dataset::split_features(test);
    let errors = reconstruction_errors(model, &features)?;
    let scored: Vec<(f64, &ImageSequence)> = errors.into_iter().zip(test).collect();
    Ok(tabulate(threshold, &scored))
}

//! Stage runners behind the command-line tool: option sets with JSON
//! overlay, on-disk layout, and the resumable end-to-end pipeline.
//!
//! A dataset directory holds `manifest.json`, `train.rfds`,
//! `validation.rfds` and `test.rfds`. Every stage writes a `run.json` echo
//! of its resolved options next to its outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::info;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::array::ArrayGeometry;
use crate::autoencoder::{load_checkpoint, save_checkpoint, train, AutoencoderModel, ModelConfig, TrainConfig};
use crate::dataset::{
    read_split, split_features, write_split, AnomalyKind, DatasetManifest, ImageSequence, NormalizationMode,
    SplitCounts,
};
use crate::detector::{calibrate, evaluate, DetectorThreshold, Evaluation, DEFAULT_PERCENTILE};
use crate::error::{Error, Result};
use crate::seed;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRAIN_FILE: &str = "train.rfds";
pub const VALIDATION_FILE: &str = "validation.rfds";
pub const TEST_FILE: &str = "test.rfds";
pub const MODEL_FILE: &str = "model.ckpt";
pub const CURVE_FILE: &str = "training_curve.csv";
pub const THRESHOLD_FILE: &str = "threshold.json";
pub const ACCURACY_FILE: &str = "accuracy_vs_inr.csv";
pub const HISTOGRAM_FILE: &str = "recon_error_hist.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const RUN_FILE: &str = "run.json";
pub const STAGES_FILE: &str = "stages.json";

/// Deep-merges `overlay` into `base`; objects merge key by key, anything
/// else replaces. `null` in the overlay leaves the base untouched.
pub fn merge_json(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None if !v.is_null() => {
                        b.insert(k, v);
                    }
                    None => {}
                }
            }
        }
        (_, Value::Null) => {}
        (b, o) => *b = o,
    }
}

/// Default, then config file, then explicit flags.
pub fn resolve<T: Serialize + DeserializeOwned + Default>(file: Option<&Value>, flags: Value) -> Result<T> {
    let mut v = serde_json::to_value(T::default())?;
    if let Some(f) = file {
        if !f.is_object() {
            return Err(Error::Config("config file must hold a JSON object".into()));
        }
        merge_json(&mut v, f.clone());
    }
    merge_json(&mut v, flags);
    serde_json::from_value(v).map_err(|e| Error::Config(format!("invalid configuration: {e}")))
}

pub fn read_config_file(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("config {} is not JSON: {e}", path.display())))
}

#[derive(Serialize)]
struct RunEcho<'a, T: Serialize> {
    command: &'a str,
    version: &'a str,
    config: &'a T,
}

pub fn write_run_json<T: Serialize>(dir: &Path, command: &str, config: &T) -> Result<()> {
    let echo = RunEcho {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config,
    };
    std::fs::write(dir.join(RUN_FILE), serde_json::to_vec_pretty(&echo)?)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetOptions {
    pub n_y: usize,
    pub n_z: usize,
    /// Element spacing in wavelengths, both axes.
    pub spacing: f64,
    pub u_fft: usize,
    pub v_fft: usize,
    pub grid_u: usize,
    pub grid_v: usize,
    pub frames: usize,
    pub snapshots: usize,
    pub noise_power: f64,
    pub average_pairs: bool,
    pub snr_db: Vec<f64>,
    pub test_snr_db: Option<Vec<f64>>,
    pub inr_db: Vec<f64>,
    pub kinds: Vec<AnomalyKind>,
    pub jammer_counts: Vec<usize>,
    pub min_separation: i64,
    pub normalization: NormalizationMode,
    pub train_replicates: usize,
    pub validation_replicates: usize,
    pub test_clean_replicates: usize,
    pub test_anomalous_replicates: usize,
    pub seed: u64,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self {
            n_y: 8,
            n_z: 8,
            spacing: 0.5,
            u_fft: 32,
            v_fft: 32,
            grid_u: 8,
            grid_v: 8,
            frames: 10,
            snapshots: 1000,
            noise_power: 1.0,
            average_pairs: false,
            snr_db: vec![0.0],
            test_snr_db: None,
            inr_db: vec![0.0, 10.0, 20.0, 30.0],
            kinds: AnomalyKind::ALL.to_vec(),
            jammer_counts: vec![1, 2, 3],
            min_separation: 2,
            normalization: NormalizationMode::PerSequenceMax,
            train_replicates: 8,
            validation_replicates: 2,
            test_clean_replicates: 4,
            test_anomalous_replicates: 1,
            seed: 0,
        }
    }
}

impl DatasetOptions {
    pub fn manifest(&self) -> Result<DatasetManifest> {
        let m = DatasetManifest {
            geometry: ArrayGeometry::new(self.n_y, self.n_z, self.spacing, self.spacing, 1.0)?,
            u_fft: self.u_fft,
            v_fft: self.v_fft,
            frames: self.frames,
            snapshots: self.snapshots,
            noise_power: self.noise_power,
            average_pairs: self.average_pairs,
            grid: (self.grid_u, self.grid_v),
            snr_sweep_db: self.snr_db.clone(),
            test_snr_db: self.test_snr_db.clone(),
            inr_sweep_db: self.inr_db.clone(),
            kinds: self.kinds.clone(),
            jammer_counts: self.jammer_counts.clone(),
            min_separation: self.min_separation,
            normalization: self.normalization,
            counts: SplitCounts {
                train: self.train_replicates,
                validation: self.validation_replicates,
                test_clean: self.test_clean_replicates,
                test_anomalous: self.test_anomalous_replicates,
            },
            master_seed: self.seed,
        };
        m.validate()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    /// Encoder hidden widths before the code layer; the decoder mirrors them.
    pub hidden: Vec<usize>,
    pub code_dim: usize,
    pub alpha: f64,
    pub l1_last_only: bool,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            hidden: vec![64],
            code_dim: 32,
            alpha: 1e-4,
            l1_last_only: false,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: 40,
            patience: t.patience,
            seed: 0,
        }
    }
}

impl TrainOptions {
    pub fn model_config(&self, input_dim: usize, seq_len: usize) -> Result<ModelConfig> {
        let mut c = ModelConfig::mirrored(input_dim, &self.hidden, self.code_dim, self.alpha, seq_len);
        c.l1_last_only = self.l1_last_only;
        c.validate()?;
        Ok(c)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.epochs,
            patience: self.patience,
            seed: seed::derive_labeled(self.seed, "train-order", &[]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed; overrides the dataset and training seeds.
    pub seed: u64,
    pub dataset: DatasetOptions,
    pub train: TrainOptions,
    pub percentile: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset: DatasetOptions::default(),
            train: TrainOptions::default(),
            percentile: DEFAULT_PERCENTILE,
        }
    }
}

impl PipelineConfig {
    /// Per-stage options with seeds derived from the master seed.
    pub fn stage_options(&self) -> (DatasetOptions, TrainOptions) {
        let dataset = DatasetOptions {
            seed: seed::derive_labeled(self.seed, "dataset", &[]),
            ..self.dataset.clone()
        };
        let train = TrainOptions {
            seed: seed::derive_labeled(self.seed, "model", &[]),
            ..self.train.clone()
        };
        (dataset, train)
    }
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(Error::Config(format!("no dataset at {}", dir.display())));
    }
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

pub fn load_split(dir: &Path, file: &str) -> Result<Vec<ImageSequence>> {
    let path = dir.join(file);
    if !path.is_file() {
        return Err(Error::Config(format!("missing dataset split {}", path.display())));
    }
    read_split(&path)
}

/// Generates all three splits into `out`.
pub fn run_dataset(options: &DatasetOptions, out: &Path) -> Result<DatasetManifest> {
    let m = options.manifest()?;
    m.warn_invisible_grid();
    std::fs::create_dir_all(out)?;
    let write = |name: &str, split: &[ImageSequence]| {
        info!("writing {} sequences to {name}", split.len());
        write_split(&out.join(name), split, m.u_fft, m.v_fft, m.frames)
    };
    write(TRAIN_FILE, &m.generate_clean_split("train", m.counts.train)?)?;
    write(VALIDATION_FILE, &m.generate_clean_split("validation", m.counts.validation)?)?;
    write(TEST_FILE, &m.generate_test_split()?)?;
    std::fs::write(out.join(MANIFEST_FILE), serde_json::to_vec_pretty(&m)?)?;
    write_run_json(out, "dataset", options)?;
    Ok(m)
}

/// Trains on the dataset's clean splits and writes the checkpoint and curve.
pub fn run_train(dataset: &Path, options: &TrainOptions, out: &Path) -> Result<AutoencoderModel> {
    let m = load_manifest(dataset)?;
    let train_split = split_features(&load_split(dataset, TRAIN_FILE)?);
    let val_split = split_features(&load_split(dataset, VALIDATION_FILE)?);
    let config = options.model_config(m.feature_dim(), m.frames)?;
    let mut rng = seed::rng(seed::derive_labeled(options.seed, "init", &[]));
    let mut model = AutoencoderModel::new(config, &mut rng)?;
    let tc = options.train_config();
    std::fs::create_dir_all(out)?;
    let report = train(&mut model, &train_split, &val_split, &tc)?;
    info!("best epoch {} val loss {:.5e}", report.best_epoch, report.best_val_loss);
    report.write_csv(&out.join(CURVE_FILE))?;
    save_checkpoint(&out.join(MODEL_FILE), &model, Some(&tc))?;
    write_run_json(out, "train", options)?;
    Ok(model)
}

/// Threshold from the training split's reconstruction errors.
pub fn run_calibrate(dataset: &Path, model_path: &Path, percentile: f64, out: &Path) -> Result<DetectorThreshold> {
    let (model, _) = load_checkpoint(model_path)?;
    let training = split_features(&load_split(dataset, TRAIN_FILE)?);
    let t = calibrate(&model, &training, percentile)?;
    std::fs::create_dir_all(out)?;
    t.save(&out.join(THRESHOLD_FILE))?;
    #[derive(Serialize)]
    struct Echo<'a> {
        dataset: &'a Path,
        model: &'a Path,
        percentile: f64,
    }
    write_run_json(
        out,
        "calibrate",
        &Echo {
            dataset,
            model: model_path,
            percentile,
        },
    )?;
    Ok(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub accuracy: f64,
    pub n: usize,
    pub clean_accuracy: f64,
    pub threshold: f64,
    /// Pooled over kinds and jammer counts, with the clean sequences, per INR.
    pub accuracy_by_inr: BTreeMap<String, f64>,
    /// Per kind, per INR, pooled over jammer counts.
    pub kind_accuracy: BTreeMap<String, BTreeMap<String, f64>>,
}

impl EvalSummary {
    pub fn from_evaluation(e: &Evaluation, threshold: &DetectorThreshold) -> Self {
        let inrs: Vec<f64> = {
            let mut v: Vec<i64> = e.cells.keys().filter_map(|k| k.inr_mdb).collect();
            v.dedup();
            v.sort_unstable();
            v.dedup();
            v.into_iter().map(|m| m as f64 / 1000.0).collect()
        };
        let kinds: Vec<AnomalyKind> = {
            let mut v: Vec<AnomalyKind> = e.cells.keys().filter_map(|k| k.kind).collect();
            v.sort_unstable();
            v.dedup();
            v
        };
        Self {
            accuracy: e.accuracy(),
            n: e.overall.total,
            clean_accuracy: e.clean().accuracy(),
            threshold: threshold.threshold,
            accuracy_by_inr: inrs.iter().map(|&i| (i.to_string(), e.overall_at(i).accuracy())).collect(),
            kind_accuracy: kinds
                .iter()
                .map(|&k| {
                    (
                        k.to_string(),
                        inrs.iter().map(|&i| (i.to_string(), e.kind_at(k, i).accuracy())).collect(),
                    )
                })
                .collect(),
        }
    }
}

/// Scores the test split and writes the accuracy table and error CSVs.
pub fn run_eval(dataset: &Path, model_path: &Path, threshold_path: &Path, out: &Path) -> Result<Evaluation> {
    let (model, _) = load_checkpoint(model_path)?;
    let threshold = DetectorThreshold::load(threshold_path)?;
    let test = load_split(dataset, TEST_FILE)?;
    let e = evaluate(&model, &threshold, &test)?;
    std::fs::create_dir_all(out)?;
    e.write_accuracy_csv(&out.join(ACCURACY_FILE))?;
    e.write_error_csv(&out.join(HISTOGRAM_FILE))?;
    std::fs::write(
        out.join(SUMMARY_FILE),
        serde_json::to_vec_pretty(&EvalSummary::from_evaluation(&e, &threshold))?,
    )?;
    Ok(e)
}

/// Failure inside one pipeline stage.
#[derive(Debug)]
pub struct StageFailure {
    pub stage: &'static str,
    pub error: Error,
}

impl std::fmt::Display for StageFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "stage '{}' failed: {}", self.stage, self.error)
    }
}

impl std::error::Error for StageFailure {}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn hash_files(hasher: &mut Sha256, files: &[PathBuf]) -> Result<()> {
    for f in files {
        hasher.update(f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
        hasher.update(std::fs::read(f)?);
    }
    Ok(())
}

/// Hash of a stage's options and input files.
fn stage_hash<T: Serialize>(options: &T, inputs: &[PathBuf]) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(options)?);
    hash_files(&mut h, inputs)?;
    Ok(hex(&h.finalize()))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct StageRecord {
    hash: String,
    outputs: BTreeMap<String, String>,
}

type StageLedger = BTreeMap<String, StageRecord>;

fn output_hashes(files: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    files
        .iter()
        .map(|f| {
            let name = f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((name, hex(&Sha256::digest(std::fs::read(f)?))))
        })
        .collect()
}

fn is_current(ledger: &StageLedger, stage: &str, hash: &str, outputs: &[PathBuf]) -> bool {
    let Some(rec) = ledger.get(stage) else {
        return false;
    };
    rec.hash == hash && output_hashes(outputs).is_ok_and(|h| h == rec.outputs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub evaluation: Evaluation,
    pub threshold: DetectorThreshold,
    /// Stages skipped because `resume` found them current.
    pub skipped: Vec<&'static str>,
}

/// dataset → train → calibrate → eval under `out`. With `resume`, a stage
/// whose options, inputs and outputs hash to the recorded values is skipped.
pub fn run_pipeline(config: &PipelineConfig, out: &Path, resume: bool) -> std::result::Result<PipelineOutcome, StageFailure> {
    let fail = |stage: &'static str| move |error: Error| StageFailure { stage, error };
    std::fs::create_dir_all(out).map_err(|e| fail("setup")(e.into()))?;
    write_run_json(out, "pipeline", config).map_err(fail("setup"))?;
    let ledger_path = out.join(STAGES_FILE);
    let mut ledger: StageLedger = if resume {
        std::fs::read(&ledger_path)
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok())
            .unwrap_or_default()
    } else {
        StageLedger::new()
    };
    let save_ledger = |l: &StageLedger| -> Result<()> {
        std::fs::write(&ledger_path, serde_json::to_vec_pretty(l)?)?;
        Ok(())
    };
    let (data_opts, train_opts) = config.stage_options();
    let data_dir = out.join("dataset");
    let model_dir = out.join("model");
    let eval_dir = out.join("eval");
    let data_outputs: Vec<PathBuf> = [MANIFEST_FILE, TRAIN_FILE, VALIDATION_FILE, TEST_FILE]
        .iter()
        .map(|f| data_dir.join(f))
        .collect();
    let model_outputs = vec![model_dir.join(MODEL_FILE), model_dir.join(CURVE_FILE)];
    let threshold_outputs = vec![model_dir.join(THRESHOLD_FILE)];
    let eval_outputs = vec![eval_dir.join(ACCURACY_FILE), eval_dir.join(HISTOGRAM_FILE), eval_dir.join(SUMMARY_FILE)];
    let mut skipped = Vec::new();

    let mut run_stage = |name: &'static str,
                         hash: String,
                         outputs: &[PathBuf],
                         ledger: &mut StageLedger,
                         body: &mut dyn FnMut() -> Result<()>|
     -> std::result::Result<(), StageFailure> {
        if resume && is_current(ledger, name, &hash, outputs) {
            info!("stage {name} is current; skipped");
            skipped.push(name);
            return Ok(());
        }
        info!("stage {name}");
        body().map_err(fail(name))?;
        let outputs = output_hashes(outputs).map_err(fail(name))?;
        ledger.insert(name.to_string(), StageRecord { hash, outputs });
        save_ledger(ledger).map_err(fail(name))
    };

    let h = stage_hash(&data_opts, &[]).map_err(fail("dataset"))?;
    run_stage("dataset", h, &data_outputs, &mut ledger, &mut || {
        run_dataset(&data_opts, &data_dir).map(|_| ())
    })?;

    let h = stage_hash(&train_opts, &data_outputs).map_err(fail("train"))?;
    run_stage("train", h, &model_outputs, &mut ledger, &mut || {
        run_train(&data_dir, &train_opts, &model_dir).map(|_| ())
    })?;

    let h = stage_hash(&config.percentile, &[model_outputs[0].clone(), data_outputs[1].clone()])
        .map_err(fail("calibrate"))?;
    run_stage("calibrate", h, &threshold_outputs, &mut ledger, &mut || {
        run_calibrate(&data_dir, &model_outputs[0], config.percentile, &model_dir).map(|_| ())
    })?;

    let h = stage_hash(&(), &[model_outputs[0].clone(), threshold_outputs[0].clone(), data_outputs[3].clone()])
        .map_err(fail("eval"))?;
    let mut evaluation = None;
    run_stage("eval", h, &eval_outputs, &mut ledger, &mut || {
        evaluation = Some(run_eval(&data_dir, &model_outputs[0], &threshold_outputs[0], &eval_dir)?);
        Ok(())
    })?;

    let threshold = DetectorThreshold::load(&threshold_outputs[0]).map_err(fail("eval"))?;
    let evaluation = match evaluation {
        Some(e) => e,
        None => {
            let (model, _) = load_checkpoint(&model_outputs[0]).map_err(fail("eval"))?;
            let test = load_split(&data_dir, TEST_FILE).map_err(fail("eval"))?;
            evaluate(&model, &threshold, &test).map_err(fail("eval"))?
        }
    };
    Ok(PipelineOutcome {
        evaluation,
        threshold,
        skipped,
    })
}

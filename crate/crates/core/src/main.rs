use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use rfidetect::correlation::{collapse_to_lags, estimate_correlation};
use rfidetect::dataset::{normalize_image, AnomalyKind, Label, NormalizationMode};
use rfidetect::detector::{reconstruction_errors, DetectorThreshold};
use rfidetect::imaging::{angles_to_bin, dirty_image};
use rfidetect::pipeline::{self, DatasetOptions, PipelineConfig, TrainOptions};
use rfidetect::sim::{Scenario, SourceKind};
use rfidetect::{autoencoder, dataset, Error};

const OUT_ENV: &str = "RFIDETECT_OUT";

/// Array-imaging RFI and jamming detector.
#[derive(Parser)]
#[command(name = "rfidetect", version, about)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate snapshots for a scenario file and write per-frame CSVs.
    Simulate(ScenarioArgs),
    /// Dirty images (PGM and CSV) for every frame of a scenario, plus truth.json.
    Image(ImageArgs),
    /// Generate train, validation and test splits.
    Dataset(DatasetArgs),
    /// Train the autoencoder on a dataset's clean splits.
    Train(TrainArgs),
    /// Set the detection threshold from training reconstruction errors.
    Calibrate(CalibrateArgs),
    /// Classify every sequence of a split.
    Detect(DetectArgs),
    /// Accuracy tables and error histograms on the test split.
    Eval(EvalArgs),
    /// dataset → train → calibrate → eval with one master seed.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct OutArg {
    /// Output directory [default: $RFIDETECT_OUT/<command> or ./rfidetect-out/<command>].
    #[arg(long)]
    out: Option<PathBuf>,
}

impl OutArg {
    fn resolve(&self, command: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| {
            std::env::var_os(OUT_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("rfidetect-out"))
                .join(command)
        })
    }
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct ImageArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Pixel normalization: none, per-sequence-max or log.
    #[arg(long, default_value = "none")]
    normalize: String,
}

fn normalization(s: &str) -> Result<NormalizationMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Dataset flags; any flag left out falls back to the config file, then
/// the built-in default.
#[derive(Args, Serialize, Default)]
struct DatasetFlags {
    /// Elements along y.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n_y: Option<usize>,
    /// Elements along z.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n_z: Option<usize>,
    /// Element spacing in wavelengths.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    spacing: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    u_fft: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    v_fft: Option<usize>,
    /// SOI grid positions along u.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    grid_u: Option<usize>,
    /// SOI grid positions along v.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    grid_v: Option<usize>,
    /// Frames per sequence.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    frames: Option<usize>,
    /// Snapshots per frame.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    snapshots: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    noise_power: Option<f64>,
    /// Average redundant baselines instead of summing them.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    average_pairs: Option<bool>,
    /// Comma-separated SNR levels (dB) for the clean splits.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    snr_db: Option<Vec<f64>>,
    /// Comma-separated SNR levels (dB) for the test split.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    test_snr_db: Option<Vec<f64>>,
    /// Comma-separated INR levels (dB).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    inr_db: Option<Vec<f64>>,
    /// Comma-separated jammer kinds: transient, static, moving.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    kinds: Option<Vec<AnomalyKind>>,
    /// Comma-separated jammer counts.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    jammer_counts: Option<Vec<usize>>,
    /// Minimum bin distance between a jammer and the look bin.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    min_separation: Option<i64>,
    /// per-sequence-max or log.
    #[arg(long, value_parser = normalization)]
    #[serde(skip_serializing_if = "Option::is_none")]
    normalization: Option<NormalizationMode>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    train_replicates: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    validation_replicates: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    test_clean_replicates: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    test_anomalous_replicates: Option<usize>,
}

#[derive(Args)]
struct DatasetArgs {
    /// JSON config file with dataset options.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: DatasetFlags,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args, Serialize, Default)]
struct TrainFlags {
    /// Comma-separated encoder hidden widths before the code layer.
    #[arg(long = "layers", value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    code_dim: Option<usize>,
    /// Sparsity weight on the code's L1 norm.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    /// Apply the L1 penalty to the last time step only.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    l1_last_only: Option<bool>,
    #[arg(long = "lr")]
    #[serde(skip_serializing_if = "Option::is_none")]
    learning_rate: Option<f64>,
    #[arg(long = "batch")]
    #[serde(skip_serializing_if = "Option::is_none")]
    batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    patience: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    dataset: PathBuf,
    /// JSON config file with training options.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: TrainFlags,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Model checkpoint.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = rfidetect::detector::DEFAULT_PERCENTILE)]
    percentile: f64,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Split to classify: train, validation or test.
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    model: PathBuf,
    /// Threshold JSON from `calibrate`.
    #[arg(long)]
    threshold: PathBuf,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    threshold: PathBuf,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct PipelineArgs {
    /// JSON config with `seed`, `percentile`, and `dataset` / `train` objects.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    percentile: Option<f64>,
    #[command(flatten)]
    dataset: DatasetFlags,
    #[command(flatten)]
    train: TrainFlags,
    /// Skip stages whose inputs and outputs are unchanged.
    #[arg(long)]
    resume: bool,
    #[command(flatten)]
    out: OutArg,
}

enum Failure {
    Usage(String),
    Stage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Argument(_) | Error::Range(_) => Failure::Usage(e.to_string()),
            other => Failure::Stage(other.to_string()),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn config_value(path: Option<&Path>) -> Result<Option<Value>, Failure> {
    path.map(pipeline::read_config_file).transpose().map_err(Failure::from)
}

fn flags_value<T: Serialize>(flags: &T, seed: Option<u64>) -> Result<Value, Failure> {
    let mut v = serde_json::to_value(flags).map_err(|e| Failure::Stage(e.to_string()))?;
    if let (Some(s), Value::Object(m)) = (seed, &mut v) {
        m.insert("seed".into(), json!(s));
    }
    Ok(v)
}

fn load_scenario(path: &Path) -> Result<Scenario, Failure> {
    Scenario::load(path).map_err(|e| Failure::Usage(format!("cannot read scenario {}: {e}", path.display())))
}

fn cmd_simulate(a: &ScenarioArgs) -> CmdResult {
    let sc = load_scenario(&a.scenario)?;
    let specs = sc.source_specs()?;
    let out = a.out.resolve("simulate");
    std::fs::create_dir_all(&out).map_err(Error::from)?;
    for frame in 0..sc.frames {
        let block = sc.simulate_frame(&specs, frame)?;
        let mut text = String::new();
        let n = block.data.ncols();
        let header: Vec<String> = (0..n).flat_map(|i| [format!("re{i}"), format!("im{i}")]).collect();
        text.push_str(&header.join(","));
        text.push('\n');
        for row in block.data.rows() {
            let cells: Vec<String> = row.iter().flat_map(|z| [z.re.to_string(), z.im.to_string()]).collect();
            text.push_str(&cells.join(","));
            text.push('\n');
        }
        std::fs::write(out.join(format!("snapshots_{frame:03}.csv")), text).map_err(Error::from)?;

        let lags = collapse_to_lags(&estimate_correlation(&block)?, &sc.geometry, false)?;
        let mut text = String::from("l,k,re,im,count\n");
        for ((l, k), z) in lags.lags.indexed_iter() {
            text.push_str(&format!("{l},{k},{},{},{}\n", z.re, z.im, lags.counts[[l, k]]));
        }
        std::fs::write(out.join(format!("lags_{frame:03}.csv")), text).map_err(Error::from)?;
    }
    pipeline::write_run_json(&out, "simulate", &sc)?;
    Ok(())
}

#[derive(Serialize)]
struct TruthSource {
    kind: SourceKind,
    level_db: f64,
    /// Bin per frame, `null` while inactive.
    bins: Vec<Option<(i64, i64)>>,
}

#[derive(Serialize)]
struct Truth {
    look_bin: Option<(i64, i64)>,
    u_fft: usize,
    v_fft: usize,
    sources: Vec<TruthSource>,
}

fn cmd_image(a: &ImageArgs) -> CmdResult {
    let mode = match a.normalize.as_str() {
        "none" => None,
        other => Some(other.parse::<NormalizationMode>()?),
    };
    let sc = load_scenario(&a.scenario.scenario)?;
    let specs = sc.source_specs()?;
    let out = a.scenario.out.resolve("image");
    std::fs::create_dir_all(&out).map_err(Error::from)?;
    for frame in 0..sc.frames {
        let block = sc.simulate_frame(&specs, frame)?;
        let lags = collapse_to_lags(&estimate_correlation(&block)?, &sc.geometry, false)?;
        let mut img = dirty_image(&lags, &sc.geometry, sc.u_fft, sc.v_fft)?;
        if let Some(m) = mode {
            img = normalize_image(&img, m);
        }
        img.write_pgm(&out.join(format!("frame_{frame:03}.pgm")))?;
        img.write_csv(&out.join(format!("frame_{frame:03}.csv")))?;
    }
    let mut sources = Vec::new();
    for (cfg, spec) in sc.sources.iter().zip(&specs) {
        let bins = (0..sc.frames)
            .map(|f| match (spec.is_active(f), spec.direction_at(f)) {
                (true, Some(d)) => angles_to_bin(d, &sc.geometry, sc.u_fft, sc.v_fft).map(Some),
                _ => Ok(None),
            })
            .collect::<rfidetect::Result<Vec<_>>>()?;
        sources.push(TruthSource {
            kind: spec.kind,
            level_db: cfg.level_db,
            bins,
        });
    }
    let look_bin = sources
        .iter()
        .find(|s| s.kind == SourceKind::Soi)
        .and_then(|s| s.bins.iter().flatten().next().copied());
    let truth = Truth {
        look_bin,
        u_fft: sc.u_fft,
        v_fft: sc.v_fft,
        sources,
    };
    std::fs::write(out.join("truth.json"), serde_json::to_vec_pretty(&truth).map_err(Error::from)?)
        .map_err(Error::from)?;
    pipeline::write_run_json(&out, "image", &sc)?;
    Ok(())
}

fn cmd_dataset(a: &DatasetArgs) -> CmdResult {
    let file = config_value(a.config.as_deref())?;
    let opts: DatasetOptions = pipeline::resolve(file.as_ref(), flags_value(&a.flags, a.seed)?)?;
    let out = a.out.resolve("dataset");
    pipeline::run_dataset(&opts, &out)?;
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> CmdResult {
    let file = config_value(a.config.as_deref())?;
    let opts: TrainOptions = pipeline::resolve(file.as_ref(), flags_value(&a.flags, a.seed)?)?;
    pipeline::load_manifest(&a.dataset)?;
    pipeline::run_train(&a.dataset, &opts, &a.out.resolve("train"))?;
    Ok(())
}

fn cmd_calibrate(a: &CalibrateArgs) -> CmdResult {
    pipeline::load_manifest(&a.dataset)?;
    let t = pipeline::run_calibrate(&a.dataset, &a.model, a.percentile, &a.out.resolve("calibrate"))?;
    println!("threshold {:e} (p{} of {} sequences)", t.threshold, t.percentile, t.calibration_size);
    Ok(())
}

fn cmd_detect(a: &DetectArgs) -> CmdResult {
    let file = match a.split.as_str() {
        "train" => pipeline::TRAIN_FILE,
        "validation" => pipeline::VALIDATION_FILE,
        "test" => pipeline::TEST_FILE,
        other => return Err(Failure::Usage(format!("unknown split '{other}'"))),
    };
    let split = pipeline::load_split(&a.dataset, file)?;
    let (model, _) = autoencoder::load_checkpoint(&a.model)?;
    let threshold = DetectorThreshold::load(&a.threshold)?;
    let errors = reconstruction_errors(&model, &dataset::split_features(&split))?;
    let out = a.out.resolve("detect");
    std::fs::create_dir_all(&out).map_err(Error::from)?;
    let mut text = String::from("index,label,kind,inr_db,n_jammers,error,decision\n");
    for (i, (seq, err)) in split.iter().zip(&errors).enumerate() {
        let label = match seq.label {
            Label::Clean => "clean",
            Label::Anomalous => "anomalous",
        };
        let kind = seq.anomaly_kind.map(|k| k.to_string()).unwrap_or_default();
        let inr = seq.meta.inr_db.map(|v| v.to_string()).unwrap_or_default();
        let decision = if threshold.is_anomalous(*err) { "anomalous" } else { "clean" };
        text.push_str(&format!("{i},{label},{kind},{inr},{},{err:e},{decision}\n", seq.meta.n_jammers));
    }
    std::fs::write(out.join("detections.csv"), text).map_err(Error::from)?;
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> CmdResult {
    pipeline::load_manifest(&a.dataset)?;
    let e = pipeline::run_eval(&a.dataset, &a.model, &a.threshold, &a.out.resolve("eval"))?;
    println!("accuracy {:.4} over {} sequences", e.accuracy(), e.overall.total);
    Ok(())
}

fn cmd_pipeline(a: &PipelineArgs) -> CmdResult {
    let file = config_value(a.config.as_deref())?;
    let mut flags = json!({
        "dataset": flags_value(&a.dataset, None)?,
        "train": flags_value(&a.train, None)?,
    });
    if let Some(s) = a.seed {
        flags["seed"] = json!(s);
    }
    if let Some(p) = a.percentile {
        flags["percentile"] = json!(p);
    }
    let config: PipelineConfig = pipeline::resolve(file.as_ref(), flags)?;
    config.dataset.manifest()?;
    if !(config.percentile > 0.0 && config.percentile < 100.0) {
        return Err(Failure::Usage(format!("percentile {} is outside (0, 100)", config.percentile)));
    }
    let out = a.out.resolve("pipeline");
    match pipeline::run_pipeline(&config, &out, a.resume) {
        Ok(o) => {
            if !o.skipped.is_empty() {
                println!("skipped current stages: {}", o.skipped.join(", "));
            }
            println!("accuracy {:.4} over {} sequences", o.evaluation.accuracy(), o.evaluation.overall.total);
            Ok(())
        }
        Err(f) => Err(Failure::Stage(f.to_string())),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Image(a) => cmd_image(a),
        Command::Dataset(a) => cmd_dataset(a),
        Command::Train(a) => cmd_train(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Pipeline(a) => cmd_pipeline(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Stage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any fails.

use std::f64::consts::PI;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use rfidetect::autoencoder::{AutoencoderModel, Batch, ModelConfig};
use rfidetect::correlation::{
    collapse_to_lags, estimate_correlation, theoretical_correlation, LagCorrelation, SampleCorrelation,
};
use rfidetect::dataset::AnomalyKind;
use rfidetect::imaging::{angles_to_bin, bin_to_azimuth, bin_to_direction, bin_to_elevation, dirty_image};
use rfidetect::pipeline::{run_pipeline, PipelineConfig};
use rfidetect::sim::{generate_snapshots, snr_to_power, SourceKind, SourceSpec};
use rfidetect::{seed, ArrayGeometry, Complex64, Direction};

type Outcome = Result<String, String>;

fn cplx<R: Rng>(rng: &mut R) -> Complex64 {
    Complex64::new(StandardNormal.sample(rng), StandardNormal.sample(rng))
}

/// Direct double sum over lags, no FFT.
fn brute_force_image(lags: &LagCorrelation, geom: &ArrayGeometry, u_fft: usize, v_fft: usize) -> Array2<f64> {
    let nm = (geom.n_y * geom.n_z) as f64;
    Array2::from_shape_fn((u_fft, v_fft), |(i, j)| {
        let u = i as f64 - (u_fft / 2) as f64;
        let v = j as f64 - (v_fft / 2) as f64;
        let mut acc = Complex64::new(0.0, 0.0);
        for l in 0..geom.n_z {
            for k in 0..geom.n_y {
                let phase = -2.0 * PI * (k as f64 * u / u_fft as f64 + l as f64 * v / v_fft as f64);
                acc += lags.lags[[l, k]] * Complex64::from_polar(1.0, phase);
            }
        }
        (acc / nm).norm()
    })
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = seed::rng(101);
    let mut worst = 0.0_f64;
    for _ in 0..120 {
        let n_y = rng.random_range(1..=8);
        let n_z = rng.random_range(1..=8);
        let spacing = rng.random_range(0.25..=0.5);
        let geom = ArrayGeometry::new(n_y, n_z, spacing, spacing, 1.0).unwrap();
        let even = |rng: &mut rand_chacha::ChaCha8Rng, min: usize| {
            let lo = min.div_ceil(2).max(1);
            2 * rng.random_range(lo..=32)
        };
        let u_fft = even(&mut rng, n_y);
        let v_fft = even(&mut rng, n_z);
        let mut lags = LagCorrelation::zeros(&geom);
        lags.lags.mapv_inplace(|_| cplx(&mut rng));
        let fast = dirty_image(&lags, &geom, u_fft, v_fft).map_err(|e| e.to_string())?;
        let slow = brute_force_image(&lags, &geom, u_fft, v_fft);
        let peak = slow.iter().copied().fold(0.0, f64::max);
        for ((idx, &f), &s) in fast.pixels.indexed_iter().zip(slow.iter()) {
            if fast.valid_mask[idx] {
                worst = worst.max((f - s).abs() / peak);
            } else if f != 0.0 {
                return Err(format!("invisible pixel {idx:?} is {f}"));
            }
        }
    }
    let t = start.elapsed();
    if worst > 1e-10 {
        return Err(format!("max relative error {worst:.2e}"));
    }
    if t > Duration::from_secs(10) {
        return Err(format!("took {t:?}"));
    }
    Ok(format!("120 random lag sets, max relative error {worst:.2e}, {:.2} s", t.as_secs_f64()))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let geom = ArrayGeometry::half_wavelength(8, 8).unwrap();
    let visible: Vec<(i64, i64)> = (-32..32)
        .flat_map(|u| (-32..32).map(move |v| (u, v)))
        .filter(|&(u, v)| bin_to_direction(u, v, &geom, 64, 64).is_some())
        .collect();
    let mut hits = 0;
    for s in 0..100u64 {
        let mut rng = seed::rng(seed::derive_labeled(2024, "peak", &[s]));
        let truth = visible[rng.random_range(0..visible.len())];
        let dir = bin_to_direction(truth.0, truth.1, &geom, 64, 64).unwrap();
        let src = SourceSpec::fixed(SourceKind::Soi, dir, snr_to_power(10.0, 1.0));
        let block = generate_snapshots(&geom, &[src], 0, 1000, 1.0, rng.random()).map_err(|e| e.to_string())?;
        let corr = estimate_correlation(&block).map_err(|e| e.to_string())?;
        let lags = collapse_to_lags(&corr, &geom, false).map_err(|e| e.to_string())?;
        let img = dirty_image(&lags, &geom, 64, 64).map_err(|e| e.to_string())?;
        let (u, v) = img.argmax();
        if (u - truth.0).abs() <= 1 && (v - truth.1).abs() <= 1 {
            hits += 1;
        }
    }
    let t = start.elapsed();
    if hits < 99 || t > Duration::from_secs(60) {
        return Err(format!("{hits}/100 within one bin in {t:?}"));
    }
    Ok(format!("{hits}/100 seeds within one bin, {:.2} s", t.as_secs_f64()))
}

fn criterion_3() -> Outcome {
    let geom = ArrayGeometry::half_wavelength(8, 8).unwrap();
    let deg = |x: f64| x.to_degrees();
    let mut worst = 0.0_f64;
    let mut check = |got: Option<f64>, want: f64| -> Result<(), String> {
        let g = got.ok_or("unexpected invisible bin")?;
        worst = worst.max((g - want).abs());
        Ok(())
    };
    check(bin_to_elevation(16, 64, &geom).map(deg), 30.0)?;
    check(bin_to_elevation(-16, 64, &geom).map(deg), -30.0)?;
    check(bin_to_elevation(32, 64, &geom).map(deg), 90.0)?;
    check(bin_to_elevation(-32, 64, &geom).map(deg), -90.0)?;
    check(bin_to_azimuth(16, 64, 0.0, &geom).map(deg), 30.0)?;
    check(bin_to_azimuth(-32, 64, 0.0, &geom).map(deg), -90.0)?;
    check(bin_to_azimuth(32, 64, 0.0, &geom).map(deg), 90.0)?;
    // off-axis: asin(u/U·λ/d_y / cos φ)
    let el = (0.25_f64).asin();
    check(bin_to_azimuth(8, 64, el, &geom), (8.0 / 64.0 * 2.0 / el.cos()).asin())?;
    check(bin_to_elevation(8, 64, &geom), 0.25_f64.asin())?;
    if worst > 1e-12 {
        return Err(format!("closed-form deviation {worst:.2e}"));
    }
    let mut bins = 0;
    for (u_fft, v_fft) in [(64usize, 64usize), (32, 48)] {
        let (hu, hv) = (u_fft as i64 / 2, v_fft as i64 / 2);
        for u in -hu..hu {
            for v in -hv..hv {
                let Some(dir) = bin_to_direction(u, v, &geom, u_fft, v_fft) else {
                    continue;
                };
                let (sy, sz) = dir.direction_cosines();
                let cu = sy * geom.d_y / geom.wavelength * u_fft as f64;
                let cv = sz * geom.d_z / geom.wavelength * v_fft as f64;
                if (cu - u as f64).abs() > 0.5 || (cv - v as f64).abs() > 0.5 {
                    return Err(format!("bin ({u}, {v}) maps back to ({cu}, {cv})"));
                }
                let back = angles_to_bin(dir, &geom, u_fft, v_fft).map_err(|e| e.to_string())?;
                if back != (u, v) {
                    return Err(format!("bin ({u}, {v}) round-trips to {back:?}"));
                }
                bins += 1;
            }
        }
    }
    Ok(format!("identities within {worst:.1e}, {bins} visible bins round-trip"))
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let config = ModelConfig {
        input_dim: 5,
        encoder_dims: vec![6, 4],
        decoder_dims: vec![7, 5],
        sparsity_weight: 0.3,
        seq_len: 2,
        l1_last_only: false,
    };
    let mut worst = 0.0_f64;
    let mut checked = 0;
    for (variant, last_only) in [(0u64, false), (1, true)] {
        let mut cfg = config.clone();
        cfg.l1_last_only = last_only;
        let mut rng = seed::rng(400 + variant);
        let mut model = AutoencoderModel::new(cfg, &mut rng).map_err(|e| e.to_string())?;
        let seqs: Vec<Array2<f64>> = (0..3)
            .map(|_| Array2::from_shape_fn((2, 5), |_| rng.random_range(-1.0..1.0)))
            .collect();
        let batch = Batch::from_sequences(seqs.iter().map(|s| s.view())).map_err(|e| e.to_string())?;
        let (loss, grad) = model.backprop(&batch).map_err(|e| e.to_string())?;
        if loss.code_l1 <= 0.0 {
            return Err("L1 term is inactive".into());
        }
        let analytic: Vec<Vec<f64>> = grad.tensors().iter().map(|t| t.to_vec()).collect();
        let eps = 1e-5;
        for (ti, tensor) in analytic.iter().enumerate() {
            for (ei, &a) in tensor.iter().enumerate() {
                let orig = model.params.tensors()[ti][ei];
                model.params.tensors_mut()[ti][ei] = orig + eps;
                let up = model.loss(&batch).map_err(|e| e.to_string())?.total;
                model.params.tensors_mut()[ti][ei] = orig - eps;
                let down = model.loss(&batch).map_err(|e| e.to_string())?.total;
                model.params.tensors_mut()[ti][ei] = orig;
                let numeric = (up - down) / (2.0 * eps);
                // absolute floor for gradients that are zero up to round-off
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(rel);
                checked += 1;
            }
        }
    }
    let t = start.elapsed();
    if worst > 1e-4 || t > Duration::from_secs(30) {
        return Err(format!("worst relative mismatch {worst:.2e} over {checked} parameters in {t:?}"));
    }
    Ok(format!("{checked} parameters, worst relative mismatch {worst:.2e}, {:.2} s", t.as_secs_f64()))
}

fn criterion_8() -> Outcome {
    let mut rng = seed::rng(808);
    let mut cases = 0;
    for _ in 0..60 {
        let n_y = rng.random_range(1..=6);
        let n_z = rng.random_range(1..=6);
        let geom = ArrayGeometry::half_wavelength(n_y, n_z).unwrap();
        let n = n_y * n_z;
        for integer in [true, false] {
            let mut m = Array2::from_shape_fn((n, n), |_| {
                let z = cplx(&mut rng);
                if integer {
                    Complex64::new((z.re * 8.0).round(), (z.im * 8.0).round())
                } else {
                    z
                }
            });
            for i in 0..n {
                m[[i, i]].im = 0.0;
                for j in 0..i {
                    m[[j, i]] = m[[i, j]].conj();
                }
            }
            let corr = SampleCorrelation { matrix: m.clone(), s_count: 1 };
            let got = collapse_to_lags(&corr, &geom, false).map_err(|e| e.to_string())?;
            let mut want = Array2::<Complex64>::zeros((n_z, n_y));
            for i in 0..n {
                for j in 0..n {
                    let (n1, m1) = (i / n_z, i % n_z);
                    let (n2, m2) = (j / n_z, j % n_z);
                    if n1 >= n2 && m1 >= m2 {
                        want[[m1 - m2, n1 - n2]] += m[[i, j]];
                    }
                }
            }
            if got.lags != want {
                return Err(format!("{n_y}x{n_z} lag fold differs from pair enumeration"));
            }
            cases += 1;
        }
    }
    let mut worst = 0.0_f64;
    for _ in 0..40 {
        let geom = ArrayGeometry::new(rng.random_range(1..=6), rng.random_range(1..=6), 0.5, 0.4, 1.0).unwrap();
        let dir = Direction::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)).unwrap();
        let power = rng.random_range(0.1..10.0);
        let noise = rng.random_range(0.1..2.0);
        let r = theoretical_correlation(&geom, &[(dir, power)], noise);
        let (sy, sz) = (dir.elevation.cos() * dir.azimuth.sin(), dir.elevation.sin());
        for i in 0..geom.element_count() {
            for j in 0..geom.element_count() {
                let dn = (i / geom.n_z) as f64 - (j / geom.n_z) as f64;
                let dm = (i % geom.n_z) as f64 - (j % geom.n_z) as f64;
                let phase = 2.0 * PI / geom.wavelength * (dn * geom.d_y * sy + dm * geom.d_z * sz);
                let mut want = Complex64::from_polar(power, phase);
                if i == j {
                    want += noise;
                }
                worst = worst.max((r.matrix[[i, j]] - want).norm());
            }
        }
    }
    if worst > 1e-12 {
        return Err(format!("closed-form deviation {worst:.2e}"));
    }
    Ok(format!("{cases} random Hermitian folds exact, closed form within {worst:.1e}"))
}

struct DeskRun {
    outcome: Result<rfidetect::pipeline::PipelineOutcome, String>,
    elapsed: Duration,
}

fn desk_run() -> DeskRun {
    let dir = tempfile::tempdir().expect("tempdir");
    let config = PipelineConfig {
        seed: 1,
        ..PipelineConfig::default()
    };
    let start = Instant::now();
    let outcome = run_pipeline(&config, dir.path(), false).map_err(|e| e.to_string());
    DeskRun {
        outcome,
        elapsed: start.elapsed(),
    }
}

fn criterion_5(run: &DeskRun) -> Outcome {
    let o = run.outcome.as_ref().map_err(Clone::clone)?;
    let clean = o.evaluation.clean();
    let fpr = 1.0 - clean.accuracy();
    if clean.total < 200 || !(0.01..=0.12).contains(&fpr) {
        return Err(format!("false-positive rate {fpr:.3} on {} clean sequences", clean.total));
    }
    Ok(format!(
        "false-positive rate {fpr:.3} on {} held-out clean sequences (p{} threshold {:.3e})",
        clean.total, o.threshold.percentile, o.threshold.threshold
    ))
}

fn criterion_6(run: &DeskRun) -> Outcome {
    let o = run.outcome.as_ref().map_err(Clone::clone)?;
    let e = &o.evaluation;
    let inrs = [0.0, 10.0, 20.0, 30.0];
    let mut problems = Vec::new();

    let a = e.overall_at(20.0).accuracy();
    if a < 0.85 {
        problems.push(format!("(a) accuracy at 20 dB is {a:.3}"));
    }
    let mut trend = Vec::new();
    for kind in AnomalyKind::ALL {
        let acc: Vec<f64> = inrs.iter().map(|&i| e.kind_at(kind, i).accuracy()).collect();
        let up = acc.windows(2).filter(|w| w[1] >= w[0]).count();
        trend.push(format!("{kind} {up}/3"));
        if 2 * up < acc.len() {
            problems.push(format!("(b) {kind} accuracy {acc:?} mostly decreases"));
        }
    }
    let t10 = e.kind_at(AnomalyKind::Transient, 10.0).accuracy();
    let s10 = e.kind_at(AnomalyKind::Static, 10.0).accuracy();
    let m10 = e.kind_at(AnomalyKind::Moving, 10.0).accuracy();
    if t10 > s10 || t10 > m10 {
        problems.push(format!("(c) transient {t10:.3} vs static {s10:.3}, moving {m10:.3} at 10 dB"));
    }
    let mut moving = Vec::new();
    for inr in [0.0, 10.0] {
        let one = e.cell(AnomalyKind::Moving, 1, inr).accuracy();
        let three = e.cell(AnomalyKind::Moving, 3, inr).accuracy();
        moving.push(format!("{inr} dB {three:.3}≥{one:.3}"));
        if three < one {
            problems.push(format!("(d) 3 moving {three:.3} < 1 moving {one:.3} at {inr} dB"));
        }
    }
    if run.elapsed > Duration::from_secs(30 * 60) {
        problems.push(format!("took {:?}", run.elapsed));
    }
    let summary = format!(
        "(a) {a:.3} at 20 dB; (b) non-decreasing steps {}; (c) transient {t10:.3}, static {s10:.3}, moving {m10:.3} at 10 dB; (d) {}; {:.0} s",
        trend.join(", "),
        moving.join(", "),
        run.elapsed.as_secs_f64()
    );
    if problems.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{}; {summary}", problems.join("; ")))
    }
}

const TINY_CONFIG: &str = r#"{
  "seed": 17,
  "dataset": {
    "n_y": 4, "n_z": 4, "u_fft": 16, "v_fft": 16, "grid_u": 2, "grid_v": 2,
    "frames": 3, "snapshots": 100, "inr_db": [0.0, 20.0], "jammer_counts": [1, 2],
    "train_replicates": 3, "validation_replicates": 1, "test_clean_replicates": 1
  },
  "train": { "hidden": [6], "code_dim": 3, "epochs": 3, "batch_size": 4 }
}"#;

fn tree_files(root: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).expect("readable dir") {
            let p = entry.expect("entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).expect("under root").to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn criterion_7() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = dir.path().join("config.json");
    std::fs::write(&cfg, TINY_CONFIG).map_err(|e| e.to_string())?;
    let run = |name: &str| -> Result<std::path::PathBuf, String> {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_rfidetect"))
            .args(["pipeline", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(format!("pipeline failed: {}", String::from_utf8_lossy(&status.stderr)));
        }
        Ok(out)
    };
    let a = run("a")?;
    let b = run("b")?;
    let files = tree_files(&a);
    if files != tree_files(&b) {
        return Err("runs produced different file sets".into());
    }
    for must in ["dataset/train.rfds", "dataset/test.rfds", "model/model.ckpt", "eval/accuracy_vs_inr.csv"] {
        if !files.iter().any(|f| f == Path::new(must)) {
            return Err(format!("missing {must}"));
        }
    }
    // run.json echoes record absolute input paths, which differ by design
    let compared: Vec<_> = files.iter().filter(|f| !f.ends_with("run.json")).collect();
    for f in &compared {
        let x = std::fs::read(a.join(f)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.join(f)).map_err(|e| e.to_string())?;
        if x != y {
            return Err(format!("{} differs between runs", f.display()));
        }
    }
    Ok(format!("{} output files byte-identical across two runs", compared.len()))
}

fn main() -> ExitCode {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |n: u32| filter.is_empty() || filter.iter().any(|f| f == &n.to_string());
    let names = [
        (1, "imaging oracle equivalence"),
        (2, "peak localization"),
        (3, "angle conversion"),
        (4, "gradient correctness"),
        (5, "threshold calibration"),
        (6, "desk-scale detection trends"),
        (7, "pipeline determinism"),
        (8, "correlation oracle"),
    ];
    let desk = if wanted(5) || wanted(6) { Some(desk_run()) } else { None };
    let mut failed = 0;
    for (n, name) in names {
        if !wanted(n) {
            continue;
        }
        let result = match n {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(),
            5 => criterion_5(desk.as_ref().expect("desk run")),
            6 => criterion_6(desk.as_ref().expect("desk run")),
            7 => criterion_7(),
            _ => criterion_8(),
        };
        match result {
            Ok(detail) => println!("criterion {n} ({name}): PASS  {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL  {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

//! Image-sequence datasets.
//!
//! A sequence is `P` dirty images of the same scene plus the look angle of
//! the signal of interest (SOI). Clean sequences hold only the SOI, parked
//! on a grid of bins and swept over SNR. Anomalous sequences add one or
//! more jammers that are transient (one frame), static, or moving.
//!
//! Split files (`*.rfds`) are little-endian:
//!
//! ```text
//! magic   8 bytes "RFIDSET\0"
//! version u32     1
//! u_fft   u32
//! v_fft   u32
//! frames  u32     P
//! count   u64
//! pixels  f32 × count·P·u_fft·v_fft   sequence-major, then frame, then u, then v
//! records count × 56 bytes:
//!         look_u i32, look_v i32, soi_u i32, soi_v i32,
//!         label u8 (0 clean, 1 anomalous), kind u8 (0 none, 1 transient,
//!         2 static, 3 moving), n_jammers u16, transient_frame i32 (−1 if none),
//!         snr_db f64, inr_db f64 (NaN if none), seed u64, reserved u64
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::array::{ArrayGeometry, Direction};
use crate::correlation::{collapse_to_lags, estimate_correlation};
use crate::error::{Error, Result};
use crate::imaging::{angles_to_bin, bin_to_direction, dirty_image, DirtyImage};
use crate::seed;
use crate::sim::{frame_seed, generate_snapshots, snr_to_power, SourceKind, SourceSpec};

/// Image bins as `(u, v)` pairs.
pub type Bins = Vec<(i64, i64)>;

pub const DATASET_MAGIC: &[u8; 8] = b"RFIDSET\0";
pub const DATASET_VERSION: u32 = 1;
const RECORD_BYTES: usize = 56;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Clean,
    Anomalous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnomalyKind {
    Transient,
    Static,
    Moving,
}

impl AnomalyKind {
    pub const ALL: [AnomalyKind; 3] = [Self::Transient, Self::Static, Self::Moving];

    fn code(self) -> u8 {
        match self {
            Self::Transient => 1,
            Self::Static => 2,
            Self::Moving => 3,
        }
    }

    fn from_code(c: u8) -> Result<Option<Self>> {
        Ok(match c {
            0 => None,
            1 => Some(Self::Transient),
            2 => Some(Self::Static),
            3 => Some(Self::Moving),
            _ => return Err(Error::Format(format!("unknown anomaly kind code {c}"))),
        })
    }
}

impl fmt::Display for AnomalyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Transient => "transient",
            Self::Static => "static",
            Self::Moving => "moving",
        })
    }
}

impl FromStr for AnomalyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "transient" => Ok(Self::Transient),
            "static" => Ok(Self::Static),
            "moving" => Ok(Self::Moving),
            other => Err(Error::Config(format!("unknown jammer kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationMode {
    /// Divide every frame by the largest pixel of the sequence.
    #[default]
    PerSequenceMax,
    /// `10·log10(p / max)` clipped at −40 dB, mapped to [0, 1].
    Log,
}

impl FromStr for NormalizationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-sequence-max" => Ok(Self::PerSequenceMax),
            "log" => Ok(Self::Log),
            other => Err(Error::Config(format!("unknown normalization '{other}'"))),
        }
    }
}

const LOG_FLOOR_DB: f64 = -40.0;

/// Normalizes a group of frames jointly into [0, 1].
pub fn normalize_frames(frames: &mut [Array2<f64>], mode: NormalizationMode) {
    let max = frames
        .iter()
        .flat_map(|f| f.iter())
        .copied()
        .fold(0.0, f64::max);
    if max <= 0.0 || !max.is_finite() {
        for f in frames.iter_mut() {
            f.fill(0.0);
        }
        return;
    }
    for f in frames.iter_mut() {
        match mode {
            NormalizationMode::PerSequenceMax => f.mapv_inplace(|p| p / max),
            NormalizationMode::Log => f.mapv_inplace(|p| {
                if p <= 0.0 {
                    0.0
                } else {
                    let db = (10.0 * (p / max).log10()).max(LOG_FLOOR_DB);
                    (db - LOG_FLOOR_DB) / -LOG_FLOOR_DB
                }
            }),
        }
    }
}

/// Single-image form of [`normalize_frames`].
pub fn normalize_image(img: &DirtyImage, mode: NormalizationMode) -> DirtyImage {
    let mut out = img.clone();
    normalize_frames(std::slice::from_mut(&mut out.pixels), mode);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMeta {
    pub snr_db: f64,
    pub inr_db: Option<f64>,
    pub n_jammers: usize,
    pub soi_bin: (i64, i64),
    /// Frame a transient jammer fires in.
    pub transient_frame: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSequence {
    /// `P` normalized `u_fft × v_fft` frames.
    pub frames: Vec<Array2<f64>>,
    pub look_bin: (i64, i64),
    pub label: Label,
    pub anomaly_kind: Option<AnomalyKind>,
    pub meta: ScenarioMeta,
}

impl ImageSequence {
    pub fn image_dims(&self) -> (usize, usize) {
        self.frames.first().map_or((0, 0), |f| f.dim())
    }
}

/// Network input: one row per frame, the flattened image followed by the
/// look bin as `u/u_fft + 0.5` and `v/v_fft + 0.5`.
pub fn embed_look_angle(seq: &ImageSequence) -> Array2<f64> {
    let (u_fft, v_fft) = seq.image_dims();
    let pixels = u_fft * v_fft;
    let look_u = seq.look_bin.0 as f64 / u_fft as f64 + 0.5;
    let look_v = seq.look_bin.1 as f64 / v_fft as f64 + 0.5;
    let mut out = Array2::zeros((seq.frames.len(), pixels + 2));
    for (t, frame) in seq.frames.iter().enumerate() {
        let mut row = out.row_mut(t);
        for (dst, src) in row.iter_mut().zip(frame.iter()) {
            *dst = *src;
        }
        row[pixels] = look_u;
        row[pixels + 1] = look_v;
    }
    out
}

pub fn feature_dim(u_fft: usize, v_fft: usize) -> usize {
    u_fft * v_fft + 2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    /// Clean sequences per (grid position, SNR) in each split.
    pub train: usize,
    pub validation: usize,
    pub test_clean: usize,
    /// Anomalous sequences per (grid position, SNR, INR, kind, jammer count).
    pub test_anomalous: usize,
}

fn default_min_separation() -> i64 {
    2
}

/// Everything needed to regenerate a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub geometry: ArrayGeometry,
    pub u_fft: usize,
    pub v_fft: usize,
    /// Frames per sequence (`P`).
    pub frames: usize,
    /// Snapshots per frame (`S`).
    pub snapshots: usize,
    pub noise_power: f64,
    /// Average redundant pairs instead of summing them.
    #[serde(default)]
    pub average_pairs: bool,
    /// SOI grid as (positions along u, positions along v).
    pub grid: (usize, usize),
    pub snr_sweep_db: Vec<f64>,
    /// SNR used for the anomalous test cells; the sweep when `None`.
    #[serde(default)]
    pub test_snr_db: Option<Vec<f64>>,
    pub inr_sweep_db: Vec<f64>,
    pub kinds: Vec<AnomalyKind>,
    pub jammer_counts: Vec<usize>,
    /// Minimum Chebyshev distance in bins between a jammer and the look bin.
    #[serde(default = "default_min_separation")]
    pub min_separation: i64,
    pub normalization: NormalizationMode,
    pub counts: SplitCounts,
    pub master_seed: u64,
}

impl DatasetManifest {
    /// 8×8 half-wavelength array, 32×32 images, 8×8 grid, ten SNR levels.
    pub fn desk_scale(master_seed: u64) -> Self {
        Self {
            geometry: ArrayGeometry::half_wavelength(8, 8).expect("valid"),
            u_fft: 32,
            v_fft: 32,
            frames: 10,
            snapshots: 1000,
            noise_power: 1.0,
            average_pairs: false,
            grid: (8, 8),
            snr_sweep_db: (0..10).map(|i| -9.0 + 3.0 * i as f64 + 2.0).collect(),
            test_snr_db: None,
            inr_sweep_db: vec![0.0, 10.0, 20.0, 30.0],
            kinds: AnomalyKind::ALL.to_vec(),
            jammer_counts: vec![1, 2, 3],
            min_separation: 2,
            normalization: NormalizationMode::PerSequenceMax,
            counts: SplitCounts {
                train: 1,
                validation: 1,
                test_clean: 1,
                test_anomalous: 1,
            },
            master_seed,
        }
    }

    /// Full-size settings: 128×128 images, a 128×128 grid and −9…20 dB.
    pub fn full_scale(geometry: ArrayGeometry, master_seed: u64) -> Self {
        Self {
            geometry,
            u_fft: 128,
            v_fft: 128,
            grid: (128, 128),
            snr_sweep_db: (-9..=20).map(f64::from).collect(),
            inr_sweep_db: (0..=30).map(f64::from).collect(),
            ..Self::desk_scale(master_seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if !self.u_fft.is_multiple_of(2) || !self.v_fft.is_multiple_of(2) {
            return Err(Error::Config("FFT sizes must be even".into()));
        }
        if self.u_fft < self.geometry.n_y || self.v_fft < self.geometry.n_z {
            return Err(Error::Config("FFT sizes must cover the array".into()));
        }
        if self.frames == 0 || self.snapshots == 0 {
            return Err(Error::Config("frames and snapshots must be positive".into()));
        }
        if self.snr_sweep_db.is_empty() {
            return Err(Error::Config("SNR sweep is empty".into()));
        }
        if self.grid.0 == 0 || self.grid.1 == 0 {
            return Err(Error::Config("SOI grid must be non-empty".into()));
        }
        if self.jammer_counts.contains(&0) {
            return Err(Error::Config("jammer counts must be positive".into()));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        feature_dim(self.u_fft, self.v_fft)
    }

    /// Evenly spaced SOI bins, split into (visible, outside the visible
    /// region).
    pub fn grid_partition(&self) -> (Bins, Bins) {
        let axis = |n: usize, fft: usize| -> Vec<i64> {
            let step = fft as f64 / n as f64;
            (0..n)
                .map(|i| (-(fft as f64) / 2.0 + (i as f64 + 0.5) * step).floor() as i64)
                .collect()
        };
        let mut visible = Vec::new();
        let mut hidden = Vec::new();
        for &u in &axis(self.grid.0, self.u_fft) {
            for &v in &axis(self.grid.1, self.v_fft) {
                if bin_to_direction(u, v, &self.geometry, self.u_fft, self.v_fft).is_some() {
                    visible.push((u, v));
                } else {
                    hidden.push((u, v));
                }
            }
        }
        (visible, hidden)
    }

    /// Visible SOI grid bins.
    pub fn grid_bins(&self) -> Vec<(i64, i64)> {
        self.grid_partition().0
    }

    /// Logs the grid bins that fall outside the visible region.
    pub fn warn_invisible_grid(&self) {
        let (visible, hidden) = self.grid_partition();
        if !hidden.is_empty() {
            warn!(
                "{} of {} SOI grid bins are outside the visible region and skipped: {hidden:?}",
                hidden.len(),
                visible.len() + hidden.len()
            );
        }
    }

    fn direction_of(&self, bin: (i64, i64)) -> Result<Direction> {
        bin_to_direction(bin.0, bin.1, &self.geometry, self.u_fft, self.v_fft).ok_or_else(|| {
            Error::Range(format!("bin {bin:?} is outside the visible region"))
        })
    }

    fn soi(&self, bin: (i64, i64), snr_db: f64) -> Result<SourceSpec> {
        Ok(SourceSpec::fixed(
            SourceKind::Soi,
            self.direction_of(bin)?,
            snr_to_power(snr_db, self.noise_power),
        ))
    }

    /// Unnormalized dirty images of all `P` frames.
    pub fn render_frames(&self, sources: &[SourceSpec], seed: u64) -> Result<Vec<DirtyImage>> {
        (0..self.frames)
            .map(|frame| {
                let block = generate_snapshots(
                    &self.geometry,
                    sources,
                    frame,
                    self.snapshots,
                    self.noise_power,
                    frame_seed(seed, frame),
                )?;
                let corr = estimate_correlation(&block)?;
                let lags = collapse_to_lags(&corr, &self.geometry, self.average_pairs)?;
                dirty_image(&lags, &self.geometry, self.u_fft, self.v_fft)
            })
            .collect()
    }

    fn finish(
        &self,
        images: Vec<DirtyImage>,
        look_bin: (i64, i64),
        label: Label,
        anomaly_kind: Option<AnomalyKind>,
        meta: ScenarioMeta,
    ) -> ImageSequence {
        let mut frames: Vec<Array2<f64>> = images.into_iter().map(|i| i.pixels).collect();
        normalize_frames(&mut frames, self.normalization);
        // stored as f32 on disk; round now so in-memory and reloaded data agree
        for f in &mut frames {
            f.mapv_inplace(|p| p as f32 as f64);
        }
        ImageSequence {
            frames,
            look_bin,
            label,
            anomaly_kind,
            meta,
        }
    }

    /// Clean sequence: static SOI at `soi_bin`, look angle on the SOI.
    pub fn clean_sequence(&self, soi_bin: (i64, i64), snr_db: f64, seed: u64) -> Result<ImageSequence> {
        let images = self.render_frames(&[self.soi(soi_bin, snr_db)?], seed)?;
        Ok(self.finish(
            images,
            soi_bin,
            Label::Clean,
            None,
            ScenarioMeta {
                snr_db,
                inr_db: None,
                n_jammers: 0,
                soi_bin,
                transient_frame: None,
                seed,
            },
        ))
    }

    fn check_separation(&self, look: (i64, i64), jammer: &SourceSpec) -> Result<()> {
        for frame in 0..self.frames {
            if !jammer.is_active(frame) {
                continue;
            }
            let dir = jammer.direction_at(frame).ok_or_else(|| {
                Error::Config(format!("jammer has no direction for frame {frame}"))
            })?;
            let (u, v) = angles_to_bin(dir, &self.geometry, self.u_fft, self.v_fft)?;
            let sep = (u - look.0).abs().max((v - look.1).abs());
            if sep < self.min_separation {
                return Err(Error::Config(format!(
                    "jammer at bin ({u}, {v}) in frame {frame} is within {} bins of the look bin {look:?}",
                    self.min_separation
                )));
            }
        }
        Ok(())
    }

    /// SOI plus the given jammers. The SOI keeps the waveform and noise it
    /// would have in the clean sequence with the same seed.
    pub fn anomalous_sequence(
        &self,
        soi_bin: (i64, i64),
        snr_db: f64,
        jammers: &[SourceSpec],
        kind: AnomalyKind,
        inr_db: f64,
        seed: u64,
    ) -> Result<ImageSequence> {
        if jammers.is_empty() {
            return Err(Error::Config("anomalous sequence needs at least one jammer".into()));
        }
        let mut sources = vec![self.soi(soi_bin, snr_db)?];
        for j in jammers {
            j.validate(Some(self.frames))?;
            self.check_separation(soi_bin, j)?;
            sources.push(j.clone());
        }
        let transient_frame = jammers
            .iter()
            .find_map(|j| j.lifetime.as_ref().and_then(|l| l.iter().next().copied()));
        let images = self.render_frames(&sources, seed)?;
        Ok(self.finish(
            images,
            soi_bin,
            Label::Anomalous,
            Some(kind),
            ScenarioMeta {
                snr_db,
                inr_db: Some(inr_db),
                n_jammers: jammers.len(),
                soi_bin,
                transient_frame,
                seed,
            },
        ))
    }

    fn visible_bins(&self) -> Vec<(i64, i64)> {
        let (hu, hv) = (self.u_fft as i64 / 2, self.v_fft as i64 / 2);
        let mut out = Vec::new();
        for u in -hu..hu {
            for v in -hv..hv {
                if bin_to_direction(u, v, &self.geometry, self.u_fft, self.v_fft).is_some() {
                    out.push((u, v));
                }
            }
        }
        out
    }

    /// Random jammers of one kind, placed on visible bins at least
    /// `min_separation` bins from the look bin in every active frame.
    /// Transient jammers share one firing frame.
    pub fn random_jammers<R: Rng>(
        &self,
        kind: AnomalyKind,
        count: usize,
        look: (i64, i64),
        inr_db: f64,
        rng: &mut R,
    ) -> Result<Vec<SourceSpec>> {
        let candidates: Vec<(i64, i64)> = self
            .visible_bins()
            .into_iter()
            .filter(|b| (b.0 - look.0).abs().max((b.1 - look.1).abs()) >= self.min_separation)
            .collect();
        if candidates.is_empty() {
            return Err(Error::Config("no visible bin is far enough from the look bin".into()));
        }
        let power = snr_to_power(inr_db, self.noise_power);
        let pick = |rng: &mut R| candidates[rng.random_range(0..candidates.len())];
        let transient_frame = rng.random_range(0..self.frames);
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let spec = match kind {
                AnomalyKind::Static => {
                    SourceSpec::fixed(SourceKind::Rfi, self.direction_of(pick(rng))?, power)
                }
                AnomalyKind::Transient => SourceSpec::transient(
                    SourceKind::Rfi,
                    self.direction_of(pick(rng))?,
                    power,
                    transient_frame,
                ),
                AnomalyKind::Moving => {
                    let mut found = None;
                    for _ in 0..200 {
                        let start = self.direction_of(pick(rng))?;
                        let end = self.direction_of(pick(rng))?;
                        let spec = SourceSpec::moving(SourceKind::Rfi, start, end, power, self.frames);
                        if self.check_separation(look, &spec).is_ok() {
                            found = Some(spec);
                            break;
                        }
                    }
                    found.ok_or_else(|| {
                        Error::Config(format!("could not route a moving jammer around {look:?}"))
                    })?
                }
            };
            out.push(spec);
        }
        Ok(out)
    }

    /// Clean split named `split` with `replicates` sequences per
    /// (grid position, SNR) cell.
    pub fn generate_clean_split(&self, split: &str, replicates: usize) -> Result<Vec<ImageSequence>> {
        self.validate()?;
        let mut out = Vec::new();
        for (pi, &bin) in self.grid_bins().iter().enumerate() {
            for (si, &snr) in self.snr_sweep_db.iter().enumerate() {
                for r in 0..replicates {
                    let s = seed::derive_labeled(self.master_seed, split, &[pi as u64, si as u64, r as u64]);
                    out.push(self.clean_sequence(bin, snr, s)?);
                }
            }
        }
        Ok(out)
    }

    /// Anomalous test sequences over every (grid position, SNR, INR, kind,
    /// jammer count) cell.
    pub fn generate_anomalous_split(&self, split: &str, replicates: usize) -> Result<Vec<ImageSequence>> {
        self.validate()?;
        let snrs = self.test_snr_db.clone().unwrap_or_else(|| self.snr_sweep_db.clone());
        let mut out = Vec::new();
        for (pi, &bin) in self.grid_bins().iter().enumerate() {
            for (si, &snr) in snrs.iter().enumerate() {
                for (ii, &inr) in self.inr_sweep_db.iter().enumerate() {
                    for &kind in &self.kinds {
                        for &count in &self.jammer_counts {
                            for r in 0..replicates {
                                let s = seed::derive_labeled(
                                    self.master_seed,
                                    split,
                                    &[pi as u64, si as u64, ii as u64, kind.code() as u64, count as u64, r as u64],
                                );
                                let mut rng = seed::rng(seed::derive_labeled(s, "placement", &[]));
                                let jammers = self.random_jammers(kind, count, bin, inr, &mut rng)?;
                                out.push(self.anomalous_sequence(bin, snr, &jammers, kind, inr, s)?);
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Clean test sequences use the test SNR list when one is set.
    pub fn generate_test_split(&self) -> Result<Vec<ImageSequence>> {
        let clean_manifest = match &self.test_snr_db {
            Some(snrs) => Self {
                snr_sweep_db: snrs.clone(),
                ..self.clone()
            },
            None => self.clone(),
        };
        let mut out = clean_manifest.generate_clean_split("test-clean", self.counts.test_clean)?;
        out.extend(self.generate_anomalous_split("test-anomalous", self.counts.test_anomalous)?);
        Ok(out)
    }
}

/// Pixel-to-feature helper for a whole split.
pub fn split_features(split: &[ImageSequence]) -> Vec<Array2<f64>> {
    split.iter().map(embed_look_angle).collect()
}

pub fn write_split(path: &Path, split: &[ImageSequence], u_fft: usize, v_fft: usize, frames: usize) -> Result<()> {
    for s in split {
        if s.frames.len() != frames || s.frames.iter().any(|f| f.dim() != (u_fft, v_fft)) {
            return Err(Error::Argument("sequence shape differs from the split header".into()));
        }
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(DATASET_MAGIC)?;
    out.write_all(&DATASET_VERSION.to_le_bytes())?;
    out.write_all(&(u_fft as u32).to_le_bytes())?;
    out.write_all(&(v_fft as u32).to_le_bytes())?;
    out.write_all(&(frames as u32).to_le_bytes())?;
    out.write_all(&(split.len() as u64).to_le_bytes())?;
    for s in split {
        for f in &s.frames {
            for &p in f.iter() {
                out.write_all(&(p as f32).to_le_bytes())?;
            }
        }
    }
    for s in split {
        let mut rec = Vec::with_capacity(RECORD_BYTES);
        rec.extend_from_slice(&(s.look_bin.0 as i32).to_le_bytes());
        rec.extend_from_slice(&(s.look_bin.1 as i32).to_le_bytes());
        rec.extend_from_slice(&(s.meta.soi_bin.0 as i32).to_le_bytes());
        rec.extend_from_slice(&(s.meta.soi_bin.1 as i32).to_le_bytes());
        rec.push(match s.label {
            Label::Clean => 0,
            Label::Anomalous => 1,
        });
        rec.push(s.anomaly_kind.map_or(0, AnomalyKind::code));
        rec.extend_from_slice(&(s.meta.n_jammers as u16).to_le_bytes());
        rec.extend_from_slice(&s.meta.transient_frame.map_or(-1i32, |f| f as i32).to_le_bytes());
        rec.extend_from_slice(&s.meta.snr_db.to_le_bytes());
        rec.extend_from_slice(&s.meta.inr_db.unwrap_or(f64::NAN).to_le_bytes());
        rec.extend_from_slice(&s.meta.seed.to_le_bytes());
        rec.extend_from_slice(&0u64.to_le_bytes());
        debug_assert_eq!(rec.len(), RECORD_BYTES);
        out.write_all(&rec)?;
    }
    out.flush()?;
    Ok(())
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}
fn le_i32(b: &[u8], at: usize) -> i32 {
    i32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}
fn le_u64(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}
fn le_f64(b: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

pub fn read_split(path: &Path) -> Result<Vec<ImageSequence>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 32 || &bytes[..8] != DATASET_MAGIC {
        return Err(Error::Format(format!("{} is not a dataset split", path.display())));
    }
    let version = le_u32(&bytes, 8);
    if version != DATASET_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let u_fft = le_u32(&bytes, 12) as usize;
    let v_fft = le_u32(&bytes, 16) as usize;
    let frames = le_u32(&bytes, 20) as usize;
    let count = le_u64(&bytes, 24) as usize;
    let pixel_bytes = count * frames * u_fft * v_fft * 4;
    if bytes.len() != 32 + pixel_bytes + count * RECORD_BYTES {
        return Err(Error::Format("dataset split has the wrong length".into()));
    }
    let mut pixels = bytes[32..32 + pixel_bytes]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let at = 32 + pixel_bytes + i * RECORD_BYTES;
        let rec = &bytes[at..at + RECORD_BYTES];
        let frames_vec = (0..frames)
            .map(|_| Array2::from_shape_simple_fn((u_fft, v_fft), || pixels.next().expect("sized")))
            .collect();
        let label = match rec[16] {
            0 => Label::Clean,
            1 => Label::Anomalous,
            c => return Err(Error::Format(format!("unknown label code {c}"))),
        };
        let inr = le_f64(rec, 32);
        let tf = le_i32(rec, 20);
        out.push(ImageSequence {
            frames: frames_vec,
            look_bin: (le_i32(rec, 0) as i64, le_i32(rec, 4) as i64),
            label,
            anomaly_kind: AnomalyKind::from_code(rec[17])?,
            meta: ScenarioMeta {
                snr_db: le_f64(rec, 24),
                inr_db: (!inr.is_nan()).then_some(inr),
                n_jammers: u16::from_le_bytes([rec[18], rec[19]]) as usize,
                soi_bin: (le_i32(rec, 8) as i64, le_i32(rec, 12) as i64),
                transient_frame: (tf >= 0).then_some(tf as usize),
                seed: le_u64(rec, 40),
            },
        });
    }
    Ok(out)
}

/// Bins that are strict-or-equal local maxima over their 8-neighbourhood
/// and hold at least `min_fraction` of the image maximum.
pub fn local_maxima(img: &Array2<f64>, min_fraction: f64) -> BTreeSet<(usize, usize)> {
    let (nu, nv) = img.dim();
    let max = img.iter().copied().fold(0.0, f64::max);
    let mut out = BTreeSet::new();
    for i in 0..nu {
        for j in 0..nv {
            let p = img[[i, j]];
            if p <= 0.0 || p < min_fraction * max {
                continue;
            }
            let mut is_max = true;
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    let (a, b) = (i as i64 + di, j as i64 + dj);
                    if (di, dj) == (0, 0) || a < 0 || b < 0 || a >= nu as i64 || b >= nv as i64 {
                        continue;
                    }
                    if img[[a as usize, b as usize]] > p {
                        is_max = false;
                    }
                }
            }
            if is_max {
                out.insert((i, j));
            }
        }
    }
    out
}

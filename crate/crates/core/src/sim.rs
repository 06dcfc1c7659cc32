//! Baseband snapshot simulation for the URA.
//!
//! Each snapshot is `y[l] = Σ_s a(dir_s)·x_s[l] + w[l]`, where every
//! waveform `x_s` and the noise `w` are independent circular complex
//! Gaussian draws. Interferers use the same steering construction as the
//! signal of interest.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::array::{ArrayGeometry, Direction};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Soi,
    Rfi,
}

/// One emitter with its per-frame angle of arrival.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub kind: SourceKind,
    /// One direction per frame, or a single direction for a static source.
    pub trajectory: Vec<Direction>,
    /// Linear variance relative to the noise.
    pub power: f64,
    /// Frames in which the source transmits; `None` means every frame.
    pub lifetime: Option<BTreeSet<usize>>,
}

impl SourceSpec {
    pub fn fixed(kind: SourceKind, dir: Direction, power: f64) -> Self {
        Self {
            kind,
            trajectory: vec![dir],
            power,
            lifetime: None,
        }
    }

    /// Source active only in `frame`.
    pub fn transient(kind: SourceKind, dir: Direction, power: f64, frame: usize) -> Self {
        Self {
            lifetime: Some(BTreeSet::from([frame])),
            ..Self::fixed(kind, dir, power)
        }
    }

    /// Linear drift in (θ, φ) from `start` (frame 0) to `end` (frame `frames − 1`).
    pub fn moving(
        kind: SourceKind,
        start: Direction,
        end: Direction,
        power: f64,
        frames: usize,
    ) -> Self {
        let trajectory = if frames <= 1 {
            vec![start]
        } else {
            (0..frames)
                .map(|f| start.lerp(&end, f as f64 / (frames - 1) as f64))
                .collect()
        };
        Self {
            kind,
            trajectory,
            power,
            lifetime: None,
        }
    }

    pub fn is_active(&self, frame: usize) -> bool {
        self.lifetime.as_ref().is_none_or(|l| l.contains(&frame))
    }

    /// Direction in `frame`, if the trajectory covers it.
    pub fn direction_at(&self, frame: usize) -> Option<Direction> {
        match self.trajectory.len() {
            0 => None,
            1 => Some(self.trajectory[0]),
            _ => self.trajectory.get(frame).copied(),
        }
    }

    pub fn validate(&self, frames: Option<usize>) -> Result<()> {
        if !(self.power >= 0.0 && self.power.is_finite()) {
            return Err(Error::Config(format!("source power {} is negative", self.power)));
        }
        if self.trajectory.is_empty() {
            return Err(Error::Config("source trajectory is empty".into()));
        }
        if let (Some(p), Some(life)) = (frames, &self.lifetime) {
            if let Some(&f) = life.iter().find(|&&f| f >= p) {
                return Err(Error::Config(format!(
                    "source lifetime frame {f} outside [0, {p})"
                )));
            }
        }
        Ok(())
    }
}

/// `S × (n_y·n_z)` complex baseband samples for one image frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotBlock {
    pub data: Array2<Complex64>,
    pub geometry: ArrayGeometry,
    pub seed: u64,
}

impl SnapshotBlock {
    pub fn snapshot_count(&self) -> usize {
        self.data.nrows()
    }
}

/// Per-element SNR/INR in dB to linear source variance.
pub fn snr_to_power(snr_db: f64, noise_power: f64) -> f64 {
    noise_power * 10f64.powf(snr_db / 10.0)
}

#[inline]
fn complex_gaussian<R: Rng>(rng: &mut R, std_per_axis: f64) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * std_per_axis, im * std_per_axis)
}

/// Simulates frame `frame` of a scenario.
///
/// Noise and each source draw from their own seed stream (keyed by the
/// source's position in `sources`), so dropping trailing sources leaves the
/// remaining waveforms and the noise unchanged.
pub fn generate_snapshots(
    geom: &ArrayGeometry,
    sources: &[SourceSpec],
    frame: usize,
    s_count: usize,
    noise_power: f64,
    seed: u64,
) -> Result<SnapshotBlock> {
    if s_count == 0 {
        return Err(Error::Argument("snapshot count must be at least 1".into()));
    }
    if !(noise_power > 0.0 && noise_power.is_finite()) {
        return Err(Error::Argument(format!("noise power {noise_power} must be positive")));
    }
    let mut active = Vec::new();
    for (idx, src) in sources.iter().enumerate() {
        src.validate(None)?;
        if !src.is_active(frame) {
            continue;
        }
        let dir = src.direction_at(frame).ok_or_else(|| {
            Error::Config(format!(
                "source {idx} is active in frame {frame} but its trajectory has {} points",
                src.trajectory.len()
            ))
        })?;
        active.push((idx, geom.steering_vector(dir), src.power));
    }

    let elements = geom.element_count();
    let noise_std = (noise_power / 2.0).sqrt();
    let mut noise_rng = seed::rng(seed::derive_labeled(seed, "noise", &[]));
    let mut data = Array2::from_shape_fn((s_count, elements), |_| {
        complex_gaussian(&mut noise_rng, noise_std)
    });

    for (idx, steering, power) in &active {
        let mut rng = seed::rng(seed::derive_labeled(seed, "source", &[*idx as u64]));
        let std = (power / 2.0).sqrt();
        for mut row in data.rows_mut() {
            let x = complex_gaussian(&mut rng, std);
            for (y, a) in row.iter_mut().zip(steering) {
                *y += a * x;
            }
        }
    }

    Ok(SnapshotBlock {
        data,
        geometry: *geom,
        seed,
    })
}

/// Seed for frame `frame` of a scenario with `master` seed.
pub fn frame_seed(master: u64, frame: usize) -> u64 {
    seed::derive_labeled(master, "frame", &[frame as u64])
}

fn default_snapshots() -> usize {
    1000
}
fn default_frames() -> usize {
    1
}
fn default_noise() -> f64 {
    1.0
}
fn default_fft() -> usize {
    64
}

/// One emitter as written in a scenario file. Angles are degrees, level is
/// SNR (for the SOI) or INR (for interferers) in dB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceConfig {
    pub kind: SourceKind,
    pub level_db: f64,
    /// `[azimuth, elevation]` in degrees. One point is static, `frames`
    /// points are explicit, two points with `interpolate` drift linearly.
    pub trajectory_deg: Vec<[f64; 2]>,
    #[serde(default)]
    pub interpolate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active_frames: Option<Vec<usize>>,
}

/// JSON scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub geometry: ArrayGeometry,
    #[serde(default)]
    pub sources: Vec<SourceConfig>,
    #[serde(default = "default_snapshots")]
    pub snapshots: usize,
    #[serde(default = "default_frames")]
    pub frames: usize,
    #[serde(default = "default_noise")]
    pub noise_power: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_fft")]
    pub u_fft: usize,
    #[serde(default = "default_fft")]
    pub v_fft: usize,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let scenario: Scenario = serde_json::from_str(&text)?;
        scenario.geometry.validate()?;
        Ok(scenario)
    }

    pub fn source_specs(&self) -> Result<Vec<SourceSpec>> {
        self.sources
            .iter()
            .map(|c| {
                let dirs = c
                    .trajectory_deg
                    .iter()
                    .map(|[az, el]| Direction::from_degrees(*az, *el))
                    .collect::<Result<Vec<_>>>()?;
                let power = snr_to_power(c.level_db, self.noise_power);
                let mut spec = if c.interpolate {
                    if dirs.len() != 2 {
                        return Err(Error::Config(
                            "interpolated trajectory needs exactly two points".into(),
                        ));
                    }
                    SourceSpec::moving(c.kind, dirs[0], dirs[1], power, self.frames)
                } else {
                    SourceSpec {
                        kind: c.kind,
                        trajectory: dirs,
                        power,
                        lifetime: None,
                    }
                };
                spec.lifetime = c.active_frames.as_ref().map(|f| f.iter().copied().collect());
                spec.validate(Some(self.frames))?;
                Ok(spec)
            })
            .collect()
    }

    pub fn simulate_frame(&self, specs: &[SourceSpec], frame: usize) -> Result<SnapshotBlock> {
        generate_snapshots(
            &self.geometry,
            specs,
            frame,
            self.snapshots,
            self.noise_power,
            frame_seed(self.seed, frame),
        )
    }
}

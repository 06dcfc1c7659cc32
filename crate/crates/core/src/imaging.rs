//! Dirty images: 2-D DFT of the lag correlations, mapped to bearings.
//!
//! Bins are centered: `u ∈ [−u_fft/2, u_fft/2 − 1]` along the azimuth
//! (y) axis and `v ∈ [−v_fft/2, v_fft/2 − 1]` along elevation (z). The
//! pixel array is indexed `[u + u_fft/2, v + v_fft/2]`.
//!
//! A bin's spatial frequencies are `u/u_fft = d_y·cos φ·sin θ/λ` and
//! `v/v_fft = d_z·sin φ/λ`; bins where no real direction satisfies both are
//! outside the visible region and are held at zero.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::array::{ArrayGeometry, Direction};
use crate::correlation::LagCorrelation;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DirtyImage {
    /// `u_fft × v_fft` power estimate, zero outside the visible region.
    pub pixels: Array2<f64>,
    pub u_fft: usize,
    pub v_fft: usize,
    /// Azimuth per pixel in radians, NaN where invalid.
    pub az_axis: Array2<f64>,
    /// Elevation per v row in radians, NaN where invalid.
    pub el_axis: Vec<f64>,
    pub valid_mask: Array2<bool>,
}

impl DirtyImage {
    #[inline]
    pub fn u_index(&self, u: i64) -> usize {
        (u + self.u_fft as i64 / 2) as usize
    }

    #[inline]
    pub fn v_index(&self, v: i64) -> usize {
        (v + self.v_fft as i64 / 2) as usize
    }

    pub fn at(&self, u: i64, v: i64) -> f64 {
        self.pixels[[self.u_index(u), self.v_index(v)]]
    }

    /// Centered `(u, v)` of the brightest pixel. Ties go to the first in
    /// row-major order.
    pub fn argmax(&self) -> (i64, i64) {
        let mut best = (0usize, 0usize);
        let mut best_val = f64::NEG_INFINITY;
        for ((i, j), &p) in self.pixels.indexed_iter() {
            if p > best_val {
                best_val = p;
                best = (i, j);
            }
        }
        (
            best.0 as i64 - self.u_fft as i64 / 2,
            best.1 as i64 - self.v_fft as i64 / 2,
        )
    }

    pub fn max(&self) -> f64 {
        self.pixels.iter().copied().fold(0.0, f64::max)
    }

    /// Binary 8-bit PGM, normalized to the image maximum. Rows run from the
    /// highest elevation bin down; columns run from the lowest azimuth bin.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let max = self.max();
        let mut out = Vec::with_capacity(self.u_fft * self.v_fft + 32);
        write!(out, "P5\n{} {}\n255\n", self.u_fft, self.v_fft)?;
        for j in (0..self.v_fft).rev() {
            for i in 0..self.u_fft {
                let p = self.pixels[[i, j]];
                let level = if max > 0.0 { (p / max * 255.0).round() } else { 0.0 };
                out.push(level.clamp(0.0, 255.0) as u8);
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// CSV with one row per bin: `u,v,azimuth_deg,elevation_deg,power,valid`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("u,v,azimuth_deg,elevation_deg,power,valid\n");
        let fmt = |x: f64| if x.is_nan() { String::new() } else { format!("{:.6}", x.to_degrees()) };
        for i in 0..self.u_fft {
            for j in 0..self.v_fft {
                let u = i as i64 - self.u_fft as i64 / 2;
                let v = j as i64 - self.v_fft as i64 / 2;
                out.push_str(&format!(
                    "{u},{v},{},{},{:e},{}\n",
                    fmt(self.az_axis[[i, j]]),
                    fmt(self.el_axis[j]),
                    self.pixels[[i, j]],
                    self.valid_mask[[i, j]] as u8
                ));
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

fn check_fft_sizes(geom: &ArrayGeometry, u_fft: usize, v_fft: usize) -> Result<()> {
    if !u_fft.is_multiple_of(2) || !v_fft.is_multiple_of(2) || u_fft == 0 || v_fft == 0 {
        return Err(Error::Argument(format!(
            "FFT sizes must be even and positive, got {u_fft}x{v_fft}"
        )));
    }
    if u_fft < geom.n_y || v_fft < geom.n_z {
        return Err(Error::Argument(format!(
            "FFT {u_fft}x{v_fft} is smaller than the {}x{} array",
            geom.n_y, geom.n_z
        )));
    }
    Ok(())
}

/// Elevation of centered bin `v`, or `None` when `|v/v_fft·λ/d_z| > 1`.
pub fn bin_to_elevation(v: i64, v_fft: usize, geom: &ArrayGeometry) -> Option<f64> {
    let arg = v as f64 / v_fft as f64 * geom.wavelength / geom.d_z;
    (arg.abs() <= 1.0).then(|| arg.asin())
}

/// Azimuth of centered bin `u` at `elevation`, or `None` when the arcsine
/// argument leaves [−1, 1] or `cos(elevation)` vanishes.
pub fn bin_to_azimuth(u: i64, u_fft: usize, elevation: f64, geom: &ArrayGeometry) -> Option<f64> {
    let c = elevation.cos();
    if !elevation.is_finite() || c.abs() < 1e-12 {
        return None;
    }
    let arg = u as f64 / u_fft as f64 * geom.wavelength / geom.d_y / c;
    (arg.abs() <= 1.0).then(|| arg.asin())
}

/// Direction of bin `(u, v)` if it is visible.
pub fn bin_to_direction(
    u: i64,
    v: i64,
    geom: &ArrayGeometry,
    u_fft: usize,
    v_fft: usize,
) -> Option<Direction> {
    let el = bin_to_elevation(v, v_fft, geom)?;
    let az = bin_to_azimuth(u, u_fft, el, geom)?;
    Some(Direction {
        azimuth: az,
        elevation: el,
    })
}

/// Nearest centered bin of `dir`.
pub fn angles_to_bin(
    dir: Direction,
    geom: &ArrayGeometry,
    u_fft: usize,
    v_fft: usize,
) -> Result<(i64, i64)> {
    let (sy, sz) = dir.direction_cosines();
    let v = (v_fft as f64 * sz * geom.d_z / geom.wavelength).round() as i64;
    let u = (u_fft as f64 * sy * geom.d_y / geom.wavelength).round() as i64;
    let (hu, hv) = (u_fft as i64 / 2, v_fft as i64 / 2);
    if u < -hu || u >= hu || v < -hv || v >= hv || bin_to_direction(u, v, geom, u_fft, v_fft).is_none()
    {
        return Err(Error::Range(format!(
            "(θ={:.4}, φ={:.4}) rad maps to bin ({u}, {v}) outside the {u_fft}x{v_fft} visible grid",
            dir.azimuth, dir.elevation
        )));
    }
    Ok((u, v))
}

/// Dirty image of `lags` on a `u_fft × v_fft` centered grid:
/// `|Σ_{l,k} lags[l,k]/(n_y·n_z)·e^{−j2π k u/u_fft}·e^{−j2π l v/v_fft}|`,
/// computed with a zero-padded 2-D FFT.
pub fn dirty_image(
    lags: &LagCorrelation,
    geom: &ArrayGeometry,
    u_fft: usize,
    v_fft: usize,
) -> Result<DirtyImage> {
    check_fft_sizes(geom, u_fft, v_fft)?;
    if lags.lags.dim() != (geom.n_z, geom.n_y) {
        return Err(Error::Argument(format!(
            "lag matrix is {:?}, expected ({}, {})",
            lags.lags.dim(),
            geom.n_z,
            geom.n_y
        )));
    }
    let scale = 1.0 / geom.element_count() as f64;
    // grid[k, l]: rows run along u, columns along v
    let mut grid = Array2::<Complex64>::zeros((u_fft, v_fft));
    for ((l, k), z) in lags.lags.indexed_iter() {
        grid[[k, l]] = z * scale;
    }
    fft2_forward(&mut grid);

    let (hu, hv) = (u_fft as i64 / 2, v_fft as i64 / 2);
    let el_axis: Vec<f64> = (0..v_fft)
        .map(|j| bin_to_elevation(j as i64 - hv, v_fft, geom).unwrap_or(f64::NAN))
        .collect();
    let mut pixels = Array2::<f64>::zeros((u_fft, v_fft));
    let mut az_axis = Array2::<f64>::from_elem((u_fft, v_fft), f64::NAN);
    let mut valid_mask = Array2::<bool>::from_elem((u_fft, v_fft), false);
    for i in 0..u_fft {
        let u = i as i64 - hu;
        let p = u.rem_euclid(u_fft as i64) as usize;
        for (j, &el) in el_axis.iter().enumerate() {
            let v = j as i64 - hv;
            let q = v.rem_euclid(v_fft as i64) as usize;
            if let Some(az) = bin_to_azimuth(u, u_fft, el, geom) {
                az_axis[[i, j]] = az;
                valid_mask[[i, j]] = true;
                pixels[[i, j]] = grid[[p, q]].norm();
            }
        }
    }
    Ok(DirtyImage {
        pixels,
        u_fft,
        v_fft,
        az_axis,
        el_axis,
        valid_mask,
    })
}

fn fft2_forward(grid: &mut Array2<Complex64>) {
    let (rows, cols) = grid.dim();
    let mut planner = FftPlanner::<f64>::new();
    let row_fft = planner.plan_fft_forward(cols);
    for mut row in grid.rows_mut() {
        let slice = row.as_slice_mut().expect("standard layout");
        row_fft.process(slice);
    }
    let col_fft = planner.plan_fft_forward(rows);
    let mut buf = vec![Complex64::new(0.0, 0.0); rows];
    for mut col in grid.columns_mut() {
        for (b, z) in buf.iter_mut().zip(col.iter()) {
            *b = *z;
        }
        col_fft.process(&mut buf);
        for (z, b) in col.iter_mut().zip(&buf) {
            *z = *b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlation::{collapse_to_lags, theoretical_correlation};
    use std::f64::consts::{FRAC_PI_2, PI};

    fn geom() -> ArrayGeometry {
        ArrayGeometry::half_wavelength(4, 4).unwrap()
    }

    #[test]
    fn zero_lags_give_zero_image() {
        let g = geom();
        let img = dirty_image(&LagCorrelation::zeros(&g), &g, 16, 16).unwrap();
        assert!(img.pixels.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn impulse_gives_flat_visible_image() {
        let g = geom();
        let mut lags = LagCorrelation::zeros(&g);
        lags.lags[[0, 0]] = Complex64::new(3.2, 0.0);
        let img = dirty_image(&lags, &g, 16, 8).unwrap();
        for ((i, j), &p) in img.pixels.indexed_iter() {
            if img.valid_mask[[i, j]] {
                assert!((p - 3.2 / 16.0).abs() < 1e-14);
            } else {
                assert_eq!(p, 0.0);
            }
        }
    }

    #[test]
    fn fft_size_errors() {
        let g = geom();
        let lags = LagCorrelation::zeros(&g);
        assert!(dirty_image(&lags, &g, 15, 16).is_err());
        assert!(dirty_image(&lags, &g, 2, 16).is_err());
        assert!(dirty_image(&lags, &g, 16, 0).is_err());
    }

    #[test]
    fn elevation_examples() {
        let g = ArrayGeometry::half_wavelength(4, 4).unwrap();
        assert_eq!(bin_to_elevation(0, 64, &g), Some(0.0));
        assert!((bin_to_elevation(16, 64, &g).unwrap() - PI / 6.0).abs() < 1e-12);
        assert!((bin_to_elevation(-32, 64, &g).unwrap() + FRAC_PI_2).abs() < 1e-12);
        let wide = ArrayGeometry::new(4, 4, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(bin_to_elevation(30, 32, &wide), Some((30.0f64 / 32.0).asin()));
        let narrow = ArrayGeometry::new(4, 4, 0.25, 0.25, 1.0).unwrap();
        assert_eq!(bin_to_elevation(20, 32, &narrow), None);
    }

    #[test]
    fn azimuth_examples() {
        let g = geom();
        assert_eq!(bin_to_azimuth(0, 64, 0.7, &g), Some(0.0));
        assert!((bin_to_azimuth(16, 64, 0.0, &g).unwrap() - PI / 6.0).abs() < 1e-12);
        assert_eq!(bin_to_azimuth(3, 64, FRAC_PI_2, &g), None);
        assert_eq!(bin_to_azimuth(-30, 64, 1.0, &g), None);
    }

    #[test]
    fn angles_to_bin_examples() {
        let g = geom();
        assert_eq!(angles_to_bin(Direction::BROADSIDE, &g, 64, 64).unwrap(), (0, 0));
        let d = Direction::new(0.0, PI / 6.0).unwrap();
        assert_eq!(angles_to_bin(d, &g, 128, 128).unwrap().1, 32);
        assert!(matches!(
            angles_to_bin(Direction::new(FRAC_PI_2, 0.0).unwrap(), &g, 64, 64),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn grid_aligned_source_peaks_at_its_bin() {
        let g = geom();
        let dir = bin_to_direction(5, -3, &g, 32, 32).unwrap();
        let r = theoretical_correlation(&g, &[(dir, 1.0)], 0.1);
        let lags = collapse_to_lags(&r, &g, false).unwrap();
        let img = dirty_image(&lags, &g, 32, 32).unwrap();
        assert_eq!(img.argmax(), (5, -3));
    }

    #[test]
    fn pgm_and_csv_export() {
        let g = geom();
        let dir = bin_to_direction(2, 1, &g, 8, 8).unwrap();
        let r = theoretical_correlation(&g, &[(dir, 1.0)], 0.0);
        let img = dirty_image(&collapse_to_lags(&r, &g, false).unwrap(), &g, 8, 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let pgm = dir.path().join("a.pgm");
        img.write_pgm(&pgm).unwrap();
        let bytes = std::fs::read(&pgm).unwrap();
        assert!(bytes.starts_with(b"P5\n8 8\n255\n"));
        assert_eq!(bytes.len(), 11 + 64);
        assert_eq!(*bytes[11..].iter().max().unwrap(), 255);
        let csv = dir.path().join("a.csv");
        img.write_csv(&csv).unwrap();
        let text = std::fs::read_to_string(&csv).unwrap();
        assert_eq!(text.lines().count(), 65);
    }
}

//! Geometry and steering vectors of a uniform rectangular array (URA).
//!
//! Elements lie in the y-z plane. Element `(n, m)` sits at `n·d_y` along y
//! and `m·d_z` along z, with `n < n_y` and `m < n_z`. Flattened vectors are
//! row-major over `(n, m)` with `m` varying fastest, so element `(n, m)` is
//! at index `n·n_z + m`. Every other module relies on this ordering.

use std::f64::consts::{FRAC_PI_2, PI};

use log::warn;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    /// Elements along y.
    pub n_y: usize,
    /// Elements along z.
    pub n_z: usize,
    /// Spacing along y, meters.
    pub d_y: f64,
    /// Spacing along z, meters.
    pub d_z: f64,
    /// Carrier wavelength, meters.
    pub wavelength: f64,
}

impl ArrayGeometry {
    pub fn new(n_y: usize, n_z: usize, d_y: f64, d_z: f64, wavelength: f64) -> Result<Self> {
        let geom = Self {
            n_y,
            n_z,
            d_y,
            d_z,
            wavelength,
        };
        geom.validate()?;
        Ok(geom)
    }

    /// Half-wavelength `n_y × n_z` array with unit wavelength.
    pub fn half_wavelength(n_y: usize, n_z: usize) -> Result<Self> {
        Self::new(n_y, n_z, 0.5, 0.5, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_y == 0 || self.n_z == 0 {
            return Err(Error::Argument(format!(
                "array needs at least one element per axis, got {}x{}",
                self.n_y, self.n_z
            )));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.d_y) || !positive(self.d_z) || !positive(self.wavelength) {
            return Err(Error::Argument(format!(
                "spacings and wavelength must be positive and finite (d_y={}, d_z={}, λ={})",
                self.d_y, self.d_z, self.wavelength
            )));
        }
        if !self.is_alias_free() {
            warn!(
                "element spacing exceeds λ/2 (d_y={}, d_z={}, λ={}); images will alias",
                self.d_y, self.d_z, self.wavelength
            );
        }
        Ok(())
    }

    pub fn is_alias_free(&self) -> bool {
        let half = 0.5 * self.wavelength;
        self.d_y <= half && self.d_z <= half
    }

    pub fn element_count(&self) -> usize {
        self.n_y * self.n_z
    }

    /// Flat index of element `(n, m)`.
    #[inline]
    pub fn flat_index(&self, n: usize, m: usize) -> usize {
        n * self.n_z + m
    }

    fn check_index(&self, n: usize, m: usize) -> Result<()> {
        if n >= self.n_y || m >= self.n_z {
            return Err(Error::Index(format!(
                "element ({n}, {m}) outside a {}x{} array",
                self.n_y, self.n_z
            )));
        }
        Ok(())
    }

    /// Path-length difference, in meters, between element `(n, m)` and the
    /// origin element for a plane wave from `dir`.
    pub fn equivalent_distance(&self, n: usize, m: usize, dir: Direction) -> Result<f64> {
        self.check_index(n, m)?;
        Ok(self.distance_unchecked(n, m, dir))
    }

    #[inline]
    fn distance_unchecked(&self, n: usize, m: usize, dir: Direction) -> f64 {
        let (sy, sz) = dir.direction_cosines();
        n as f64 * self.d_y * sy + m as f64 * self.d_z * sz
    }

    pub fn steering_element(&self, n: usize, m: usize, dir: Direction) -> Result<Complex64> {
        self.check_index(n, m)?;
        Ok(self.phase_to_unit(self.distance_unchecked(n, m, dir)))
    }

    #[inline]
    fn phase_to_unit(&self, distance: f64) -> Complex64 {
        Complex64::from_polar(1.0, 2.0 * PI / self.wavelength * distance)
    }

    /// Array manifold for `dir`, length `n_y·n_z`, `m` fastest.
    pub fn steering_vector(&self, dir: Direction) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(self.element_count());
        for n in 0..self.n_y {
            for m in 0..self.n_z {
                out.push(self.phase_to_unit(self.distance_unchecked(n, m, dir)));
            }
        }
        out
    }

    /// Manifold of the 1-D linear array along y (length `n_y`).
    pub fn steering_vector_y(&self, dir: Direction) -> Vec<Complex64> {
        let (sy, _) = dir.direction_cosines();
        (0..self.n_y)
            .map(|n| self.phase_to_unit(n as f64 * self.d_y * sy))
            .collect()
    }

    /// Manifold of the 1-D linear array along z (length `n_z`).
    pub fn steering_vector_z(&self, dir: Direction) -> Vec<Complex64> {
        let (_, sz) = dir.direction_cosines();
        (0..self.n_z)
            .map(|m| self.phase_to_unit(m as f64 * self.d_z * sz))
            .collect()
    }
}

/// Angle of arrival in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    /// θ, in [−π/2, π/2].
    pub azimuth: f64,
    /// φ, in [−π/2, π/2].
    pub elevation: f64,
}

impl Direction {
    pub fn new(azimuth: f64, elevation: f64) -> Result<Self> {
        let ok = |a: f64| a.is_finite() && a.abs() <= FRAC_PI_2 + 1e-12;
        if !ok(azimuth) || !ok(elevation) {
            return Err(Error::Argument(format!(
                "direction (θ={azimuth}, φ={elevation}) rad outside [−π/2, π/2]"
            )));
        }
        Ok(Self { azimuth, elevation })
    }

    pub fn from_degrees(azimuth_deg: f64, elevation_deg: f64) -> Result<Self> {
        Self::new(azimuth_deg.to_radians(), elevation_deg.to_radians())
    }

    pub const BROADSIDE: Direction = Direction {
        azimuth: 0.0,
        elevation: 0.0,
    };

    /// `(cos φ sin θ, sin φ)`: the y and z components of the unit vector
    /// toward the source.
    #[inline]
    pub fn direction_cosines(&self) -> (f64, f64) {
        (
            self.elevation.cos() * self.azimuth.sin(),
            self.elevation.sin(),
        )
    }

    /// Linear interpolation in (θ, φ); `t` in [0, 1].
    pub fn lerp(&self, other: &Direction, t: f64) -> Direction {
        Direction {
            azimuth: self.azimuth + (other.azimuth - self.azimuth) * t,
            elevation: self.elevation + (other.elevation - self.elevation) * t,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn geom(n_y: usize, n_z: usize) -> ArrayGeometry {
        ArrayGeometry::half_wavelength(n_y, n_z).unwrap()
    }

    #[test]
    fn distance_at_origin_and_broadside() {
        let g = geom(4, 3);
        let d = Direction::new(0.3, -0.7).unwrap();
        assert_eq!(g.equivalent_distance(0, 0, d).unwrap(), 0.0);
        for n in 0..4 {
            for m in 0..3 {
                assert_eq!(g.equivalent_distance(n, m, Direction::BROADSIDE).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn distance_endfire_y() {
        let g = geom(2, 2);
        let d = Direction::new(FRAC_PI_2, 0.0).unwrap();
        let v = g.equivalent_distance(1, 1, d).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn index_errors() {
        let g = geom(2, 3);
        assert!(matches!(
            g.equivalent_distance(2, 0, Direction::BROADSIDE),
            Err(Error::Index(_))
        ));
        assert!(matches!(
            g.steering_element(0, 3, Direction::BROADSIDE),
            Err(Error::Index(_))
        ));
    }

    #[test]
    fn steering_element_half_wave_endfire_is_minus_one() {
        let g = geom(2, 1);
        let a = g
            .steering_element(1, 0, Direction::new(FRAC_PI_2, 0.0).unwrap())
            .unwrap();
        assert!((a - Complex64::new(-1.0, 0.0)).norm() < 1e-15);
        assert_eq!(
            g.steering_element(0, 0, Direction::new(1.0, 0.2).unwrap()).unwrap(),
            Complex64::new(1.0, 0.0)
        );
    }

    #[test]
    fn steering_vector_examples() {
        let g = geom(5, 4);
        assert!(g
            .steering_vector(Direction::BROADSIDE)
            .iter()
            .all(|a| *a == Complex64::new(1.0, 0.0)));

        let single = geom(1, 1);
        assert_eq!(
            single.steering_vector(Direction::new(0.4, 0.1).unwrap()),
            vec![Complex64::new(1.0, 0.0)]
        );

        let pair = geom(2, 1);
        let v = pair.steering_vector(Direction::new(PI / 6.0, 0.0).unwrap());
        assert_eq!(v.len(), 2);
        assert!((v[0] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        assert!((v[1] - Complex64::new(0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn ordering_is_m_fastest() {
        let g = ArrayGeometry::new(3, 2, 0.5, 0.3, 1.0).unwrap();
        let d = Direction::new(0.4, 0.25).unwrap();
        let v = g.steering_vector(d);
        for n in 0..3 {
            for m in 0..2 {
                assert_eq!(v[g.flat_index(n, m)], g.steering_element(n, m, d).unwrap());
            }
        }
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(ArrayGeometry::new(0, 1, 0.5, 0.5, 1.0).is_err());
        assert!(ArrayGeometry::new(1, 1, -0.5, 0.5, 1.0).is_err());
        assert!(ArrayGeometry::new(1, 1, 0.5, 0.5, 0.0).is_err());
        // aliased spacing warns but is accepted
        let g = ArrayGeometry::new(2, 2, 0.8, 0.5, 1.0).unwrap();
        assert!(!g.is_alias_free());
    }

    #[test]
    fn rejects_bad_direction() {
        assert!(Direction::new(2.0, 0.0).is_err());
        assert!(Direction::new(0.0, f64::NAN).is_err());
        assert!(Direction::from_degrees(90.0, -90.0).is_ok());
    }

    fn angle() -> impl Strategy<Value = f64> {
        -FRAC_PI_2..=FRAC_PI_2
    }

    proptest! {
        #[test]
        fn unit_modulus(n_y in 1usize..7, n_z in 1usize..7, th in angle(), ph in angle(),
                        dy in 0.1f64..0.5, dz in 0.1f64..0.5) {
            let g = ArrayGeometry::new(n_y, n_z, dy, dz, 1.0).unwrap();
            for a in g.steering_vector(Direction::new(th, ph).unwrap()) {
                prop_assert!((a.norm() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn conjugate_symmetry(n_y in 1usize..7, n_z in 1usize..7, th in angle(), ph in angle()) {
            let g = geom(n_y, n_z);
            let a = g.steering_vector(Direction::new(th, ph).unwrap());
            let b = g.steering_vector(Direction::new(-th, -ph).unwrap());
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x.conj() - y).norm() < 1e-12);
            }
        }

        #[test]
        fn kronecker_separable(n_y in 1usize..7, n_z in 1usize..7, th in angle(), ph in angle()) {
            let g = geom(n_y, n_z);
            let d = Direction::new(th, ph).unwrap();
            let full = g.steering_vector(d);
            let ay = g.steering_vector_y(d);
            let az = g.steering_vector_z(d);
            for n in 0..n_y {
                for m in 0..n_z {
                    prop_assert!((full[g.flat_index(n, m)] - ay[n] * az[m]).norm() < 1e-12);
                }
            }
        }
    }
}

//! Spatial correlation estimation and redundant-baseline folding.

use ndarray::{Array2, Zip};
use num_complex::Complex64;

use crate::array::{ArrayGeometry, Direction};
use crate::error::{Error, Result};
use crate::sim::SnapshotBlock;

/// Sample correlation `R̂ = (1/S)·Σ y yᴴ`, `(n_y·n_z)` square.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleCorrelation {
    pub matrix: Array2<Complex64>,
    pub s_count: usize,
}

/// Correlations summed over redundant element pairs.
///
/// `lags[[l, k]]` holds the sum over all pairs whose z-index difference is
/// `l` and y-index difference is `k` (both non-negative), so the array is
/// `n_z × n_y`. `counts[[l, k]] = (n_z − l)·(n_y − k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LagCorrelation {
    pub lags: Array2<Complex64>,
    pub counts: Array2<usize>,
    /// Whether `lags` was divided by `counts`.
    pub averaged: bool,
}

impl LagCorrelation {
    pub fn zeros(geom: &ArrayGeometry) -> Self {
        Self {
            lags: Array2::zeros((geom.n_z, geom.n_y)),
            counts: pair_counts(geom),
            averaged: false,
        }
    }
}

pub fn pair_counts(geom: &ArrayGeometry) -> Array2<usize> {
    Array2::from_shape_fn((geom.n_z, geom.n_y), |(l, k)| {
        (geom.n_z - l) * (geom.n_y - k)
    })
}

pub fn estimate_correlation(block: &SnapshotBlock) -> Result<SampleCorrelation> {
    let s = block.data.nrows();
    if s == 0 {
        return Err(Error::Argument("snapshot block is empty".into()));
    }
    let conj = block.data.mapv(|z| z.conj());
    // R[i, j] = Σ_s y_s[i]·conj(y_s[j])
    let mut matrix = block.data.t().dot(&conj);
    matrix.mapv_inplace(|z| z / s as f64);
    hermitian_symmetrize(&mut matrix);
    Ok(SampleCorrelation { matrix, s_count: s })
}

/// `m ← (m + mᴴ)/2`.
pub fn hermitian_symmetrize(m: &mut Array2<Complex64>) {
    let n = m.nrows();
    for i in 0..n {
        m[[i, i]] = Complex64::new(m[[i, i]].re, 0.0);
        for j in (i + 1)..n {
            let avg = 0.5 * (m[[i, j]] + m[[j, i]].conj());
            m[[i, j]] = avg;
            m[[j, i]] = avg.conj();
        }
    }
}

/// Exact `Σ σ²·a aᴴ + σ_w²·I` for point sources `(direction, power)`.
pub fn theoretical_correlation(
    geom: &ArrayGeometry,
    sources: &[(Direction, f64)],
    noise_power: f64,
) -> SampleCorrelation {
    let n = geom.element_count();
    let mut matrix = Array2::<Complex64>::zeros((n, n));
    for (dir, power) in sources {
        let a = geom.steering_vector(*dir);
        Zip::indexed(&mut matrix).for_each(|(i, j), r| *r += a[i] * a[j].conj() * *power);
    }
    for i in 0..n {
        matrix[[i, i]] += noise_power;
    }
    SampleCorrelation { matrix, s_count: 0 }
}

/// Folds `corr` onto non-negative index differences.
///
/// With `average_pairs` the sum at each lag is divided by its pair count;
/// otherwise the plain sum is kept.
pub fn collapse_to_lags(
    corr: &SampleCorrelation,
    geom: &ArrayGeometry,
    average_pairs: bool,
) -> Result<LagCorrelation> {
    let n = geom.element_count();
    if corr.matrix.dim() != (n, n) {
        return Err(Error::Argument(format!(
            "correlation is {:?}, geometry needs {n}x{n}",
            corr.matrix.dim()
        )));
    }
    let mut out = LagCorrelation::zeros(geom);
    for n1 in 0..geom.n_y {
        for n2 in 0..=n1 {
            let k = n1 - n2;
            for m1 in 0..geom.n_z {
                let row = geom.flat_index(n1, m1);
                for m2 in 0..=m1 {
                    let l = m1 - m2;
                    out.lags[[l, k]] += corr.matrix[[row, geom.flat_index(n2, m2)]];
                }
            }
        }
    }
    if average_pairs {
        Zip::from(&mut out.lags)
            .and(&out.counts)
            .for_each(|z, &c| *z /= c as f64);
        out.averaged = true;
    }
    Ok(out)
}

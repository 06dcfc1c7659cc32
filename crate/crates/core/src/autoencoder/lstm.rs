//! A single LSTM layer run over a whole batch of sequences.
//!
//! Sequences are stacked time-major: row `t·B + b` of an input matrix is
//! timestep `t` of sequence `b`. Input projections for all timesteps are one
//! matrix product; only the recurrent product runs per step.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

/// Weights of one layer. Gate blocks are stacked in the order
/// input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayerParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// `4H × input_dim`
    pub w: Array2<f64>,
    /// `4H × H`
    pub u: Array2<f64>,
    /// `4H`
    pub b: Array1<f64>,
}

impl LstmLayerParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            w: Array2::zeros((4 * hidden_dim, input_dim)),
            u: Array2::zeros((4 * hidden_dim, hidden_dim)),
            b: Array1::zeros(4 * hidden_dim),
        }
    }

    /// Uniform ±1/√fan_in weights, forget bias 1, other biases 0.
    pub fn init<R: Rng>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let mut layer = Self::zeros(input_dim, hidden_dim);
        let wb = 1.0 / (input_dim as f64).sqrt();
        let ub = 1.0 / (hidden_dim as f64).sqrt();
        layer.w.mapv_inplace(|_| rng.random_range(-wb..=wb));
        layer.u.mapv_inplace(|_| rng.random_range(-ub..=ub));
        layer
            .b
            .slice_mut(s![hidden_dim..2 * hidden_dim])
            .fill(1.0);
        layer
    }

    pub fn parameter_count(&self) -> usize {
        self.w.len() + self.u.len() + self.b.len()
    }
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LstmCache {
    pub batch: usize,
    pub steps: usize,
    input: Array2<f64>,
    /// Activated gates `[i | f | g | o]`, `(P·B) × 4H`.
    gates: Array2<f64>,
    cell: Array2<f64>,
    tanh_cell: Array2<f64>,
    output: Array2<f64>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Runs the layer from a zero initial state.
///
/// `input` is `(steps·batch) × input_dim`; returns `(steps·batch) × H`.
pub fn lstm_forward(
    layer: &LstmLayerParams,
    input: ArrayView2<f64>,
    batch: usize,
) -> Result<(Array2<f64>, LstmCache)> {
    let h = layer.hidden_dim;
    if input.ncols() != layer.input_dim {
        return Err(Error::Argument(format!(
            "LSTM layer expects {} inputs, got {}",
            layer.input_dim,
            input.ncols()
        )));
    }
    if batch == 0 || !input.nrows().is_multiple_of(batch) {
        return Err(Error::Argument(format!(
            "{} input rows do not split into batches of {batch}",
            input.nrows()
        )));
    }
    let steps = input.nrows() / batch;

    let mut gates = input.dot(&layer.w.t());
    gates += &layer.b;
    let mut cell = Array2::<f64>::zeros((steps * batch, h));
    let mut tanh_cell = Array2::<f64>::zeros((steps * batch, h));
    let mut output = Array2::<f64>::zeros((steps * batch, h));

    let ut = layer.u.t();
    for t in 0..steps {
        let rows = s![t * batch..(t + 1) * batch, ..];
        let (h_prev, c_prev) = if t == 0 {
            (Array2::zeros((batch, h)), Array2::zeros((batch, h)))
        } else {
            let prev = s![(t - 1) * batch..t * batch, ..];
            (output.slice(prev).to_owned(), cell.slice(prev).to_owned())
        };
        let mut z = gates.slice_mut(rows);
        z += &h_prev.dot(&ut);
        for (r, mut zr) in z.outer_iter_mut().enumerate() {
            let zr = zr.as_slice_mut().expect("row-contiguous");
            for j in 0..h {
                let i_g = sigmoid(zr[j]);
                let f_g = sigmoid(zr[h + j]);
                let g_g = zr[2 * h + j].tanh();
                let o_g = sigmoid(zr[3 * h + j]);
                zr[j] = i_g;
                zr[h + j] = f_g;
                zr[2 * h + j] = g_g;
                zr[3 * h + j] = o_g;
                let c = f_g * c_prev[[r, j]] + i_g * g_g;
                let tc = c.tanh();
                let row = t * batch + r;
                cell[[row, j]] = c;
                tanh_cell[[row, j]] = tc;
                output[[row, j]] = o_g * tc;
            }
        }
    }

    let cache = LstmCache {
        batch,
        steps,
        input: input.to_owned(),
        gates,
        cell,
        tanh_cell,
        output: output.clone(),
    };
    Ok((output, cache))
}

/// Accumulates parameter gradients into `grad` and returns the gradient
/// with respect to the layer input.
///
/// `d_output` is the loss gradient with respect to every output row, same
/// shape as the forward output.
pub fn lstm_backward(
    layer: &LstmLayerParams,
    cache: &LstmCache,
    d_output: ArrayView2<f64>,
    grad: &mut LstmLayerParams,
) -> Array2<f64> {
    let h = layer.hidden_dim;
    let (batch, steps) = (cache.batch, cache.steps);
    let mut dz = Array2::<f64>::zeros((steps * batch, 4 * h));
    let mut dh_next = Array2::<f64>::zeros((batch, h));
    let mut dc_next = Array2::<f64>::zeros((batch, h));

    for t in (0..steps).rev() {
        for r in 0..batch {
            let row = t * batch + r;
            let g = cache.gates.row(row);
            for j in 0..h {
                let (i_g, f_g, g_g, o_g) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                let tc = cache.tanh_cell[[row, j]];
                let c_prev = if t == 0 { 0.0 } else { cache.cell[[row - batch, j]] };
                let dh = d_output[[row, j]] + dh_next[[r, j]];
                let d_o = dh * tc;
                let dc = dc_next[[r, j]] + dh * o_g * (1.0 - tc * tc);
                let d_i = dc * g_g;
                let d_g = dc * i_g;
                let d_f = dc * c_prev;
                dc_next[[r, j]] = dc * f_g;
                dz[[row, j]] = d_i * i_g * (1.0 - i_g);
                dz[[row, h + j]] = d_f * f_g * (1.0 - f_g);
                dz[[row, 2 * h + j]] = d_g * (1.0 - g_g * g_g);
                dz[[row, 3 * h + j]] = d_o * o_g * (1.0 - o_g);
            }
        }
        let dz_t = dz.slice(s![t * batch..(t + 1) * batch, ..]);
        dh_next = dz_t.dot(&layer.u);
        if t > 0 {
            let h_prev = cache.output.slice(s![(t - 1) * batch..t * batch, ..]);
            grad.u += &dz_t.t().dot(&h_prev);
        }
    }

    grad.w += &dz.t().dot(&cache.input);
    grad.b += &dz.sum_axis(Axis(0));
    dz.dot(&layer.w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use ndarray::array;

    #[test]
    fn zero_weights_give_zero_output() {
        let layer = LstmLayerParams::zeros(3, 4);
        let x = Array2::from_shape_fn((6, 3), |(i, j)| (i + j) as f64 * 0.3);
        let (y, _) = lstm_forward(&layer, x.view(), 2).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn outputs_bounded() {
        let mut rng = seed::rng(1);
        let mut layer = LstmLayerParams::init(5, 3, &mut rng);
        layer.w.mapv_inplace(|v| v * 50.0);
        let x = Array2::from_shape_fn((12, 5), |(i, j)| ((i * 7 + j) % 5) as f64 - 2.0);
        let (y, _) = lstm_forward(&layer, x.view(), 3).unwrap();
        // tanh and sigmoid can round to exactly 1 in f64
        assert!(y.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn scalar_cell_by_hand() {
        let layer = LstmLayerParams {
            input_dim: 1,
            hidden_dim: 1,
            w: array![[0.5], [-0.3], [0.8], [0.2]],
            u: array![[0.1], [0.4], [-0.6], [0.7]],
            b: array![0.1, 1.0, -0.2, 0.05],
        };
        let x = 1.5f64;
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let i = sig(0.5 * x + 0.1);
        let f = sig(-0.3 * x + 1.0);
        let g = (0.8 * x - 0.2).tanh();
        let o = sig(0.2 * x + 0.05);
        let c = f * 0.0 + i * g;
        let want = o * c.tanh();
        let (y, _) = lstm_forward(&layer, array![[x]].view(), 1).unwrap();
        assert!((y[[0, 0]] - want).abs() < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let layer = LstmLayerParams::zeros(3, 2);
        assert!(lstm_forward(&layer, Array2::zeros((4, 2)).view(), 2).is_err());
        assert!(lstm_forward(&layer, Array2::zeros((5, 3)).view(), 2).is_err());
    }

    #[test]
    fn forget_bias_is_one() {
        let layer = LstmLayerParams::init(4, 3, &mut seed::rng(0));
        assert_eq!(layer.b.to_vec(), vec![0., 0., 0., 1., 1., 1., 0., 0., 0., 0., 0., 0.]);
        assert_eq!(layer.parameter_count(), 12 * 4 + 12 * 3 + 12);
    }

    /// Finite-difference check of the layer in isolation against
    /// `L = Σ y ⊙ weights` for a fixed random weighting.
    #[test]
    fn layer_gradients_match_finite_differences() {
        let mut rng = seed::rng(4);
        let layer = LstmLayerParams::init(3, 2, &mut rng);
        let batch = 2;
        let x = Array2::from_shape_fn((3 * batch, 3), |_| rng.random_range(-1.0..1.0));
        let wts = Array2::from_shape_fn((3 * batch, 2), |_| rng.random_range(-1.0..1.0));
        let loss = |l: &LstmLayerParams, x: &Array2<f64>| {
            let (y, _) = lstm_forward(l, x.view(), batch).unwrap();
            (&y * &wts).sum()
        };
        let (_, cache) = lstm_forward(&layer, x.view(), batch).unwrap();
        let mut grad = LstmLayerParams::zeros(3, 2);
        let dx = lstm_backward(&layer, &cache, wts.view(), &mut grad);

        let eps = 1e-6;
        let check = |analytic: f64, numeric: f64| {
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            assert!((analytic - numeric).abs() / denom < 1e-5, "{analytic} vs {numeric}");
        };
        for idx in 0..layer.w.len() {
            let mut p = layer.clone();
            p.w.as_slice_mut().unwrap()[idx] += eps;
            let mut m = layer.clone();
            m.w.as_slice_mut().unwrap()[idx] -= eps;
            check(grad.w.as_slice().unwrap()[idx], (loss(&p, &x) - loss(&m, &x)) / (2.0 * eps));
        }
        for idx in 0..layer.u.len() {
            let mut p = layer.clone();
            p.u.as_slice_mut().unwrap()[idx] += eps;
            let mut m = layer.clone();
            m.u.as_slice_mut().unwrap()[idx] -= eps;
            check(grad.u.as_slice().unwrap()[idx], (loss(&p, &x) - loss(&m, &x)) / (2.0 * eps));
        }
        for idx in 0..layer.b.len() {
            let mut p = layer.clone();
            p.b[idx] += eps;
            let mut m = layer.clone();
            m.b[idx] -= eps;
            check(grad.b[idx], (loss(&p, &x) - loss(&m, &x)) / (2.0 * eps));
        }
        for idx in 0..x.len() {
            let mut xp = x.clone();
            xp.as_slice_mut().unwrap()[idx] += eps;
            let mut xm = x.clone();
            xm.as_slice_mut().unwrap()[idx] -= eps;
            check(dx.as_slice().unwrap()[idx], (loss(&layer, &xp) - loss(&layer, &xm)) / (2.0 * eps));
        }
    }
}

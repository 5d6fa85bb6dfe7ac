//! Network building blocks with exact backward passes.
//!
//! Parameterized layers accumulate their parameter gradients into a
//! same-shaped "gradient" instance of themselves (`grads`) and return the
//! gradient with respect to their input. Accumulation lets two call sites
//! share one parameter set, which is how the shared SE block is realized.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::math;
use crate::tensor::{self, Matrix};

pub const DEFAULT_LN_EPS: f64 = 1e-5;

/// `√(2/π)` for the tanh form of GeLU.
pub const GELU_SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
/// Cubic coefficient of the tanh form of GeLU.
pub const GELU_CUBIC: f64 = 0.044_715;

/// Fully connected layer applied to every row: `y = x · Wᵀ + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `out × in`
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(shape_err!(
                "linear: bias of length {} for {}x{} weight",
                bias.len(),
                weight.rows(),
                weight.cols()
            ));
        }
        Ok(Self { weight, bias })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self { weight: Matrix::zeros(out_dim, in_dim), bias: vec![0.0; out_dim] }
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn param_count(&self) -> usize {
        self.weight.as_slice().len() + self.bias.len()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim() {
            return Err(shape_err!(
                "linear: input {}x{} for a {}->{} layer",
                x.rows(),
                x.cols(),
                self.in_dim(),
                self.out_dim()
            ));
        }
        let mut y = Matrix::zeros(x.rows(), self.out_dim());
        for r in 0..y.rows() {
            y.row_mut(r).copy_from_slice(&self.bias);
        }
        tensor::gemm(1.0, x, false, &self.weight, true, 1.0, &mut y)?;
        Ok(y)
    }

    /// Accumulates `dW += gᵀ·x`, `db += Σ_rows g`; returns `dx = g·W`.
    pub fn backward(&self, x: &Matrix, grad_out: &Matrix, grads: &mut Linear) -> Result<Matrix> {
        if grad_out.shape() != (x.rows(), self.out_dim()) || x.cols() != self.in_dim() {
            return Err(shape_err!(
                "linear backward: input {}x{}, upstream {}x{}, layer {}->{}",
                x.rows(),
                x.cols(),
                grad_out.rows(),
                grad_out.cols(),
                self.in_dim(),
                self.out_dim()
            ));
        }
        tensor::gemm(1.0, grad_out, true, x, false, 1.0, &mut grads.weight)?;
        for r in 0..grad_out.rows() {
            for (b, g) in grads.bias.iter_mut().zip(grad_out.row(r)) {
                *b += g;
            }
        }
        tensor::matmul(grad_out, &self.weight)
    }
}

/// Per-row standardization followed by a learnable affine map.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    /// Standardized input before the affine map.
    pub normalized: Matrix,
    pub inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self { gain: vec![1.0; dim], bias: vec![0.0; dim], eps: DEFAULT_LN_EPS }
    }

    /// All-zero instance used as a gradient accumulator.
    pub fn zeros(dim: usize) -> Self {
        Self { gain: vec![0.0; dim], bias: vec![0.0; dim], eps: DEFAULT_LN_EPS }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.gain.len()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &Matrix) -> Result<(Matrix, LayerNormCache)> {
        let d = x.cols();
        if d < 2 {
            return Err(shape_err!("layer_norm: needs at least 2 columns, got {d}"));
        }
        if d != self.dim() {
            return Err(shape_err!("layer_norm: input has {d} columns, parameters have {}", self.dim()));
        }
        let mut normalized = Matrix::zeros(x.rows(), d);
        let mut out = Matrix::zeros(x.rows(), d);
        let mut inv_std = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / math::sqrt(var + self.eps);
            inv_std.push(is);
            for (j, v) in row.iter().enumerate() {
                let n = (v - mean) * is;
                normalized.set(r, j, n);
                out.set(r, j, n * self.gain[j] + self.bias[j]);
            }
        }
        Ok((out, LayerNormCache { normalized, inv_std }))
    }

    pub fn backward(&self, cache: &LayerNormCache, grad_out: &Matrix, grads: &mut LayerNorm) -> Result<Matrix> {
        let xn = &cache.normalized;
        if grad_out.shape() != xn.shape() {
            return Err(shape_err!(
                "layer_norm backward: upstream {}x{}, forward {}x{}",
                grad_out.rows(),
                grad_out.cols(),
                xn.rows(),
                xn.cols()
            ));
        }
        let d = xn.cols();
        let mut dx = Matrix::zeros(xn.rows(), d);
        let mut dxn = vec![0.0; d];
        for r in 0..xn.rows() {
            let g = grad_out.row(r);
            let n = xn.row(r);
            for j in 0..d {
                grads.gain[j] += g[j] * n[j];
                grads.bias[j] += g[j];
                dxn[j] = g[j] * self.gain[j];
            }
            let mean_g = dxn.iter().sum::<f64>() / d as f64;
            let mean_gn = dxn.iter().zip(n).map(|(a, b)| a * b).sum::<f64>() / d as f64;
            let is = cache.inv_std[r];
            for (j, out) in dx.row_mut(r).iter_mut().enumerate() {
                *out = is * (dxn[j] - mean_g - n[j] * mean_gn);
            }
        }
        Ok(dx)
    }
}

#[inline]
pub fn gelu_scalar(x: f64) -> f64 {
    let inner = GELU_SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    0.5 * x * (1.0 + math::tanh(inner))
}

#[inline]
pub fn gelu_grad_scalar(x: f64) -> f64 {
    let inner = GELU_SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    let t = math::tanh(inner);
    let dinner = GELU_SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

/// GeLU, tanh approximation.
pub fn gelu(x: &Matrix) -> Matrix {
    x.map(gelu_scalar)
}

/// `x` is the forward input.
pub fn gelu_backward(x: &Matrix, grad: &Matrix) -> Result<Matrix> {
    tensor::hadamard(&x.map(gelu_grad_scalar), grad)
}

pub fn relu(x: &Matrix) -> Matrix {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn relu_backward(x: &Matrix, grad: &Matrix) -> Result<Matrix> {
    tensor::hadamard(&x.map(|v| if v > 0.0 { 1.0 } else { 0.0 }), grad)
}

/// Max-subtracted softmax.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|v| math::exp(v - max)).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

/// `s` is the softmax output.
pub fn softmax_backward(s: &[f64], grad: &[f64]) -> Vec<f64> {
    let dot: f64 = s.iter().zip(grad).map(|(a, b)| a * b).sum();
    s.iter().zip(grad).map(|(si, gi)| si * (gi - dot)).collect()
}

/// Bottleneck width of the SE block for `t` time steps: `max(⌈t/4⌉, 4)`.
pub fn se_hidden_width(t: usize) -> usize {
    t.div_ceil(4).max(4)
}

/// How the SE block's output is combined with its input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SeApply {
    /// GAP over features per time step, bottleneck MLP, softmax over time,
    /// then each time-step row is multiplied by its weight.
    #[default]
    ScaleRows,
    /// Every feature column (a length-T vector) passes through the bottleneck
    /// MLP and a softmax over time; the result replaces the input.
    ColumnSoftmax,
}

/// Squeeze-and-Excitation over time steps.
#[derive(Debug, Clone, PartialEq)]
pub struct SqueezeExcitation {
    /// `T → T_h`
    pub reduce: Linear,
    /// `T_h → T`
    pub expand: Linear,
}

#[derive(Debug, Clone)]
pub enum SeCache {
    ScaleRows {
        input: Matrix,
        pooled: Matrix,
        hidden_pre: Matrix,
        hidden: Matrix,
        weights: Vec<f64>,
    },
    ColumnSoftmax {
        input_t: Matrix,
        hidden_pre: Matrix,
        hidden: Matrix,
        /// `S × T`, softmax along each row.
        probs: Matrix,
    },
}

impl SqueezeExcitation {
    pub fn zeros(time_steps: usize, hidden: usize) -> Self {
        Self { reduce: Linear::zeros(time_steps, hidden), expand: Linear::zeros(hidden, time_steps) }
    }

    #[inline]
    pub fn time_steps(&self) -> usize {
        self.reduce.in_dim()
    }

    pub fn param_count(&self) -> usize {
        self.reduce.param_count() + self.expand.param_count()
    }

    fn check(&self, a: &Matrix) -> Result<()> {
        if a.rows() != self.time_steps() {
            return Err(shape_err!(
                "se_block: input has {} rows, block configured for T={}",
                a.rows(),
                self.time_steps()
            ));
        }
        Ok(())
    }

    /// Returns the reweighted matrix and the per-time-step weights.
    pub fn forward(&self, a: &Matrix) -> Result<(Matrix, Vec<f64>)> {
        let (out, cache) = self.forward_cached(a, SeApply::ScaleRows)?;
        match cache {
            SeCache::ScaleRows { weights, .. } => Ok((out, weights)),
            SeCache::ColumnSoftmax { .. } => unreachable!(),
        }
    }

    pub fn forward_cached(&self, a: &Matrix, mode: SeApply) -> Result<(Matrix, SeCache)> {
        self.check(a)?;
        match mode {
            SeApply::ScaleRows => {
                let pooled = Matrix::row_vector(&tensor::mean_over_cols(a)?);
                let hidden_pre = self.reduce.forward(&pooled)?;
                let hidden = relu(&hidden_pre);
                let logits = self.expand.forward(&hidden)?;
                let weights = softmax(logits.as_slice());
                let out = tensor::scale_rows(a, &weights)?;
                Ok((out, SeCache::ScaleRows { input: a.clone(), pooled, hidden_pre, hidden, weights }))
            }
            SeApply::ColumnSoftmax => {
                let input_t = a.transpose();
                let hidden_pre = self.reduce.forward(&input_t)?;
                let hidden = relu(&hidden_pre);
                let mut probs = self.expand.forward(&hidden)?;
                for r in 0..probs.rows() {
                    let s = softmax(probs.row(r));
                    probs.row_mut(r).copy_from_slice(&s);
                }
                let out = probs.transpose();
                Ok((out, SeCache::ColumnSoftmax { input_t, hidden_pre, hidden, probs }))
            }
        }
    }

    pub fn backward(&self, cache: &SeCache, grad_out: &Matrix, grads: &mut SqueezeExcitation) -> Result<Matrix> {
        match cache {
            SeCache::ScaleRows { input, pooled, hidden_pre, hidden, weights } => {
                let (mut da, dw) = tensor::scale_rows_backward(input, weights, grad_out)?;
                let dlogits = Matrix::row_vector(&softmax_backward(weights, &dw));
                let dhidden = self.expand.backward(hidden, &dlogits, &mut grads.expand)?;
                let dpre = relu_backward(hidden_pre, &dhidden)?;
                let dpooled = self.reduce.backward(pooled, &dpre, &mut grads.reduce)?;
                let dgap = tensor::mean_over_cols_backward(input.cols(), dpooled.as_slice());
                da.add_assign(&dgap)?;
                Ok(da)
            }
            SeCache::ColumnSoftmax { input_t, hidden_pre, hidden, probs } => {
                let dprobs = grad_out.transpose();
                if dprobs.shape() != probs.shape() {
                    return Err(shape_err!(
                        "se_block backward: upstream {}x{}, forward {}x{}",
                        grad_out.rows(),
                        grad_out.cols(),
                        probs.cols(),
                        probs.rows()
                    ));
                }
                let mut dlogits = Matrix::zeros(probs.rows(), probs.cols());
                for r in 0..probs.rows() {
                    let d = softmax_backward(probs.row(r), dprobs.row(r));
                    dlogits.row_mut(r).copy_from_slice(&d);
                }
                let dhidden = self.expand.backward(hidden, &dlogits, &mut grads.expand)?;
                let dpre = relu_backward(hidden_pre, &dhidden)?;
                let dinput_t = self.reduce.backward(input_t, &dpre, &mut grads.reduce)?;
                Ok(dinput_t.transpose())
            }
        }
    }
}

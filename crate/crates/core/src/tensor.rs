//! Dense row-major 2-D matrices and the handful of operations the network
//! needs, each paired with its vector-Jacobian product.
//!
//! Rows are time steps wherever a matrix carries a sequence. Backward
//! functions take the forward operands plus the upstream gradient and return
//! the gradient for every operand.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{shape_err, Result};

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Matrix")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .field("data", &self.data)
            .finish()
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape_err!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(shape_err!("row {i} has {} entries, expected {cols}", r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    /// A 1×n matrix holding `v`.
    pub fn row_vector(v: &[f64]) -> Self {
        Self { rows: 1, cols: v.len(), data: v.to_vec() }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// `self += other`, shapes must match.
    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        check_same(self, other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    pub fn transpose(&self) -> Matrix {
        transpose(self)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

fn check_same(a: &Matrix, b: &Matrix, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err!(
            "{op}: {}x{} vs {}x{}",
            a.rows,
            a.cols,
            b.rows,
            b.cols
        ));
    }
    Ok(())
}

/// `c = alpha * op(a) * op(b) + beta * c` with `op` an optional transpose.
///
/// Backed by `matrixmultiply`, which is single-threaded here and therefore
/// bitwise reproducible on a given machine.
pub(crate) fn gemm(
    alpha: f64,
    a: &Matrix,
    trans_a: bool,
    b: &Matrix,
    trans_b: bool,
    beta: f64,
    c: &mut Matrix,
) -> Result<()> {
    let (m, k) = if trans_a { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (kb, n) = if trans_b { (b.cols, b.rows) } else { (b.rows, b.cols) };
    if k != kb || c.rows != m || c.cols != n {
        return Err(shape_err!(
            "gemm: op(a) is {m}x{k}, op(b) is {kb}x{n}, output is {}x{}",
            c.rows,
            c.cols
        ));
    }
    if m == 0 || n == 0 {
        return Ok(());
    }
    let (rsa, csa) = if trans_a { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if trans_b { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    // SAFETY: strides and extents above describe exactly the buffers of `a`,
    // `b` and `c`, which are valid for the duration of the call; `c` is
    // uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
    Ok(())
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(shape_err!(
            "matmul: {}x{} times {}x{}",
            a.rows,
            a.cols,
            b.rows,
            b.cols
        ));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    gemm(1.0, a, false, b, false, 0.0, &mut out)?;
    Ok(out)
}

/// `a · bᵀ`
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(shape_err!(
            "matmul_nt: {}x{} times transpose of {}x{}",
            a.rows,
            a.cols,
            b.rows,
            b.cols
        ));
    }
    let mut out = Matrix::zeros(a.rows, b.rows);
    gemm(1.0, a, false, b, true, 0.0, &mut out)?;
    Ok(out)
}

/// `aᵀ · b`
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(shape_err!(
            "matmul_tn: transpose of {}x{} times {}x{}",
            a.rows,
            a.cols,
            b.rows,
            b.cols
        ));
    }
    let mut out = Matrix::zeros(a.cols, b.cols);
    gemm(1.0, a, true, b, false, 0.0, &mut out)?;
    Ok(out)
}

/// Returns `(grad_a, grad_b) = (grad · bᵀ, aᵀ · grad)`.
pub fn matmul_backward(a: &Matrix, b: &Matrix, grad: &Matrix) -> Result<(Matrix, Matrix)> {
    if grad.shape() != (a.rows, b.cols) {
        return Err(shape_err!(
            "matmul_backward: upstream {}x{}, forward output {}x{}",
            grad.rows,
            grad.cols,
            a.rows,
            b.cols
        ));
    }
    Ok((matmul_nt(grad, b)?, matmul_tn(a, grad)?))
}

pub fn transpose(a: &Matrix) -> Matrix {
    let mut data = vec![0.0; a.data.len()];
    for i in 0..a.rows {
        for j in 0..a.cols {
            data[j * a.rows + i] = a.data[i * a.cols + j];
        }
    }
    Matrix { rows: a.cols, cols: a.rows, data }
}

pub fn transpose_backward(grad: &Matrix) -> Matrix {
    transpose(grad)
}

pub fn add(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    check_same(a, b, "add")?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    Ok(Matrix { rows: a.rows, cols: a.cols, data })
}

/// Gradient of `add` is the upstream gradient for both operands.
pub fn add_backward(grad: &Matrix) -> (Matrix, Matrix) {
    (grad.clone(), grad.clone())
}

pub fn hadamard(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    check_same(a, b, "hadamard")?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
    Ok(Matrix { rows: a.rows, cols: a.cols, data })
}

pub fn hadamard_backward(a: &Matrix, b: &Matrix, grad: &Matrix) -> Result<(Matrix, Matrix)> {
    check_same(a, grad, "hadamard_backward")?;
    Ok((hadamard(grad, b)?, hadamard(grad, a)?))
}

/// Multiplies row `i` of `a` by `w[i]`.
pub fn scale_rows(a: &Matrix, w: &[f64]) -> Result<Matrix> {
    if w.len() != a.rows {
        return Err(shape_err!(
            "scale_rows: {} weights for a {}x{} matrix",
            w.len(),
            a.rows,
            a.cols
        ));
    }
    let mut out = a.clone();
    for (i, &wi) in w.iter().enumerate() {
        for v in out.row_mut(i) {
            *v *= wi;
        }
    }
    Ok(out)
}

/// Returns `(grad_a, grad_w)`.
pub fn scale_rows_backward(a: &Matrix, w: &[f64], grad: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    check_same(a, grad, "scale_rows_backward")?;
    let grad_a = scale_rows(grad, w)?;
    let grad_w = (0..a.rows)
        .map(|i| a.row(i).iter().zip(grad.row(i)).map(|(x, g)| x * g).sum())
        .collect();
    Ok((grad_a, grad_w))
}

fn check_nonempty(a: &Matrix, op: &str) -> Result<()> {
    if a.rows == 0 || a.cols == 0 {
        return Err(shape_err!("{op}: empty {}x{} matrix", a.rows, a.cols));
    }
    Ok(())
}

/// Column means: averages over the rows, giving one value per column.
pub fn mean_over_rows(a: &Matrix) -> Result<Vec<f64>> {
    check_nonempty(a, "mean_over_rows")?;
    let mut out = vec![0.0; a.cols];
    for i in 0..a.rows {
        for (o, v) in out.iter_mut().zip(a.row(i)) {
            *o += v;
        }
    }
    let inv = 1.0 / a.rows as f64;
    out.iter_mut().for_each(|o| *o *= inv);
    Ok(out)
}

pub fn mean_over_rows_backward(rows: usize, grad: &[f64]) -> Matrix {
    let inv = 1.0 / rows as f64;
    let row: Vec<f64> = grad.iter().map(|g| g * inv).collect();
    let mut data = Vec::with_capacity(rows * grad.len());
    for _ in 0..rows {
        data.extend_from_slice(&row);
    }
    Matrix { rows, cols: grad.len(), data }
}

/// Row means: averages over the columns, giving one value per row.
pub fn mean_over_cols(a: &Matrix) -> Result<Vec<f64>> {
    check_nonempty(a, "mean_over_cols")?;
    let inv = 1.0 / a.cols as f64;
    Ok((0..a.rows).map(|i| a.row(i).iter().sum::<f64>() * inv).collect())
}

pub fn mean_over_cols_backward(cols: usize, grad: &[f64]) -> Matrix {
    let inv = 1.0 / cols as f64;
    let mut data = Vec::with_capacity(cols * grad.len());
    for g in grad {
        data.extend(core::iter::repeat_n(g * inv, cols));
    }
    Matrix { rows: grad.len(), cols, data }
}

//! Allocation-free forward pass for deployment and latency measurement.
//!
//! [`InferenceEngine`] copies a trained model into flat buffers of `f32` or
//! `f64` and evaluates it without transposes: the spatial MLP multiplies the
//! `T×S` activations by `Wᵀ` on the right, the temporal MLP multiplies them
//! by `W` on the left. All scratch space is allocated once at construction.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{shape_err, Result};
use crate::layers::{SeApply, SqueezeExcitation, GELU_CUBIC, GELU_SQRT_2_OVER_PI};
use crate::model::{MixerUnit, ModelConfig, ModelParams, NormAxis, UnitKind};

/// Scalar types the engine can run in.
pub trait Real: Float + Default + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;

    /// `v ← gelu(v + bias)` (tanh form), evaluated as `x·σ(2u)` with an
    /// inlined exponential so the loop vectorizes.
    fn gelu_slice(v: &mut [Self], bias: Self);

    /// `c = a·b + beta·c` for row-major operands with explicit strides.
    ///
    /// # Safety
    /// Pointers and strides must describe valid `m×k`, `k×n` and `m×n`
    /// regions, and `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
    );
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }

    fn gelu_slice(v: &mut [f64], bias: f64) {
        #[cfg(all(feature = "std", target_arch = "x86_64"))]
        {
            // SAFETY: each path runs only after its target features were detected.
            if std::is_x86_feature_detected!("avx512f") {
                return unsafe { wide::gelu_f64_512(v, bias) };
            }
            if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
                return unsafe { wide::gelu_f64(v, bias) };
            }
        }
        gelu_f64::<false>(v, bias)
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, 1);
    }
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn gelu_slice(v: &mut [f32], bias: f32) {
        #[cfg(all(feature = "std", target_arch = "x86_64"))]
        {
            // SAFETY: each path runs only after its target features were detected.
            if std::is_x86_feature_detected!("avx512f") {
                return unsafe { wide::gelu_f32_512(v, bias) };
            }
            if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
                return unsafe { wide::gelu_f32(v, bias) };
            }
        }
        gelu_f32::<false>(v, bias)
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, 1);
    }
}

#[inline(always)]
fn madd<T: Float, const FUSED: bool>(a: T, b: T, c: T) -> T {
    if FUSED {
        a.mul_add(b, c)
    } else {
        a * b + c
    }
}

/// `eˣ` to within a couple of ulp on `[-700, 700]`, clamped outside.
///
/// `x = n·ln2 + r` with `|r| ≤ ln2/2`; `n` is read back from the mantissa of
/// `x·log2(e) + 1.5·2⁵²` and `2ⁿ` is assembled directly in the exponent bits.
/// The degree-12 Taylor polynomial is evaluated in Estrin form.
#[inline(always)]
fn exp_f64<const FUSED: bool>(x: f64) -> f64 {
    const SHIFT: f64 = 6_755_399_441_055_744.0;
    const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    // 1/i!
    const C: [f64; 13] = {
        let mut c = [1.0; 13];
        let mut i = 2;
        while i < 13 {
            c[i] = c[i - 1] / i as f64;
            i += 1;
        }
        c
    };
    let m = madd::<f64, FUSED>;
    let x = x.clamp(-700.0, 700.0);
    let z = m(x, core::f64::consts::LOG2_E, SHIFT);
    let n = z - SHIFT;
    let r = m(-n, LN2_LO, m(-n, LN2_HI, x));
    let r2 = r * r;
    let r4 = r2 * r2;
    let r8 = r4 * r4;
    let q = |i: usize| m(C[i + 1], r, C[i]);
    let lo = m(m(q(6), r2, q(4)), r4, m(q(2), r2, q(0)));
    let hi = m(q(10), r2, q(8));
    let p = m(m(C[12], r4, hi), r8, lo);
    p * f64::from_bits(z.to_bits().wrapping_add(1023) << 52)
}

#[inline(always)]
fn exp_f32<const FUSED: bool>(x: f32) -> f32 {
    const SHIFT: f32 = 12_582_912.0;
    const LN2_HI: f32 = 0.693_359_4;
    const LN2_LO: f32 = -2.121_944_4e-4;
    let m = madd::<f32, FUSED>;
    let x = x.clamp(-87.0, 87.0);
    let z = m(x, core::f32::consts::LOG2_E, SHIFT);
    let n = z - SHIFT;
    let r = m(-n, LN2_LO, m(-n, LN2_HI, x));
    let r2 = r * r;
    let lo = m(m(1.0 / 6.0, r, 0.5), r2, m(1.0, r, 1.0));
    let hi = m(m(1.0 / 5040.0, r, 1.0 / 720.0), r2, m(1.0 / 120.0, r, 1.0 / 24.0));
    m(hi, r2 * r2, lo) * f32::from_bits(z.to_bits().wrapping_add(127) << 23)
}

#[inline(always)]
fn gelu_f64<const FUSED: bool>(v: &mut [f64], bias: f64) {
    for x in v.iter_mut() {
        *x += bias;
        let u = GELU_SQRT_2_OVER_PI * madd::<f64, FUSED>(GELU_CUBIC * *x * *x, *x, *x);
        *x /= 1.0 + exp_f64::<FUSED>(-2.0 * u);
    }
}

#[inline(always)]
fn gelu_f32<const FUSED: bool>(v: &mut [f32], bias: f32) {
    let (c, a) = (GELU_SQRT_2_OVER_PI as f32, GELU_CUBIC as f32);
    for x in v.iter_mut() {
        *x += bias;
        let u = c * madd::<f32, FUSED>(a * *x * *x, *x, *x);
        *x /= 1.0 + exp_f32::<FUSED>(-2.0 * u);
    }
}

#[cfg(all(feature = "std", target_arch = "x86_64"))]
mod wide {
    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn gelu_f64(v: &mut [f64], bias: f64) {
        super::gelu_f64::<true>(v, bias)
    }

    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn gelu_f32(v: &mut [f32], bias: f32) {
        super::gelu_f32::<true>(v, bias)
    }

    #[target_feature(enable = "avx512f,fma")]
    pub(super) unsafe fn gelu_f64_512(v: &mut [f64], bias: f64) {
        super::gelu_f64::<true>(v, bias)
    }

    #[target_feature(enable = "avx512f,fma")]
    pub(super) unsafe fn gelu_f32_512(v: &mut [f32], bias: f32) {
        super::gelu_f32::<true>(v, bias)
    }
}

/// Row-major `rows × cols` weight plus bias of length `rows`.
#[derive(Debug, Clone)]
struct Dense<F> {
    rows: usize,
    cols: usize,
    w: Vec<F>,
    b: Vec<F>,
}

impl<F: Real> Dense<F> {
    fn from(l: &crate::layers::Linear) -> Self {
        Self {
            rows: l.out_dim(),
            cols: l.in_dim(),
            w: l.weight.as_slice().iter().map(|&v| F::from_f64(v)).collect(),
            b: l.bias.iter().map(|&v| F::from_f64(v)).collect(),
        }
    }

    /// `out (n×rows) = x (n×cols) · Wᵀ + b` (bias per column).
    #[inline(always)]
    fn right(&self, x: &[F], n: usize, out: &mut [F]) {
        debug_assert!(x.len() >= n * self.cols && out.len() >= n * self.rows);
        for r in 0..n {
            out[r * self.rows..(r + 1) * self.rows].copy_from_slice(&self.b);
        }
        // SAFETY: sizes checked above; x and out are distinct buffers.
        unsafe {
            F::gemm(
                n,
                self.cols,
                self.rows,
                x.as_ptr(),
                self.cols as isize,
                1,
                self.w.as_ptr(),
                1,
                self.cols as isize,
                F::one(),
                out.as_mut_ptr(),
                self.rows as isize,
            );
        }
    }

    /// `out (rows×n) = W · x (cols×n) + b` (bias per row).
    #[inline(always)]
    fn left(&self, x: &[F], n: usize, out: &mut [F]) {
        for r in 0..self.rows {
            out[r * n..(r + 1) * n].iter_mut().for_each(|v| *v = self.b[r]);
        }
        self.left_gemm(x, n, n, out, n, F::one());
    }

    /// `out = W · x + beta·out` on an `n`-column window of `x` and `out`,
    /// whose rows are `x_stride` and `out_stride` apart. No bias.
    #[inline(always)]
    fn left_gemm(&self, x: &[F], x_stride: usize, n: usize, out: &mut [F], out_stride: usize, beta: F) {
        assert!(n <= x_stride && n <= out_stride);
        assert!(x.len() >= (self.cols - 1) * x_stride + n && out.len() >= (self.rows - 1) * out_stride + n);
        // SAFETY: both windows were checked to lie inside their buffers, which are distinct.
        unsafe {
            F::gemm(
                self.rows,
                self.cols,
                n,
                self.w.as_ptr(),
                self.cols as isize,
                1,
                x.as_ptr(),
                x_stride as isize,
                1,
                beta,
                out.as_mut_ptr(),
                out_stride as isize,
            );
        }
    }
}

const TEMPORAL_BLOCK: usize = 64;

#[derive(Debug, Clone)]
struct Se<F> {
    reduce: Dense<F>,
    expand: Dense<F>,
}

#[derive(Debug, Clone)]
struct Unit<F> {
    kind: UnitKind,
    axis: NormAxis,
    gain: Vec<F>,
    bias: Vec<F>,
    eps: F,
    expand: Dense<F>,
    contract: Dense<F>,
    se: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct InferenceEngine<F> {
    t: usize,
    s: usize,
    k: usize,
    se_apply: SeApply,
    projection: Dense<F>,
    stacks: Vec<Vec<Unit<F>>>,
    se: Vec<Se<F>>,
    classifier: Dense<F>,
    x: Vec<F>,
    x0: Vec<F>,
    normed: Vec<F>,
    hidden: Vec<F>,
    branch: Vec<F>,
    se_hidden: Vec<F>,
    se_logits: Vec<F>,
    stats: Vec<F>,
    pooled: Vec<F>,
    logits: Vec<F>,
}

fn softmax_in_place<F: Real>(v: &mut [F]) {
    let max = v.iter().copied().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum = sum + *x;
    }
    for x in v.iter_mut() {
        *x = *x / sum;
    }
}

impl<F: Real> InferenceEngine<F> {
    pub fn new(cfg: &ModelConfig, params: &ModelParams) -> Result<Self> {
        cfg.validate()?;
        params.check_config(cfg)?;
        let mut se_list: Vec<Se<F>> = Vec::new();
        let mut push_se = |s: &SqueezeExcitation| {
            se_list.push(Se { reduce: Dense::from(&s.reduce), expand: Dense::from(&s.expand) });
            se_list.len() - 1
        };
        let mut stacks = Vec::new();
        for stack in [&params.blocks, &params.second_stream] {
            if stack.is_empty() {
                continue;
            }
            let mut units = Vec::new();
            for block in stack.iter() {
                // A shared SE block is registered once and referenced by both units.
                let shared = match &block.se {
                    crate::model::SeParams::Shared(s) => Some(push_se(s)),
                    _ => None,
                };
                for kind in [UnitKind::Spatial, UnitKind::Temporal] {
                    let unit: Option<&MixerUnit> = match kind {
                        UnitKind::Spatial => block.spatial.as_ref(),
                        UnitKind::Temporal => block.temporal.as_ref(),
                    };
                    let Some(u) = unit else { continue };
                    let se = match shared {
                        Some(i) => Some(i),
                        None => block.se.get(kind).map(&mut push_se),
                    };
                    units.push(Unit {
                        kind,
                        axis: cfg.norm_axis(kind),
                        gain: u.norm.gain.iter().map(|&v| F::from_f64(v)).collect(),
                        bias: u.norm.bias.iter().map(|&v| F::from_f64(v)).collect(),
                        eps: F::from_f64(u.norm.eps),
                        expand: Dense::from(&u.expand),
                        contract: Dense::from(&u.contract),
                        se,
                    });
                }
            }
            stacks.push(units);
        }
        let (t, s) = (cfg.time_steps, cfg.hidden);
        let th = cfg.se_hidden();
        let hidden = (t * cfg.spatial_hidden).max(cfg.temporal_hidden * s);
        Ok(Self {
            t,
            s,
            k: cfg.input_dim(),
            se_apply: cfg.se_apply,
            projection: Dense::from(&params.projection),
            stacks,
            se: se_list,
            classifier: Dense::from(&params.classifier),
            x: vec![F::zero(); t * s],
            x0: vec![F::zero(); t * s],
            normed: vec![F::zero(); t * s],
            hidden: vec![F::zero(); hidden],
            branch: vec![F::zero(); t * s],
            se_hidden: vec![F::zero(); th * s.max(1)],
            se_logits: vec![F::zero(); (t * s).max(2 * t)],
            stats: vec![F::zero(); 2 * s],
            pooled: vec![F::zero(); s],
            logits: vec![F::zero(); cfg.classes],
        })
    }

    /// Expected input length, `T·3K`.
    pub fn input_len(&self) -> usize {
        self.t * self.k
    }

    /// Logits for one flattened `T×3K` window.
    pub fn run(&mut self, input: &[F]) -> Result<&[F]> {
        if input.len() != self.input_len() {
            return Err(shape_err!("engine input has {} values, expected {}", input.len(), self.input_len()));
        }
        #[cfg(all(feature = "std", target_arch = "x86_64"))]
        {
            // SAFETY: each path runs only after its target features were detected.
            if std::is_x86_feature_detected!("avx512f") {
                unsafe { self.forward_avx512(input) };
                return Ok(&self.logits);
            }
            if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
                unsafe { self.forward_avx2(input) };
                return Ok(&self.logits);
            }
        }
        self.forward(input);
        Ok(&self.logits)
    }

    #[cfg(all(feature = "std", target_arch = "x86_64"))]
    #[target_feature(enable = "avx512f,fma")]
    unsafe fn forward_avx512(&mut self, input: &[F]) {
        self.forward(input)
    }

    #[cfg(all(feature = "std", target_arch = "x86_64"))]
    #[target_feature(enable = "avx2,fma")]
    unsafe fn forward_avx2(&mut self, input: &[F]) {
        self.forward(input)
    }

    #[inline(always)]
    fn forward(&mut self, input: &[F]) {
        let (t, s) = (self.t, self.s);
        self.projection.right(input, t, &mut self.x0);
        self.pooled.iter_mut().for_each(|v| *v = F::zero());
        let inv_stacks = F::one() / F::from_f64(self.stacks.len() as f64);
        let inv_t = F::one() / F::from_f64(t as f64);
        for si in 0..self.stacks.len() {
            self.x.copy_from_slice(&self.x0);
            for ui in 0..self.stacks[si].len() {
                self.unit(si, ui);
            }
            for r in 0..t {
                for (p, v) in self.pooled.iter_mut().zip(&self.x[r * s..(r + 1) * s]) {
                    *p = *p + *v * inv_t * inv_stacks;
                }
            }
        }
        self.classifier.right(&self.pooled, 1, &mut self.logits);
    }

    #[inline(always)]
    fn unit(&mut self, si: usize, ui: usize) {
        let (t, s) = (self.t, self.s);
        let u = &self.stacks[si][ui];
        let x = &self.x;
        let normed = &mut self.normed;
        match u.axis {
            NormAxis::Features => {
                let d = F::from_f64(s as f64);
                for r in 0..t {
                    let row = &x[r * s..(r + 1) * s];
                    let mean = row.iter().fold(F::zero(), |a, &v| a + v) / d;
                    let var = row.iter().fold(F::zero(), |a, &v| a + (v - mean) * (v - mean)) / d;
                    let is = F::one() / (var + u.eps).sqrt();
                    for (j, &v) in row.iter().enumerate() {
                        normed[r * s + j] = (v - mean) * is * u.gain[j] + u.bias[j];
                    }
                }
            }
            NormAxis::Time => {
                let d = F::from_f64(t as f64);
                let (mean, scale) = self.stats.split_at_mut(s);
                mean.iter_mut().for_each(|m| *m = F::zero());
                for row in x.chunks_exact(s) {
                    mean.iter_mut().zip(row).for_each(|(m, &v)| *m = *m + v);
                }
                mean.iter_mut().for_each(|m| *m = *m / d);
                scale.iter_mut().for_each(|v| *v = F::zero());
                for row in x.chunks_exact(s) {
                    for ((v, &m), &a) in scale.iter_mut().zip(mean.iter()).zip(row) {
                        let dv = a - m;
                        *v = *v + dv * dv;
                    }
                }
                scale.iter_mut().for_each(|v| *v = F::one() / (*v / d + u.eps).sqrt());
                for (r, (out, row)) in normed.chunks_exact_mut(s).zip(x.chunks_exact(s)).enumerate() {
                    let (g, b) = (u.gain[r], u.bias[r]);
                    for (((o, &a), &m), &is) in out.iter_mut().zip(row).zip(mean.iter()).zip(scale.iter()) {
                        *o = (a - m) * is * g + b;
                    }
                }
            }
        }
        match u.kind {
            UnitKind::Spatial => {
                let h = u.expand.rows;
                u.expand.right(normed, t, &mut self.hidden[..t * h]);
                F::gelu_slice(&mut self.hidden[..t * h], F::zero());
                u.contract.right(&self.hidden[..t * h], t, &mut self.branch);
            }
            UnitKind::Temporal => {
                // column blocks keep the hidden activations cache-resident
                let h = u.expand.rows;
                let block = TEMPORAL_BLOCK.min(s);
                for c0 in (0..s).step_by(block) {
                    let w = block.min(s - c0);
                    let hidden = &mut self.hidden[..h * w];
                    u.expand.left_gemm(&normed[c0..], s, w, hidden, w, F::zero());
                    for (row, &b) in hidden.chunks_exact_mut(w).zip(&u.expand.b) {
                        F::gelu_slice(row, b);
                    }
                    for (r, &b) in u.contract.b.iter().enumerate() {
                        self.branch[r * s + c0..r * s + c0 + w].iter_mut().for_each(|v| *v = b);
                    }
                    u.contract.left_gemm(hidden, w, w, &mut self.branch[c0..], s, F::one());
                }
            }
        }
        if let Some(i) = u.se {
            let se = &self.se[i];
            let th = se.reduce.rows;
            match self.se_apply {
                SeApply::ScaleRows => {
                    let inv_s = F::one() / F::from_f64(s as f64);
                    for r in 0..t {
                        self.se_logits[r] = self.branch[r * s..(r + 1) * s].iter().fold(F::zero(), |a, &v| a + v) * inv_s;
                    }
                    // se_logits[..t] holds the pooled time profile, the next t values the excitation
                    let (profile, rest) = self.se_logits.split_at_mut(t);
                    se.reduce.right(profile, 1, &mut self.se_hidden[..th]);
                    self.se_hidden[..th].iter_mut().for_each(|v| *v = v.max(F::zero()));
                    se.expand.right(&self.se_hidden[..th], 1, &mut rest[..t]);
                    softmax_in_place(&mut rest[..t]);
                    for r in 0..t {
                        let w = rest[r];
                        self.branch[r * s..(r + 1) * s].iter_mut().for_each(|v| *v = *v * w);
                    }
                }
                SeApply::ColumnSoftmax => {
                    se.reduce.left(&self.branch, s, &mut self.se_hidden[..th * s]);
                    self.se_hidden[..th * s].iter_mut().for_each(|v| *v = v.max(F::zero()));
                    se.expand.left(&self.se_hidden[..th * s], s, &mut self.se_logits[..t * s]);
                    for c in 0..s {
                        let mut max = F::neg_infinity();
                        for r in 0..t {
                            max = max.max(self.se_logits[r * s + c]);
                        }
                        let mut sum = F::zero();
                        for r in 0..t {
                            let e = (self.se_logits[r * s + c] - max).exp();
                            self.se_logits[r * s + c] = e;
                            sum = sum + e;
                        }
                        for r in 0..t {
                            self.branch[r * s + c] = self.se_logits[r * s + c] / sum;
                        }
                    }
                }
            }
        }
        for (x, b) in self.x.iter_mut().zip(&self.branch) {
            *x = *x + *b;
        }
    }
}

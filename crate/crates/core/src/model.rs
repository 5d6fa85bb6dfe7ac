//! The st-MLP: per-frame input projection, `L` mixing blocks, global average
//! pooling over time and a linear classifier.
//!
//! A mixing block runs a spatial unit (MLP across the `S` features of every
//! time step) followed by a temporal unit (MLP across the `T` time steps of
//! every feature column). Each unit is `x + SE(MLP(LN(x)))` where the SE
//! block reweights time steps and may be shared between the two units of a
//! block.
//!
//! Ablations are expressed through [`Variant`] and [`SeMode`]; unused units
//! and SE blocks are simply not allocated.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::SkeletonSequence;
use crate::error::{shape_err, Error, Result};
use crate::layers::{self, LayerNorm, LayerNormCache, Linear, SeCache, SqueezeExcitation};
use crate::math;
use crate::tensor::{self, Matrix};

pub use crate::layers::SeApply;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Variant {
    /// Alternating spatial and temporal units.
    #[default]
    Full,
    SpatialOnly,
    TemporalOnly,
    /// A spatial-only stack and a temporal-only stack run side by side on the
    /// projected input; their time-pooled features are averaged.
    TwoStream,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SeMode {
    /// One SE parameter set per block, used by both of its units.
    #[default]
    Shared,
    Separate,
    Off,
}

/// Which axis layer normalization standardizes inside each unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LnAxis {
    /// Last axis of the operand each unit sees: time in the spatial unit
    /// (which works on the transposed matrix), features in the temporal unit.
    #[default]
    Operand,
    /// Features in both units (standard MLP-Mixer).
    Features,
    /// Time in both units.
    Time,
}

/// Axis a normalization runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormAxis {
    Time,
    Features,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitKind {
    Spatial,
    Temporal,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ModelConfig {
    /// `L`, number of mixing blocks.
    pub layers: usize,
    /// `K`, joints per skeleton.
    pub joints: usize,
    /// `S`, hidden feature width.
    pub hidden: usize,
    /// `T`, frames per input window.
    pub time_steps: usize,
    /// `D_S`
    pub spatial_hidden: usize,
    /// `D_T`
    pub temporal_hidden: usize,
    /// `C`
    pub classes: usize,
    #[cfg_attr(feature = "serde", serde(default))]
    pub variant: Variant,
    #[cfg_attr(feature = "serde", serde(default))]
    pub se_mode: SeMode,
    #[cfg_attr(feature = "serde", serde(default))]
    pub se_apply: SeApply,
    #[cfg_attr(feature = "serde", serde(default))]
    pub ln_axis: LnAxis,
}

impl ModelConfig {
    /// Traffic-control-gesture setting: 17 joints, 4 classes.
    pub fn tcg() -> Self {
        Self {
            layers: 4,
            joints: 17,
            hidden: 512,
            time_steps: 24,
            spatial_hidden: 32,
            temporal_hidden: 256,
            classes: 4,
            variant: Variant::Full,
            se_mode: SeMode::Shared,
            se_apply: SeApply::ScaleRows,
            ln_axis: LnAxis::Operand,
        }
    }

    /// In-cabin activity setting: 13 joints, 90-frame windows, 12 coarse
    /// task classes.
    pub fn drive_act() -> Self {
        Self { layers: 2, joints: 13, time_steps: 90, spatial_hidden: 64, classes: 12, ..Self::tcg() }
    }

    /// `k = 3·K`
    #[inline]
    pub fn input_dim(&self) -> usize {
        3 * self.joints
    }

    pub fn se_hidden(&self) -> usize {
        layers::se_hidden_width(self.time_steps)
    }

    pub fn norm_axis(&self, kind: UnitKind) -> NormAxis {
        match (self.ln_axis, kind) {
            (LnAxis::Operand, UnitKind::Spatial) | (LnAxis::Time, _) => NormAxis::Time,
            (LnAxis::Operand, UnitKind::Temporal) | (LnAxis::Features, _) => NormAxis::Features,
        }
    }

    fn norm_dim(&self, kind: UnitKind) -> usize {
        match self.norm_axis(kind) {
            NormAxis::Time => self.time_steps,
            NormAxis::Features => self.hidden,
        }
    }

    /// Units present in each stack.
    fn stacks(&self) -> Vec<(bool, bool)> {
        match self.variant {
            Variant::Full => vec![(true, true)],
            Variant::SpatialOnly => vec![(true, false)],
            Variant::TemporalOnly => vec![(false, true)],
            Variant::TwoStream => vec![(true, false), (false, true)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("layers", self.layers),
            ("joints", self.joints),
            ("hidden", self.hidden),
            ("time_steps", self.time_steps),
            ("spatial_hidden", self.spatial_hidden),
            ("temporal_hidden", self.temporal_hidden),
            ("classes", self.classes),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Input(format!("config field `{name}` must be at least 1")));
            }
        }
        for (has_s, has_t) in self.stacks() {
            for (present, kind) in [(has_s, UnitKind::Spatial), (has_t, UnitKind::Temporal)] {
                if present && self.norm_dim(kind) < 2 {
                    return Err(Error::Input(format!(
                        "layer norm in the {kind:?} unit runs over an axis of length {}; needs at least 2",
                        self.norm_dim(kind)
                    )));
                }
            }
        }
        Ok(())
    }

    /// Closed-form number of learnable scalars.
    pub fn param_count(&self) -> usize {
        let (s, t, k, c) = (self.hidden, self.time_steps, self.input_dim(), self.classes);
        let lin = |i: usize, o: usize| i * o + o;
        let spatial = 2 * self.norm_dim(UnitKind::Spatial) + lin(s, self.spatial_hidden) + lin(self.spatial_hidden, s);
        let temporal =
            2 * self.norm_dim(UnitKind::Temporal) + lin(t, self.temporal_hidden) + lin(self.temporal_hidden, t);
        let se = lin(t, self.se_hidden()) + lin(self.se_hidden(), t);
        let mut per_layer = 0;
        for (has_s, has_t) in self.stacks() {
            per_layer += if has_s { spatial } else { 0 } + if has_t { temporal } else { 0 };
            let se_count = match self.se_mode {
                SeMode::Off => 0,
                SeMode::Shared => 1,
                SeMode::Separate => has_s as usize + has_t as usize,
            };
            per_layer += se_count * se;
        }
        lin(k, s) + self.layers * per_layer + lin(s, c)
    }
}

/// Layer norm followed by a two-layer GeLU MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct MixerUnit {
    pub norm: LayerNorm,
    pub expand: Linear,
    pub contract: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SeParams {
    Off,
    Shared(SqueezeExcitation),
    Separate { spatial: Option<SqueezeExcitation>, temporal: Option<SqueezeExcitation> },
}

impl SeParams {
    pub fn get(&self, kind: UnitKind) -> Option<&SqueezeExcitation> {
        match self {
            SeParams::Off => None,
            SeParams::Shared(se) => Some(se),
            SeParams::Separate { spatial, temporal } => match kind {
                UnitKind::Spatial => spatial.as_ref(),
                UnitKind::Temporal => temporal.as_ref(),
            },
        }
    }

    fn get_mut(&mut self, kind: UnitKind) -> Option<&mut SqueezeExcitation> {
        match self {
            SeParams::Off => None,
            SeParams::Shared(se) => Some(se),
            SeParams::Separate { spatial, temporal } => match kind {
                UnitKind::Spatial => spatial.as_mut(),
                UnitKind::Temporal => temporal.as_mut(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixingBlock {
    pub spatial: Option<MixerUnit>,
    pub temporal: Option<MixerUnit>,
    pub se: SeParams,
}

impl MixingBlock {
    fn unit(&self, kind: UnitKind) -> Option<&MixerUnit> {
        match kind {
            UnitKind::Spatial => self.spatial.as_ref(),
            UnitKind::Temporal => self.temporal.as_ref(),
        }
    }
}

/// All learnable weights. The same type doubles as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Per-frame `k → S` map (a 1×k convolution).
    pub projection: Linear,
    pub blocks: Vec<MixingBlock>,
    /// Temporal-only stack of the two-stream variant; empty otherwise.
    pub second_stream: Vec<MixingBlock>,
    pub classifier: Linear,
}

/// What a parameter tensor is, for initialization and reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Weight { fan_in: usize },
    Bias,
    NormGain,
    NormBias,
}

/// A named view of one parameter tensor.
#[derive(Debug)]
pub struct NamedTensor<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: Role,
    pub values: &'a [f64],
}

macro_rules! walk_impl {
    ($self:ident, $f:ident, $slice:ident, $iter:ident, $($m:ident)?) => {{
        fn linear<'a>(prefix: &str, l: &'a $($m)? Linear, f: &mut dyn FnMut(String, Vec<usize>, Role, &'a $($m)? [f64])) {
            let (o, i) = l.weight.shape();
            f(format!("{prefix}.weight"), vec![o, i], Role::Weight { fan_in: i }, l.weight.$slice());
            f(format!("{prefix}.bias"), vec![o], Role::Bias, & $($m)? l.bias[..]);
        }
        fn unit<'a>(prefix: &str, u: &'a $($m)? MixerUnit, f: &mut dyn FnMut(String, Vec<usize>, Role, &'a $($m)? [f64])) {
            let d = u.norm.gain.len();
            f(format!("{prefix}.norm.gain"), vec![d], Role::NormGain, & $($m)? u.norm.gain[..]);
            f(format!("{prefix}.norm.bias"), vec![d], Role::NormBias, & $($m)? u.norm.bias[..]);
            linear(&format!("{prefix}.expand"), & $($m)? u.expand, f);
            linear(&format!("{prefix}.contract"), & $($m)? u.contract, f);
        }
        fn se<'a>(prefix: &str, s: &'a $($m)? SqueezeExcitation, f: &mut dyn FnMut(String, Vec<usize>, Role, &'a $($m)? [f64])) {
            linear(&format!("{prefix}.reduce"), & $($m)? s.reduce, f);
            linear(&format!("{prefix}.expand"), & $($m)? s.expand, f);
        }
        fn block<'a>(prefix: &str, b: &'a $($m)? MixingBlock, f: &mut dyn FnMut(String, Vec<usize>, Role, &'a $($m)? [f64])) {
            if let Some(u) = & $($m)? b.spatial {
                unit(&format!("{prefix}.spatial"), u, f);
            }
            if let Some(u) = & $($m)? b.temporal {
                unit(&format!("{prefix}.temporal"), u, f);
            }
            match & $($m)? b.se {
                SeParams::Off => {}
                SeParams::Shared(s) => se(&format!("{prefix}.se"), s, f),
                SeParams::Separate { spatial, temporal } => {
                    if let Some(s) = spatial {
                        se(&format!("{prefix}.se_spatial"), s, f);
                    }
                    if let Some(s) = temporal {
                        se(&format!("{prefix}.se_temporal"), s, f);
                    }
                }
            }
        }
        linear("projection", & $($m)? $self.projection, $f);
        for (i, b) in $self.blocks.$iter().enumerate() {
            block(&format!("blocks.{i}"), b, $f);
        }
        for (i, b) in $self.second_stream.$iter().enumerate() {
            block(&format!("second_stream.{i}"), b, $f);
        }
        linear("classifier", & $($m)? $self.classifier, $f);
    }};
}

impl ModelParams {
    /// Parameter structure for `cfg` with every value zero (layer-norm gains
    /// included). Used for gradient accumulators.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (s, t) = (cfg.hidden, cfg.time_steps);
        let th = cfg.se_hidden();
        let unit = |kind: UnitKind| {
            let (outer, inner) = match kind {
                UnitKind::Spatial => (s, cfg.spatial_hidden),
                UnitKind::Temporal => (t, cfg.temporal_hidden),
            };
            MixerUnit {
                norm: LayerNorm::zeros(cfg.norm_dim(kind)),
                expand: Linear::zeros(outer, inner),
                contract: Linear::zeros(inner, outer),
            }
        };
        let block = |has_s: bool, has_t: bool| MixingBlock {
            spatial: has_s.then(|| unit(UnitKind::Spatial)),
            temporal: has_t.then(|| unit(UnitKind::Temporal)),
            se: match cfg.se_mode {
                SeMode::Off => SeParams::Off,
                SeMode::Shared => SeParams::Shared(SqueezeExcitation::zeros(t, th)),
                SeMode::Separate => SeParams::Separate {
                    spatial: has_s.then(|| SqueezeExcitation::zeros(t, th)),
                    temporal: has_t.then(|| SqueezeExcitation::zeros(t, th)),
                },
            },
        };
        let stacks = cfg.stacks();
        let make = |idx: usize| -> Vec<MixingBlock> {
            stacks
                .get(idx)
                .map(|&(a, b)| (0..cfg.layers).map(|_| block(a, b)).collect())
                .unwrap_or_default()
        };
        Self {
            projection: Linear::zeros(cfg.input_dim(), s),
            blocks: make(0),
            second_stream: make(1),
            classifier: Linear::zeros(s, cfg.classes),
        }
    }

    /// Visits every parameter tensor in a fixed order.
    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(String, Vec<usize>, Role, &'a [f64])) {
        walk_impl!(self, f, as_slice, iter,)
    }

    pub fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(String, Vec<usize>, Role, &'a mut [f64])) {
        walk_impl!(self, f, as_mut_slice, iter_mut, mut)
    }

    pub fn named_tensors(&self) -> Vec<NamedTensor<'_>> {
        let mut out = Vec::new();
        self.visit(&mut |name, shape, role, values| out.push(NamedTensor { name, shape, role, values }));
        out
    }

    /// Mutable slices in the same order as [`ModelParams::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        self.visit_mut(&mut |_, _, _, values| out.push(values));
        out
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        self.visit(&mut |_, _, _, values| out.push(values));
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Fan-in uniform weights in `±√(1/fan_in)`, zero biases, unit norm gains.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = Self::zeros(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        params.visit_mut(&mut |_, _, role, values| match role {
            Role::Weight { fan_in } => {
                let bound = math::sqrt(1.0 / fan_in as f64);
                values.iter_mut().for_each(|v| *v = rng.random_range(-bound..=bound));
            }
            Role::NormGain => values.iter_mut().for_each(|v| *v = 1.0),
            Role::Bias | Role::NormBias => values.iter_mut().for_each(|v| *v = 0.0),
        });
        Ok(params)
    }

    /// `self += scale * other`; both must share a structure.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Checks that the structure matches `cfg` tensor by tensor.
    pub fn check_config(&self, cfg: &ModelConfig) -> Result<()> {
        let want = Self::zeros(cfg);
        let (a, b) = (self.named_tensors(), want.named_tensors());
        if a.len() != b.len() {
            return Err(shape_err!("parameters hold {} tensors, config expects {}", a.len(), b.len()));
        }
        for (x, y) in a.iter().zip(&b) {
            if x.name != y.name || x.shape != y.shape {
                return Err(shape_err!(
                    "parameter {} {:?} does not match config tensor {} {:?}",
                    x.name,
                    x.shape,
                    y.name,
                    y.shape
                ));
            }
        }
        Ok(())
    }

    pub fn logits(&self, cfg: &ModelConfig, input: &Matrix) -> Result<Vec<f64>> {
        Ok(self.forward_trace(cfg, input)?.logits)
    }

    pub fn forward_trace(&self, cfg: &ModelConfig, input: &Matrix) -> Result<ForwardTrace> {
        if input.shape() != (cfg.time_steps, cfg.input_dim()) {
            return Err(shape_err!(
                "model input is {}x{}, config expects T x k = {}x{}",
                input.rows(),
                input.cols(),
                cfg.time_steps,
                cfg.input_dim()
            ));
        }
        let projected = self.projection.forward(input)?;
        let mut stacks = Vec::new();
        let mut pooled = vec![0.0; cfg.hidden];
        let n_stacks = if self.second_stream.is_empty() { 1 } else { 2 };
        for stack in [&self.blocks, &self.second_stream].into_iter().take(n_stacks) {
            let mut h = projected.clone();
            let mut traces = Vec::with_capacity(stack.len());
            for block in stack.iter() {
                let mut units = Vec::with_capacity(2);
                for kind in [UnitKind::Spatial, UnitKind::Temporal] {
                    if let Some(unit) = block.unit(kind) {
                        let (out, cache) = unit_forward(cfg, unit, kind, block.se.get(kind), &h)?;
                        units.push(cache);
                        h = out;
                    }
                }
                traces.push(units);
            }
            for (p, v) in pooled.iter_mut().zip(tensor::mean_over_rows(&h)?) {
                *p += v / n_stacks as f64;
            }
            stacks.push(traces);
        }
        let logits = self.classifier.forward(&Matrix::row_vector(&pooled))?.into_vec();
        Ok(ForwardTrace { input: input.clone(), stacks, pooled, logits })
    }

    /// Gradients of `grad_logits · logits` with respect to every parameter.
    pub fn backward_trace(&self, cfg: &ModelConfig, trace: &ForwardTrace, grad_logits: &[f64]) -> Result<ModelParams> {
        if grad_logits.len() != cfg.classes {
            return Err(shape_err!("{} logit gradients for {} classes", grad_logits.len(), cfg.classes));
        }
        let mut grads = ModelParams::zeros(cfg);
        let gpooled = self.classifier.backward(
            &Matrix::row_vector(&trace.pooled),
            &Matrix::row_vector(grad_logits),
            &mut grads.classifier,
        )?;
        let n_stacks = trace.stacks.len();
        let share: Vec<f64> = gpooled.as_slice().iter().map(|g| g / n_stacks as f64).collect();
        let mut gprojected = Matrix::zeros(cfg.time_steps, cfg.hidden);
        for (si, traces) in trace.stacks.iter().enumerate() {
            let (stack, gstack) = if si == 0 {
                (&self.blocks, &mut grads.blocks)
            } else {
                (&self.second_stream, &mut grads.second_stream)
            };
            let mut g = tensor::mean_over_rows_backward(cfg.time_steps, &share);
            for ((block, gblock), units) in stack.iter().zip(gstack.iter_mut()).zip(traces).rev() {
                for cache in units.iter().rev() {
                    let kind = cache.kind;
                    let unit = block.unit(kind).expect("trace matches parameters");
                    let MixingBlock { spatial, temporal, se } = &mut *gblock;
                    let gunit = match kind {
                        UnitKind::Spatial => spatial.as_mut(),
                        UnitKind::Temporal => temporal.as_mut(),
                    }
                    .expect("gradient structure matches parameters");
                    g = unit_backward(unit, block.se.get(kind), cache, &g, gunit, se.get_mut(kind))?;
                }
            }
            gprojected.add_assign(&g)?;
        }
        self.projection.backward(&trace.input, &gprojected, &mut grads.projection)?;
        Ok(grads)
    }
}

/// Intermediates of one forward pass, sufficient for backward.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Matrix,
    stacks: Vec<Vec<Vec<UnitCache>>>,
    pub pooled: Vec<f64>,
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone)]
struct UnitCache {
    kind: UnitKind,
    axis: NormAxis,
    norm: LayerNormCache,
    mlp_in: Matrix,
    pre: Matrix,
    act: Matrix,
    se: Option<SeCache>,
}

fn unit_forward(
    cfg: &ModelConfig,
    unit: &MixerUnit,
    kind: UnitKind,
    se: Option<&SqueezeExcitation>,
    x: &Matrix,
) -> Result<(Matrix, UnitCache)> {
    if x.shape() != (cfg.time_steps, cfg.hidden) {
        return Err(shape_err!(
            "mixing unit input is {}x{}, config expects {}x{}",
            x.rows(),
            x.cols(),
            cfg.time_steps,
            cfg.hidden
        ));
    }
    let axis = cfg.norm_axis(kind);
    // `normed` is T×S either way.
    let (normed, norm) = match axis {
        NormAxis::Features => unit.norm.forward_cached(x)?,
        NormAxis::Time => {
            let (n, c) = unit.norm.forward_cached(&x.transpose())?;
            (n.transpose(), c)
        }
    };
    let mlp_in = match kind {
        UnitKind::Spatial => normed,
        UnitKind::Temporal => normed.transpose(),
    };
    let pre = unit.expand.forward(&mlp_in)?;
    let act = layers::gelu(&pre);
    let mixed = unit.contract.forward(&act)?;
    let mixed = match kind {
        UnitKind::Spatial => mixed,
        UnitKind::Temporal => mixed.transpose(),
    };
    let (branch, se_cache) = match se {
        Some(se) => {
            let (o, c) = se.forward_cached(&mixed, cfg.se_apply)?;
            (o, Some(c))
        }
        None => (mixed, None),
    };
    let out = tensor::add(x, &branch)?;
    Ok((out, UnitCache { kind, axis, norm, mlp_in, pre, act, se: se_cache }))
}

fn unit_backward(
    unit: &MixerUnit,
    se: Option<&SqueezeExcitation>,
    cache: &UnitCache,
    grad_out: &Matrix,
    grads: &mut MixerUnit,
    se_grads: Option<&mut SqueezeExcitation>,
) -> Result<Matrix> {
    let mut gx = grad_out.clone();
    let gmixed = match (se, &cache.se, se_grads) {
        (Some(se), Some(c), Some(gse)) => se.backward(c, grad_out, gse)?,
        (None, None, _) => grad_out.clone(),
        _ => return Err(shape_err!("SE parameters, cache and gradients disagree")),
    };
    let gmixed = match cache.kind {
        UnitKind::Spatial => gmixed,
        UnitKind::Temporal => gmixed.transpose(),
    };
    let gact = unit.contract.backward(&cache.act, &gmixed, &mut grads.contract)?;
    let gpre = layers::gelu_backward(&cache.pre, &gact)?;
    let gmlp_in = unit.expand.backward(&cache.mlp_in, &gpre, &mut grads.expand)?;
    let gnormed = match cache.kind {
        UnitKind::Spatial => gmlp_in,
        UnitKind::Temporal => gmlp_in.transpose(),
    };
    let gin = match cache.axis {
        NormAxis::Features => unit.norm.backward(&cache.norm, &gnormed, &mut grads.norm)?,
        NormAxis::Time => unit.norm.backward(&cache.norm, &gnormed.transpose(), &mut grads.norm)?.transpose(),
    };
    gx.add_assign(&gin)?;
    Ok(gx)
}

/// Output `U` of the spatial unit of `block` applied to `x` (T×S).
pub fn spatial_mixing(cfg: &ModelConfig, block: &MixingBlock, x: &Matrix) -> Result<Matrix> {
    mixing(cfg, block, UnitKind::Spatial, x)
}

/// Output `V` of the temporal unit of `block` applied to `u` (T×S).
pub fn temporal_mixing(cfg: &ModelConfig, block: &MixingBlock, u: &Matrix) -> Result<Matrix> {
    mixing(cfg, block, UnitKind::Temporal, u)
}

fn mixing(cfg: &ModelConfig, block: &MixingBlock, kind: UnitKind, x: &Matrix) -> Result<Matrix> {
    let unit = block
        .unit(kind)
        .ok_or_else(|| Error::Input(format!("block has no {kind:?} unit")))?;
    Ok(unit_forward(cfg, unit, kind, block.se.get(kind), x)?.0)
}

/// Row `t` holds frame `t` as `(x₁, y₁, z₁, …, x_K, y_K, z_K)`.
pub fn flatten_sequence(cfg: &ModelConfig, seq: &SkeletonSequence) -> Result<Matrix> {
    if seq.frames.len() != cfg.time_steps {
        return Err(shape_err!("sequence has {} frames, model expects {}", seq.frames.len(), cfg.time_steps));
    }
    flatten_frames(&seq.frames, cfg.joints)
}

pub fn flatten_frames(frames: &[crate::data::SkeletonFrame], joints: usize) -> Result<Matrix> {
    let mut data = Vec::with_capacity(frames.len() * joints * 3);
    for (t, f) in frames.iter().enumerate() {
        if f.joints.len() != joints {
            return Err(shape_err!("frame {t} has {} joints, expected {joints}", f.joints.len()));
        }
        for j in &f.joints {
            data.extend_from_slice(j);
        }
    }
    Matrix::new(frames.len(), joints * 3, data)
}

/// Inverse of [`flatten_frames`].
pub fn unflatten(x: &Matrix) -> Result<Vec<crate::data::SkeletonFrame>> {
    if x.cols() % 3 != 0 {
        return Err(shape_err!("{} columns is not a multiple of 3", x.cols()));
    }
    Ok((0..x.rows())
        .map(|t| crate::data::SkeletonFrame {
            joints: x.row(t).chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        })
        .collect())
}

/// Class logits for one sequence of exactly `T` frames.
pub fn forward(params: &ModelParams, cfg: &ModelConfig, seq: &SkeletonSequence) -> Result<Vec<f64>> {
    params.logits(cfg, &flatten_sequence(cfg, seq)?)
}

/// Parameter gradients of `grad_logits · logits(seq)`.
pub fn backward(params: &ModelParams, cfg: &ModelConfig, seq: &SkeletonSequence, grad_logits: &[f64]) -> Result<ModelParams> {
    let trace = params.forward_trace(cfg, &flatten_sequence(cfg, seq)?)?;
    params.backward_trace(cfg, &trace, grad_logits)
}

pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ModelParams> {
    ModelParams::init(cfg, seed)
}

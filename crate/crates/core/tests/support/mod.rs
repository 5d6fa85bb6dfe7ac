//! Oracles shared by the core integration tests and the acceptance harness.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stmlp_core::model::{LnAxis, MixerUnit, MixingBlock, ModelConfig, ModelParams, SeApply, SeMode, Variant};
use stmlp_core::layers::{Linear, SqueezeExcitation};
use stmlp_core::Matrix;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn rand_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::new(rows, cols, rand_vec(rng, rows * cols)).unwrap()
}

/// `|a − n| / max(|a|, |n|, 1e-6)`; the floor keeps vanishing gradients from
/// turning rounding noise into large ratios.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Central differences of `f` at `x`.
pub fn numeric_grad(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest relative error between `analytic` and the central-difference
/// gradient of `f` at `x`.
pub fn max_rel_err(x: &[f64], analytic: &[f64], f: impl FnMut(&[f64]) -> f64) -> f64 {
    assert_eq!(x.len(), analytic.len());
    numeric_grad(x, FD_STEP, f)
        .iter()
        .zip(analytic)
        .map(|(n, a)| rel_err(*a, *n))
        .fold(0.0, f64::max)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        layers: 1,
        joints: 2,
        hidden: 8,
        time_steps: 3,
        spatial_hidden: 4,
        temporal_hidden: 5,
        classes: 2,
        ..ModelConfig::tcg()
    }
}

/// Every combination of variant, SE mode, SE application and LN axis.
pub fn all_tiny_configs() -> Vec<ModelConfig> {
    let mut out = Vec::new();
    for variant in [Variant::Full, Variant::SpatialOnly, Variant::TemporalOnly, Variant::TwoStream] {
        for se_mode in [SeMode::Shared, SeMode::Separate, SeMode::Off] {
            for se_apply in [SeApply::ScaleRows, SeApply::ColumnSoftmax] {
                if se_mode == SeMode::Off && se_apply == SeApply::ColumnSoftmax {
                    continue;
                }
                for ln_axis in [LnAxis::Operand, LnAxis::Features, LnAxis::Time] {
                    out.push(ModelConfig { variant, se_mode, se_apply, ln_axis, ..tiny_config() });
                }
            }
        }
    }
    out
}

/// Params with every entry random, so biases and norm parameters are
/// exercised too.
pub fn random_params(cfg: &ModelConfig, seed: u64) -> ModelParams {
    let mut params = ModelParams::zeros(cfg);
    let mut r = rng(seed);
    for t in params.tensors_mut() {
        t.iter_mut().for_each(|v| *v = r.random_range(-0.8..0.8));
    }
    params
}

pub fn flat(params: &ModelParams) -> Vec<f64> {
    params.tensors().iter().flat_map(|t| t.iter().copied()).collect()
}

pub fn unflat(cfg: &ModelConfig, values: &[f64]) -> ModelParams {
    let mut params = ModelParams::zeros(cfg);
    let mut it = values.iter();
    for t in params.tensors_mut() {
        t.iter_mut().for_each(|v| *v = *it.next().unwrap());
    }
    params
}

/// Worst relative error over all parameters for the loss `r · logits`.
pub fn model_grad_check(cfg: &ModelConfig, seed: u64) -> f64 {
    let params = random_params(cfg, seed);
    let mut r = rng(seed ^ 0x5eed);
    let input = rand_matrix(&mut r, cfg.time_steps, cfg.input_dim());
    let proj = rand_vec(&mut r, cfg.classes);
    let trace = params.forward_trace(cfg, &input).unwrap();
    let grads = params.backward_trace(cfg, &trace, &proj).unwrap();
    let x = flat(&params);
    max_rel_err(&x, &flat(&grads), |v| dot(&proj, &unflat(cfg, v).logits(cfg, &input).unwrap()))
}

// ---------------------------------------------------------------------------
// Straight-line forward pass on nested vectors.

type Grid = Vec<Vec<f64>>;

fn to_grid(m: &Matrix) -> Grid {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn w(l: &Linear, o: usize, i: usize) -> f64 {
    l.weight.get(o, i)
}

fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

fn normalize(v: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> Vec<f64> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let d = (var + eps).sqrt();
    (0..v.len()).map(|i| (v[i] - mean) / d * gain[i] + bias[i]).collect()
}

fn mlp(x: &[f64], first: &Linear, second: &Linear, hidden_act: fn(f64) -> f64) -> Vec<f64> {
    let h: Vec<f64> = (0..first.bias.len())
        .map(|j| hidden_act(first.bias[j] + (0..x.len()).map(|i| w(first, j, i) * x[i]).sum::<f64>()))
        .collect();
    (0..second.bias.len())
        .map(|o| second.bias[o] + (0..h.len()).map(|j| w(second, o, j) * h[j]).sum::<f64>())
        .collect()
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

fn se_branch(se: &SqueezeExcitation, apply: SeApply, m: &Grid) -> Grid {
    let (t, s) = (m.len(), m[0].len());
    match apply {
        SeApply::ScaleRows => {
            let pooled: Vec<f64> = m.iter().map(|row| row.iter().sum::<f64>() / s as f64).collect();
            let weights = softmax(&mlp(&pooled, &se.reduce, &se.expand, relu));
            (0..t).map(|i| m[i].iter().map(|v| v * weights[i]).collect()).collect()
        }
        SeApply::ColumnSoftmax => {
            let mut out = vec![vec![0.0; s]; t];
            for c in 0..s {
                let col: Vec<f64> = (0..t).map(|i| m[i][c]).collect();
                let p = softmax(&mlp(&col, &se.reduce, &se.expand, relu));
                for i in 0..t {
                    out[i][c] = p[i];
                }
            }
            out
        }
    }
}

/// `time_axis`: normalize each column over time instead of each row over
/// features.
fn unit(x: &Grid, u: &MixerUnit, spatial: bool, time_axis: bool, se: Option<&SqueezeExcitation>, apply: SeApply) -> Grid {
    let (t, s) = (x.len(), x[0].len());
    let mut n = vec![vec![0.0; s]; t];
    if time_axis {
        for c in 0..s {
            let col: Vec<f64> = (0..t).map(|i| x[i][c]).collect();
            let y = normalize(&col, &u.norm.gain, &u.norm.bias, u.norm.eps);
            for i in 0..t {
                n[i][c] = y[i];
            }
        }
    } else {
        for i in 0..t {
            n[i] = normalize(&x[i], &u.norm.gain, &u.norm.bias, u.norm.eps);
        }
    }
    let mut m = vec![vec![0.0; s]; t];
    if spatial {
        for i in 0..t {
            m[i] = mlp(&n[i], &u.expand, &u.contract, gelu);
        }
    } else {
        for c in 0..s {
            let col: Vec<f64> = (0..t).map(|i| n[i][c]).collect();
            let y = mlp(&col, &u.expand, &u.contract, gelu);
            for i in 0..t {
                m[i][c] = y[i];
            }
        }
    }
    let branch = match se {
        Some(se) => se_branch(se, apply, &m),
        None => m,
    };
    (0..t).map(|i| (0..s).map(|c| x[i][c] + branch[i][c]).collect()).collect()
}

fn block_se(b: &MixingBlock, spatial: bool) -> Option<&SqueezeExcitation> {
    use stmlp_core::model::SeParams;
    match &b.se {
        SeParams::Off => None,
        SeParams::Shared(se) => Some(se),
        SeParams::Separate { spatial: s, temporal: t } => {
            if spatial {
                s.as_ref()
            } else {
                t.as_ref()
            }
        }
    }
}

pub fn straight_line_block(cfg: &ModelConfig, b: &MixingBlock, x: &Matrix) -> Matrix {
    let mut h = to_grid(x);
    let (spatial_time, temporal_time) = match cfg.ln_axis {
        LnAxis::Operand => (true, false),
        LnAxis::Features => (false, false),
        LnAxis::Time => (true, true),
    };
    if let Some(u) = &b.spatial {
        h = unit(&h, u, true, spatial_time, block_se(b, true), cfg.se_apply);
    }
    if let Some(u) = &b.temporal {
        h = unit(&h, u, false, temporal_time, block_se(b, false), cfg.se_apply);
    }
    Matrix::from_rows(&h).unwrap()
}

/// Logits computed with plain loops over nested vectors.
pub fn straight_line_logits(cfg: &ModelConfig, p: &ModelParams, input: &Matrix) -> Vec<f64> {
    let (t, s) = (cfg.time_steps, cfg.hidden);
    let x = to_grid(input);
    let projected: Grid = x.iter().map(|row| {
        (0..s).map(|o| p.projection.bias[o] + (0..row.len()).map(|i| w(&p.projection, o, i) * row[i]).sum::<f64>()).collect()
    }).collect();
    let stacks: Vec<&Vec<MixingBlock>> =
        if p.second_stream.is_empty() { vec![&p.blocks] } else { vec![&p.blocks, &p.second_stream] };
    let mut pooled = vec![0.0; s];
    for stack in &stacks {
        let mut h = Matrix::from_rows(&projected).unwrap();
        for b in stack.iter() {
            h = straight_line_block(cfg, b, &h);
        }
        for c in 0..s {
            let mean = (0..t).map(|i| h.get(i, c)).sum::<f64>() / t as f64;
            pooled[c] += mean / stacks.len() as f64;
        }
    }
    (0..cfg.classes)
        .map(|o| p.classifier.bias[o] + (0..s).map(|i| w(&p.classifier, o, i) * pooled[i]).sum::<f64>())
        .collect()
}

// ---------------------------------------------------------------------------
// Metrics from index sets.

pub struct BruteMetrics {
    pub accuracy: f64,
    pub macro_jaccard: Option<f64>,
    pub macro_f1: Option<f64>,
    pub mean_per_class_accuracy: Option<f64>,
}

pub fn brute_metrics(classes: usize, truth: &[usize], pred: &[usize]) -> BruteMetrics {
    use std::collections::BTreeSet;
    let set = |v: &[usize], c: usize| -> BTreeSet<usize> { (0..v.len()).filter(|&i| v[i] == c).collect() };
    let mut js = Vec::new();
    let mut fs = Vec::new();
    let mut rs = Vec::new();
    for c in 0..classes {
        let (a, b) = (set(truth, c), set(pred, c));
        let inter = a.intersection(&b).count();
        let union = a.union(&b).count();
        if union > 0 {
            js.push(inter as f64 / union as f64);
            fs.push((2 * inter) as f64 / (a.len() + b.len()) as f64);
        }
        if !a.is_empty() {
            rs.push(inter as f64 / a.len() as f64);
        }
    }
    let mean = |v: &[f64]| (classes >= 2 && !v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let correct = truth.iter().zip(pred).filter(|(t, p)| t == p).count();
    BruteMetrics {
        accuracy: correct as f64 / truth.len() as f64,
        macro_jaccard: mean(&js),
        macro_f1: mean(&fs),
        mean_per_class_accuracy: (!rs.is_empty()).then(|| rs.iter().sum::<f64>() / rs.len() as f64),
    }
}

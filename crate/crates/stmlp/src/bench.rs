//! Wall-clock latency of single-window inference.

use std::hint::black_box;
use std::time::Instant;

use serde::Serialize;
use stmlp_core::data::{synth_gestures, SynthOptions};
use stmlp_core::infer::{InferenceEngine, Real};
use stmlp_core::model::flatten_frames;
use stmlp_core::{ModelConfig, ModelParams};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F64,
    F32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyStats {
    pub precision: Precision,
    pub iterations: usize,
    pub min_ms: f64,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p99_ms: f64,
}

/// Nearest-rank percentile of sorted values.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// A fixed, realistic input window for `cfg`.
pub fn bench_window(cfg: &ModelConfig, seed: u64) -> Result<Vec<f64>> {
    let opts = SynthOptions { samples: 1, joints: cfg.joints, frames: cfg.time_steps, seed, ..SynthOptions::default() };
    let seq = synth_gestures(&opts)?.remove(0);
    Ok(flatten_frames(&seq.frames, cfg.joints)?.into_vec())
}

fn time_engine<F: Real>(
    cfg: &ModelConfig,
    params: &ModelParams,
    window: &[f64],
    iterations: usize,
    warmup: usize,
) -> Result<Vec<f64>> {
    let mut engine = InferenceEngine::<F>::new(cfg, params)?;
    let input: Vec<F> = window.iter().map(|&v| F::from_f64(v)).collect();
    for _ in 0..warmup {
        black_box(engine.run(black_box(&input))?);
    }
    let mut samples = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let start = Instant::now();
        black_box(engine.run(black_box(&input))?);
        samples.push(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(samples)
}

/// Times `iterations` forward passes after `warmup` untimed ones, on the
/// calling thread.
pub fn run_bench(
    cfg: &ModelConfig,
    params: &ModelParams,
    precision: Precision,
    iterations: usize,
    warmup: usize,
    seed: u64,
) -> Result<LatencyStats> {
    let iterations = iterations.max(1);
    let window = bench_window(cfg, seed)?;
    let mut samples = match precision {
        Precision::F64 => time_engine::<f64>(cfg, params, &window, iterations, warmup)?,
        Precision::F32 => time_engine::<f32>(cfg, params, &window, iterations, warmup)?,
    };
    samples.sort_by(f64::total_cmp);
    Ok(LatencyStats {
        precision,
        iterations,
        min_ms: samples[0],
        mean_ms: samples.iter().sum::<f64>() / samples.len() as f64,
        p50_ms: percentile(&samples, 50.0),
        p99_ms: percentile(&samples, 99.0),
    })
}

/// `v` with at least `digits` significant digits, in plain decimal notation.
pub fn significant(v: f64, digits: usize) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v:.prec$}", prec = digits.saturating_sub(1));
    }
    let magnitude = v.abs().log10().floor() as i64;
    let decimals = (digits as i64 - 1 - magnitude).max(0) as usize;
    format!("{v:.decimals$}")
}

impl std::fmt::Display for LatencyStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let p = match self.precision {
            Precision::F64 => "f64",
            Precision::F32 => "f32",
        };
        write!(
            f,
            "precision={p} iterations={} min_ms={} mean_ms={} p50_ms={} p99_ms={}",
            self.iterations,
            significant(self.min_ms, 4),
            significant(self.mean_ms, 4),
            significant(self.p50_ms, 4),
            significant(self.p99_ms, 4)
        )
    }
}

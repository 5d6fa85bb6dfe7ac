//! Causal per-frame prediction over a line-delimited stream.
//!
//! Each input line is one frame, either `{"joints":[[x,y,z],...]}` or the
//! bare joint array. Each accepted frame produces `{"frame":n,"class":c}`
//! where `n` counts accepted frames from 0. Malformed lines are reported on
//! the error stream and skipped.

use std::collections::VecDeque;
use std::io::{BufRead, Write};

use serde::Deserialize;
use stmlp_core::data::SkeletonFrame;
use stmlp_core::infer::InferenceEngine;
use stmlp_core::optim::argmax;

use crate::checkpoint::Checkpoint;
use crate::config::Preprocess;
use crate::error::{AppError, Result};

#[derive(Deserialize)]
#[serde(untagged)]
enum FrameLine {
    Object { joints: Vec<[f64; 3]> },
    Bare(Vec<[f64; 3]>),
}

pub fn parse_frame(line: &str, joints: usize) -> std::result::Result<SkeletonFrame, String> {
    let parsed: FrameLine = serde_json::from_str(line)
        .map_err(|_| "expected {\"joints\":[[x,y,z],...]} or [[x,y,z],...]".to_string())?;
    let joints_in = match parsed {
        FrameLine::Object { joints } | FrameLine::Bare(joints) => joints,
    };
    if joints_in.len() != joints {
        return Err(format!("{} joints, expected {joints}", joints_in.len()));
    }
    if joints_in.iter().flatten().any(|v| !v.is_finite()) {
        return Err("non-finite coordinate".into());
    }
    Ok(SkeletonFrame::new(joints_in))
}

/// Keeps the last `T` frames and classifies the window ending at each new
/// frame. Before `T` frames have arrived the window is left-padded with the
/// first frame.
pub struct StreamPredictor {
    engine: InferenceEngine<f64>,
    preprocess: Preprocess,
    joints: usize,
    t: usize,
    history: VecDeque<SkeletonFrame>,
    input: Vec<f64>,
    seen: u64,
}

impl StreamPredictor {
    pub fn new(ckpt: &Checkpoint) -> Result<Self> {
        let cfg = ckpt.config();
        let engine = InferenceEngine::new(cfg, &ckpt.params)?;
        Ok(Self {
            input: vec![0.0; engine.input_len()],
            engine,
            preprocess: ckpt.header.preprocess.clone(),
            joints: cfg.joints,
            t: cfg.time_steps,
            history: VecDeque::with_capacity(cfg.time_steps),
            seen: 0,
        })
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    /// Index the next accepted frame will get.
    pub fn frames_seen(&self) -> u64 {
        self.seen
    }

    /// Adds a raw (not yet preprocessed) frame and returns the predicted class.
    pub fn push(&mut self, mut frame: SkeletonFrame) -> Result<usize> {
        if frame.joints.len() != self.joints {
            return Err(AppError::Data(format!("{} joints, expected {}", frame.joints.len(), self.joints)));
        }
        self.preprocess.apply_frame(&mut frame)?;
        if self.history.len() == self.t {
            self.history.pop_front();
        }
        self.history.push_back(frame);
        let pad = self.t - self.history.len();
        let k = 3 * self.joints;
        for row in 0..self.t {
            let f = &self.history[row.saturating_sub(pad)];
            for (j, p) in f.joints.iter().enumerate() {
                self.input[row * k + 3 * j..row * k + 3 * j + 3].copy_from_slice(p);
            }
        }
        self.seen += 1;
        Ok(argmax(self.engine.run(&self.input)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StreamStats {
    pub accepted: u64,
    pub rejected: u64,
}

/// Runs until `input` is exhausted. Blank lines are ignored; each output
/// line is flushed as soon as it is written.
pub fn run_stream(
    pred: &mut StreamPredictor,
    input: impl BufRead,
    mut out: impl Write,
    mut diag: impl Write,
) -> std::io::Result<StreamStats> {
    let mut stats = StreamStats::default();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let n = pred.frames_seen();
        match parse_frame(&line, pred.joints()).map_err(AppError::Data).and_then(|f| pred.push(f)) {
            Ok(class) => {
                writeln!(out, "{{\"frame\":{n},\"class\":{class}}}")?;
                out.flush()?;
                stats.accepted += 1;
            }
            Err(e) => {
                writeln!(diag, "line {}: skipped: {e}", i + 1)?;
                stats.rejected += 1;
            }
        }
    }
    Ok(stats)
}

//! Run configuration: a named preset, deep-merged with an optional TOML file,
//! then with `key.path=value` overrides.
//!
//! ```toml
//! preset = "tcg"
//!
//! [model]
//! layers = 2
//! variant = "temporal_only"
//! se_mode = "off"
//!
//! [train]
//! optimizer = "adam"
//! epochs = 30
//!
//! [schedule]
//! base_lr = 0.01
//!
//! [data]
//! path = "train.jsonl"
//! split_key = "subject"
//! test = ["s4"]
//!
//! [data.preprocess]
//! root_joint = 0
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stmlp_core::data::{AffineTransform, SkeletonFrame, SkeletonSequence, SplitKey};
use stmlp_core::optim::{Hyper, LrSchedule, OptimizerKind, ScheduleKind, TrainOptions};
use stmlp_core::ModelConfig;
use toml::{Table, Value};

use crate::error::{AppError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Tcg,
    DriveAct,
}

impl std::str::FromStr for Preset {
    type Err = AppError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tcg" => Ok(Preset::Tcg),
            "drive-act" | "drive_act" => Ok(Preset::DriveAct),
            _ => Err(AppError::Config(format!("preset: unknown value {s:?}, expected \"tcg\" or \"drive-act\""))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainSection,
    pub schedule: ScheduleSection,
    pub data: DataSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub hyper: Hyper,
}

/// The epoch count comes from `train.epochs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub kind: ScheduleKind,
    pub base_lr: f64,
    pub final_lr: f64,
    #[serde(default)]
    pub switch_epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitOn {
    #[default]
    Subject,
    View,
}

impl From<SplitOn> for SplitKey {
    fn from(s: SplitOn) -> Self {
        match s {
            SplitOn::Subject => SplitKey::Subject,
            SplitOn::View => SplitKey::View,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub split_key: SplitOn,
    /// Key values held out for testing.
    #[serde(default)]
    pub test: Vec<String>,
    /// Key values held out for validation.
    #[serde(default)]
    pub val: Vec<String>,
    #[serde(default)]
    pub preprocess: Preprocess,
}

/// Per-frame coordinate preprocessing, applied identically at train,
/// evaluation and prediction time. The affine transform runs first.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preprocess {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub affine: Option<[[f64; 4]; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root_joint: Option<usize>,
}

impl Preprocess {
    pub fn is_identity(&self) -> bool {
        self.affine.is_none() && self.root_joint.is_none()
    }

    pub fn apply_frame(&self, frame: &mut SkeletonFrame) -> Result<()> {
        if let Some(m) = self.affine {
            let t = AffineTransform(m);
            frame.joints.iter_mut().for_each(|j| *j = t.apply(*j));
        }
        if let Some(root) = self.root_joint {
            let r = *frame
                .joints
                .get(root)
                .ok_or_else(|| AppError::Data(format!("root joint {root} out of range for {} joints", frame.joints.len())))?;
            for j in &mut frame.joints {
                for c in 0..3 {
                    j[c] -= r[c];
                }
            }
        }
        Ok(())
    }

    pub fn apply(&self, seqs: &mut [SkeletonSequence]) -> Result<()> {
        if self.is_identity() {
            return Ok(());
        }
        for seq in seqs {
            for f in &mut seq.frames {
                self.apply_frame(f)?;
            }
        }
        Ok(())
    }
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Tcg => RunConfig {
                model: ModelConfig::tcg(),
                train: TrainSection {
                    optimizer: OptimizerKind::Ranger,
                    epochs: 70,
                    batch_size: 1024,
                    seed: 0,
                    hyper: Hyper::default(),
                },
                schedule: ScheduleSection::from(LrSchedule::tcg()),
                data: DataSection::default(),
            },
            Preset::DriveAct => RunConfig {
                model: ModelConfig::drive_act(),
                train: TrainSection {
                    optimizer: OptimizerKind::Adam,
                    epochs: 80,
                    batch_size: 2048,
                    seed: 0,
                    hyper: Hyper::default(),
                },
                schedule: ScheduleSection::from(LrSchedule::drive_act()),
                data: DataSection::default(),
            },
        }
    }

    /// Resolves the preset (`preset` argument, else the file's `preset` key,
    /// else `tcg`), merges the file over it and applies `overrides`.
    pub fn load(preset: Option<Preset>, file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut file_table = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
                text.parse::<Table>().map_err(|e| AppError::Config(format!("{}: {e}", path.display())))?
            }
            None => Table::new(),
        };
        let named = match file_table.remove("preset") {
            Some(Value::String(s)) => Some(s.parse::<Preset>()?),
            Some(other) => return Err(AppError::Config(format!("preset: expected a string, got {other}"))),
            None => None,
        };
        let mut merged = Self::preset(preset.or(named).unwrap_or(Preset::Tcg)).to_table()?;
        merge(&mut merged, file_table);
        for o in overrides {
            apply_override(&mut merged, o)?;
        }
        let cfg = RunConfig {
            model: section(&mut merged, "model")?,
            train: section(&mut merged, "train")?,
            schedule: section(&mut merged, "schedule")?,
            data: section(&mut merged, "data")?,
        };
        if let Some(k) = merged.keys().next() {
            return Err(AppError::Config(format!("unknown top-level key `{k}`")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_table(&self) -> Result<Table> {
        match Value::try_from(self) {
            Ok(Value::Table(t)) => Ok(t),
            Ok(_) => unreachable!("RunConfig serializes to a table"),
            Err(e) => Err(AppError::Config(e.to_string())),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| AppError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(|e| AppError::Config(format!("model: {e}")))?;
        if self.train.epochs == 0 {
            return Err(AppError::Config("train.epochs: must be at least 1".into()));
        }
        if self.train.batch_size == 0 {
            return Err(AppError::Config("train.batch_size: must be at least 1".into()));
        }
        for (name, v) in [("schedule.base_lr", self.schedule.base_lr), ("schedule.final_lr", self.schedule.final_lr)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(AppError::Config(format!("{name}: must be finite and non-negative, got {v}")));
            }
        }
        let h = &self.train.hyper;
        for (name, v) in [("train.hyper.beta1", h.beta1), ("train.hyper.beta2", h.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(AppError::Config(format!("{name}: must be in [0, 1), got {v}")));
            }
        }
        if !(h.eps > 0.0) {
            return Err(AppError::Config(format!("train.hyper.eps: must be positive, got {}", h.eps)));
        }
        if h.lookahead_k == 0 {
            return Err(AppError::Config("train.hyper.lookahead_k: must be at least 1".into()));
        }
        if let Some(r) = self.data.preprocess.root_joint {
            if r >= self.model.joints {
                return Err(AppError::Config(format!(
                    "data.preprocess.root_joint: {r} is out of range for {} joints",
                    self.model.joints
                )));
            }
        }
        Ok(())
    }

    pub fn lr_schedule(&self) -> LrSchedule {
        LrSchedule {
            kind: self.schedule.kind,
            base_lr: self.schedule.base_lr,
            final_lr: self.schedule.final_lr,
            switch_epoch: self.schedule.switch_epoch,
            total_epochs: self.train.epochs,
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            seed: self.train.seed,
            optimizer: self.train.optimizer,
            hyper: self.train.hyper,
            schedule: self.lr_schedule(),
        }
    }
}

impl From<LrSchedule> for ScheduleSection {
    fn from(s: LrSchedule) -> Self {
        ScheduleSection { kind: s.kind, base_lr: s.base_lr, final_lr: s.final_lr, switch_epoch: s.switch_epoch }
    }
}

fn section<T: serde::de::DeserializeOwned>(table: &mut Table, name: &str) -> Result<T> {
    let value = table.remove(name).unwrap_or_else(|| Value::Table(Table::new()));
    value
        .try_into()
        .map_err(|e: toml::de::Error| AppError::Config(format!("{name}: {}", e.message().trim())))
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// `a.b.c=value`; the value is parsed as TOML, falling back to a bare string.
pub fn apply_override(table: &mut Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| AppError::Config(format!("override {spec:?}: expected key.path=value")))?;
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(AppError::Config(format!("override {spec:?}: empty key segment")));
    }
    let mut cur = table;
    for k in &keys[..keys.len() - 1] {
        let entry = cur.entry(k.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = match entry {
            Value::Table(t) => t,
            _ => return Err(AppError::Config(format!("override {spec:?}: `{k}` is not a table"))),
        };
    }
    cur.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

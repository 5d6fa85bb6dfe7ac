//! JSON-lines skeleton datasets.
//!
//! One sequence per line:
//!
//! ```text
//! {"format_version":1,"meta":{"subject":"s1","view":"v0","dataset":"tcg"},"label":2,"frames":[[[x,y,z],...],...]}
//! ```
//!
//! `label` holds a per-sequence class, `labels` one class per frame; exactly
//! one of them is present. Blank lines are ignored.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use stmlp_core::data::{Labels, SequenceMeta, SkeletonFrame, SkeletonSequence};

use crate::error::{AppError, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaRecord {
    #[serde(default)]
    subject: String,
    #[serde(default)]
    view: String,
    #[serde(default)]
    dataset: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    format_version: u32,
    #[serde(default)]
    meta: MetaRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<usize>>,
    frames: Vec<Vec<[f64; 3]>>,
}

impl From<&SkeletonSequence> for Record {
    fn from(seq: &SkeletonSequence) -> Self {
        let (label, labels) = match &seq.labels {
            Labels::Sequence(c) => (Some(*c), None),
            Labels::Frames(v) => (None, Some(v.clone())),
        };
        Record {
            format_version: FORMAT_VERSION,
            meta: MetaRecord {
                subject: seq.meta.subject.clone(),
                view: seq.meta.view.clone(),
                dataset: seq.meta.dataset.clone(),
            },
            label,
            labels,
            frames: seq.frames.iter().map(|f| f.joints.clone()).collect(),
        }
    }
}

impl Record {
    fn into_sequence(self) -> std::result::Result<SkeletonSequence, String> {
        if self.format_version != FORMAT_VERSION {
            return Err(format!("unsupported format_version {} (expected {FORMAT_VERSION})", self.format_version));
        }
        let labels = match (self.label, self.labels) {
            (Some(c), None) => Labels::Sequence(c),
            (None, Some(v)) => Labels::Frames(v),
            (Some(_), Some(_)) => return Err("both `label` and `labels` present".into()),
            (None, None) => return Err("missing `label` or `labels`".into()),
        };
        Ok(SkeletonSequence {
            frames: self.frames.into_iter().map(SkeletonFrame::new).collect(),
            labels,
            meta: SequenceMeta { subject: self.meta.subject, view: self.meta.view, dataset: self.meta.dataset },
        })
    }
}

/// Reads and validates every record. `joints` defaults to the first record's
/// joint count; `classes` bounds the labels when given. Diagnostics carry the
/// source name, line and record index.
pub fn read_dataset(
    reader: impl BufRead,
    source: &str,
    joints: Option<usize>,
    classes: Option<usize>,
) -> Result<Vec<SkeletonSequence>> {
    let mut out = Vec::new();
    let mut joints = joints;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| AppError::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = out.len();
        let fail = |msg: String| AppError::Data(format!("{source}:{}: record {record}: {msg}", lineno + 1));
        let parsed: Record = serde_json::from_str(&line).map_err(|e| fail(e.to_string()))?;
        let seq = parsed.into_sequence().map_err(fail)?;
        let k = *joints.get_or_insert_with(|| seq.frames.first().map_or(0, |f| f.joints.len()));
        seq.validate(k, classes).map_err(|e| fail(e.to_string()))?;
        out.push(seq);
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>, joints: Option<usize>, classes: Option<usize>) -> Result<Vec<SkeletonSequence>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| AppError::io(path, e))?;
    read_dataset(BufReader::new(file), &path.display().to_string(), joints, classes)
}

pub fn write_dataset(mut writer: impl Write, seqs: &[SkeletonSequence]) -> std::io::Result<()> {
    for seq in seqs {
        serde_json::to_writer(&mut writer, &Record::from(seq))?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn save_dataset(path: impl AsRef<Path>, seqs: &[SkeletonSequence]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| AppError::io(path, e))?;
    write_dataset(BufWriter::new(file), seqs).map_err(|e| AppError::io(path, e))
}

/// Joint count shared by every sequence, if the set is non-empty and uniform.
pub fn joint_count(seqs: &[SkeletonSequence]) -> Option<usize> {
    let k = seqs.first()?.frames.first()?.joints.len();
    seqs.iter().all(|s| s.frames.iter().all(|f| f.joints.len() == k)).then_some(k)
}

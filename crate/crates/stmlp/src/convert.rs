//! Adapters from external layouts to the native JSON-lines format.
//!
//! The CSV layout has one row per frame:
//!
//! ```text
//! sequence,frame,label,subject,view,x0,y0,z0,x1,y1,z1,...
//! ```
//!
//! Rows are grouped by `sequence` in order of first appearance and sorted by
//! `frame` within a group.

use std::collections::HashMap;
use std::io::Read;

use stmlp_core::data::{Labels, SequenceMeta, SkeletonFrame, SkeletonSequence};

use crate::error::{AppError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelMode {
    /// Keep one label per frame.
    Frame,
    /// Collapse to one label per sequence; every frame must agree.
    Sequence,
}

const FIXED: [&str; 5] = ["sequence", "frame", "label", "subject", "view"];

struct Group {
    meta: SequenceMeta,
    rows: Vec<(u64, usize, SkeletonFrame)>,
}

pub fn read_csv(reader: impl Read, source: &str, mode: LabelMode, dataset: &str) -> Result<Vec<SkeletonSequence>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| AppError::Data(format!("{source}: {e}")))?.clone();
    for (i, want) in FIXED.iter().enumerate() {
        if headers.get(i) != Some(*want) {
            return Err(AppError::Data(format!(
                "{source}: column {} must be `{want}`, found {:?}",
                i + 1,
                headers.get(i).unwrap_or("")
            )));
        }
    }
    let coords = headers.len() - FIXED.len();
    if coords == 0 || coords % 3 != 0 {
        return Err(AppError::Data(format!("{source}: {coords} coordinate columns is not a positive multiple of 3")));
    }
    for (j, name) in headers.iter().skip(FIXED.len()).enumerate() {
        let want = format!("{}{}", ["x", "y", "z"][j % 3], j / 3);
        if name != want {
            return Err(AppError::Data(format!("{source}: coordinate column `{name}` should be `{want}`")));
        }
    }

    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Group> = HashMap::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let fail = |msg: String| AppError::Data(format!("{source}:{line}: {msg}"));
        let row = row.map_err(|e| fail(e.to_string()))?;
        let field = |k: usize| row.get(k).unwrap_or("");
        let frame: u64 = field(1).parse().map_err(|_| fail(format!("frame {:?} is not an index", field(1))))?;
        let label: usize = field(2).parse().map_err(|_| fail(format!("label {:?} is not a class index", field(2))))?;
        let mut joints = Vec::with_capacity(coords / 3);
        for j in 0..coords / 3 {
            let mut p = [0.0; 3];
            for (c, v) in p.iter_mut().enumerate() {
                let raw = field(FIXED.len() + 3 * j + c);
                *v = raw
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| fail(format!("joint {j} coordinate {c}: {raw:?} is not a finite number")))?;
            }
            joints.push(p);
        }
        let key = field(0).to_string();
        let group = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            Group {
                meta: SequenceMeta { subject: field(3).into(), view: field(4).into(), dataset: dataset.into() },
                rows: Vec::new(),
            }
        });
        if group.meta.subject != field(3) || group.meta.view != field(4) {
            return Err(fail(format!("sequence {:?} changes subject or view", field(0))));
        }
        group.rows.push((frame, label, SkeletonFrame::new(joints)));
    }

    let mut out = Vec::with_capacity(order.len());
    for key in order {
        let mut g = groups.remove(&key).expect("grouped");
        g.rows.sort_by_key(|r| r.0);
        if let Some(w) = g.rows.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(AppError::Data(format!("{source}: sequence {key:?} repeats frame {}", w[0].0)));
        }
        let labels: Vec<usize> = g.rows.iter().map(|r| r.1).collect();
        let labels = match mode {
            LabelMode::Frame => Labels::Frames(labels),
            LabelMode::Sequence => {
                if labels.iter().any(|&l| l != labels[0]) {
                    return Err(AppError::Data(format!("{source}: sequence {key:?} has more than one label")));
                }
                Labels::Sequence(labels[0])
            }
        };
        out.push(SkeletonSequence { frames: g.rows.into_iter().map(|r| r.2).collect(), labels, meta: g.meta });
    }
    Ok(out)
}

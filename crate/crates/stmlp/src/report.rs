//! Evaluation reports.

use std::fmt::{self, Write as _};

use serde::Serialize;
use stmlp_core::metrics::ConfusionMatrix;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassRow {
    pub class: usize,
    pub support: u64,
    pub predicted: u64,
    pub recall: Option<f64>,
    pub jaccard: Option<f64>,
    pub f1: Option<f64>,
}

/// Metrics that are undefined for the given matrix are `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub samples: u64,
    pub mean_loss: Option<f64>,
    pub accuracy: Option<f64>,
    pub macro_jaccard: Option<f64>,
    pub macro_f1: Option<f64>,
    pub mean_per_class_accuracy: Option<f64>,
    pub per_class: Vec<ClassRow>,
    /// Rows are true classes, columns predictions.
    pub confusion: Vec<Vec<u64>>,
}

impl Report {
    pub fn new(cm: &ConfusionMatrix, mean_loss: Option<f64>) -> Self {
        let c = cm.classes();
        let per_class = (0..c)
            .map(|k| ClassRow {
                class: k,
                support: cm.support(k),
                predicted: (0..c).map(|t| cm.get(t, k)).sum(),
                recall: cm.recall(k),
                jaccard: cm.jaccard(k),
                f1: cm.f1(k),
            })
            .collect();
        Self {
            samples: cm.total(),
            mean_loss: mean_loss.filter(|_| cm.total() > 0),
            accuracy: cm.accuracy().ok(),
            macro_jaccard: cm.macro_jaccard().ok(),
            macro_f1: cm.macro_f1().ok(),
            mean_per_class_accuracy: cm.mean_per_class_accuracy().ok(),
            per_class,
            confusion: (0..c).map(|t| cm.row(t).to_vec()).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.6}"))
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{:.2}%", 100.0 * x))
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "samples                  {}", self.samples)?;
        if let Some(l) = self.mean_loss {
            writeln!(f, "mean loss                {l:.6}")?;
        }
        writeln!(f, "accuracy                 {}  ({})", opt(self.accuracy), pct(self.accuracy))?;
        writeln!(f, "macro jaccard            {}  ({})", opt(self.macro_jaccard), pct(self.macro_jaccard))?;
        writeln!(f, "macro f1                 {}  ({})", opt(self.macro_f1), pct(self.macro_f1))?;
        writeln!(
            f,
            "mean per-class accuracy  {}  ({})",
            opt(self.mean_per_class_accuracy),
            pct(self.mean_per_class_accuracy)
        )?;
        writeln!(f)?;
        writeln!(f, "{:>5} {:>8} {:>9} {:>10} {:>10} {:>10}", "class", "support", "predicted", "recall", "jaccard", "f1")?;
        for r in &self.per_class {
            writeln!(
                f,
                "{:>5} {:>8} {:>9} {:>10} {:>10} {:>10}",
                r.class,
                r.support,
                r.predicted,
                opt(r.recall),
                opt(r.jaccard),
                opt(r.f1)
            )?;
        }
        writeln!(f)?;
        let width = self.confusion.iter().flatten().map(|v| v.to_string().len()).max().unwrap_or(1).max(3);
        let mut head = String::from("true\\pred");
        for c in 0..self.confusion.len() {
            write!(head, " {c:>width$}")?;
        }
        writeln!(f, "{head}")?;
        for (t, row) in self.confusion.iter().enumerate() {
            write!(f, "{t:>9}")?;
            for v in row {
                write!(f, " {v:>width$}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

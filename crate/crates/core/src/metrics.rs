//! Confusion-matrix metrics: accuracy, macro Jaccard index, macro F1 and
//! mean per-class accuracy.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// How macro averages treat classes that never occur (no true item and no
/// prediction).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmptyClassPolicy {
    /// Leave them out of the mean.
    #[default]
    Exclude,
    /// Count them as zero.
    Zero,
}

/// `counts[true][pred]`
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { classes, counts: vec![0; classes * classes] }
    }

    pub fn from_pairs(classes: usize, truth: &[usize], pred: &[usize]) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::Input(format!("{} labels but {} predictions", truth.len(), pred.len())));
        }
        let mut cm = Self::new(classes);
        for (&t, &p) in truth.iter().zip(pred) {
            cm.accumulate(t, p)?;
        }
        Ok(cm)
    }

    #[inline]
    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn accumulate(&mut self, truth: usize, pred: usize) -> Result<()> {
        if truth >= self.classes || pred >= self.classes {
            return Err(Error::Input(format!(
                "class pair ({truth}, {pred}) out of range for {} classes",
                self.classes
            )));
        }
        self.counts[truth * self.classes + pred] += 1;
        Ok(())
    }

    /// Entrywise sum, for combining shards.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::Input(format!("cannot merge {} and {} classes", self.classes, other.classes)));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    #[inline]
    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.classes..(truth + 1) * self.classes]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn true_positives(&self, c: usize) -> u64 {
        self.get(c, c)
    }

    /// Predicted `c` but was something else.
    pub fn false_positives(&self, c: usize) -> u64 {
        (0..self.classes).filter(|&t| t != c).map(|t| self.get(t, c)).sum()
    }

    /// Was `c` but predicted something else.
    pub fn false_negatives(&self, c: usize) -> u64 {
        (0..self.classes).filter(|&p| p != c).map(|p| self.get(c, p)).sum()
    }

    pub fn support(&self, c: usize) -> u64 {
        self.row(c).iter().sum()
    }

    pub fn accuracy(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::UndefinedMetric("accuracy of an empty confusion matrix".into()));
        }
        let trace: u64 = (0..self.classes).map(|c| self.get(c, c)).sum();
        Ok(trace as f64 / total as f64)
    }

    pub fn jaccard(&self, c: usize) -> Option<f64> {
        let (tp, fp, fn_) = (self.true_positives(c), self.false_positives(c), self.false_negatives(c));
        let denom = tp + fp + fn_;
        (denom > 0).then(|| tp as f64 / denom as f64)
    }

    pub fn f1(&self, c: usize) -> Option<f64> {
        let (tp, fp, fn_) = (self.true_positives(c), self.false_positives(c), self.false_negatives(c));
        let denom = 2 * tp + fp + fn_;
        (denom > 0).then(|| 2.0 * tp as f64 / denom as f64)
    }

    /// `None` for classes with no true items.
    pub fn recall(&self, c: usize) -> Option<f64> {
        let support = self.support(c);
        (support > 0).then(|| self.get(c, c) as f64 / support as f64)
    }

    fn macro_mean(&self, per_class: impl Fn(usize) -> Option<f64>, policy: EmptyClassPolicy, what: &str) -> Result<f64> {
        if self.classes < 2 {
            return Err(Error::UndefinedMetric(format!("{what} needs at least 2 classes")));
        }
        let values: Vec<Option<f64>> = (0..self.classes).map(per_class).collect();
        if values.iter().all(Option::is_none) {
            return Err(Error::UndefinedMetric(format!("{what}: every class is empty")));
        }
        let kept: Vec<f64> = match policy {
            EmptyClassPolicy::Exclude => values.into_iter().flatten().collect(),
            EmptyClassPolicy::Zero => values.into_iter().map(|v| v.unwrap_or(0.0)).collect(),
        };
        Ok(kept.iter().sum::<f64>() / kept.len() as f64)
    }

    pub fn macro_jaccard(&self) -> Result<f64> {
        self.macro_jaccard_with(EmptyClassPolicy::Exclude)
    }

    pub fn macro_jaccard_with(&self, policy: EmptyClassPolicy) -> Result<f64> {
        self.macro_mean(|c| self.jaccard(c), policy, "macro Jaccard")
    }

    pub fn macro_f1(&self) -> Result<f64> {
        self.macro_f1_with(EmptyClassPolicy::Exclude)
    }

    pub fn macro_f1_with(&self, policy: EmptyClassPolicy) -> Result<f64> {
        self.macro_mean(|c| self.f1(c), policy, "macro F1")
    }

    /// Mean recall over classes that have at least one true item.
    pub fn mean_per_class_accuracy(&self) -> Result<f64> {
        let recalls: Vec<f64> = (0..self.classes).filter_map(|c| self.recall(c)).collect();
        if recalls.is_empty() {
            return Err(Error::UndefinedMetric("mean per-class accuracy: no class has items".into()));
        }
        Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_example() {
        let cm = ConfusionMatrix::from_pairs(2, &[0, 1, 1], &[0, 0, 1]).unwrap();
        assert!((cm.accuracy().unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(cm.jaccard(0), Some(0.5));
        assert_eq!(cm.jaccard(1), Some(0.5));
        assert_eq!(cm.macro_jaccard().unwrap(), 0.5);
        assert!((cm.f1(0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((cm.macro_f1().unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 2, 2, 1, 0];
        let cm = ConfusionMatrix::from_pairs(3, &y, &y).unwrap();
        assert_eq!(cm.accuracy().unwrap(), 1.0);
        assert_eq!(cm.macro_jaccard().unwrap(), 1.0);
        assert_eq!(cm.macro_f1().unwrap(), 1.0);
        assert_eq!(cm.mean_per_class_accuracy().unwrap(), 1.0);
    }

    #[test]
    fn mean_per_class_accuracy_two_recalls() {
        let cm = ConfusionMatrix::from_pairs(2, &[0, 0, 1, 1], &[0, 0, 1, 0]).unwrap();
        assert_eq!(cm.mean_per_class_accuracy().unwrap(), 0.75);
    }

    #[test]
    fn uniform_truth_makes_mpca_equal_accuracy() {
        // three items per class
        let truth = [0, 0, 0, 1, 1, 1, 2, 2, 2];
        let pred = [0, 1, 0, 1, 1, 2, 0, 0, 2];
        let cm = ConfusionMatrix::from_pairs(3, &truth, &pred).unwrap();
        assert!((cm.mean_per_class_accuracy().unwrap() - cm.accuracy().unwrap()).abs() < 1e-15);
    }

    #[test]
    fn empty_class_policies() {
        // class 2 never appears
        let cm = ConfusionMatrix::from_pairs(3, &[0, 1], &[0, 1]).unwrap();
        assert_eq!(cm.macro_f1().unwrap(), 1.0);
        assert!((cm.macro_f1_with(EmptyClassPolicy::Zero).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(cm.mean_per_class_accuracy().unwrap(), 1.0);
    }

    #[test]
    fn undefined_cases() {
        let cm = ConfusionMatrix::new(3);
        assert!(matches!(cm.accuracy(), Err(Error::UndefinedMetric(_))));
        assert!(matches!(cm.macro_f1(), Err(Error::UndefinedMetric(_))));
        assert!(matches!(cm.mean_per_class_accuracy(), Err(Error::UndefinedMetric(_))));
        let one = ConfusionMatrix::from_pairs(1, &[0], &[0]).unwrap();
        assert!(one.macro_jaccard().is_err());
        let mut cm = ConfusionMatrix::new(2);
        assert!(cm.accumulate(2, 0).is_err());
    }

    #[test]
    fn merge_adds_counts() {
        let mut a = ConfusionMatrix::from_pairs(2, &[0, 1], &[0, 0]).unwrap();
        let b = ConfusionMatrix::from_pairs(2, &[1], &[1]).unwrap();
        a.merge(&b).unwrap();
        assert_eq!(a, ConfusionMatrix::from_pairs(2, &[0, 1, 1], &[0, 0, 1]).unwrap());
        assert!(a.merge(&ConfusionMatrix::new(3)).is_err());
    }
}

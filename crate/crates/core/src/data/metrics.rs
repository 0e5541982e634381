use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Pixel counts of a binary prediction against a binary truth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub dice: f64,
}

impl MetricsReport {
    pub fn mean(reports: &[MetricsReport]) -> MetricsReport {
        let n = reports.len().max(1) as f64;
        let sum = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        MetricsReport {
            accuracy: sum(|r| r.accuracy),
            sensitivity: sum(|r| r.sensitivity),
            specificity: sum(|r| r.specificity),
            dice: sum(|r| r.dice),
        }
    }
}

/// Thresholds `pred` (≥ threshold is vessel) and counts against `truth`.
pub fn confusion(pred: &Tensor, truth: &Tensor, threshold: f64) -> Result<ConfusionCounts> {
    if pred.shape() != truth.shape() {
        return Err(Error::shape("confusion", pred.shape(), truth.shape()));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid("confusion", "threshold must be in (0, 1)"));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        let positive = p as f64 >= threshold;
        match (positive, t == 1.0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy, sensitivity, specificity and Dice. A ratio whose denominator is
/// zero has nothing to get wrong and reports 1.0.
pub fn metrics(c: &ConfusionCounts) -> MetricsReport {
    MetricsReport {
        accuracy: ratio(c.tp + c.tn, c.total()),
        sensitivity: ratio(c.tp, c.tp + c.fn_),
        specificity: ratio(c.tn, c.tn + c.fp),
        dice: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_example() {
        let m = metrics(&ConfusionCounts {
            tp: 8,
            fn_: 2,
            tn: 85,
            fp: 5,
        });
        assert!((m.accuracy - 0.93).abs() < 1e-12);
        assert!((m.sensitivity - 0.80).abs() < 1e-12);
        assert!((m.specificity - 85.0 / 90.0).abs() < 1e-12);
        assert!((m.dice - 16.0 / 23.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_inverted() {
        let t = Tensor::new([4], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let c = confusion(&t, &t, 0.5).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        let m = metrics(&c);
        assert_eq!([m.accuracy, m.sensitivity, m.specificity, m.dice], [1.0; 4]);
        let inv = t.map(|v| 1.0 - v);
        let c = confusion(&inv, &t, 0.5).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));
    }

    #[test]
    fn all_vessel_truth_uses_sentinel() {
        let truth = Tensor::ones([9]);
        let m = metrics(&confusion(&Tensor::full([9], 0.9), &truth, 0.5).unwrap());
        assert_eq!((m.sensitivity, m.specificity, m.dice), (1.0, 1.0, 1.0));
    }
}

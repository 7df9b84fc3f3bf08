//! Per-class confusion counts and the four macro-averaged criteria.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("class {class} out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },
    #[error("cannot compute metrics over zero samples")]
    ZeroSamples,
}

/// TP/FP/FN tallies per class. A correct decision for class `a` increments
/// TP(a); a wrong one increments FP(predicted) and FN(actual).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Confusion {
    pub tp: Vec<usize>,
    pub fp: Vec<usize>,
    pub fn_: Vec<usize>,
    pub n: usize,
}

impl Confusion {
    pub fn new(num_classes: usize) -> Self {
        Confusion { tp: vec![0; num_classes], fp: vec![0; num_classes], fn_: vec![0; num_classes], n: 0 }
    }

    pub fn num_classes(&self) -> usize {
        self.tp.len()
    }

    pub fn merge(&mut self, other: &Confusion) {
        assert_eq!(self.num_classes(), other.num_classes());
        for i in 0..self.tp.len() {
            self.tp[i] += other.tp[i];
            self.fp[i] += other.fp[i];
            self.fn_[i] += other.fn_[i];
        }
        self.n += other.n;
    }
}

pub fn update_confusion(
    confusion: &mut Confusion,
    predicted: usize,
    actual: usize,
) -> Result<(), MetricsError> {
    let c = confusion.num_classes();
    if predicted >= c {
        return Err(MetricsError::ClassOutOfRange { class: predicted, num_classes: c });
    }
    if actual >= c {
        return Err(MetricsError::ClassOutOfRange { class: actual, num_classes: c });
    }
    if predicted == actual {
        confusion.tp[predicted] += 1;
    } else {
        confusion.fp[predicted] += 1;
        confusion.fn_[actual] += 1;
    }
    confusion.n += 1;
    Ok(())
}

/// Accuracy plus macro-averaged precision, recall, and F-measure. Classes
/// with a zero denominator contribute zero to the average.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    pub avg_p: f64,
    pub avg_r: f64,
    pub avg_f: f64,
}

pub fn compute_metrics(confusion: &Confusion, n: usize) -> Result<Metrics, MetricsError> {
    if n == 0 {
        return Err(MetricsError::ZeroSamples);
    }
    let c = confusion.num_classes() as f64;
    let tp_total: usize = confusion.tp.iter().sum();
    let acc = tp_total as f64 / n as f64;
    let mut avg_p = 0.0;
    let mut avg_r = 0.0;
    for a in 0..confusion.num_classes() {
        let (tp, fp, fnn) = (confusion.tp[a] as f64, confusion.fp[a] as f64, confusion.fn_[a] as f64);
        if tp + fp > 0.0 {
            avg_p += tp / (tp + fp);
        }
        if tp + fnn > 0.0 {
            avg_r += tp / (tp + fnn);
        }
    }
    avg_p /= c;
    avg_r /= c;
    let avg_f = if avg_p + avg_r > 0.0 { 2.0 * avg_p * avg_r / (avg_p + avg_r) } else { 0.0 };
    Ok(Metrics { acc, avg_p, avg_r, avg_f })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn correct_decision_increments_tp_only() {
        let mut c = Confusion::new(4);
        update_confusion(&mut c, 2, 2).unwrap();
        assert_eq!(c.tp, vec![0, 0, 1, 0]);
        assert_eq!(c.fp, vec![0; 4]);
        assert_eq!(c.fn_, vec![0; 4]);
        assert_eq!(c.n, 1);
    }

    #[test]
    fn wrong_decision_increments_fp_and_fn() {
        let mut c = Confusion::new(4);
        update_confusion(&mut c, 1, 3).unwrap();
        assert_eq!(c.fp, vec![0, 1, 0, 0]);
        assert_eq!(c.fn_, vec![0, 0, 0, 1]);
        assert_eq!(c.tp, vec![0; 4]);
    }

    #[test]
    fn counting_identities_hold() {
        let mut c = Confusion::new(3);
        let pairs = [(0, 0), (1, 2), (2, 2), (0, 1), (1, 1), (2, 0), (0, 0)];
        for (p, a) in pairs {
            update_confusion(&mut c, p, a).unwrap();
        }
        let n = pairs.len();
        let tp: usize = c.tp.iter().sum();
        let fp: usize = c.fp.iter().sum();
        let fnn: usize = c.fn_.iter().sum();
        assert_eq!(tp + fp, n);
        assert_eq!(tp + fnn, n);
    }

    #[test]
    fn out_of_range_class_is_rejected() {
        let mut c = Confusion::new(2);
        assert!(matches!(
            update_confusion(&mut c, 2, 0),
            Err(MetricsError::ClassOutOfRange { class: 2, num_classes: 2 })
        ));
    }

    #[test]
    fn perfect_predictions_score_one() {
        let mut c = Confusion::new(2);
        for (p, a) in [(0, 0), (0, 0), (1, 1), (1, 1)] {
            update_confusion(&mut c, p, a).unwrap();
        }
        let m = compute_metrics(&c, 4).unwrap();
        assert_eq!(m.acc, 1.0);
        assert_eq!(m.avg_p, 1.0);
        assert_eq!(m.avg_r, 1.0);
        assert_eq!(m.avg_f, 1.0);
    }

    #[test]
    fn hand_computed_two_class_case() {
        // TP=[1,1], FP=[1,0], FN=[0,1] over N=3
        let c = Confusion { tp: vec![1, 1], fp: vec![1, 0], fn_: vec![0, 1], n: 3 };
        let m = compute_metrics(&c, 3).unwrap();
        assert!((m.acc - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.avg_p - 0.75).abs() < 1e-12);
        assert!((m.avg_r - 0.75).abs() < 1e-12);
        assert!((m.avg_f - 0.75).abs() < 1e-12);
    }

    #[test]
    fn constant_predictor_with_zero_denominators() {
        // all predictions class 0, true labels uniform over 3 classes
        let mut c = Confusion::new(3);
        for a in 0..3 {
            update_confusion(&mut c, 0, a).unwrap();
        }
        let m = compute_metrics(&c, 3).unwrap();
        assert!((m.acc - 1.0 / 3.0).abs() < 1e-12);
        assert!((m.avg_p - (1.0 / 3.0) / 3.0).abs() < 1e-12);
        assert!((m.avg_r - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_samples_is_an_error() {
        let c = Confusion::new(2);
        assert!(matches!(compute_metrics(&c, 0), Err(MetricsError::ZeroSamples)));
    }
}

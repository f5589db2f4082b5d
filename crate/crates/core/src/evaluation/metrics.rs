use serde::{Deserialize, Serialize};

use super::roc::{RocCurve, RocPoint};
use crate::error::{AstnError, Result};

/// Detection metrics at one operating threshold. Likelihood ratios are
/// `None` where their denominator vanishes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auc: f64,
    pub youden_j: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub lr_positive: Option<f64>,
    pub lr_negative: Option<f64>,
    pub accuracy: f64,
    pub threshold: f64,
}

impl MetricReport {
    /// Derives every rate-based metric from sensitivity and specificity.
    pub fn from_rates(auc: f64, sensitivity: f64, specificity: f64, accuracy: f64, threshold: f64) -> Self {
        MetricReport {
            auc,
            youden_j: sensitivity + specificity - 1.0,
            sensitivity,
            specificity,
            fpr: 1.0 - specificity,
            fnr: 1.0 - sensitivity,
            lr_positive: (specificity < 1.0).then(|| sensitivity / (1.0 - specificity)),
            lr_negative: (specificity > 0.0).then(|| (1.0 - sensitivity) / specificity),
            accuracy,
            threshold,
        }
    }

    fn at_point(roc: &RocCurve, p: &RocPoint) -> Self {
        let n = (roc.positives + roc.negatives) as f64;
        let tn = roc.negatives - p.false_positives;
        let accuracy = (p.true_positives + tn) as f64 / n;
        Self::from_rates(roc.auc, p.tpr, 1.0 - p.fpr, accuracy, p.threshold)
    }

    /// Checks the defining identities between the fields.
    pub fn check_identities(&self, tol: f64) -> Result<()> {
        let close = |a: f64, b: f64| (a - b).abs() <= tol;
        let mut bad = Vec::new();
        if !close(self.fpr, 1.0 - self.specificity) {
            bad.push("fpr != 1 - specificity");
        }
        if !close(self.fnr, 1.0 - self.sensitivity) {
            bad.push("fnr != 1 - sensitivity");
        }
        if !close(self.youden_j, self.sensitivity + self.specificity - 1.0) {
            bad.push("youden_j != sensitivity + specificity - 1");
        }
        match self.lr_positive {
            Some(v) if !close(v, self.sensitivity / (1.0 - self.specificity)) => bad.push("lr_positive"),
            None if self.specificity < 1.0 => bad.push("lr_positive missing"),
            _ => {}
        }
        match self.lr_negative {
            Some(v) if !close(v, (1.0 - self.sensitivity) / self.specificity) => bad.push("lr_negative"),
            None if self.specificity > 0.0 => bad.push("lr_negative missing"),
            _ => {}
        }
        if !(0.0..=1.0).contains(&self.auc) || !(0.0..=1.0).contains(&self.accuracy) {
            bad.push("auc or accuracy outside [0,1]");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(AstnError::Metric(format!("inconsistent report: {}", bad.join(", "))))
        }
    }
}

/// Operating point maximizing `J = sensitivity + specificity − 1`; ties go
/// to higher sensitivity, then to the lower threshold.
pub fn youden_threshold(roc: &RocCurve) -> MetricReport {
    let mut best = &roc.points[0];
    for p in &roc.points[1..] {
        let (jp, jb) = (p.tpr - p.fpr, best.tpr - best.fpr);
        let better = jp > jb || (jp == jb && (p.tpr > best.tpr || (p.tpr == best.tpr && p.threshold < best.threshold)));
        if better {
            best = p;
        }
    }
    MetricReport::at_point(roc, best)
}

#[cfg(test)]
mod tests {
    use super::super::roc::roc_auc;
    use super::*;

    #[test]
    fn perfect_classifier() {
        let roc = roc_auc(&[0.9, 0.7, 0.3, 0.2], &[1, 1, 0, 0]).unwrap();
        let r = youden_threshold(&roc);
        assert_eq!(r.youden_j, 1.0);
        assert_eq!(r.threshold, 0.7);
        assert_eq!(r.accuracy, 1.0);
        r.check_identities(1e-12).unwrap();
    }

    #[test]
    fn constant_scores() {
        let roc = roc_auc(&[0.4; 5], &[1, 0, 0, 1, 0]).unwrap();
        let r = youden_threshold(&roc);
        assert_eq!(r.youden_j, 0.0);
        assert_eq!(r.sensitivity, 1.0);
        assert_eq!(r.lr_positive, Some(1.0));
        assert_eq!(r.lr_negative, None);
        r.check_identities(1e-12).unwrap();
    }

    #[test]
    fn broken_report_detected() {
        let mut r = MetricReport::from_rates(0.8, 0.7, 0.6, 0.65, 0.5);
        r.fpr = 0.1;
        assert!(r.check_identities(1e-12).is_err());
    }
}

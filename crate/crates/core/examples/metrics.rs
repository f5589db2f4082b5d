//! ROC analysis on hand-made scores, and the derived operating-point
//! metrics for a given sensitivity and specificity.

use astnlab::evaluation::{roc_auc, youden_threshold, MetricReport};

fn main() -> astnlab::Result<()> {
    let scores = [0.95, 0.9, 0.8, 0.8, 0.7, 0.6, 0.55, 0.4, 0.3, 0.2, 0.1, 0.05];
    let labels = [1, 1, 1, 0, 1, 0, 1, 0, 0, 1, 0, 0];
    let roc = roc_auc(&scores, &labels)?;
    println!("auc {:.4} over {} ROC points", roc.auc, roc.points.len());
    for p in &roc.points {
        println!("  threshold {:>5}  fpr {:.3}  tpr {:.3}", format!("{:.2}", p.threshold), p.fpr, p.tpr);
    }
    let best = youden_threshold(&roc);
    println!(
        "Youden-optimal threshold {:.2}: J {:.3}, sensitivity {:.3}, specificity {:.3}",
        best.threshold, best.youden_j, best.sensitivity, best.specificity
    );

    let r = MetricReport::from_rates(f64::NAN, 0.834, 0.729, f64::NAN, 0.5);
    println!(
        "sensitivity 0.834, specificity 0.729 -> J {:.2}, LR+ {:.2}, LR- {:.2}",
        r.youden_j,
        r.lr_positive.unwrap(),
        r.lr_negative.unwrap()
    );
    Ok(())
}

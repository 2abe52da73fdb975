use crate::error::{Error, Result};

/// Unweighted mean of per-class F1 over `num_classes` classes.
///
/// A class that appears in neither `predictions` nor `golds` counts as F1 = 0.
pub fn macro_f1(predictions: &[usize], golds: &[usize], num_classes: usize) -> Result<f64> {
    if predictions.len() != golds.len() {
        return Err(Error::input(format!(
            "{} predictions for {} gold labels",
            predictions.len(),
            golds.len()
        )));
    }
    if golds.is_empty() || num_classes == 0 {
        return Err(Error::input("macro-F1 of an empty label set"));
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fneg = vec![0usize; num_classes];
    for (&p, &g) in predictions.iter().zip(golds) {
        if p >= num_classes || g >= num_classes {
            return Err(Error::input(format!("class index out of range: {p} / {g}")));
        }
        if p == g {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fneg[g] += 1;
        }
    }
    let mut total = 0.0;
    for c in 0..num_classes {
        if tp[c] + fp[c] + fneg[c] == 0 {
            log::warn!("class {c} absent from predictions and gold labels; F1 taken as 0");
            continue;
        }
        let precision = ratio(tp[c], tp[c] + fp[c]);
        let recall = ratio(tp[c], tp[c] + fneg[c]);
        if precision + recall > 0.0 {
            total += 2.0 * precision * recall / (precision + recall);
        }
    }
    Ok(total / num_classes as f64)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

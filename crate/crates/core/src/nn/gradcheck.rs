//! Central finite-difference gradient checking.

use super::{Batch, DenseGrads, DenseNet};
use crate::error::{Error, Result};

/// `|a - b| / max(1e-8, |a| + |b|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Largest relative error between `analytic` and central differences of the
/// batch loss with step `h`, over every parameter of `net`.
pub fn finite_difference_error(net: &DenseNet, batch: &Batch, analytic: &DenseGrads, h: f64) -> Result<f64> {
    if h.is_nan() || h <= 0.0 {
        return Err(Error::input(format!("step size must be positive, got {h}")));
    }
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for (tensor, grads) in analytic.slices().iter().enumerate() {
        for (k, &g) in grads.iter().enumerate() {
            let orig = probe.slices()[tensor][k];
            probe.slices_mut()[tensor][k] = orig + h;
            let plus = probe.loss(batch)?;
            probe.slices_mut()[tensor][k] = orig - h;
            let minus = probe.loss(batch)?;
            probe.slices_mut()[tensor][k] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(relative_error(g, numeric));
        }
    }
    Ok(worst)
}

/// Max relative error of [`DenseNet::loss_and_grad`] against central differences.
pub fn grad_check(net: &DenseNet, batch: &Batch, h: f64) -> Result<f64> {
    let (_, grads) = net.loss_and_grad(batch)?;
    finite_difference_error(net, batch, &grads, h)
}

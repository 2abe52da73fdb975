//! Axis-aligned Gaussian mixture generator.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{apportion, Dataset, Sample};
use crate::error::{Error, Result};
use crate::rng;

/// Class `c` is centred at `separation * e_c`; samples add `N(0, noise² I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub classes: usize,
    /// With `class_weights`, `classes * samples_per_class` samples are
    /// distributed by weight instead.
    pub samples_per_class: usize,
    pub feature_dim: usize,
    pub separation: f64,
    pub noise: f64,
    pub seed: u64,
    pub class_weights: Option<Vec<f64>>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 3,
            samples_per_class: 100,
            feature_dim: 8,
            separation: 3.0,
            noise: 1.0,
            seed: 0,
            class_weights: None,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::config("synthetic data needs at least 2 classes"));
        }
        if self.feature_dim < self.classes {
            return Err(Error::config(format!(
                "feature_dim {} must be >= classes {} for axis-aligned means",
                self.feature_dim, self.classes
            )));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return Err(Error::config("separation must be positive"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::config("noise must be nonnegative"));
        }
        if let Some(w) = &self.class_weights {
            if w.len() != self.classes || w.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return Err(Error::config("class_weights must hold one positive weight per class"));
            }
        }
        Ok(())
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        match &self.class_weights {
            Some(w) => apportion(self.classes * self.samples_per_class, w),
            None => vec![self.samples_per_class; self.classes],
        }
    }
}

/// Generates an unsplit dataset with ids `0..n` in class order.
pub fn synth_generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let normal = Normal::new(0.0, spec.noise).map_err(|e| Error::config(e.to_string()))?;
    let mut r = rng::stream(spec.seed, &[]);
    let mut samples = Vec::new();
    let mut id = 0u64;
    for (class, n) in spec.class_sizes().into_iter().enumerate() {
        for _ in 0..n {
            let features = (0..spec.feature_dim)
                .map(|j| {
                    let mean = if j == class { spec.separation } else { 0.0 };
                    mean + normal.sample(&mut r)
                })
                .collect();
            samples.push(Sample::new(id, features, class, None));
            id += 1;
        }
    }
    Dataset::new(samples, Some(spec.classes))
}

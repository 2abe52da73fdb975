//! Epistemic neural network: a base classifier plus an epinet.
//!
//! `f(x, z) = base(x) + prior_scale * prior(sg[r(x)], z) + learnable(sg[r(x)], z)`
//!
//! where `r(x)` is the base network's hidden activation and `z ~ N(0, I)` is
//! the epistemic index. Both epinet MLPs read `concat(r(x), z)`, emit a
//! `C * d_z` vector that is viewed as a `C x d_z` matrix and contracted with
//! `z`, so `z = 0` always reproduces the base logits. The prior network is
//! frozen at construction; only the base and learnable parameters train, and
//! no gradient flows from the epinet back into the base features.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{cross_entropy, softmax, Activation, Batch, DenseGrads, DenseNet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpinetConfig {
    pub index_dim: usize,
    pub hidden_dim: usize,
    pub prior_scale: f64,
}

impl Default for EpinetConfig {
    fn default() -> Self {
        Self {
            index_dim: 8,
            hidden_dim: 15,
            prior_scale: 1.0,
        }
    }
}

/// A draw of the epistemic index.
#[derive(Debug, Clone, PartialEq)]
pub struct EpistemicIndex(pub Vec<f64>);

impl EpistemicIndex {
    pub fn sample<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        Self((0..dim).map(|_| rng.sample(StandardNormal)).collect())
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Anything that yields class probabilities conditioned on an epistemic index.
pub trait EpistemicModel {
    fn index_dim(&self) -> usize;

    fn class_probs(&self, x: &[f64], z: &EpistemicIndex) -> Result<Vec<f64>>;

    /// Probabilities for several indices at once; implementors can share work
    /// that does not depend on `z`.
    fn class_probs_batch(&self, x: &[f64], zs: &[EpistemicIndex]) -> Result<Vec<Vec<f64>>> {
        zs.iter().map(|z| self.class_probs(x, z)).collect()
    }
}

/// Draws `k` indices and returns the class distribution under each.
pub fn sample_predictions<M, R>(model: &M, x: &[f64], k: usize, rng: &mut R) -> Result<Vec<Vec<f64>>>
where
    M: EpistemicModel + ?Sized,
    R: Rng + ?Sized,
{
    let zs: Vec<_> = (0..k).map(|_| EpistemicIndex::sample(model.index_dim(), rng)).collect();
    model.class_probs_batch(x, &zs)
}

/// Elementwise mean of equally long probability vectors.
pub fn mean_distribution(samples: &[Vec<f64>]) -> Vec<f64> {
    let c = samples[0].len();
    let mut mean = vec![0.0; c];
    for p in samples {
        for (m, &v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    let k = samples.len() as f64;
    mean.iter_mut().for_each(|m| *m /= k);
    mean
}

/// Monte Carlo estimate of the marginal predictive `∫ p(c | x, z) P(dz)`.
pub fn predictive_mean<M, R>(model: &M, x: &[f64], k: usize, rng: &mut R) -> Result<Vec<f64>>
where
    M: EpistemicModel + ?Sized,
    R: Rng + ?Sized,
{
    if k == 0 {
        return Err(Error::input("predictive mean needs at least one index draw"));
    }
    Ok(mean_distribution(&sample_predictions(model, x, k, rng)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpinetModel {
    base: DenseNet,
    prior: DenseNet,
    learnable: DenseNet,
    index_dim: usize,
    prior_scale: f64,
}

/// Gradients of the ENN loss with respect to the trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EnnGrads {
    pub base: DenseGrads,
    pub learnable: DenseGrads,
}

impl EnnGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = self.base.slices().to_vec();
        v.extend(self.learnable.slices());
        v
    }
}

impl EpinetModel {
    /// Wraps `base` with a Glorot-initialized prior and learnable epinet.
    pub fn new<R: Rng + ?Sized>(base: DenseNet, config: &EpinetConfig, rng: &mut R) -> Result<Self> {
        validate(config)?;
        let input = base.hidden_dim() + config.index_dim;
        let out = base.output_dim() * config.index_dim;
        let prior = DenseNet::new(input, config.hidden_dim, out, Activation::Relu, rng)?;
        let learnable = DenseNet::new(input, config.hidden_dim, out, Activation::Relu, rng)?;
        Ok(Self {
            base,
            prior,
            learnable,
            index_dim: config.index_dim,
            prior_scale: config.prior_scale,
        })
    }

    /// Assembles a model from explicit parts, checking that shapes agree.
    pub fn from_parts(
        base: DenseNet,
        prior: DenseNet,
        learnable: DenseNet,
        index_dim: usize,
        prior_scale: f64,
    ) -> Result<Self> {
        if index_dim == 0 {
            return Err(Error::config("index dimension must be at least 1"));
        }
        if !(prior_scale >= 0.0 && prior_scale.is_finite()) {
            return Err(Error::config(format!(
                "prior scale must be finite and >= 0, got {prior_scale}"
            )));
        }
        let input = base.hidden_dim() + index_dim;
        let out = base.output_dim() * index_dim;
        for (name, net) in [("prior", &prior), ("learnable", &learnable)] {
            if net.input_dim() != input || net.output_dim() != out {
                return Err(Error::config(format!(
                    "{name} epinet is {}->{}, expected {input}->{out}",
                    net.input_dim(),
                    net.output_dim()
                )));
            }
        }
        Ok(Self {
            base,
            prior,
            learnable,
            index_dim,
            prior_scale,
        })
    }

    pub fn base(&self) -> &DenseNet {
        &self.base
    }

    pub fn prior(&self) -> &DenseNet {
        &self.prior
    }

    pub fn learnable(&self) -> &DenseNet {
        &self.learnable
    }

    pub fn learnable_mut(&mut self) -> &mut DenseNet {
        &mut self.learnable
    }

    pub fn prior_scale(&self) -> f64 {
        self.prior_scale
    }

    pub fn num_classes(&self) -> usize {
        self.base.output_dim()
    }

    /// Base and learnable parameters, in the order of [`EnnGrads::slices`].
    pub fn trainable_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::with_capacity(8);
        v.extend(self.base.slices_mut());
        v.extend(self.learnable.slices_mut());
        v
    }

    pub fn trainable_shapes(&self) -> Vec<usize> {
        self.base
            .slices()
            .iter()
            .chain(self.learnable.slices().iter())
            .map(|s| s.len())
            .collect()
    }

    /// ENN logits at index `z`.
    pub fn enn_forward(&self, x: &[f64], z: &EpistemicIndex) -> Result<Vec<f64>> {
        self.check_index(z)?;
        let (logits, features) = self.base.forward(x)?;
        self.add_epinet(logits, &features, z)
    }

    fn add_epinet(&self, mut logits: Vec<f64>, features: &[f64], z: &EpistemicIndex) -> Result<Vec<f64>> {
        let input = epinet_input(features, z);
        let (learn_out, _) = self.learnable.forward(&input)?;
        contract_into(&mut logits, &learn_out, z.as_slice(), 1.0);
        if self.prior_scale != 0.0 {
            let (prior_out, _) = self.prior.forward(&input)?;
            contract_into(&mut logits, &prior_out, z.as_slice(), self.prior_scale);
        }
        Ok(logits)
    }

    fn check_index(&self, z: &EpistemicIndex) -> Result<()> {
        if z.len() != self.index_dim {
            return Err(Error::input(format!(
                "epistemic index has length {}, model expects {}",
                z.len(),
                self.index_dim
            )));
        }
        Ok(())
    }

    /// Mean cross-entropy over the batch and over `indices`, with gradients for
    /// the base and learnable parameters.
    pub fn loss_and_grad(&self, batch: &Batch, indices: &[EpistemicIndex]) -> Result<(f64, EnnGrads)> {
        if batch.is_empty() {
            return Err(Error::input("empty batch"));
        }
        if indices.is_empty() {
            return Err(Error::input("ENN loss needs at least one index draw"));
        }
        for z in indices {
            self.check_index(z)?;
        }
        let c = self.num_classes();
        if let Some(&bad) = batch.labels().iter().find(|&&y| y >= c) {
            return Err(Error::input(format!("label {bad} out of range for {c} classes")));
        }
        let scale = 1.0 / (batch.len() * indices.len()) as f64;
        let mut grads = EnnGrads {
            base: self.base.zero_grads(),
            learnable: self.learnable.zero_grads(),
        };
        let mut total = 0.0;
        let mut dlearn = vec![0.0; c * self.index_dim];
        for (x, &y) in batch.features().row_iter().zip(batch.labels()) {
            let base_trace = self.base.trace(x)?;
            let mut dbase = vec![0.0; c];
            for z in indices {
                let input = epinet_input(&base_trace.features, z);
                let learn_trace = self.learnable.trace(&input)?;
                let mut logits = base_trace.logits.clone();
                contract_into(&mut logits, &learn_trace.logits, z.as_slice(), 1.0);
                if self.prior_scale != 0.0 {
                    let (prior_out, _) = self.prior.forward(&input)?;
                    contract_into(&mut logits, &prior_out, z.as_slice(), self.prior_scale);
                }
                total += cross_entropy(&logits, y);
                let mut d = softmax(&logits);
                d[y] -= 1.0;
                d.iter_mut().for_each(|v| *v *= scale);
                for (acc, &v) in dbase.iter_mut().zip(&d) {
                    *acc += v;
                }
                for (ci, &dc) in d.iter().enumerate() {
                    for (k, &zk) in z.as_slice().iter().enumerate() {
                        dlearn[ci * self.index_dim + k] = dc * zk;
                    }
                }
                self.learnable
                    .backward(&input, &learn_trace, &dlearn, &mut grads.learnable);
            }
            self.base.backward(x, &base_trace, &dbase, &mut grads.base);
        }
        Ok((total * scale, grads))
    }
}

impl EpistemicModel for EpinetModel {
    fn index_dim(&self) -> usize {
        self.index_dim
    }

    fn class_probs(&self, x: &[f64], z: &EpistemicIndex) -> Result<Vec<f64>> {
        Ok(softmax(&self.enn_forward(x, z)?))
    }

    fn class_probs_batch(&self, x: &[f64], zs: &[EpistemicIndex]) -> Result<Vec<Vec<f64>>> {
        let (logits, features) = self.base.forward(x)?;
        zs.iter()
            .map(|z| {
                self.check_index(z)?;
                Ok(softmax(&self.add_epinet(logits.clone(), &features, z)?))
            })
            .collect()
    }
}

fn validate(config: &EpinetConfig) -> Result<()> {
    if config.index_dim == 0 || config.hidden_dim == 0 {
        return Err(Error::config(format!(
            "epinet index_dim and hidden_dim must be >= 1, got {} and {}",
            config.index_dim, config.hidden_dim
        )));
    }
    if !(config.prior_scale >= 0.0 && config.prior_scale.is_finite()) {
        return Err(Error::config(format!(
            "prior scale must be finite and >= 0, got {}",
            config.prior_scale
        )));
    }
    Ok(())
}

fn epinet_input(features: &[f64], z: &EpistemicIndex) -> Vec<f64> {
    let mut v = Vec::with_capacity(features.len() + z.len());
    v.extend_from_slice(features);
    v.extend_from_slice(z.as_slice());
    v
}

/// `logits[c] += scale * Σ_k out[c * d_z + k] * z[k]`
fn contract_into(logits: &mut [f64], out: &[f64], z: &[f64], scale: f64) {
    let dz = z.len();
    for (c, l) in logits.iter_mut().enumerate() {
        let row = &out[c * dz..(c + 1) * dz];
        let dot: f64 = row.iter().zip(z).map(|(a, b)| a * b).sum();
        *l += scale * dot;
    }
}

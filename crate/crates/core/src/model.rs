//! The classifier being fine-tuned: a plain dense net or an ENN.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::epinet::{predictive_mean, EpinetConfig, EpinetModel, EpistemicIndex, EpistemicModel};
use crate::error::Result;
use crate::nn::{softmax, Activation, AdamConfig, AdamState, Batch, DenseNet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    #[default]
    Vanilla,
    Enn,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    Vanilla(DenseNet),
    Enn(EpinetModel),
}

impl Classifier {
    #[allow(clippy::too_many_arguments)]
    pub fn build<R: Rng + ?Sized>(
        architecture: Architecture,
        input_dim: usize,
        hidden_dim: usize,
        num_classes: usize,
        activation: Activation,
        epinet: &EpinetConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let base = DenseNet::new(input_dim, hidden_dim, num_classes, activation, rng)?;
        Ok(match architecture {
            Architecture::Vanilla => Classifier::Vanilla(base),
            Architecture::Enn => Classifier::Enn(EpinetModel::new(base, epinet, rng)?),
        })
    }

    pub fn base(&self) -> &DenseNet {
        match self {
            Classifier::Vanilla(net) => net,
            Classifier::Enn(enn) => enn.base(),
        }
    }

    pub fn as_enn(&self) -> Option<&EpinetModel> {
        match self {
            Classifier::Enn(enn) => Some(enn),
            Classifier::Vanilla(_) => None,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.base().output_dim()
    }

    /// Final hidden activation of the base network.
    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.base().features(x)
    }

    /// Class distribution used for prediction and entropy: softmax of the
    /// logits for a plain net, the `draws`-sample predictive mean for an ENN.
    pub fn predictive_probs<R: Rng + ?Sized>(&self, x: &[f64], draws: usize, rng: &mut R) -> Result<Vec<f64>> {
        match self {
            Classifier::Vanilla(net) => Ok(softmax(&net.forward(x)?.0)),
            Classifier::Enn(enn) => predictive_mean(enn, x, draws, rng),
        }
    }

    pub fn predict<R: Rng + ?Sized>(&self, x: &[f64], draws: usize, rng: &mut R) -> Result<usize> {
        let p = self.predictive_probs(x, draws, rng)?;
        Ok(argmax(&p))
    }

    pub fn optimizer(&self, config: AdamConfig) -> AdamState {
        let shapes: Vec<usize> = match self {
            Classifier::Vanilla(net) => net.slices().iter().map(|s| s.len()).collect(),
            Classifier::Enn(enn) => enn.trainable_shapes(),
        };
        AdamState::new(&shapes, config)
    }

    /// One Adam step on `batch`; ENNs average the loss over `train_draws`
    /// fresh indices. Returns the pre-update loss.
    pub fn train_step<R: Rng + ?Sized>(
        &mut self,
        adam: &mut AdamState,
        batch: &Batch,
        train_draws: usize,
        rng: &mut R,
    ) -> Result<f64> {
        match self {
            Classifier::Vanilla(net) => {
                let (loss, grads) = net.loss_and_grad(batch)?;
                adam.step(&mut net.slices_mut(), &grads.slices())?;
                Ok(loss)
            }
            Classifier::Enn(enn) => {
                let zs: Vec<_> = (0..train_draws)
                    .map(|_| EpistemicIndex::sample(enn.index_dim(), rng))
                    .collect();
                let (loss, grads) = enn.loss_and_grad(batch, &zs)?;
                adam.step(&mut enn.trainable_slices_mut(), &grads.slices())?;
                Ok(loss)
            }
        }
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

use serde::{Deserialize, Serialize};

use crate::acquisition::AcquisitionKind;
use crate::clustering::ClusterMode;
use crate::epinet::EpinetConfig;
use crate::error::{Error, Result};
use crate::model::Architecture;
use crate::nn::Activation;
use crate::scheduler::{SchedulerKind, SchedulerSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Start {
    #[default]
    Cold,
    /// Epoch 1 annotates a uniformly random half of the pool.
    Warm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// The annotated pool only grows.
    #[default]
    Accumulating,
    /// The annotated pool is rebuilt from the full training pool every epoch.
    Recalculating,
}

/// Everything that defines one fine-tuning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub architecture: Architecture,
    pub start: Start,
    pub sampling: Sampling,
    pub acquisition: AcquisitionKind,
    pub clustering: ClusterMode,
    pub scheduler: SchedulerKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Index draws per sample when scoring (entropy on an ENN, BALD, variance).
    pub acquisition_draws: usize,
    /// Index draws per minibatch when training an ENN.
    pub train_draws: usize,
    /// Index draws per sample when an ENN predicts for evaluation.
    pub eval_draws: usize,
    /// Cluster count; defaults to three per class.
    pub clusters: Option<usize>,
    pub hidden_dim: usize,
    pub activation: Activation,
    pub epinet: EpinetConfig,
    /// Kept for parity with text-model setups; feature vectors are not truncated.
    pub max_text_length: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Vanilla,
            start: Start::Cold,
            sampling: Sampling::Accumulating,
            acquisition: AcquisitionKind::None,
            clustering: ClusterMode::None,
            scheduler: SchedulerKind::Base,
            epochs: 5,
            batch_size: 32,
            learning_rate: 5e-5,
            seed: 0,
            acquisition_draws: 32,
            train_draws: 8,
            eval_draws: 32,
            clusters: None,
            hidden_dim: 32,
            activation: Activation::Relu,
            epinet: EpinetConfig::default(),
            max_text_length: 64,
        }
    }
}

impl RunConfig {
    pub fn scheduler_spec(&self) -> SchedulerSpec {
        SchedulerSpec::new(self.scheduler)
    }

    pub fn cluster_count(&self, num_classes: usize) -> usize {
        self.clusters.unwrap_or(3 * num_classes)
    }
}

/// Accepted configuration plus any advisory notes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Validation {
    pub warnings: Vec<String>,
}

/// Checks a configuration against the supported combinations of
/// architecture, acquisition function, clustering and scheduler.
///
/// Rejected:
/// - bald/variance with the vanilla architecture (need an epistemic index);
/// - furthest-batch with prob, linear-prob or dif-build schedulers;
/// - furthest-batch without clustering;
/// - dif-build schedulers without clustering.
///
/// Accepted with a warning: init clustering with linear schedulers, and
/// furthest-batch with dynamic clustering.
pub fn validate_config(config: &RunConfig) -> Result<Validation> {
    let acq = config.acquisition;
    let sched = config.scheduler;
    if acq.is_epistemic() && config.architecture == crate::model::Architecture::Vanilla {
        return Err(Error::config(format!(
            "{acq:?} acquisition with vanilla architecture: epistemic acquisition functions need the ENN architecture \
             (architecture x acquisition table, base-model rows)"
        )));
    }
    if acq == AcquisitionKind::FurthestBatch && sched.is_probabilistic() {
        return Err(Error::config(format!(
            "furthest_batch acquisition with {sched:?} scheduler: furthest-batch only works with the base and linear schedulers \
             (scheduler x acquisition table)"
        )));
    }
    if acq == AcquisitionKind::FurthestBatch && config.clustering == ClusterMode::None {
        return Err(Error::config(
            "furthest_batch acquisition without clustering: distances are measured to cluster medoids",
        ));
    }
    if sched.is_dif_build() && config.clustering == ClusterMode::None {
        return Err(Error::config(format!(
            "{sched:?} scheduler without clustering: dif-build thresholds are computed per cluster \
             (clustering x scheduler table, dif-build row)"
        )));
    }

    let positive = [
        ("epochs", config.epochs),
        ("batch_size", config.batch_size),
        ("hidden_dim", config.hidden_dim),
        ("train_draws", config.train_draws),
        ("eval_draws", config.eval_draws),
    ];
    for (name, v) in positive {
        if v == 0 {
            return Err(Error::config(format!("{name} must be at least 1")));
        }
    }
    if config.acquisition_draws < 2 {
        return Err(Error::config("acquisition_draws must be at least 2"));
    }
    if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
        return Err(Error::config("learning_rate must be positive and finite"));
    }
    if config.clusters == Some(0) {
        return Err(Error::config("clusters must be at least 1"));
    }
    if config.epinet.index_dim == 0 || config.epinet.hidden_dim == 0 {
        return Err(Error::config("epinet index_dim and hidden_dim must be at least 1"));
    }
    if !(config.epinet.prior_scale >= 0.0 && config.epinet.prior_scale.is_finite()) {
        return Err(Error::config("epinet prior_scale must be finite and nonnegative"));
    }

    let mut warnings = Vec::new();
    if config.clustering == ClusterMode::Init && sched.is_linear() {
        warnings.push("init clustering with a linear scheduler offers nothing over dynamic clustering".to_string());
    }
    if acq == AcquisitionKind::FurthestBatch && config.clustering == ClusterMode::Dynamic {
        warnings.push("furthest_batch with dynamic clustering offers nothing over init clustering".to_string());
    }
    if acq == AcquisitionKind::None && config.clustering != ClusterMode::None {
        warnings.push("clustering is ignored when no acquisition function is configured".to_string());
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(Validation { warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(arch: Architecture, acq: AcquisitionKind, clustering: ClusterMode, sched: SchedulerKind) -> RunConfig {
        RunConfig {
            architecture: arch,
            acquisition: acq,
            clustering,
            scheduler: sched,
            ..RunConfig::default()
        }
    }

    #[test]
    fn vanilla_bald_rejected() {
        let c = cfg(
            Architecture::Vanilla,
            AcquisitionKind::Bald,
            ClusterMode::None,
            SchedulerKind::Base,
        );
        assert!(matches!(validate_config(&c), Err(Error::Config(_))));
    }

    #[test]
    fn furthest_with_prob_rejected() {
        let c = cfg(
            Architecture::Enn,
            AcquisitionKind::FurthestBatch,
            ClusterMode::Init,
            SchedulerKind::Prob,
        );
        assert!(validate_config(&c).is_err());
    }

    #[test]
    fn enn_entropy_dynamic_linear_accepted() {
        let c = cfg(
            Architecture::Enn,
            AcquisitionKind::Entropy,
            ClusterMode::Dynamic,
            SchedulerKind::Linear,
        );
        assert!(validate_config(&c).unwrap().warnings.is_empty());
    }

    #[test]
    fn redundant_combinations_warn() {
        let c = cfg(
            Architecture::Enn,
            AcquisitionKind::Entropy,
            ClusterMode::Init,
            SchedulerKind::Linear,
        );
        assert_eq!(validate_config(&c).unwrap().warnings.len(), 1);
        let c = cfg(
            Architecture::Vanilla,
            AcquisitionKind::FurthestBatch,
            ClusterMode::Dynamic,
            SchedulerKind::Base,
        );
        assert_eq!(validate_config(&c).unwrap().warnings.len(), 1);
    }

    #[test]
    fn numeric_fields_checked() {
        for bad in [
            RunConfig {
                epochs: 0,
                ..RunConfig::default()
            },
            RunConfig {
                learning_rate: -1.0,
                ..RunConfig::default()
            },
            RunConfig {
                acquisition_draws: 1,
                ..RunConfig::default()
            },
            RunConfig {
                clusters: Some(0),
                ..RunConfig::default()
            },
        ] {
            assert!(validate_config(&bad).is_err());
        }
    }

    #[test]
    fn parses_from_toml_with_defaults() {
        let c: RunConfig =
            toml::from_str("architecture = \"enn\"\nscheduler = \"linear_prob\"\n[epinet]\nindex_dim = 4\n").unwrap();
        assert_eq!(c.architecture, Architecture::Enn);
        assert_eq!(c.scheduler, SchedulerKind::LinearProb);
        assert_eq!(c.epinet.index_dim, 4);
        assert_eq!(c.epinet.hidden_dim, 15);
        assert_eq!(c.epochs, 5);
        assert!(toml::from_str::<RunConfig>("epoch = 3").is_err());
    }
}

//! The fine-tuning loop.
//!
//! Each epoch: optionally re-cluster, score the candidate pool, let the
//! scheduler pick samples, annotate them, train one pass of minibatch Adam on
//! the annotated pool, then evaluate on the validation and test splits.
//! Accumulating runs score and draw from the shrinking unlabelled pool;
//! recalculating runs score the full training pool and rebuild the annotated
//! pool from scratch each epoch.

mod config;
mod pool;

pub use config::{validate_config, RunConfig, Sampling, Start, Validation};
pub use pool::PoolState;

use std::collections::HashMap;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::acquisition::{score_pool, AcquisitionKind, ClusterSnapshot};
use crate::clustering::{ward_cluster, ClusterMode};
use crate::data::{Dataset, FeaturePool, SampleId, Split};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::macro_f1;
use crate::model::Classifier;
use crate::nn::{AdamConfig, AdamState, Batch};
use crate::rng::{self, tag};
use crate::scheduler::{schedule_select, SchedulerSpec, SelectionPlan};

/// Per-epoch outcome of a run.
#[derive(Debug, Clone)]
pub struct EpochReport {
    pub epoch: usize,
    pub newly_annotated: usize,
    /// Size of the pool trained on this epoch.
    pub annotated_count: usize,
    /// `annotated_count / |train|`.
    pub annotated_fraction: f64,
    /// Distinct samples annotated so far over `|train|`.
    pub cumulative_fraction: f64,
    /// Mean minibatch loss; `None` if nothing was trained.
    pub train_loss: Option<f64>,
    pub val_f1: f64,
    pub test_f1: f64,
    pub reclustered: bool,
    pub wall_time: Duration,
}

/// Equality ignores `wall_time`.
impl PartialEq for EpochReport {
    fn eq(&self, other: &Self) -> bool {
        self.epoch == other.epoch
            && self.newly_annotated == other.newly_annotated
            && self.annotated_count == other.annotated_count
            && self.annotated_fraction == other.annotated_fraction
            && self.cumulative_fraction == other.cumulative_fraction
            && self.train_loss == other.train_loss
            && self.val_f1 == other.val_f1
            && self.test_f1 == other.test_f1
            && self.reclustered == other.reclustered
    }
}

/// Uniformly random `ceil(|pool| / 2)` ids, without replacement.
pub fn warm_start_select<R: Rng + ?Sized>(pool: &[SampleId], rng: &mut R) -> SelectionPlan {
    let count = pool.len().div_ceil(2);
    let selected: Vec<SampleId> = rand::seq::index::sample(rng, pool.len(), count)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    SelectionPlan {
        epoch: 1,
        requested: count,
        drawn: count,
        selected,
        thresholds: Vec::new(),
    }
}

/// Features used for clustering: raw inputs (init) or the model's final
/// hidden layer (dynamic).
pub fn cluster_features(model: &Classifier, pool: &FeaturePool, mode: ClusterMode) -> Result<Matrix> {
    match mode {
        ClusterMode::Init => Ok(pool.features.clone()),
        ClusterMode::Dynamic => {
            let rows = pool
                .features
                .row_iter()
                .map(|x| model.features(x))
                .collect::<Result<Vec<_>>>()?;
            if rows.is_empty() {
                return Ok(Matrix::zeros(0, model.base().hidden_dim()));
            }
            Matrix::from_rows(&rows)
        }
        ClusterMode::None => Err(Error::config("no clustering mode configured")),
    }
}

/// Clusters `pool` on the given features into `min(k, |pool|)` groups.
pub fn cluster_pool(pool: &FeaturePool, features: Matrix, k: usize) -> Result<ClusterSnapshot> {
    let k = k.min(pool.len()).max(1);
    let assignment = ward_cluster(&pool.ids, &features, k)?;
    ClusterSnapshot::new(assignment, features)
}

/// Training pool with its labels behind an annotation step, plus the
/// evaluation splits.
struct Corpus {
    train: FeaturePool,
    train_labels: Vec<usize>,
    row_of: HashMap<SampleId, usize>,
    val: FeaturePool,
    val_labels: Vec<usize>,
    test: FeaturePool,
    test_labels: Vec<usize>,
    num_classes: usize,
}

impl Corpus {
    fn new(dataset: &Dataset) -> Result<Self> {
        let train = dataset.feature_pool(Split::Train);
        for (split, pool_len) in [
            (Split::Train, train.len()),
            (Split::Validation, dataset.split_len(Split::Validation)),
            (Split::Test, dataset.split_len(Split::Test)),
        ] {
            if pool_len == 0 {
                return Err(Error::input(format!(
                    "dataset has no {split:?} samples; split it first"
                )));
            }
        }
        let row_of = train.ids.iter().enumerate().map(|(r, &id)| (id, r)).collect();
        Ok(Self {
            train_labels: dataset.labels(Split::Train),
            train,
            row_of,
            val: dataset.feature_pool(Split::Validation),
            val_labels: dataset.labels(Split::Validation),
            test: dataset.feature_pool(Split::Test),
            test_labels: dataset.labels(Split::Test),
            num_classes: dataset.num_classes(),
        })
    }

    fn rows(&self, ids: impl IntoIterator<Item = SampleId>) -> Vec<usize> {
        ids.into_iter().map(|id| self.row_of[&id]).collect()
    }

    /// Reveals gold labels for annotated training rows.
    fn annotate(&self, rows: &[usize]) -> Vec<usize> {
        rows.iter().map(|&r| self.train_labels[r]).collect()
    }
}

/// One fine-tuning run in progress.
pub struct Session {
    config: RunConfig,
    scheduler: SchedulerSpec,
    corpus: Corpus,
    model: Classifier,
    optimizer: AdamState,
    state: PoolState,
    snapshot: Option<ClusterSnapshot>,
    clusterings: usize,
}

impl Session {
    /// Validates `config`, builds the model and, for init clustering,
    /// clusters the training pool on its raw features.
    pub fn new(config: &RunConfig, dataset: &Dataset) -> Result<Self> {
        validate_config(config)?;
        let scheduler = config.scheduler_spec();
        scheduler.validate()?;
        let corpus = Corpus::new(dataset)?;
        let mut init_rng = rng::stream(config.seed, &[tag::INIT]);
        let model = Classifier::build(
            config.architecture,
            dataset.feature_dim(),
            config.hidden_dim,
            corpus.num_classes,
            config.activation,
            &config.epinet,
            &mut init_rng,
        )?;
        let optimizer = model.optimizer(AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        });
        let state = PoolState::new(corpus.train.ids.iter().copied());
        let mut session = Self {
            config: config.clone(),
            scheduler,
            corpus,
            model,
            optimizer,
            state,
            snapshot: None,
            clusterings: 0,
        };
        if session.uses_clustering() && config.clustering == ClusterMode::Init {
            let features = cluster_features(&session.model, &session.corpus.train, ClusterMode::Init)?;
            let k = config.cluster_count(session.corpus.num_classes);
            session.snapshot = Some(cluster_pool(&session.corpus.train, features, k)?);
            session.clusterings += 1;
        }
        Ok(session)
    }

    pub fn state(&self) -> &PoolState {
        &self.state
    }

    pub fn model(&self) -> &Classifier {
        &self.model
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    /// How many times a clustering has been computed so far.
    pub fn clusterings(&self) -> usize {
        self.clusterings
    }

    pub fn snapshot(&self) -> Option<&ClusterSnapshot> {
        self.snapshot.as_ref()
    }

    fn uses_clustering(&self) -> bool {
        self.config.acquisition != AcquisitionKind::None && self.config.clustering != ClusterMode::None
    }

    /// Runs the next epoch in the configured sampling regime.
    pub fn run_epoch(&mut self) -> Result<EpochReport> {
        match self.config.sampling {
            Sampling::Accumulating => self.run_epoch_accumulating(),
            Sampling::Recalculating => self.run_epoch_recalculating(),
        }
    }

    /// Scores `U`, moves the scheduler's pick into `D`, trains on all of `D`.
    pub fn run_epoch_accumulating(&mut self) -> Result<EpochReport> {
        let started = Instant::now();
        self.state.epoch += 1;
        let candidates: Vec<SampleId> = self.state.unlabeled().iter().copied().collect();
        let (plan, reclustered) = if candidates.is_empty() {
            log::info!(
                "epoch {}: unlabeled pool exhausted; training on existing annotations",
                self.state.epoch
            );
            (SelectionPlan::default(), false)
        } else {
            self.select(&candidates)?
        };
        self.state.accumulate(&plan.selected)?;
        let train_loss = self.train_on_annotated()?;
        self.report(plan.selected.len(), train_loss, reclustered, started)
    }

    /// Scores the full training pool, rebuilds `D` from the scheduler's pick,
    /// trains on it and discards it.
    pub fn run_epoch_recalculating(&mut self) -> Result<EpochReport> {
        let started = Instant::now();
        self.state.epoch += 1;
        let candidates = self.corpus.train.ids.clone();
        let (plan, reclustered) = self.select(&candidates)?;
        let before = self.state.ever_annotated().len();
        self.state.recalculate(&plan.selected)?;
        let newly = self.state.ever_annotated().len() - before;
        let train_loss = self.train_on_annotated()?;
        let report = self.report(newly, train_loss, reclustered, started);
        self.state.clear_annotated();
        report
    }

    fn select(&mut self, candidates: &[SampleId]) -> Result<(SelectionPlan, bool)> {
        let epoch = self.state.epoch;
        let seed = self.config.seed;
        if self.config.acquisition == AcquisitionKind::None {
            return Ok((
                SelectionPlan {
                    epoch,
                    selected: candidates.to_vec(),
                    requested: candidates.len(),
                    drawn: candidates.len(),
                    thresholds: Vec::new(),
                },
                false,
            ));
        }
        if epoch == 1 && self.config.start == Start::Warm {
            let mut r = rng::stream(seed, &[tag::WARM]);
            return Ok((warm_start_select(candidates, &mut r), false));
        }
        let pool = self.corpus.train.subset(&self.corpus.rows(candidates.iter().copied()));
        let mut reclustered = false;
        if self.uses_clustering() && self.config.clustering == ClusterMode::Dynamic {
            let features = cluster_features(&self.model, &pool, ClusterMode::Dynamic)?;
            let k = self.config.cluster_count(self.corpus.num_classes);
            self.snapshot = Some(cluster_pool(&pool, features, k)?);
            self.clusterings += 1;
            reclustered = true;
        }
        let scores = score_pool(
            &self.model,
            &pool,
            self.config.acquisition,
            self.config.acquisition_draws,
            rng::derive_seed(seed, &[tag::SCORE, epoch as u64]),
            self.snapshot.as_ref(),
        )?;
        let groups = match &self.snapshot {
            Some(snap) if self.uses_clustering() => Some(snap.group_positions(scores.ids())?),
            _ => None,
        };
        let plan = schedule_select(
            &self.scheduler,
            &scores,
            groups.as_deref(),
            epoch,
            rng::derive_seed(seed, &[tag::SELECT, epoch as u64]),
        )?;
        Ok((plan, reclustered))
    }

    /// One shuffled pass of minibatch Adam over `D`.
    fn train_on_annotated(&mut self) -> Result<Option<f64>> {
        let mut rows = self.corpus.rows(self.state.annotated().iter().copied());
        if rows.is_empty() {
            return Ok(None);
        }
        let epoch = self.state.epoch as u64;
        rows.shuffle(&mut rng::stream(self.config.seed, &[tag::TRAIN, epoch, 0]));
        let mut index_rng = rng::stream(self.config.seed, &[tag::TRAIN, epoch, 1]);
        let mut total = 0.0;
        for chunk in rows.chunks(self.config.batch_size) {
            let batch = Batch::new(
                self.corpus.train.features.select_rows(chunk),
                self.corpus.annotate(chunk),
            )?;
            let loss = self
                .model
                .train_step(&mut self.optimizer, &batch, self.config.train_draws, &mut index_rng)?;
            total += loss * chunk.len() as f64;
        }
        Ok(Some(total / rows.len() as f64))
    }

    fn evaluate(&self, pool: &FeaturePool, golds: &[usize], split: u64) -> Result<f64> {
        let epoch = self.state.epoch as u64;
        let predictions = (0..pool.len())
            .into_par_iter()
            .map(|row| {
                let mut r = rng::stream(self.config.seed, &[tag::EVAL, epoch, split, pool.ids[row].0]);
                self.model
                    .predict(pool.features.row(row), self.config.eval_draws, &mut r)
            })
            .collect::<Result<Vec<_>>>()?;
        macro_f1(&predictions, golds, self.corpus.num_classes)
    }

    fn report(
        &self,
        newly_annotated: usize,
        train_loss: Option<f64>,
        reclustered: bool,
        started: Instant,
    ) -> Result<EpochReport> {
        Ok(EpochReport {
            epoch: self.state.epoch,
            newly_annotated,
            annotated_count: self.state.annotated().len(),
            annotated_fraction: self.state.annotated_fraction(),
            cumulative_fraction: self.state.cumulative_fraction(),
            train_loss,
            val_f1: self.evaluate(&self.corpus.val, &self.corpus.val_labels, 0)?,
            test_f1: self.evaluate(&self.corpus.test, &self.corpus.test_labels, 1)?,
            reclustered,
            wall_time: started.elapsed(),
        })
    }
}

/// Runs every epoch of `config` on a split dataset.
pub fn run_training(config: &RunConfig, dataset: &Dataset) -> Result<Vec<EpochReport>> {
    let mut session = Session::new(config, dataset)?;
    (0..config.epochs).map(|_| session.run_epoch()).collect()
}

/// Plain fine-tuning: all training data annotated from epoch 1.
pub fn run_baseline(config: &RunConfig, dataset: &Dataset) -> Result<Vec<EpochReport>> {
    run_training(&baseline_config(config), dataset)
}

/// `config` with acquisition, clustering and scheduling switched off.
pub fn baseline_config(config: &RunConfig) -> RunConfig {
    RunConfig {
        acquisition: AcquisitionKind::None,
        clustering: ClusterMode::None,
        scheduler: crate::scheduler::SchedulerKind::Base,
        start: Start::Cold,
        ..config.clone()
    }
}

//! Acquisition functions: entropy, BALD, variance and furthest-batch.
//!
//! Scores are "AL results"; the descending ranking, ties broken by ascending
//! sample id, is the "AL order".

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{euclidean, ClusterAssignment};
use crate::data::{FeaturePool, SampleId};
use crate::epinet::{mean_distribution, sample_predictions, EpistemicModel};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::Classifier;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcquisitionKind {
    /// No acquisition: every sample is annotated up front (plain fine-tuning).
    #[default]
    None,
    Entropy,
    Bald,
    Variance,
    FurthestBatch,
}

impl AcquisitionKind {
    /// Needs an epistemic index, hence an ENN.
    pub fn is_epistemic(self) -> bool {
        matches!(self, AcquisitionKind::Bald | AcquisitionKind::Variance)
    }
}

/// Per-sample scores and their ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct AlScores {
    ids: Vec<SampleId>,
    results: Vec<f64>,
    /// Positions into `ids`/`results`, best first.
    order: Vec<usize>,
}

impl AlScores {
    pub fn new(ids: Vec<SampleId>, results: Vec<f64>) -> Result<Self> {
        if ids.len() != results.len() {
            return Err(Error::input(format!("{} ids for {} scores", ids.len(), results.len())));
        }
        if let Some(i) = results.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!("non-finite score for sample {}", ids[i])));
        }
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.sort_by(|&a, &b| results[b].total_cmp(&results[a]).then(ids[a].cmp(&ids[b])));
        Ok(Self { ids, results, order })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[SampleId] {
        &self.ids
    }

    pub fn results(&self) -> &[f64] {
        &self.results
    }

    /// Positions sorted by descending score.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Sample ids sorted by descending score.
    pub fn ranked_ids(&self) -> Vec<SampleId> {
        self.order.iter().map(|&i| self.ids[i]).collect()
    }

    pub fn score_of(&self, id: SampleId) -> Option<f64> {
        self.ids.iter().position(|&x| x == id).map(|i| self.results[i])
    }

    /// Scores restricted to the given positions.
    pub fn subset(&self, positions: &[usize]) -> AlScores {
        let ids = positions.iter().map(|&p| self.ids[p]).collect();
        let results = positions.iter().map(|&p| self.results[p]).collect();
        AlScores::new(ids, results).expect("subset of valid scores")
    }
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy_score(probs: &[f64]) -> Result<f64> {
    if let Some(p) = probs.iter().find(|&&p| p.is_nan() || p < 0.0) {
        return Err(Error::input(format!("invalid probability {p}")));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::input(format!("probabilities sum to {sum}")));
    }
    Ok(entropy(probs))
}

fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

/// Entropy of the mean minus mean entropy, over one set of draws.
/// Negative round-off is clamped to zero.
pub fn bald_from_samples(samples: &[Vec<f64>]) -> f64 {
    let mean = mean_distribution(samples);
    let mean_entropy = samples.iter().map(|p| entropy(p)).sum::<f64>() / samples.len() as f64;
    (entropy(&mean) - mean_entropy).max(0.0)
}

/// `Σ_c mean_k (p_k(c) - p̄(c))²` over one set of draws.
pub fn variance_from_samples(samples: &[Vec<f64>]) -> f64 {
    let mean = mean_distribution(samples);
    let k = samples.len() as f64;
    samples
        .iter()
        .map(|p| p.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .sum::<f64>()
        / k
}

fn check_draws(k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::input(format!(
            "epistemic scores need at least 2 index draws, got {k}"
        )));
    }
    Ok(())
}

/// Monte Carlo BALD with `k` shared index draws.
pub fn bald_score<M, R>(model: &M, x: &[f64], k: usize, rng: &mut R) -> Result<f64>
where
    M: EpistemicModel + ?Sized,
    R: Rng + ?Sized,
{
    check_draws(k)?;
    Ok(bald_from_samples(&sample_predictions(model, x, k, rng)?))
}

/// Monte Carlo variance score with `k` shared index draws.
pub fn variance_score<M, R>(model: &M, x: &[f64], k: usize, rng: &mut R) -> Result<f64>
where
    M: EpistemicModel + ?Sized,
    R: Rng + ?Sized,
{
    check_draws(k)?;
    Ok(variance_from_samples(&sample_predictions(model, x, k, rng)?))
}

/// Distance of every sample to its own cluster's medoid. `features` rows align
/// with `assignment.ids()`.
pub fn furthest_batch_scores(assignment: &ClusterAssignment, features: &Matrix) -> Result<AlScores> {
    if features.rows() != assignment.ids().len() {
        return Err(Error::input("features do not align with the cluster assignment"));
    }
    let results = (0..features.rows())
        .map(|row| {
            let medoid = assignment.medoid_row(assignment.cluster_of_row(row));
            euclidean(features.row(row), features.row(medoid))
        })
        .collect();
    AlScores::new(assignment.ids().to_vec(), results)
}

/// A clustering together with the feature rows it was computed on.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSnapshot {
    pub assignment: ClusterAssignment,
    pub features: Matrix,
    row_of: HashMap<SampleId, usize>,
}

impl ClusterSnapshot {
    pub fn new(assignment: ClusterAssignment, features: Matrix) -> Result<Self> {
        if features.rows() != assignment.ids().len() {
            return Err(Error::input("features do not align with the cluster assignment"));
        }
        let row_of = assignment.ids().iter().enumerate().map(|(r, &id)| (id, r)).collect();
        Ok(Self {
            assignment,
            features,
            row_of,
        })
    }

    pub fn cluster_of(&self, id: SampleId) -> Option<usize> {
        self.row_of.get(&id).map(|&r| self.assignment.cluster_of_row(r))
    }

    /// Groups the given ids by cluster, returning positions into `ids`.
    /// Clusters without members among `ids` are omitted.
    pub fn group_positions(&self, ids: &[SampleId]) -> Result<Vec<Vec<usize>>> {
        let mut groups = vec![Vec::new(); self.assignment.num_clusters()];
        for (pos, &id) in ids.iter().enumerate() {
            let c = self
                .cluster_of(id)
                .ok_or_else(|| Error::Internal(format!("sample {id} missing from the clustering")))?;
            groups[c].push(pos);
        }
        groups.retain(|g| !g.is_empty());
        Ok(groups)
    }
}

/// Scores every sample of `pool`.
///
/// Each sample draws its epistemic indices from a stream keyed by `seed` and
/// its id, so the result does not depend on pool order or on parallelism.
pub fn score_pool(
    model: &Classifier,
    pool: &FeaturePool,
    kind: AcquisitionKind,
    draws: usize,
    seed: u64,
    clustering: Option<&ClusterSnapshot>,
) -> Result<AlScores> {
    let per_sample = |f: &(dyn Fn(&[f64], &mut rng::Rng) -> Result<f64> + Sync)| -> Result<AlScores> {
        let results = (0..pool.len())
            .into_par_iter()
            .map(|row| {
                let mut r = rng::stream(seed, &[pool.ids[row].0]);
                f(pool.features.row(row), &mut r)
            })
            .collect::<Result<Vec<f64>>>()?;
        AlScores::new(pool.ids.clone(), results)
    };
    match kind {
        AcquisitionKind::None => Err(Error::config("no acquisition function configured")),
        AcquisitionKind::Entropy => per_sample(&|x, r| entropy_score(&model.predictive_probs(x, draws, r)?)),
        AcquisitionKind::Bald | AcquisitionKind::Variance => {
            let enn = model.as_enn().ok_or_else(|| {
                Error::config(format!(
                    "{kind:?} acquisition needs the ENN architecture (epistemic AF with base model is not supported)"
                ))
            })?;
            if kind == AcquisitionKind::Bald {
                per_sample(&|x, r| bald_score(enn, x, draws, r))
            } else {
                per_sample(&|x, r| variance_score(enn, x, draws, r))
            }
        }
        AcquisitionKind::FurthestBatch => {
            let snap = clustering.ok_or_else(|| Error::config("furthest-batch acquisition requires a clustering"))?;
            let all = furthest_batch_scores(&snap.assignment, &snap.features)?;
            let results = pool
                .ids
                .iter()
                .map(|id| {
                    snap.row_of
                        .get(id)
                        .map(|&r| all.results()[r])
                        .ok_or_else(|| Error::Internal(format!("sample {id} missing from the clustering")))
                })
                .collect::<Result<Vec<f64>>>()?;
            AlScores::new(pool.ids.clone(), results)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::epinet::{EpinetConfig, EpinetModel, EpistemicIndex};
    use crate::nn::{Activation, DenseNet};
    use proptest::prelude::*;
    use rand::Rng;
    use std::cell::Cell;

    /// Returns (1, 0) and (0, 1) on alternate calls regardless of input.
    struct Alternating {
        calls: Cell<usize>,
    }

    impl EpistemicModel for Alternating {
        fn index_dim(&self) -> usize {
            1
        }

        fn class_probs(&self, _x: &[f64], _z: &EpistemicIndex) -> Result<Vec<f64>> {
            let n = self.calls.get();
            self.calls.set(n + 1);
            Ok(if n.is_multiple_of(2) {
                vec![1.0, 0.0]
            } else {
                vec![0.0, 1.0]
            })
        }
    }

    fn ids(n: usize) -> Vec<SampleId> {
        (0..n as u64).map(SampleId).collect()
    }

    fn enn(seed: u64, zero_epinet: bool) -> EpinetModel {
        let mut r = rng::stream(seed, &[]);
        let base = DenseNet::new(3, 5, 3, Activation::Relu, &mut r).unwrap();
        let m = EpinetModel::new(base, &EpinetConfig::default(), &mut r).unwrap();
        if !zero_epinet {
            return m;
        }
        let mut prior = m.prior().clone();
        prior.set_zero();
        let mut learn = m.learnable().clone();
        learn.set_zero();
        EpinetModel::from_parts(m.base().clone(), prior, learn, 8, 1.0).unwrap()
    }

    #[test]
    fn entropy_examples() {
        assert!((entropy_score(&[1.0 / 3.0; 3]).unwrap() - 3f64.ln()).abs() < 1e-12);
        assert_eq!(entropy_score(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert!((entropy_score(&[0.5, 0.5]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(entropy_score(&[-0.1, 1.1]).is_err());
        assert!(entropy_score(&[0.3, 0.3]).is_err());
    }

    #[test]
    fn z_independent_model_has_zero_bald_and_variance() {
        let m = enn(1, true);
        let mut r = rng::stream(2, &[]);
        for x in [[0.1, 0.2, 0.3], [-1.0, 2.0, 0.5]] {
            assert!(bald_score(&m, &x, 32, &mut r).unwrap().abs() < 1e-12);
            assert!(variance_score(&m, &x, 32, &mut r).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn alternating_stub() {
        for k in [2, 4, 32] {
            let stub = Alternating { calls: Cell::new(0) };
            let b = bald_score(&stub, &[0.0], k, &mut rng::stream(0, &[])).unwrap();
            assert!((b - 2f64.ln()).abs() < 1e-9);
            let stub = Alternating { calls: Cell::new(0) };
            let v = variance_score(&stub, &[0.0], k, &mut rng::stream(0, &[])).unwrap();
            assert!((v - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn too_few_draws_rejected() {
        let m = enn(1, false);
        assert!(bald_score(&m, &[0.0; 3], 1, &mut rng::stream(0, &[])).is_err());
        assert!(variance_score(&m, &[0.0; 3], 0, &mut rng::stream(0, &[])).is_err());
    }

    #[test]
    fn furthest_batch_examples() {
        let f = Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.0], [10.0, 0.0]]).unwrap();
        let a = ClusterAssignment::from_labels(ids(3), vec![0, 0, 0], &f).unwrap();
        let s = furthest_batch_scores(&a, &f).unwrap();
        assert_eq!(s.results(), &[1.0, 0.0, 9.0]);
        assert_eq!(s.ranked_ids(), vec![SampleId(2), SampleId(0), SampleId(1)]);

        let f = Matrix::from_rows(&[[4.0, 4.0]]).unwrap();
        let a = ClusterAssignment::from_labels(ids(1), vec![0], &f).unwrap();
        assert_eq!(furthest_batch_scores(&a, &f).unwrap().results(), &[0.0]);

        let f = Matrix::from_rows(&[[1.0], [1.0], [1.0]]).unwrap();
        let a = ClusterAssignment::from_labels(vec![SampleId(7), SampleId(3), SampleId(5)], vec![0, 0, 0], &f).unwrap();
        let s = furthest_batch_scores(&a, &f).unwrap();
        assert_eq!(s.ranked_ids(), vec![SampleId(3), SampleId(5), SampleId(7)]);
    }

    fn pool(n: usize, seed: u64) -> FeaturePool {
        let mut r = rng::stream(seed, &[]);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| r.random_range(-2.0..2.0)).collect())
            .collect();
        FeaturePool::new(ids(n), Matrix::from_rows(&rows).unwrap()).unwrap()
    }

    #[test]
    fn zero_net_entropy_is_uniform_with_id_order() {
        let net = DenseNet::zeros(3, 4, 3, Activation::Relu).unwrap();
        let s = score_pool(
            &Classifier::Vanilla(net),
            &pool(6, 1),
            AcquisitionKind::Entropy,
            32,
            0,
            None,
        )
        .unwrap();
        assert!(s.results().iter().all(|&v| (v - 3f64.ln()).abs() < 1e-12));
        assert_eq!(s.ranked_ids(), ids(6));
    }

    #[test]
    fn pool_order_matches_sort_oracle() {
        let mut r = rng::stream(3, &[]);
        let net = DenseNet::new(3, 4, 3, Activation::Relu, &mut r).unwrap();
        let p = pool(5, 4);
        let s = score_pool(
            &Classifier::Vanilla(net.clone()),
            &p,
            AcquisitionKind::Entropy,
            1,
            0,
            None,
        )
        .unwrap();
        let mut oracle: Vec<(f64, u64)> = (0..5)
            .map(|i| {
                let probs = crate::nn::softmax(&net.forward(p.features.row(i)).unwrap().0);
                let h: f64 = probs.iter().map(|q| -q * q.ln()).sum();
                (h, i as u64)
            })
            .collect();
        oracle.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let expected: Vec<SampleId> = oracle.iter().map(|o| SampleId(o.1)).collect();
        assert_eq!(s.ranked_ids(), expected);
    }

    #[test]
    fn epistemic_on_vanilla_is_config_error() {
        let net = DenseNet::zeros(3, 4, 3, Activation::Relu).unwrap();
        for kind in [AcquisitionKind::Bald, AcquisitionKind::Variance] {
            let r = score_pool(&Classifier::Vanilla(net.clone()), &pool(3, 1), kind, 8, 0, None);
            assert!(matches!(r, Err(Error::Config(_))));
        }
        let r = score_pool(
            &Classifier::Vanilla(net),
            &pool(3, 1),
            AcquisitionKind::FurthestBatch,
            8,
            0,
            None,
        );
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn scoring_is_independent_of_pool_order() {
        let model = Classifier::Enn(enn(5, false));
        let p = pool(12, 6);
        let rev: Vec<usize> = (0..12).rev().collect();
        let q = p.subset(&rev);
        for kind in [
            AcquisitionKind::Entropy,
            AcquisitionKind::Bald,
            AcquisitionKind::Variance,
        ] {
            let a = score_pool(&model, &p, kind, 16, 9, None).unwrap();
            let b = score_pool(&model, &q, kind, 16, 9, None).unwrap();
            assert_eq!(a.ranked_ids(), b.ranked_ids());
            for id in p.ids.iter() {
                assert_eq!(a.score_of(*id), b.score_of(*id));
            }
            assert_eq!(a, score_pool(&model, &p, kind, 16, 9, None).unwrap());
        }
    }

    #[test]
    fn bald_bounded_by_entropy_of_mean() {
        let m = enn(7, false);
        let mut r = rng::stream(8, &[]);
        for _ in 0..50 {
            let x: Vec<f64> = (0..3).map(|_| r.random_range(-3.0..3.0)).collect();
            let samples = sample_predictions(&m, &x, 16, &mut r).unwrap();
            let bald = bald_from_samples(&samples);
            assert!(bald >= 0.0);
            assert!(bald <= entropy(&mean_distribution(&samples)) + 1e-12);
            let v = variance_from_samples(&samples);
            assert!((0.0..=3.0 * 0.25).contains(&v));
        }
    }

    proptest! {
        #[test]
        fn entropy_permutation_invariant_and_maximal_at_uniform(
            raw in prop::collection::vec(0.0f64..1.0, 2..8),
            perm_seed in any::<u64>(),
        ) {
            let sum: f64 = raw.iter().sum::<f64>() + 1e-9;
            let p: Vec<f64> = raw.iter().map(|v| (v + 1e-9 / raw.len() as f64) / sum).collect();
            let mut q = p.clone();
            use rand::seq::SliceRandom;
            q.shuffle(&mut rng::stream(perm_seed, &[]));
            let hp = entropy_score(&p).unwrap();
            prop_assert!((hp - entropy_score(&q).unwrap()).abs() < 1e-12);
            prop_assert!(hp <= (p.len() as f64).ln() + 1e-12);
        }

        #[test]
        fn order_is_descending_permutation(scores in prop::collection::vec(-5.0f64..5.0, 0..40)) {
            let n = scores.len();
            let s = AlScores::new(ids(n), scores.clone()).unwrap();
            let mut seen = s.order().to_vec();
            seen.sort();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
            for w in s.order().windows(2) {
                prop_assert!(scores[w[0]] >= scores[w[1]]);
            }
        }
    }
}

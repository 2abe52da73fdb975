//! Annotation schedulers: how many scored samples to annotate per epoch, and which.
//!
//! | kind               | amount                         | choice                         |
//! |--------------------|--------------------------------|--------------------------------|
//! | `base`             | 75% of the pool                | top of AL order                |
//! | `prob`             | 75% of the pool                | weighted, without replacement  |
//! | `linear`           | 50, 20, 15, 10, 5% by epoch    | top of AL order                |
//! | `linear_prob`      | 50, 20, 15, 10, 5% by epoch    | weighted, without replacement  |
//! | `dif_build`        | per-cluster gap threshold      | weighted, with replacement     |
//! | `dif_build_unique` | per-cluster gap threshold      | weighted, without replacement  |
//!
//! Counts are `ceil(fraction * pool)`. When a clustering is supplied, the
//! fixed-fraction kinds split that count across clusters in proportion to
//! cluster size and select inside each cluster.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample_weighted;
use serde::{Deserialize, Serialize};

use crate::acquisition::AlScores;
use crate::data::{apportion, SampleId};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    #[default]
    Base,
    Prob,
    Linear,
    LinearProb,
    DifBuild,
    DifBuildUnique,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 6] = [
        SchedulerKind::Base,
        SchedulerKind::Prob,
        SchedulerKind::Linear,
        SchedulerKind::LinearProb,
        SchedulerKind::DifBuild,
        SchedulerKind::DifBuildUnique,
    ];

    pub fn is_dif_build(self) -> bool {
        matches!(self, SchedulerKind::DifBuild | SchedulerKind::DifBuildUnique)
    }

    pub fn is_linear(self) -> bool {
        matches!(self, SchedulerKind::Linear | SchedulerKind::LinearProb)
    }

    pub fn is_probabilistic(self) -> bool {
        !matches!(self, SchedulerKind::Base | SchedulerKind::Linear)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulerSpec {
    pub kind: SchedulerKind,
    pub base_fraction: f64,
    /// Fractions for epochs 1, 2, ...; the last entry repeats afterwards.
    pub linear_fractions: Vec<f64>,
}

impl SchedulerSpec {
    pub fn new(kind: SchedulerKind) -> Self {
        Self {
            kind,
            base_fraction: 0.75,
            linear_fractions: vec![0.50, 0.20, 0.15, 0.10, 0.05],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |f: f64| f > 0.0 && f <= 1.0;
        if !ok(self.base_fraction) || self.linear_fractions.is_empty() || !self.linear_fractions.iter().all(|&f| ok(f))
        {
            return Err(Error::config("scheduler fractions must lie in (0, 1]"));
        }
        if self.linear_fractions.windows(2).skip(1).any(|w| w[1] > w[0]) {
            return Err(Error::config("linear fractions must not increase after epoch 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpochFraction {
    Fixed(f64),
    /// Amount decided per cluster by the gap threshold.
    Threshold,
}

/// The annotation fraction for a 1-based epoch (epoch 0 is treated as 1).
pub fn epoch_fraction(spec: &SchedulerSpec, epoch: usize) -> EpochFraction {
    match spec.kind {
        SchedulerKind::Base | SchedulerKind::Prob => EpochFraction::Fixed(spec.base_fraction),
        SchedulerKind::Linear | SchedulerKind::LinearProb => {
            let i = epoch.max(1) - 1;
            let table = &spec.linear_fractions;
            EpochFraction::Fixed(table[i.min(table.len() - 1)])
        }
        SchedulerKind::DifBuild | SchedulerKind::DifBuildUnique => EpochFraction::Threshold,
    }
}

/// `ceil(fraction * pool)`, computed so exact products are not bumped by round-off.
pub fn fraction_count(fraction: f64, pool: usize) -> usize {
    let exact = fraction * pool as f64;
    let rounded = exact.round();
    let n = if (exact - rounded).abs() < 1e-9 {
        rounded
    } else {
        exact.ceil()
    };
    (n as usize).min(pool)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SelectionPlan {
    pub epoch: usize,
    /// Unique ids in selection order.
    pub selected: Vec<SampleId>,
    /// How many samples the scheduler asked for.
    pub requested: usize,
    /// Number of draws made; exceeds `selected.len()` when sampling with
    /// replacement produced duplicates.
    pub drawn: usize,
    /// Candidate-set size per cluster (dif-build kinds only).
    pub thresholds: Vec<usize>,
}

/// The first `count` ids of the AL order.
pub fn select_deterministic(scores: &AlScores, count: usize) -> SelectionPlan {
    let take = clamp_count(count, scores.len());
    let selected: Vec<SampleId> = scores.order()[..take].iter().map(|&i| scores.ids()[i]).collect();
    SelectionPlan {
        requested: count,
        drawn: selected.len(),
        selected,
        ..SelectionPlan::default()
    }
}

fn clamp_count(count: usize, pool: usize) -> usize {
    if count > pool {
        log::info!("requested {count} samples from a pool of {pool}; annotating the whole pool");
    }
    count.min(pool)
}

/// Sampling weights: shift by `-min` if any score is negative, add `1e-12`,
/// normalize. All-zero shifted scores fall back to uniform.
pub fn selection_probabilities(results: &[f64]) -> Vec<f64> {
    const EPS: f64 = 1e-12;
    let min = results.iter().copied().fold(f64::INFINITY, f64::min);
    let shift = if min < 0.0 { -min } else { 0.0 };
    let shifted: Vec<f64> = results.iter().map(|&r| r + shift).collect();
    if shifted.iter().all(|&s| s == 0.0) {
        log::info!("all acquisition scores are zero; sampling uniformly");
        return vec![1.0 / results.len() as f64; results.len()];
    }
    let weights: Vec<f64> = shifted.iter().map(|&s| s + EPS).collect();
    let sum: f64 = weights.iter().sum();
    weights.iter().map(|w| w / sum).collect()
}

/// Draws `count` samples with probabilities from [`selection_probabilities`].
pub fn select_probabilistic<R: rand::Rng + ?Sized>(
    scores: &AlScores,
    count: usize,
    rng: &mut R,
    with_replacement: bool,
) -> Result<SelectionPlan> {
    let n = scores.len();
    if n == 0 || count == 0 {
        return Ok(SelectionPlan {
            requested: count,
            ..SelectionPlan::default()
        });
    }
    let probs = selection_probabilities(scores.results());
    if probs.iter().any(|p| !p.is_finite()) {
        return Err(Error::input("non-finite selection probabilities"));
    }
    let (selected, drawn) = if with_replacement {
        let dist = WeightedIndex::new(&probs).map_err(|e| Error::input(e.to_string()))?;
        let mut seen = vec![false; n];
        let mut picked = Vec::new();
        for _ in 0..count {
            let i = dist.sample(rng);
            if !seen[i] {
                seen[i] = true;
                picked.push(scores.ids()[i]);
            }
        }
        (picked, count)
    } else {
        let take = clamp_count(count, n);
        let idx = sample_weighted(rng, n, |i| probs[i], take).map_err(|e| Error::input(e.to_string()))?;
        (idx.into_iter().map(|i| scores.ids()[i]).collect::<Vec<_>>(), take)
    };
    Ok(SelectionPlan {
        selected,
        requested: count,
        drawn,
        ..SelectionPlan::default()
    })
}

/// Index of the first consecutive gap of the descending `sorted` list that is
/// strictly larger than the mean gap. The candidate set is `sorted[..=index]`;
/// with no such gap the whole list is returned (`len - 1`).
pub fn dif_build_threshold(sorted: &[f64]) -> usize {
    if sorted.len() < 2 {
        log::debug!("gap threshold on {} scores; keeping all", sorted.len());
        return 0;
    }
    let gaps: Vec<f64> = sorted.windows(2).map(|w| w[0] - w[1]).collect();
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    gaps.iter().position(|&g| g > mean).unwrap_or(sorted.len() - 1)
}

/// Chooses this epoch's samples.
///
/// `clusters` holds positions into `scores`, one group per cluster; it is
/// required for the dif-build kinds.
pub fn schedule_select(
    spec: &SchedulerSpec,
    scores: &AlScores,
    clusters: Option<&[Vec<usize>]>,
    epoch: usize,
    seed: u64,
) -> Result<SelectionPlan> {
    let mut plan = match (epoch_fraction(spec, epoch), clusters) {
        (EpochFraction::Threshold, None) => {
            return Err(Error::config(
                "dif-build schedulers need a clustering (dif-build with no clustering is not supported)",
            ))
        }
        (EpochFraction::Threshold, Some(groups)) => {
            let with_replacement = spec.kind == SchedulerKind::DifBuild;
            let mut plan = SelectionPlan::default();
            for (c, group) in groups.iter().enumerate() {
                let cluster = scores.subset(group);
                let sorted: Vec<f64> = cluster.order().iter().map(|&i| cluster.results()[i]).collect();
                let cut = if sorted.is_empty() {
                    0
                } else {
                    dif_build_threshold(&sorted) + 1
                };
                let candidates = cluster.subset(&cluster.order()[..cut]);
                let count = fraction_count(spec.base_fraction, candidates.len());
                let mut r = rng::stream(seed, &[c as u64]);
                let part = select_probabilistic(&candidates, count, &mut r, with_replacement)?;
                plan.thresholds.push(cut);
                plan.requested += part.requested;
                plan.drawn += part.drawn;
                plan.selected.extend(part.selected);
            }
            plan
        }
        (EpochFraction::Fixed(f), groups) => {
            let count = fraction_count(f, scores.len());
            let single = [(0..scores.len()).collect::<Vec<_>>()];
            let groups: &[Vec<usize>] = groups.unwrap_or(&single);
            let sizes: Vec<f64> = groups.iter().map(|g| g.len() as f64).collect();
            let quotas = apportion(count, &sizes);
            let mut plan = SelectionPlan::default();
            for (c, (group, quota)) in groups.iter().zip(quotas).enumerate() {
                let cluster = scores.subset(group);
                let part = if spec.kind.is_probabilistic() {
                    select_probabilistic(&cluster, quota, &mut rng::stream(seed, &[c as u64]), false)?
                } else {
                    select_deterministic(&cluster, quota)
                };
                plan.drawn += part.drawn;
                plan.selected.extend(part.selected);
            }
            plan.requested = count;
            plan
        }
    };
    plan.epoch = epoch;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn scores(values: &[f64]) -> AlScores {
        AlScores::new((0..values.len() as u64).map(SampleId).collect(), values.to_vec()).unwrap()
    }

    #[test]
    fn fraction_table() {
        let lin = SchedulerSpec::new(SchedulerKind::Linear);
        assert_eq!(epoch_fraction(&lin, 1), EpochFraction::Fixed(0.5));
        assert_eq!(epoch_fraction(&lin, 5), EpochFraction::Fixed(0.05));
        assert_eq!(epoch_fraction(&lin, 7), EpochFraction::Fixed(0.05));
        let base = SchedulerSpec::new(SchedulerKind::Base);
        assert_eq!(epoch_fraction(&base, 4), EpochFraction::Fixed(0.75));
        let db = SchedulerSpec::new(SchedulerKind::DifBuild);
        assert_eq!(epoch_fraction(&db, 2), EpochFraction::Threshold);
    }

    #[test]
    fn ceil_counts() {
        assert_eq!(fraction_count(0.75, 10), 8);
        assert_eq!(fraction_count(0.15, 100), 15);
        assert_eq!(fraction_count(0.05, 10), 1);
        assert_eq!(fraction_count(0.75, 25), 19);
        assert_eq!(fraction_count(0.5, 0), 0);
    }

    #[test]
    fn spec_validation() {
        assert!(SchedulerSpec::new(SchedulerKind::Linear).validate().is_ok());
        let mut s = SchedulerSpec::new(SchedulerKind::Linear);
        s.linear_fractions = vec![0.5, 0.1, 0.2];
        assert!(s.validate().is_err());
        s.linear_fractions = vec![0.5, 0.0];
        assert!(s.validate().is_err());
    }

    #[test]
    fn deterministic_examples() {
        let s = scores(&[0.9, 0.1, 0.5]);
        assert_eq!(select_deterministic(&s, 2).selected, vec![SampleId(0), SampleId(2)]);
        assert_eq!(
            select_deterministic(&s, 3).selected,
            vec![SampleId(0), SampleId(2), SampleId(1)]
        );
        assert!(select_deterministic(&s, 0).selected.is_empty());
        assert_eq!(select_deterministic(&s, 10).selected.len(), 3);
    }

    #[test]
    fn near_certain_sample_dominates() {
        let s = scores(&[0.0, 1.0, 0.0, 0.0]);
        let mut r = rng::stream(1, &[]);
        let hits = (0..10_000)
            .filter(|_| select_probabilistic(&s, 1, &mut r, false).unwrap().selected == vec![SampleId(1)])
            .count();
        assert!(hits >= 9_990, "{hits}");
    }

    #[test]
    fn full_draw_without_replacement_takes_everything() {
        let s = scores(&[0.3; 7]);
        let plan = select_probabilistic(&s, 7, &mut rng::stream(2, &[]), false).unwrap();
        let got: HashSet<_> = plan.selected.into_iter().collect();
        assert_eq!(got.len(), 7);
    }

    #[test]
    fn with_replacement_dedups() {
        let s = scores(&[1.0, 1.0]);
        let plan = select_probabilistic(&s, 4, &mut rng::stream(3, &[]), true).unwrap();
        assert!(plan.selected.len() <= 2);
        assert_eq!(plan.drawn, 4);
    }

    #[test]
    fn probabilities_shift_and_fallback() {
        let p = selection_probabilities(&[-1.0, 1.0]);
        assert!(p[0] < 1e-11 && (p[1] - 1.0).abs() < 1e-11);
        assert_eq!(selection_probabilities(&[-2.0, -2.0]), vec![0.5, 0.5]);
        assert_eq!(selection_probabilities(&[0.0, 0.0, 0.0, 0.0]), vec![0.25; 4]);
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(dif_build_threshold(&[0.9, 0.8, 0.5, 0.45, 0.4]), 1);
        assert_eq!(dif_build_threshold(&[4.0, 3.0, 2.0, 1.0]), 3);
        assert_eq!(dif_build_threshold(&[1.0, 0.0]), 1);
        assert_eq!(dif_build_threshold(&[1.0]), 0);
        assert_eq!(dif_build_threshold(&[]), 0);
    }

    #[test]
    fn schedule_counts() {
        let s = scores(&(0..100).map(|i| i as f64 / 100.0).collect::<Vec<_>>());
        let base = schedule_select(&SchedulerSpec::new(SchedulerKind::Base), &s, None, 2, 0).unwrap();
        assert_eq!(base.selected.len(), 75);
        let lin = schedule_select(&SchedulerSpec::new(SchedulerKind::Linear), &s, None, 5, 0).unwrap();
        assert_eq!(lin.selected.len(), 5);
        assert_eq!(lin.epoch, 5);
    }

    #[test]
    fn dif_build_without_clusters_is_config_error() {
        let s = scores(&[0.1, 0.2]);
        for kind in [SchedulerKind::DifBuild, SchedulerKind::DifBuildUnique] {
            let r = schedule_select(&SchedulerSpec::new(kind), &s, None, 1, 0);
            assert!(matches!(r, Err(Error::Config(_))));
        }
    }

    #[test]
    fn dif_build_union_over_clusters() {
        let s = scores(&[0.9, 0.8, 0.5, 0.45, 0.4, 0.3, 0.29, 0.28, 0.0]);
        let groups = vec![vec![0, 1, 2, 3, 4], vec![5, 6, 7, 8]];
        for kind in [SchedulerKind::DifBuild, SchedulerKind::DifBuildUnique] {
            let plan = schedule_select(&SchedulerSpec::new(kind), &s, Some(&groups), 1, 4).unwrap();
            let unique: HashSet<_> = plan.selected.iter().collect();
            assert_eq!(unique.len(), plan.selected.len());
            // first cluster: candidates {0, 1}; second: gaps (0.01, 0.01, 0.28) → candidates {5, 6, 7}
            assert_eq!(plan.thresholds, vec![2, 3]);
            let allowed: HashSet<_> = [0u64, 1, 5, 6, 7].into_iter().map(SampleId).collect();
            assert!(plan.selected.iter().all(|id| allowed.contains(id)));
            if kind == SchedulerKind::DifBuildUnique {
                assert_eq!(plan.selected.len(), 2 + 3);
            }
        }
    }

    #[test]
    fn clustered_fixed_fraction_keeps_total_count() {
        let s = scores(&(0..10).map(|i| i as f64).collect::<Vec<_>>());
        let groups = vec![vec![0, 1, 2, 3, 4, 5, 6], vec![7, 8, 9]];
        let plan = schedule_select(&SchedulerSpec::new(SchedulerKind::Base), &s, Some(&groups), 1, 0).unwrap();
        assert_eq!(plan.selected.len(), 8);
        // quotas 5.6 -> 6 and 2.4 -> 2: top 6 of cluster 0 and top 2 of cluster 1
        let expected: Vec<SampleId> = [6u64, 5, 4, 3, 2, 1, 9, 8].into_iter().map(SampleId).collect();
        assert_eq!(plan.selected, expected);
    }

    proptest! {
        #[test]
        fn threshold_is_first_strict_exceedance(raw in prop::collection::vec(0.0f64..1.0, 2..30)) {
            let mut v = raw.clone();
            v.sort_by(|a, b| b.total_cmp(a));
            let idx = dif_build_threshold(&v);
            prop_assert!(idx < v.len());
            let gaps: Vec<f64> = v.windows(2).map(|w| w[0] - w[1]).collect();
            let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
            let mut expected = v.len() - 1;
            for (i, g) in gaps.iter().enumerate() {
                if *g > mean {
                    expected = i;
                    break;
                }
            }
            prop_assert_eq!(idx, expected);
        }

        #[test]
        fn deterministic_selection_invariant_under_monotone_maps(
            raw in prop::collection::vec(-3.0f64..3.0, 1..40),
            frac in 0.01f64..1.0,
        ) {
            let s = scores(&raw);
            let mapped: Vec<f64> = raw.iter().map(|v| (2.0 * v).exp() + 1.0).collect();
            let t = scores(&mapped);
            let count = fraction_count(frac, raw.len());
            prop_assert_eq!(select_deterministic(&s, count).selected, select_deterministic(&t, count).selected);
        }

        #[test]
        fn probabilistic_selection_size_and_membership(
            raw in prop::collection::vec(0.0f64..2.0, 1..40),
            count in 0usize..50,
            seed in any::<u64>(),
        ) {
            let s = scores(&raw);
            let plan = select_probabilistic(&s, count, &mut rng::stream(seed, &[]), false).unwrap();
            prop_assert_eq!(plan.selected.len(), count.min(raw.len()));
            let unique: HashSet<_> = plan.selected.iter().collect();
            prop_assert_eq!(unique.len(), plan.selected.len());
            prop_assert!(plan.selected.iter().all(|id| (id.0 as usize) < raw.len()));
        }
    }
}

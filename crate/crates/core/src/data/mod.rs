//! Feature-vector classification corpora: records, splits and I/O.
//!
//! Records are stored one JSON object per line:
//! `{"id": 3, "features": [0.1, -2.0], "label": 1, "split": "train"}`
//! where `split` is optional.

mod synth;

pub use synth::{synth_generate, SynthSpec};

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SampleId(pub u64);

impl fmt::Display for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub id: SampleId,
    pub features: Vec<f64>,
    label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

impl Sample {
    pub fn new(id: u64, features: Vec<f64>, label: usize, split: Option<Split>) -> Self {
        Self {
            id: SampleId(id),
            features,
            label,
            split,
        }
    }

    /// The gold label. Selection code never sees samples, only
    /// [`FeaturePool`]s; labels reach training through an annotation step.
    pub fn gold_label(&self) -> usize {
        self.label
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    num_classes: usize,
    feature_dim: usize,
}

impl Dataset {
    /// Validates ids, feature lengths and labels. `num_classes` defaults to
    /// `max(label) + 1`.
    pub fn new(samples: Vec<Sample>, num_classes: Option<usize>) -> Result<Self> {
        let feature_dim = samples.first().map_or(0, |s| s.features.len());
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            if !seen.insert(s.id) {
                return Err(Error::Schema(format!("duplicate sample id {}", s.id)));
            }
            if s.features.len() != feature_dim {
                return Err(Error::Schema(format!(
                    "sample {} has {} features, expected {feature_dim}",
                    s.id,
                    s.features.len()
                )));
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::Schema(format!("sample {} has non-finite features", s.id)));
            }
        }
        let inferred = samples.iter().map(|s| s.label + 1).max().unwrap_or(0);
        let num_classes = num_classes.unwrap_or(inferred);
        if inferred > num_classes {
            return Err(Error::Schema(format!(
                "label {} out of range for {num_classes} classes",
                inferred - 1
            )));
        }
        Ok(Self {
            samples,
            num_classes,
            feature_dim,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Sample count per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == Some(split))
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// Unlabelled view of one split, in dataset order.
    pub fn feature_pool(&self, split: Split) -> FeaturePool {
        let samples: Vec<&Sample> = self.split(split).collect();
        let ids = samples.iter().map(|s| s.id).collect();
        let rows: Vec<&[f64]> = samples.iter().map(|s| s.features.as_slice()).collect();
        FeaturePool {
            ids,
            features: Matrix::from_rows(&rows).expect("uniform feature length"),
        }
    }

    /// Gold labels of one split, aligned with [`Dataset::feature_pool`].
    pub fn labels(&self, split: Split) -> Vec<usize> {
        self.split(split).map(|s| s.label).collect()
    }
}

/// Sample ids with their feature rows and nothing else.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePool {
    pub ids: Vec<SampleId>,
    pub features: Matrix,
}

impl FeaturePool {
    pub fn new(ids: Vec<SampleId>, features: Matrix) -> Result<Self> {
        if ids.len() != features.rows() {
            return Err(Error::input(format!(
                "{} ids for {} feature rows",
                ids.len(),
                features.rows()
            )));
        }
        Ok(Self { ids, features })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Rows at the given positions.
    pub fn subset(&self, rows: &[usize]) -> FeaturePool {
        FeaturePool {
            ids: rows.iter().map(|&r| self.ids[r]).collect(),
            features: self.features.select_rows(rows),
        }
    }
}

/// Reads a line-delimited record file. Blank lines are skipped.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut samples = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: Sample = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        samples.push(sample);
    }
    Dataset::new(samples, None)
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in dataset.samples() {
        serde_json::to_writer(&mut w, s).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Splits counts proportionally to `weights` so that each part is within one
/// of its exact share (largest-remainder rounding, ties to the lower index).
pub fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Stratified train/validation/test split. Each class is shuffled with its own
/// seeded stream and cut by `fractions`.
pub fn split_dataset(dataset: &Dataset, fractions: [f64; 3], seed: u64) -> Result<Dataset> {
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || fractions.iter().any(|f| f.is_nan() || *f < 0.0) {
        return Err(Error::input(format!(
            "split fractions must be nonnegative and sum to 1, got {fractions:?}"
        )));
    }
    let active = fractions.iter().filter(|&&f| f > 0.0).count();
    let mut tags: Vec<Option<Split>> = vec![None; dataset.len()];
    for class in 0..dataset.num_classes() {
        let mut members: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.samples[i].label == class)
            .collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < active {
            return Err(Error::input(format!(
                "class {class} has {} samples, fewer than the {active} requested splits",
                members.len()
            )));
        }
        members.sort_by_key(|&i| dataset.samples[i].id);
        members.shuffle(&mut rng::stream(seed, &[class as u64]));
        let counts = apportion(members.len(), &fractions);
        let mut it = members.into_iter();
        for (split, n) in Split::ALL.into_iter().zip(counts) {
            for i in it.by_ref().take(n) {
                tags[i] = Some(split);
            }
        }
    }
    let samples: Vec<Sample> = dataset
        .samples
        .iter()
        .zip(tags)
        .map(|(s, tag)| Sample {
            split: tag,
            ..s.clone()
        })
        .collect();
    let out = Dataset {
        samples,
        num_classes: dataset.num_classes,
        feature_dim: dataset.feature_dim,
    };
    for (split, f) in Split::ALL.into_iter().zip(fractions) {
        if f > 0.0 && out.split_len(split) == 0 {
            return Err(Error::input(format!("split {split:?} would be empty")));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(lines: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(lines.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_three_line_fixture() {
        let f = write_tmp(
            "{\"id\": 0, \"features\": [0.5, 1.0], \"label\": 0}\n\
             {\"id\": 1, \"features\": [-0.5, 2.0], \"label\": 1, \"split\": \"test\"}\n\
             {\"id\": 2, \"features\": [0.0, 0.0], \"label\": 1, \"split\": \"validation\"}\n",
        );
        let d = load_dataset(f.path()).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.num_classes(), 2);
        assert_eq!(d.feature_dim(), 2);
        assert_eq!(d.samples()[1].split, Some(Split::Test));
        assert_eq!(d.samples()[0].split, None);
    }

    #[test]
    fn ragged_features_are_schema_error() {
        let f = write_tmp(
            "{\"id\": 0, \"features\": [0.5, 1.0], \"label\": 0}\n\
             {\"id\": 1, \"features\": [0.5, 1.0, 2.0], \"label\": 1}\n",
        );
        assert!(matches!(load_dataset(f.path()), Err(Error::Schema(_))));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = write_tmp(
            "{\"id\": 0, \"features\": [0.5], \"label\": 0}\n\
             {\"id\": 1, \"features\": [0.5], \"labl\": 1}\n",
        );
        match load_dataset(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let s = vec![Sample::new(1, vec![0.0], 0, None), Sample::new(1, vec![1.0], 1, None)];
        assert!(Dataset::new(s, None).is_err());
    }

    #[test]
    fn save_then_load_round_trips() {
        let d = synth_generate(&SynthSpec {
            classes: 3,
            samples_per_class: 5,
            feature_dim: 4,
            ..SynthSpec::default()
        })
        .unwrap();
        let d = split_dataset(&d, [0.6, 0.2, 0.2], 1).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_dataset(&d, f.path()).unwrap();
        assert_eq!(load_dataset(f.path()).unwrap(), d);
    }

    #[test]
    fn apportion_sums_and_stays_within_one() {
        for total in [0, 1, 7, 100, 1001] {
            let w = [0.83, 0.085, 0.085];
            let c = apportion(total, &w);
            assert_eq!(c.iter().sum::<usize>(), total);
            for (ci, wi) in c.iter().zip(w) {
                assert!((*ci as f64 - wi * total as f64).abs() < 1.0);
            }
        }
    }

    fn balanced(n_per_class: usize) -> Dataset {
        synth_generate(&SynthSpec {
            classes: 2,
            samples_per_class: n_per_class,
            feature_dim: 2,
            ..SynthSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn eighty_ten_ten_on_balanced_thousand() {
        let d = split_dataset(&balanced(500), [0.8, 0.1, 0.1], 3).unwrap();
        assert!((d.split_len(Split::Train) as i64 - 800).abs() <= 2);
        assert!((d.split_len(Split::Validation) as i64 - 100).abs() <= 2);
        assert!((d.split_len(Split::Test) as i64 - 100).abs() <= 2);
        for split in Split::ALL {
            let mut per_class = [0usize; 2];
            for s in d.split(split) {
                per_class[s.gold_label()] += 1;
            }
            let f = match split {
                Split::Train => 0.8,
                _ => 0.1,
            };
            for n in per_class {
                assert!((n as f64 - f * 500.0).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn all_train_fraction() {
        let d = split_dataset(&balanced(10), [1.0, 0.0, 0.0], 0).unwrap();
        assert_eq!(d.split_len(Split::Train), 20);
    }

    #[test]
    fn split_is_deterministic_per_seed() {
        let d = balanced(50);
        assert_eq!(
            split_dataset(&d, [0.7, 0.1, 0.2], 5).unwrap(),
            split_dataset(&d, [0.7, 0.1, 0.2], 5).unwrap()
        );
        assert_ne!(
            split_dataset(&d, [0.7, 0.1, 0.2], 5).unwrap(),
            split_dataset(&d, [0.7, 0.1, 0.2], 6).unwrap()
        );
    }

    #[test]
    fn tiny_class_rejected() {
        let s = vec![
            Sample::new(0, vec![0.0], 0, None),
            Sample::new(1, vec![1.0], 1, None),
            Sample::new(2, vec![1.0], 1, None),
            Sample::new(3, vec![1.0], 1, None),
        ];
        let d = Dataset::new(s, None).unwrap();
        assert!(split_dataset(&d, [0.5, 0.25, 0.25], 0).is_err());
    }

    #[test]
    fn bad_fractions_rejected() {
        assert!(split_dataset(&balanced(10), [0.5, 0.2, 0.2], 0).is_err());
    }

    #[test]
    fn feature_pool_hides_labels_and_aligns() {
        let d = split_dataset(&balanced(10), [0.5, 0.25, 0.25], 0).unwrap();
        let pool = d.feature_pool(Split::Train);
        let labels = d.labels(Split::Train);
        assert_eq!(pool.len(), labels.len());
        for (row, id) in pool.ids.iter().enumerate() {
            let s = d.samples().iter().find(|s| s.id == *id).unwrap();
            assert_eq!(pool.features.row(row), s.features.as_slice());
            assert_eq!(labels[row], s.gold_label());
        }
    }
}

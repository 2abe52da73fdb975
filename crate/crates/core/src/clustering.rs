//! Agglomerative clustering with Ward's linkage, and medoids.
//!
//! Merge cost between clusters `A` and `B` is
//! `|A||B| / (|A|+|B|) * ||centroid(A) - centroid(B)||²`, maintained with the
//! Lance-Williams recurrence. Each step merges the cheapest pair; ties go to
//! the lexicographically smallest `(lower id, higher id)` pair, and the merged
//! cluster keeps the lower id.

use serde::{Deserialize, Serialize};

use crate::data::SampleId;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// When clustering happens relative to fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMode {
    #[default]
    None,
    /// Once, before training, on raw input features.
    Init,
    /// Before every epoch, on the current model's hidden features.
    Dynamic,
}

/// One agglomeration step: cluster `absorbed` joined `kept` at Ward cost `cost`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub kept: usize,
    pub absorbed: usize,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    ids: Vec<SampleId>,
    /// Cluster index per row; clusters are numbered by their lowest row.
    labels: Vec<usize>,
    /// Medoid row per cluster.
    medoids: Vec<usize>,
}

impl ClusterAssignment {
    /// Builds an assignment from row-level labels, computing medoids.
    pub fn from_labels(ids: Vec<SampleId>, labels: Vec<usize>, features: &Matrix) -> Result<Self> {
        if ids.len() != labels.len() || ids.len() != features.rows() {
            return Err(Error::input("ids, labels and features disagree in length"));
        }
        let k = labels.iter().map(|&l| l + 1).max().unwrap_or(0);
        let mut groups = vec![Vec::new(); k];
        for (row, &l) in labels.iter().enumerate() {
            groups[l].push(row);
        }
        let medoids = groups
            .iter()
            .enumerate()
            .map(|(c, rows)| {
                medoid_row(rows, &ids, features).ok_or_else(|| Error::Internal(format!("cluster {c} is empty")))
            })
            .collect::<Result<_>>()?;
        Ok(Self { ids, labels, medoids })
    }

    pub fn num_clusters(&self) -> usize {
        self.medoids.len()
    }

    pub fn ids(&self) -> &[SampleId] {
        &self.ids
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn cluster_of_row(&self, row: usize) -> usize {
        self.labels[row]
    }

    pub fn medoid_row(&self, cluster: usize) -> usize {
        self.medoids[cluster]
    }

    pub fn medoid_id(&self, cluster: usize) -> SampleId {
        self.ids[self.medoids[cluster]]
    }

    /// Row indices of every cluster, ascending within each.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.num_clusters()];
        for (row, &l) in self.labels.iter().enumerate() {
            groups[l].push(row);
        }
        groups
    }

    /// Partition as sets of sample ids, sorted, for comparisons.
    pub fn partition(&self) -> Vec<Vec<SampleId>> {
        let mut parts: Vec<Vec<SampleId>> = self
            .groups()
            .into_iter()
            .map(|g| {
                let mut ids: Vec<_> = g.into_iter().map(|r| self.ids[r]).collect();
                ids.sort();
                ids
            })
            .collect();
        parts.sort();
        parts
    }
}

/// The member closest to the arithmetic-mean centroid; ties go to the smallest id.
pub fn medoid_of(members: &[SampleId], features: &Matrix) -> Result<SampleId> {
    let rows: Vec<usize> = (0..members.len()).collect();
    medoid_row(&rows, members, features)
        .map(|r| members[r])
        .ok_or_else(|| Error::Internal("medoid of an empty cluster".into()))
}

fn medoid_row(rows: &[usize], ids: &[SampleId], features: &Matrix) -> Option<usize> {
    let first = *rows.first()?;
    let d = features.cols();
    let mut centroid = vec![0.0; d];
    for &r in rows {
        for (c, &v) in centroid.iter_mut().zip(features.row(r)) {
            *c += v;
        }
    }
    centroid.iter_mut().for_each(|c| *c /= rows.len() as f64);
    let mut best = (sq_dist(features.row(first), &centroid), ids[first], first);
    for &r in &rows[1..] {
        let cand = (sq_dist(features.row(r), &centroid), ids[r], r);
        if cand.0 < best.0 || (cand.0 == best.0 && cand.1 < best.1) {
            best = cand;
        }
    }
    Some(best.2)
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

/// Condensed upper-triangular distance storage.
struct Condensed {
    n: usize,
    data: Vec<f64>,
}

impl Condensed {
    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        i * self.n - i * (i + 1) / 2 + (j - i - 1)
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.idx(i, j)]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] = v;
    }
}

/// Runs Ward agglomeration down to `k` clusters and returns the merges in order.
pub fn ward_merges(features: &Matrix, k: usize) -> Result<Vec<Merge>> {
    let n = features.rows();
    if k < 1 || k > n {
        return Err(Error::input(format!("cluster count {k} must lie in [1, {n}]")));
    }
    let mut dist = Condensed {
        n,
        data: vec![0.0; n * (n.saturating_sub(1)) / 2],
    };
    for i in 0..n {
        for j in i + 1..n {
            dist.set(i, j, 0.5 * sq_dist(features.row(i), features.row(j)));
        }
    }
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    // Nearest active neighbour per cluster, ties to the smaller index.
    let mut nn: Vec<(f64, usize)> = vec![(f64::INFINITY, usize::MAX); n];
    let nearest = |i: usize, active: &[bool], dist: &Condensed| -> (f64, usize) {
        let mut best = (f64::INFINITY, usize::MAX);
        for j in 0..n {
            if j != i && active[j] {
                let d = dist.get(i, j);
                if d < best.0 || best.1 == usize::MAX {
                    best = (d, j);
                }
            }
        }
        best
    };
    for i in 0..n {
        nn[i] = nearest(i, &active, &dist);
    }

    let mut merges = Vec::with_capacity(n - k);
    for _ in 0..n - k {
        let mut pick: Option<(f64, usize, usize)> = None;
        for i in (0..n).filter(|&i| active[i]) {
            let (d, j) = nn[i];
            let cand = (d, i.min(j), i.max(j));
            let better = match pick {
                None => true,
                Some(p) => cand.0 < p.0 || (cand.0 == p.0 && (cand.1, cand.2) < (p.1, p.2)),
            };
            if better {
                pick = Some(cand);
            }
        }
        let (cost, a, b) = pick.ok_or_else(|| Error::Internal("no mergeable pair".into()))?;
        let (na, nb) = (size[a] as f64, size[b] as f64);
        for m in 0..n {
            if !active[m] || m == a || m == b {
                continue;
            }
            let nm = size[m] as f64;
            let updated = ((na + nm) * dist.get(a, m) + (nb + nm) * dist.get(b, m) - nm * cost) / (na + nb + nm);
            dist.set(a, m, updated);
        }
        active[b] = false;
        size[a] += size[b];
        merges.push(Merge {
            kept: a,
            absorbed: b,
            cost,
        });

        for m in 0..n {
            if !active[m] {
                continue;
            }
            if m == a || nn[m].1 == a || nn[m].1 == b {
                nn[m] = nearest(m, &active, &dist);
            } else {
                let d = dist.get(a, m);
                if d < nn[m].0 || (d == nn[m].0 && a < nn[m].1) {
                    nn[m] = (d, a);
                }
            }
        }
    }
    Ok(merges)
}

/// Ward clustering of `features` (one row per id) into `k` clusters.
pub fn ward_cluster(ids: &[SampleId], features: &Matrix, k: usize) -> Result<ClusterAssignment> {
    if ids.len() != features.rows() {
        return Err(Error::input(format!(
            "{} ids for {} feature rows",
            ids.len(),
            features.rows()
        )));
    }
    let n = ids.len();
    let merges = ward_merges(features, k)?;
    // Union-find over merge records: every row points at its surviving root.
    let mut parent: Vec<usize> = (0..n).collect();
    for m in &merges {
        parent[m.absorbed] = m.kept;
    }
    fn root(parent: &[usize], mut i: usize) -> usize {
        while parent[i] != i {
            i = parent[i];
        }
        i
    }
    let mut label_of_root = vec![usize::MAX; n];
    let mut next = 0;
    let labels = (0..n)
        .map(|i| {
            let r = root(&parent, i);
            if label_of_root[r] == usize::MAX {
                label_of_root[r] = next;
                next += 1;
            }
            label_of_root[r]
        })
        .collect();
    ClusterAssignment::from_labels(ids.to_vec(), labels, features)
}

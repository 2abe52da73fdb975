//! Multi-seed experiments: run every config under every seed, aggregate the
//! learning curves and test each config against a baseline.

mod config;

pub use config::{DatasetSource, ExperimentConfig};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::pipeline::{run_training, EpochReport, RunConfig};
use crate::stats::paired_t_test;

/// A CSV record with a fixed column order.
pub trait CsvRecord: Serialize {
    const COLUMNS: &'static [&'static str];
}

/// One epoch of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub config_id: String,
    pub seed: u64,
    pub epoch: usize,
    pub val_f1: f64,
    pub test_f1: f64,
    pub annotated_fraction: f64,
    pub cumulative_unique_fraction: f64,
}

impl CsvRecord for MetricsRow {
    const COLUMNS: &'static [&'static str] = &[
        "config_id",
        "seed",
        "epoch",
        "val_f1",
        "test_f1",
        "annotated_fraction",
        "cumulative_unique_fraction",
    ];
}

impl MetricsRow {
    pub fn from_report(config_id: &str, seed: u64, r: &EpochReport) -> Self {
        Self {
            config_id: config_id.to_owned(),
            seed,
            epoch: r.epoch,
            val_f1: r.val_f1,
            test_f1: r.test_f1,
            annotated_fraction: r.annotated_fraction,
            cumulative_unique_fraction: r.cumulative_fraction,
        }
    }
}

/// Per-config aggregate over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub config_id: String,
    /// Mean test F1 at the last epoch.
    pub mean_final_f1: f64,
    /// Epoch with the highest mean validation F1 (earliest on ties).
    pub best_epoch: usize,
    /// Mean test F1 at `best_epoch`.
    pub best_f1: f64,
    /// Mean cumulative unique annotated fraction at `best_epoch`.
    pub fraction_at_best: f64,
    /// Sample standard deviation of final test F1 across seeds.
    pub f1_std: f64,
}

impl CsvRecord for SummaryRow {
    const COLUMNS: &'static [&'static str] = &[
        "config_id",
        "mean_final_f1",
        "best_epoch",
        "best_f1",
        "fraction_at_best",
        "f1_std",
    ];
}

/// Paired t-test of final test F1 against the baseline. `NaN` when the test
/// is undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceRow {
    pub config_id: String,
    pub baseline_id: String,
    pub t: f64,
    pub p: f64,
}

impl CsvRecord for SignificanceRow {
    const COLUMNS: &'static [&'static str] = &["config_id", "baseline_id", "t", "p"];
}

/// A run that failed; its config is left out of every other file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub config_id: String,
    pub seed: u64,
    pub error: String,
}

impl CsvRecord for ErrorRow {
    const COLUMNS: &'static [&'static str] = &["config_id", "seed", "error"];
}

/// Everything an experiment produces.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentOutcome {
    pub curves: Vec<MetricsRow>,
    pub summary: Vec<SummaryRow>,
    pub significance: Vec<SignificanceRow>,
    pub errors: Vec<ErrorRow>,
}

/// Runs every `(config, seed)` pair on a bounded thread pool. Rows come
/// back in config then seed order whatever the completion order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let dataset = config.load_dataset()?;
    run_on_dataset(config, &dataset)
}

/// [`run_experiment`] on an already loaded and split dataset.
pub fn run_on_dataset(config: &ExperimentConfig, dataset: &Dataset) -> Result<ExperimentOutcome> {
    let jobs: Vec<(usize, u64)> = (0..config.configs.len())
        .flat_map(|c| (0..config.runs).map(move |r| (c, config.seed(r))))
        .collect();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = config.jobs {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    let results: Vec<Result<Vec<EpochReport>>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(c, seed)| {
                let (id, run) = &config.configs[c];
                log::info!("starting `{id}` seed {seed}");
                let run = RunConfig { seed, ..run.clone() };
                run_training(&run, dataset)
            })
            .collect()
    });

    let mut outcome = ExperimentOutcome::default();
    for (c, (id, _)) in config.configs.iter().enumerate() {
        let mine = jobs.iter().zip(&results).filter(|((jc, _), _)| *jc == c);
        let mut rows = Vec::new();
        let mut failed = false;
        for (&(_, seed), result) in mine {
            match result {
                Ok(reports) => rows.extend(reports.iter().map(|r| MetricsRow::from_report(id, seed, r))),
                Err(e) => {
                    log::error!("config `{id}` seed {seed} failed: {e}");
                    outcome.errors.push(ErrorRow {
                        config_id: id.clone(),
                        seed,
                        error: e.to_string(),
                    });
                    failed = true;
                }
            }
        }
        if !failed {
            outcome.curves.extend(rows);
        }
    }
    outcome.summary = summarize(&outcome.curves)?;
    if let Some(baseline) = &config.baseline {
        let ids: Vec<&str> = config.configs.iter().map(|(id, _)| id.as_str()).collect();
        outcome.significance = significance(&outcome.curves, &ids, baseline);
    }
    Ok(outcome)
}

/// Curves of one config: seeds in first-seen order, each with its epochs
/// sorted.
struct ConfigCurves<'a> {
    id: &'a str,
    runs: Vec<(u64, Vec<&'a MetricsRow>)>,
}

fn group(rows: &[MetricsRow]) -> Vec<ConfigCurves<'_>> {
    let mut out: Vec<ConfigCurves> = Vec::new();
    for row in rows {
        let idx = match out.iter().position(|c| c.id == row.config_id) {
            Some(i) => i,
            None => {
                out.push(ConfigCurves {
                    id: &row.config_id,
                    runs: Vec::new(),
                });
                out.len() - 1
            }
        };
        let runs = &mut out[idx].runs;
        match runs.iter_mut().find(|(s, _)| *s == row.seed) {
            Some((_, v)) => v.push(row),
            None => runs.push((row.seed, vec![row])),
        }
    }
    for c in &mut out {
        for (_, v) in &mut c.runs {
            v.sort_by_key(|r| r.epoch);
        }
    }
    out
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Aggregates curves per config, in first-seen order.
pub fn summarize(rows: &[MetricsRow]) -> Result<Vec<SummaryRow>> {
    let mut out = Vec::new();
    for curves in group(rows) {
        let epochs: Vec<usize> = curves.runs[0].1.iter().map(|r| r.epoch).collect();
        for (seed, run) in &curves.runs {
            if run.iter().map(|r| r.epoch).ne(epochs.iter().copied()) {
                return Err(Error::Schema(format!(
                    "config `{}` seed {seed}: epochs differ from the other seeds",
                    curves.id
                )));
            }
        }
        let at =
            |i: usize, f: fn(&MetricsRow) -> f64| -> Vec<f64> { curves.runs.iter().map(|(_, v)| f(v[i])).collect() };
        let last = epochs.len() - 1;
        let finals = at(last, |r| r.test_f1);
        let mut best = 0;
        let mut best_val = f64::NEG_INFINITY;
        for i in 0..epochs.len() {
            let v = mean(&at(i, |r| r.val_f1));
            if v > best_val {
                best_val = v;
                best = i;
            }
        }
        out.push(SummaryRow {
            config_id: curves.id.to_owned(),
            mean_final_f1: mean(&finals),
            best_epoch: epochs[best],
            best_f1: mean(&at(best, |r| r.test_f1)),
            fraction_at_best: mean(&at(best, |r| r.cumulative_unique_fraction)),
            f1_std: sample_std(&finals),
        });
    }
    Ok(out)
}

fn finals_by_seed<'a>(curves: &[ConfigCurves<'a>], id: &str) -> Option<Vec<(u64, f64)>> {
    let c = curves.iter().find(|c| c.id == id)?;
    Some(
        c.runs
            .iter()
            .filter_map(|(seed, v)| v.last().map(|r| (*seed, r.test_f1)))
            .collect(),
    )
}

/// Paired t-test of each config in `ids` (other than the baseline) against
/// `baseline`, pairing final test F1 by seed.
pub fn significance(rows: &[MetricsRow], ids: &[&str], baseline: &str) -> Vec<SignificanceRow> {
    let curves = group(rows);
    let base = finals_by_seed(&curves, baseline);
    ids.iter()
        .filter(|&&id| id != baseline)
        .map(|&id| {
            let test = match (&base, finals_by_seed(&curves, id)) {
                (Some(base), Some(mine)) => {
                    let (a, b): (Vec<f64>, Vec<f64>) = mine
                        .iter()
                        .filter_map(|(seed, f)| base.iter().find(|(s, _)| s == seed).map(|(_, g)| (*f, *g)))
                        .unzip();
                    paired_t_test(&a, &b)
                }
                _ => Err(Error::Undefined(format!(
                    "no completed runs for `{id}` or `{baseline}`"
                ))),
            };
            let (t, p) = match test {
                Ok(r) => (r.t, r.p),
                Err(e) => {
                    log::warn!("t-test `{id}` vs `{baseline}`: {e}");
                    (f64::NAN, f64::NAN)
                }
            };
            SignificanceRow {
                config_id: id.to_owned(),
                baseline_id: baseline.to_owned(),
                t,
                p,
            }
        })
        .collect()
}

/// Writes a header line and one line per row, `\n`-terminated.
pub fn emit_csv<T: CsvRecord>(rows: &[T], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(file));
    w.write_record(T::COLUMNS)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?
        .flush()
        .map_err(|e| Error::io(path, e))
}

/// Reads a file written by [`emit_csv`], checking the header.
pub fn read_csv<T: CsvRecord + DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let header = r.headers()?.clone();
    if header.iter().ne(T::COLUMNS.iter().copied()) {
        return Err(Error::Schema(format!(
            "{}: expected columns {:?}, found {:?}",
            path.display(),
            T::COLUMNS,
            header.iter().collect::<Vec<_>>()
        )));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Writes `curves.csv`, `summary.csv`, `significance.csv` and `errors.csv`.
pub fn write_outcome(outcome: &ExperimentOutcome, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    emit_csv(&outcome.curves, dir.join("curves.csv"))?;
    emit_csv(&outcome.summary, dir.join("summary.csv"))?;
    emit_csv(&outcome.significance, dir.join("significance.csv"))?;
    emit_csv(&outcome.errors, dir.join("errors.csv"))
}

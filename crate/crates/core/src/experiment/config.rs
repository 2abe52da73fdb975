//! TOML experiment files.
//!
//! ```toml
//! [experiment]
//! runs = 3
//! seed_base = 0
//! out_dir = "results"
//! baseline = "baseline"
//!
//! [dataset]
//! path = "corpus.jsonl"        # or a [dataset.synth] table
//! split = [0.8, 0.1, 0.1]
//! split_seed = 0
//!
//! [defaults]                   # any run field, applied to every config
//! epochs = 5
//!
//! [[config]]
//! id = "baseline"
//!
//! [[config]]
//! id = "enn-entropy"
//! architecture = "enn"
//! acquisition = "entropy"
//!
//! [grid]                       # optional cartesian product over run fields
//! acquisition = ["entropy", "bald"]
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;
use toml::{Table, Value};

use crate::data::{load_dataset, split_dataset, synth_generate, Dataset, SynthSpec};
use crate::error::{Error, Result};
use crate::pipeline::{validate_config, RunConfig};

/// Where the samples come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Path(PathBuf),
    Synth(SynthSpec),
}

/// A parsed and validated experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub runs: usize,
    pub seed_base: u64,
    pub out_dir: PathBuf,
    /// Id of the config the others are tested against.
    pub baseline: Option<String>,
    /// Worker threads; defaults to the available parallelism.
    pub jobs: Option<usize>,
    pub dataset: DatasetSource,
    /// Applied when the samples carry no split tags.
    pub split: [f64; 3],
    pub split_seed: u64,
    /// `(id, config)` in file order, grid cells last.
    pub configs: Vec<(String, RunConfig)>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentSection {
    #[serde(default = "default_runs")]
    runs: usize,
    #[serde(default)]
    seed_base: u64,
    #[serde(default = "default_out_dir")]
    out_dir: PathBuf,
    baseline: Option<String>,
    jobs: Option<usize>,
}

fn default_runs() -> usize {
    3
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("results")
}

fn default_split() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetSection {
    path: Option<PathBuf>,
    synth: Option<SynthSpec>,
    #[serde(default = "default_split")]
    split: [f64; 3],
    #[serde(default)]
    split_seed: u64,
}

impl ExperimentConfig {
    /// Reads a file; relative paths inside it resolve against its directory.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut root: Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        let experiment: ExperimentSection = take_section(&mut root, "experiment")?
            .map(|t| deserialize(t, "[experiment]"))
            .transpose()?
            .unwrap_or_else(|| deserialize(Table::new(), "[experiment]").expect("defaults deserialize"));
        let dataset: DatasetSection = match take_section(&mut root, "dataset")? {
            Some(t) => deserialize(t, "[dataset]")?,
            None => return Err(Error::config("missing [dataset] section")),
        };
        let defaults = take_section(&mut root, "defaults")?.unwrap_or_default();
        let grid = take_section(&mut root, "grid")?;
        let entries = match root.remove("config") {
            Some(Value::Array(items)) => items,
            Some(_) => return Err(Error::config("`config` must be an array of tables ([[config]])")),
            None => Vec::new(),
        };
        if let Some(key) = root.keys().next() {
            return Err(Error::config(format!("unknown top-level key `{key}`")));
        }
        if experiment.runs == 0 {
            return Err(Error::config("experiment.runs must be at least 1"));
        }
        if experiment.jobs == Some(0) {
            return Err(Error::config("experiment.jobs must be at least 1"));
        }
        reject_seed(&defaults, "[defaults]")?;

        let source = match (dataset.path, dataset.synth) {
            (Some(p), None) => DatasetSource::Path(base_dir.join(p)),
            (None, Some(spec)) => {
                spec.validate()?;
                DatasetSource::Synth(spec)
            }
            _ => {
                return Err(Error::config(
                    "[dataset] needs exactly one of `path` or a [dataset.synth] table",
                ))
            }
        };

        let mut configs = Vec::new();
        for entry in entries {
            let Value::Table(mut table) = entry else {
                return Err(Error::config("each [[config]] entry must be a table"));
            };
            let id = match table.remove("id") {
                Some(Value::String(s)) if !s.is_empty() => s,
                _ => return Err(Error::config("each [[config]] needs a nonempty string `id`")),
            };
            reject_seed(&table, &format!("config `{id}`"))?;
            let mut merged = defaults.clone();
            merge(&mut merged, table);
            let run: RunConfig = deserialize(merged, &format!("config `{id}`"))?;
            validate_config(&run).map_err(|e| Error::config(format!("config `{id}`: {e}")))?;
            configs.push((id, run));
        }
        if let Some(grid) = grid {
            reject_seed(&grid, "[grid]")?;
            configs.extend(expand_grid(&defaults, &grid)?);
        }
        if configs.is_empty() {
            return Err(Error::config("no [[config]] entries or [grid] cells"));
        }
        for (i, (id, _)) in configs.iter().enumerate() {
            if configs[..i].iter().any(|(other, _)| other == id) {
                return Err(Error::config(format!("duplicate config id `{id}`")));
            }
        }
        if let Some(b) = &experiment.baseline {
            if !configs.iter().any(|(id, _)| id == b) {
                return Err(Error::config(format!("baseline `{b}` is not a config id")));
            }
        }
        Ok(Self {
            runs: experiment.runs,
            seed_base: experiment.seed_base,
            out_dir: base_dir.join(experiment.out_dir),
            baseline: experiment.baseline,
            jobs: experiment.jobs,
            dataset: source,
            split: dataset.split,
            split_seed: dataset.split_seed,
            configs,
        })
    }

    /// Loads or generates the samples and splits them if they are untagged.
    pub fn load_dataset(&self) -> Result<Dataset> {
        let data = match &self.dataset {
            DatasetSource::Path(p) => load_dataset(p)?,
            DatasetSource::Synth(spec) => synth_generate(spec)?,
        };
        let tagged = data.samples().iter().filter(|s| s.split.is_some()).count();
        if tagged == data.len() {
            Ok(data)
        } else if tagged == 0 {
            split_dataset(&data, self.split, self.split_seed)
        } else {
            Err(Error::Schema(format!(
                "{tagged} of {} samples carry a split tag; tag all or none",
                data.len()
            )))
        }
    }

    /// Seed of run `r` (0-based).
    pub fn seed(&self, run: usize) -> u64 {
        self.seed_base + run as u64
    }
}

fn take_section(root: &mut Table, name: &str) -> Result<Option<Table>> {
    match root.remove(name) {
        None => Ok(None),
        Some(Value::Table(t)) => Ok(Some(t)),
        Some(_) => Err(Error::config(format!("`{name}` must be a table"))),
    }
}

fn deserialize<T: serde::de::DeserializeOwned>(table: Table, what: &str) -> Result<T> {
    Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::config(format!("{what}: {}", e.message())))
}

fn reject_seed(table: &Table, what: &str) -> Result<()> {
    if table.contains_key("seed") {
        return Err(Error::config(format!(
            "{what}: per-run seeds come from experiment.seed_base; remove `seed`"
        )));
    }
    Ok(())
}

/// Recursive overlay: nested tables merge, everything else replaces.
fn merge(base: &mut Table, over: Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

fn render(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Cartesian product of the grid's arrays over `defaults`. Cells that fail
/// validation are skipped with a warning.
fn expand_grid(defaults: &Table, grid: &Table) -> Result<Vec<(String, RunConfig)>> {
    let mut axes = Vec::new();
    for (key, value) in grid {
        match value {
            Value::Array(items) if !items.is_empty() => axes.push((key.clone(), items.clone())),
            _ => return Err(Error::config(format!("[grid] `{key}` must be a nonempty array"))),
        }
    }
    let mut cells: Vec<Vec<(String, Value)>> = vec![Vec::new()];
    for (key, items) in &axes {
        cells = cells
            .into_iter()
            .flat_map(|cell| {
                items.iter().map(move |v| {
                    let mut next = cell.clone();
                    next.push((key.clone(), v.clone()));
                    next
                })
            })
            .collect();
    }
    let mut out = Vec::new();
    for cell in cells {
        let id = cell
            .iter()
            .map(|(k, v)| format!("{k}={}", render(v)))
            .collect::<Vec<_>>()
            .join("/");
        let mut merged = defaults.clone();
        merge(&mut merged, cell.into_iter().collect());
        let run: RunConfig = deserialize(merged, &format!("grid cell `{id}`"))?;
        match validate_config(&run) {
            Ok(_) => out.push((id, run)),
            Err(e) => log::warn!("skipping grid cell `{id}`: {e}"),
        }
    }
    Ok(out)
}

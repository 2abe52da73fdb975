use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use alsched::data::{save_dataset, split_dataset, synth_generate, SynthSpec};
use alsched::experiment::{
    emit_csv, read_csv, run_experiment, significance, summarize, write_outcome, ExperimentConfig, MetricsRow,
};
use alsched::pipeline::validate_config;

#[derive(Parser)]
#[command(name = "alsched", version, about = "Active-learning fine-tuning experiments")]
struct Cli {
    /// Log progress (-v) or debug detail (-vv); RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every config of an experiment file under every seed.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed_base: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        runs: Option<usize>,
        /// Worker threads.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Write a synthetic Gaussian-mixture dataset as JSON lines.
    Synth(SynthArgs),
    /// Parse and check an experiment file without running it.
    Validate { config: PathBuf },
    /// Recompute summary.csv and significance.csv from a curves.csv.
    Report {
        curves: PathBuf,
        /// Config id to test the others against.
        #[arg(long)]
        baseline: Option<String>,
        /// Defaults to the directory holding the curves file.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 100)]
    samples_per_class: usize,
    #[arg(long, default_value_t = 8)]
    feature_dim: usize,
    #[arg(long, default_value_t = 3.0)]
    separation: f64,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated class proportions, e.g. 0.535,0.349,0.116.
    #[arg(long, value_delimiter = ',')]
    class_weights: Option<Vec<f64>>,
    /// Train, validation and test fractions; omit to leave samples untagged.
    #[arg(long, value_delimiter = ',')]
    split: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(command: Command) -> alsched::Result<()> {
    match command {
        Command::Run {
            config,
            seed_base,
            out_dir,
            runs,
            jobs,
        } => {
            let mut cfg = ExperimentConfig::from_path(&config)?;
            if let Some(s) = seed_base {
                cfg.seed_base = s;
            }
            if let Some(d) = out_dir {
                cfg.out_dir = d;
            }
            if let Some(r) = runs {
                if r == 0 {
                    return Err(alsched::Error::Config("--runs must be at least 1".into()));
                }
                cfg.runs = r;
            }
            if jobs.is_some() {
                cfg.jobs = jobs;
            }
            let outcome = run_experiment(&cfg)?;
            write_outcome(&outcome, &cfg.out_dir)?;
            for s in &outcome.summary {
                println!(
                    "{}\tfinal_f1={:.4}\tbest_epoch={}\tbest_f1={:.4}\tfraction={:.4}\tstd={:.4}",
                    s.config_id, s.mean_final_f1, s.best_epoch, s.best_f1, s.fraction_at_best, s.f1_std
                );
            }
            for e in &outcome.errors {
                eprintln!("failed: {} seed {}: {}", e.config_id, e.seed, e.error);
            }
            println!("wrote results to {}", cfg.out_dir.display());
            Ok(())
        }
        Command::Synth(args) => {
            let spec = SynthSpec {
                classes: args.classes,
                samples_per_class: args.samples_per_class,
                feature_dim: args.feature_dim,
                separation: args.separation,
                noise: args.noise,
                seed: args.seed,
                class_weights: args.class_weights,
            };
            let mut data = synth_generate(&spec)?;
            if let Some(f) = args.split {
                let [train, val, test] = f[..] else {
                    return Err(alsched::Error::Config("--split takes three fractions".into()));
                };
                data = split_dataset(&data, [train, val, test], args.split_seed)?;
            }
            save_dataset(&data, &args.out)?;
            println!("wrote {} samples to {}", data.len(), args.out.display());
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            for (id, run) in &cfg.configs {
                let v = validate_config(run)?;
                println!("ok\t{id}");
                for w in v.warnings {
                    println!("warning\t{id}\t{w}");
                }
            }
            println!(
                "{} configs x {} runs, seeds {}..={}",
                cfg.configs.len(),
                cfg.runs,
                cfg.seed(0),
                cfg.seed(cfg.runs - 1)
            );
            Ok(())
        }
        Command::Report {
            curves,
            baseline,
            out_dir,
        } => {
            let rows: Vec<MetricsRow> = read_csv(&curves)?;
            let summary = summarize(&rows)?;
            let dir = out_dir.unwrap_or_else(|| curves.parent().map(PathBuf::from).unwrap_or_default());
            std::fs::create_dir_all(&dir).map_err(|e| alsched::Error::Io {
                path: dir.clone(),
                source: e,
            })?;
            emit_csv(&summary, dir.join("summary.csv"))?;
            if let Some(b) = baseline {
                let ids: Vec<&str> = summary.iter().map(|s| s.config_id.as_str()).collect();
                if !ids.contains(&b.as_str()) {
                    return Err(alsched::Error::Config(format!(
                        "baseline `{b}` not found in {}",
                        curves.display()
                    )));
                }
                emit_csv(&significance(&rows, &ids, &b), dir.join("significance.csv"))?;
            }
            println!("wrote report to {}", dir.display());
            Ok(())
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cbrm::commands::{self, DataSource};
use cbrm::reporting::PlotMetric;
use cbrm::{AcquisitionKind, Error, ExperimentConfig, GatingMode};

#[derive(Parser)]
#[command(name = "cbrm", version, about = "Active learning for concept bottleneck reward models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON experiment config; defaults are used for absent fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Field override, `key=value`; dotted keys reach nested fields.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    gating: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut config = commands::load_config(self.config.as_deref(), &self.overrides)?;
        if let Some(s) = &self.strategy {
            config.acquisition = s.parse::<AcquisitionKind>()?;
        }
        if let Some(g) = &self.gating {
            config.gating_mode = g.parse::<GatingMode>()?;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct DataArgs {
    /// CBRE embeddings file; without it a synthetic world is drawn per seed.
    #[arg(long, requires = "annotations")]
    embeddings: Option<PathBuf>,
    #[arg(long, requires = "embeddings")]
    annotations: Option<PathBuf>,
}

impl DataArgs {
    fn source(&self) -> DataSource {
        match (&self.embeddings, &self.annotations) {
            (Some(e), Some(a)) => DataSource::Files {
                embeddings: e.clone(),
                annotations: a.clone(),
            },
            _ => DataSource::Synthetic,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Concept,
    Preference,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (embeddings, annotations, world).
    Gen {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the acquisition loop for one or more seeds.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        data: DataArgs,
        /// `A..B` (inclusive) or a single seed; overrides --seed.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        dump_scores: bool,
    },
    /// Aggregate runs, plot them and check the acceptance thresholds.
    Compare {
        /// Run directories or directories containing them.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "eig")]
        candidate: String,
        #[arg(long, default_value = "random")]
        baseline: String,
    },
    /// Linear-probe leakage diagnostic.
    Probe {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 1.0)]
        ridge: f64,
        #[arg(long, default_value_t = 0.9)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plot an aggregate CSV or a set of run directories as SVG.
    Plot {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "concept")]
        metric: Metric,
        #[arg(long)]
        out: PathBuf,
    },
}

fn execute(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Gen { config, out } => {
            let config = config.resolve()?;
            let paths = commands::gen(&config, &out)?;
            println!("{}", paths.embeddings.display());
            println!("{}", paths.annotations.display());
            println!("{}", paths.world.display());
        }
        Command::Run {
            config,
            data,
            seeds,
            out,
            dump_scores,
        } => {
            let config = config.resolve()?;
            let seeds = match seeds {
                Some(s) => commands::parse_seeds(&s)?,
                None => config.seed..=config.seed,
            };
            for dir in commands::run(&config, &data.source(), seeds, &out, dump_scores)? {
                println!("{}", dir.display());
            }
        }
        Command::Compare {
            runs,
            out,
            candidate,
            baseline,
        } => {
            candidate.parse::<AcquisitionKind>()?;
            baseline.parse::<AcquisitionKind>()?;
            let result = commands::compare(&runs, &out, &candidate, &baseline)?;
            print!("{}", result.verdict.report());
            if !result.verdict.pass {
                return Ok(ExitCode::from(4));
            }
        }
        Command::Probe {
            config,
            data,
            ridge,
            threshold,
            out,
        } => {
            let config = config.resolve()?;
            let report = commands::probe(&config, &data.source(), ridge, threshold, &out)?;
            for (name, acc) in config.concept_names().iter().zip(&report.per_concept) {
                println!("{name}\t{acc:.4}");
            }
            println!("mean\t{:.4}", report.mean);
            println!("leakage_suspected\t{}", report.leakage_suspected);
        }
        Command::Plot { inputs, metric, out } => {
            let metric = match metric {
                Metric::Concept => PlotMetric::Concept,
                Metric::Preference => PlotMetric::Preference,
            };
            commands::plot(&inputs, metric, &out)?;
            println!("{}", out.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = std::env::var("CBRM_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

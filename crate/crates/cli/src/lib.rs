//! `poretopo` command line: generate, characterize, featurize, train,
//! evaluate, hpo and ablate.

mod commands;
pub mod config;
pub mod data;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use poretopo::descriptors::Axis;

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "poretopo", version, about = "Three-phase microstructure descriptors, persistence images and regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON pipeline configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sample-level parallelism (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic grids and a manifest.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        dims: Option<usize>,
        /// µm per voxel.
        #[arg(long)]
        voxel_size: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Compute the descriptor table of a grid directory.
    Characterize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Transport axis for tortuosity: x, y or z.
        #[arg(long)]
        axis: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Persistence diagrams and images of a grid directory, with the split.
    Featurize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "C")]
        c: Option<f64>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        gamma: Option<i64>,
        #[arg(long)]
        res: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Train independent runs for one target.
    Train {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        target: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Test-split metrics of every run in a model directory.
    Evaluate {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        descriptors: PathBuf,
        /// Directory written by `train`.
        #[arg(long)]
        models: PathBuf,
        /// Report directory; receives metrics.csv and metrics.json.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Two-phase hyperparameter search on the pretext target.
    Hpo {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        descriptors: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        target: Option<String>,
        #[arg(long)]
        n1: Option<usize>,
        #[arg(long)]
        n2: Option<usize>,
        #[arg(long)]
        max_epochs: Option<usize>,
        /// Continue from an existing trial log in `out`.
        #[arg(long)]
        resume: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Retrain without one phase's channels and compare against the full model.
    Ablate {
        #[command(flatten)]
        model: ModelArgs,
        /// Comma-separated targets.
        #[arg(long, value_delimiter = ',')]
        target: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    descriptors: PathBuf,
    #[arg(long, default_value_t = 3)]
    runs: usize,
    /// Phases whose three channels are removed: ni, ysz or pore (comma-separated).
    #[arg(long, value_delimiter = ',')]
    drop_phase: Vec<String>,
    #[arg(long)]
    max_epochs: Option<usize>,
}

impl Common {
    fn load(&self) -> CliResult<PipelineConfig> {
        let mut cfg = PipelineConfig::load(self.config.as_deref())?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }

    fn pool(&self) -> CliResult<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start {} workers: {e}", self.jobs)))
    }
}

impl ModelArgs {
    fn apply(&self, cfg: &mut PipelineConfig) -> CliResult<()> {
        if let Some(m) = self.max_epochs {
            cfg.train.max_epochs = m;
        }
        if self.runs == 0 {
            return Err(CliError::Usage("--runs must be at least 1".into()));
        }
        Ok(())
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate { out, n, dims, voxel_size, common } => {
            let mut cfg = common.load()?;
            if let Some(n) = n {
                cfg.generator.n = n;
            }
            if let Some(d) = dims {
                cfg.generator.dims = d;
            }
            if let Some(v) = voxel_size {
                cfg.generator.voxel_size = v;
            }
            common.pool()?.install(|| commands::generate(&cfg, &out))
        }
        Command::Characterize { input, out, axis, common } => {
            let mut cfg = common.load()?;
            if let Some(a) = axis {
                cfg.tortuosity.axis = Axis::parse(&a).ok_or_else(|| CliError::Usage(format!("unknown axis {a:?}")))?;
            }
            common.pool()?.install(|| commands::characterize(&cfg, &input, &out))
        }
        Command::Featurize { input, out, c, sigma, gamma, res, common } => {
            let mut cfg = common.load()?;
            if let Some(c) = c {
                cfg.pi.c = c;
            }
            if let Some(s) = sigma {
                cfg.pi.sigma = s;
            }
            if let Some(g) = gamma {
                cfg.pi.gamma = u32::try_from(g).ok().filter(|g| *g >= 1).ok_or_else(|| {
                    CliError::Usage(format!("--gamma must be a positive integer, got {g}"))
                })?;
            }
            if let Some(r) = res {
                cfg.pi.resolution = r;
            }
            common.pool()?.install(|| commands::featurize(&cfg, &input, &out))
        }
        Command::Train { model, target, out, common } => {
            let mut cfg = common.load()?;
            model.apply(&mut cfg)?;
            let target = data::parse_target(&target)?;
            let drop = parse_phases(&model.drop_phase)?;
            common.pool()?.install(|| {
                commands::train(&cfg, &model.features, &model.descriptors, target, model.runs, &drop, &out)
            })
        }
        Command::Evaluate { features, descriptors, models, out, common } => {
            let cfg = common.load()?;
            commands::evaluate(&cfg, &features, &descriptors, &models, &out)
        }
        Command::Hpo { features, descriptors, out, target, n1, n2, max_epochs, resume, common } => {
            let mut cfg = common.load()?;
            if let Some(t) = target {
                cfg.hpo.target = t;
            }
            if let Some(n) = n1 {
                cfg.hpo.n1 = n;
            }
            if let Some(n) = n2 {
                cfg.hpo.n2 = n;
            }
            if let Some(m) = max_epochs {
                cfg.train.max_epochs = m;
            }
            common.pool()?.install(|| commands::hpo(&cfg, &features, &descriptors, &out, resume))
        }
        Command::Ablate { model, target, out, common } => {
            let mut cfg = common.load()?;
            model.apply(&mut cfg)?;
            if target.is_empty() {
                return Err(CliError::Usage("--target is required".into()));
            }
            let targets = target.iter().map(|t| data::parse_target(t)).collect::<CliResult<Vec<_>>>()?;
            let mut drop = parse_phases(&model.drop_phase)?;
            if drop.is_empty() {
                drop = poretopo::grid::PhaseLabel::ALL.to_vec();
            }
            common.pool()?.install(|| {
                commands::ablate(&cfg, &model.features, &model.descriptors, &targets, &drop, model.runs, &out)
            })
        }
    }
}

fn parse_phases(v: &[String]) -> CliResult<Vec<poretopo::grid::PhaseLabel>> {
    v.iter().map(|s| data::parse_phase(s)).collect()
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

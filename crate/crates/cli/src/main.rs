//! `featreg`: deformable registration with intensity and feature-space
//! objectives, plus the experiment drivers built on it.

mod commands;
mod config;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use featreg::harness::SweepKind;
use featreg::ObjectiveSpec;
use serde_json::json;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::io::OutDir;

#[derive(Parser)]
#[command(name = "featreg", version, about = "B-spline image registration with learned-feature similarity")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; command-line flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory [default: $FEATREG_OUT/<command>, else ./featreg-out/<command>].
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads for independent pairs and sweep points.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Seed for synthetic data and phantoms.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

/// Objective and optimizer overrides.
#[derive(Args)]
struct Tuning {
    /// Optimizer iterations.
    #[arg(long)]
    iterations: Option<usize>,
    /// Optimizer step size, in pixels.
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Control points per axis.
    #[arg(long, value_name = "N")]
    control_points: Option<usize>,
    /// Regularizer weight.
    #[arg(long)]
    lambda: Option<f64>,
    /// Feature-term weight of the combined objective.
    #[arg(long)]
    alpha: Option<f64>,
}

/// Synthetic corpus overrides.
#[derive(Args)]
struct SynthArgs {
    /// Number of synthetic pairs.
    #[arg(long)]
    count: Option<usize>,
    /// Side length of synthetic images.
    #[arg(long)]
    size: Option<usize>,
    /// Maximum ground-truth displacement, in pixels.
    #[arg(long)]
    max_disp: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Register a moving image onto a fixed image.
    Register {
        /// Fixed image (.npy).
        #[arg(long)]
        fixed: Option<PathBuf>,
        /// Moving image (.npy).
        #[arg(long)]
        moving: Option<PathBuf>,
        /// Fixed segmentation; enables evaluation.
        #[arg(long)]
        fixed_seg: Option<PathBuf>,
        /// Moving segmentation; enables evaluation.
        #[arg(long)]
        moving_seg: Option<PathBuf>,
        #[command(flatten)]
        tuning: Tuning,
    },
    /// Distance between features of an image and rigidly moved copies of it.
    Sweep {
        /// rotation (33 steps over +-90 deg) or translation (97 steps over +-57.6 mm).
        #[arg(long)]
        kind: Option<SweepKind>,
        /// Image to sweep [default: synthetic phantom].
        #[arg(long)]
        image: Option<PathBuf>,
    },
    /// Combined objective over a grid of feature weights.
    AlphaSweep {
        /// Case list written by `synth` [default: generate a synthetic corpus].
        #[arg(long)]
        cases: Option<PathBuf>,
        #[command(flatten)]
        tuning: Tuning,
        #[command(flatten)]
        synth: SynthArgs,
    },
    /// Table of registration quality per method, with the initial alignment first.
    Benchmark {
        /// Case list written by `synth` [default: generate a synthetic corpus].
        #[arg(long)]
        cases: Option<PathBuf>,
        #[command(flatten)]
        tuning: Tuning,
        #[command(flatten)]
        synth: SynthArgs,
    },
    /// Score a displacement by warping the moving segmentation onto the fixed one.
    Eval {
        #[arg(long)]
        fixed_seg: Option<PathBuf>,
        #[arg(long)]
        moving_seg: Option<PathBuf>,
        /// `2 x H x W` displacement [default: identity].
        #[arg(long)]
        displacement: Option<PathBuf>,
    },
    /// Write a synthetic corpus with ground-truth fields and a case list.
    Synth {
        #[command(flatten)]
        synth: SynthArgs,
    },
    /// Render the first principal components of a feature map as a PNG.
    PcaViz {
        /// Image to encode [default: synthetic phantom].
        #[arg(long)]
        image: Option<PathBuf>,
    },
    /// Difference between encoding a warped image and warping its features.
    Commutativity {
        /// Image to encode [default: synthetic phantom].
        #[arg(long)]
        image: Option<PathBuf>,
        /// `2 x H x W` displacement [default: random smooth field].
        #[arg(long)]
        displacement: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Register { .. } => "register",
            Command::Sweep { .. } => "sweep",
            Command::AlphaSweep { .. } => "alpha-sweep",
            Command::Benchmark { .. } => "benchmark",
            Command::Eval { .. } => "eval",
            Command::Synth { .. } => "synth",
            Command::PcaViz { .. } => "pca-viz",
            Command::Commutativity { .. } => "commutativity",
        }
    }
}

fn set<T>(slot: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *slot = v;
    }
}

impl Tuning {
    fn apply(&self, cfg: &mut RunConfig, default_objective: ObjectiveSpec) {
        if self.iterations.is_some() || self.learning_rate.is_some() || self.control_points.is_some() {
            let mut o = cfg.optimizer.unwrap_or_default();
            o.iterations = self.iterations.unwrap_or(o.iterations);
            o.learning_rate = self.learning_rate.unwrap_or(o.learning_rate);
            if let Some(n) = self.control_points {
                o.control_points = [n, n];
            }
            cfg.optimizer = Some(o);
        }
        if self.lambda.is_some() || self.alpha.is_some() {
            let o = cfg.objective.get_or_insert(default_objective);
            o.lambda = self.lambda.unwrap_or(o.lambda);
            o.alpha = self.alpha.unwrap_or(o.alpha);
        }
    }
}

impl SynthArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let s = &mut cfg.synthetic;
        s.count = self.count.unwrap_or(s.count);
        s.size = self.size.unwrap_or(s.size);
        s.max_disp = self.max_disp.unwrap_or(s.max_disp);
    }
}

fn output_dir(common: &Common, cfg: &RunConfig, command: &str) -> PathBuf {
    if let Some(o) = &common.out {
        return o.clone();
    }
    if let Some(o) = &cfg.output_dir {
        return o.clone();
    }
    let root = std::env::var_os("FEATREG_OUT").map_or_else(|| PathBuf::from("featreg-out"), PathBuf::from);
    root.join(command)
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    if let Some(n) = cli.common.jobs {
        if n == 0 {
            return Err(CliError::config("jobs", "--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config("jobs", e.to_string()))?;
    }
    let mut cfg = match &cli.common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.seed = cli.common.seed.unwrap_or(cfg.seed);
    let name = cli.command.name();
    match &cli.command {
        Command::Register {
            fixed,
            moving,
            fixed_seg,
            moving_seg,
            tuning,
        } => {
            let i = &mut cfg.inputs;
            set(&mut i.fixed, fixed.clone());
            set(&mut i.moving, moving.clone());
            set(&mut i.fixed_seg, fixed_seg.clone());
            set(&mut i.moving_seg, moving_seg.clone());
            tuning.apply(&mut cfg, commands::default_objective());
        }
        Command::Sweep { kind, image } => {
            cfg.sweep.kind = kind.unwrap_or(cfg.sweep.kind);
            set(&mut cfg.inputs.image, image.clone());
        }
        Command::AlphaSweep { cases, tuning, synth } => {
            set(&mut cfg.inputs.cases, cases.clone());
            tuning.apply(&mut cfg, commands::default_alpha_template());
            synth.apply(&mut cfg);
        }
        Command::Benchmark { cases, tuning, synth } => {
            set(&mut cfg.inputs.cases, cases.clone());
            tuning.apply(&mut cfg, commands::default_objective());
            synth.apply(&mut cfg);
        }
        Command::Eval {
            fixed_seg,
            moving_seg,
            displacement,
        } => {
            set(&mut cfg.inputs.fixed_seg, fixed_seg.clone());
            set(&mut cfg.inputs.moving_seg, moving_seg.clone());
            set(&mut cfg.inputs.displacement, displacement.clone());
        }
        Command::Synth { synth } => synth.apply(&mut cfg),
        Command::PcaViz { image } => set(&mut cfg.inputs.image, image.clone()),
        Command::Commutativity { image, displacement } => {
            set(&mut cfg.inputs.image, image.clone());
            set(&mut cfg.inputs.displacement, displacement.clone());
        }
    }
    let dir = output_dir(&cli.common, &cfg, name);
    cfg.output_dir = Some(dir.clone());
    let out = OutDir::new(dir);
    let cfg = &mut cfg;
    match cli.command {
        Command::Register { .. } => commands::register_cmd(cfg, &out),
        Command::Sweep { .. } => commands::sweep_cmd(cfg, &out),
        Command::AlphaSweep { .. } => commands::alpha_sweep_cmd(cfg, &out),
        Command::Benchmark { .. } => commands::benchmark_cmd(cfg, &out),
        Command::Eval { .. } => commands::eval_cmd(cfg, &out),
        Command::Synth { .. } => commands::synth_cmd(cfg, &out),
        Command::PcaViz { .. } => commands::pca_viz_cmd(cfg, &out),
        Command::Commutativity { .. } => commands::commutativity_cmd(cfg, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Config {
                field: None,
                message: e.render().to_string(),
            };
            eprintln!("{}", err.to_json());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(files) => {
            let files: Vec<String> = files.iter().map(|p| p.display().to_string()).collect();
            println!("{}", json!({ "outputs": files }));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

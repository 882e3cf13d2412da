use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sindyc::engine::RolloutMode;
use sindyc::tuner::{OptimizerKind, SelectionPolicy, TuneTarget};

mod commands;
mod error;
mod files;

use commands::{FitArgs, TuneArgs};
use error::CliResult;

#[derive(Parser)]
#[command(name = "sindyc", version, about = "Sparse identification of induction-motor models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    Dynamics,
    Torque,
    Ump,
}

impl From<Target> for TuneTarget {
    fn from(t: Target) -> Self {
        match t {
            Target::Dynamics => TuneTarget::Dynamics,
            Target::Torque => TuneTarget::Torque,
            Target::Ump => TuneTarget::Ump,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Lasso,
    Stlsq,
    Sr3,
}

impl From<Kind> for OptimizerKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Lasso => OptimizerKind::Lasso,
            Kind::Stlsq => OptimizerKind::Stlsq,
            Kind::Sr3 => OptimizerKind::Sr3,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    MinError,
    MaxSparsity,
    Knee,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    ClosedLoop,
    TeacherForced,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate training and test datasets for the three rotor configurations.
    Simulate {
        /// JSON with optional `motor`, `simulation` and `suite` sections.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the master seed of the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Random search over libraries and optimizers.
    Tune {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        target: Target,
        /// JSON search space; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_delimiter = ',')]
        libraries: Option<Vec<u8>>,
        #[arg(long, value_enum, value_delimiter = ',')]
        optimizers: Option<Vec<Kind>>,
        #[arg(long, value_enum, default_value = "knee")]
        policy: Policy,
        #[arg(long, default_value = "tune")]
        out: PathBuf,
    },
    /// Fit one model with fixed hyperparameters.
    Fit {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        target: Target,
        #[arg(long, default_value_t = 1)]
        library: u8,
        #[arg(long, value_enum, default_value = "stlsq")]
        optimizer: Kind,
        #[arg(long, default_value_t = 1e-8)]
        alpha: f64,
        #[arg(long, default_value_t = 1e-4)]
        threshold: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value_t = 1e-9)]
        nu: f64,
        #[arg(long, default_value = "fit")]
        out: PathBuf,
    },
    /// Score models on a test dataset and write plot data.
    Evaluate {
        #[arg(long = "model", required = true)]
        models: Vec<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "closed-loop")]
        mode: Mode,
        #[arg(long, default_value = "eval")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate { config, seed, out } => commands::simulate(config.as_deref(), seed, &out),
        Command::Tune {
            dataset,
            target,
            config,
            trials,
            seed,
            libraries,
            optimizers,
            policy,
            out,
        } => commands::tune(&TuneArgs {
            dataset,
            target: target.into(),
            config,
            trials,
            seed,
            libraries,
            optimizers: optimizers.map(|v| v.into_iter().map(Into::into).collect()),
            policy: match policy {
                Policy::MinError => SelectionPolicy::MinError,
                Policy::MaxSparsity => SelectionPolicy::MaxSparsity,
                Policy::Knee => SelectionPolicy::Knee,
            },
            out,
        }),
        Command::Fit {
            dataset,
            target,
            library,
            optimizer,
            alpha,
            threshold,
            lambda,
            nu,
            out,
        } => commands::fit(&FitArgs {
            dataset,
            target: target.into(),
            library,
            optimizer: optimizer.into(),
            alpha,
            threshold,
            lambda,
            nu,
            out,
        }),
        Command::Evaluate {
            models,
            dataset,
            mode,
            out,
        } => {
            let mode = match mode {
                Mode::ClosedLoop => RolloutMode::ClosedLoop,
                Mode::TeacherForced => RolloutMode::TeacherForced,
            };
            commands::evaluate_cmd(&models, &dataset, mode, &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

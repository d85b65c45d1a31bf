//! `cdm`: train, sample, score and verify classification diffusion models.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use cdm_core::CdmError;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "cdm",
    version,
    about = "Classification diffusion models on toy densities"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a TOML config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for the checkpoint, metrics and summary.
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// Override the config's loss mode.
        #[arg(long, value_enum)]
        loss_mode: Option<LossModeArg>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Suppress per-interval metric lines.
        #[arg(long)]
        quiet: bool,
    },
    /// Generate samples from a checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "ddim")]
        sampler: SamplerArg,
        /// Timesteps visited (ddim, ot_euler); all of them when omitted.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
        #[arg(long, value_enum, default_value = "ema")]
        params: ParamsArg,
        #[arg(long, value_enum, default_value = "beta")]
        sigma: SigmaArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Single-pass negative log-likelihood of the rows of a CSV file.
    Nll {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0)]
        t: usize,
        #[arg(long, value_enum, default_value = "ema")]
        params: ParamsArg,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Denoising curve, confusion matrix and summary metrics.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// TOML density description; defaults to the training data.
        #[arg(long)]
        density: Option<PathBuf>,
        #[arg(long, default_value = "eval")]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        n_per_t: usize,
        /// Evaluate every k-th timestep of the curve.
        #[arg(long, default_value_t = 1)]
        t_stride: usize,
        #[arg(long, default_value_t = 10)]
        bins: usize,
        #[arg(long, default_value_t = 5000)]
        n_class: usize,
        #[arg(long, default_value_t = 2000)]
        n_nll: usize,
        #[arg(long, default_value_t = 1_000_003)]
        seed: u64,
        #[arg(long, value_enum, default_value = "ema")]
        params: ParamsArg,
    },
    /// Run a numerical verification suite; exit code 4 on failure.
    Verify {
        #[arg(long, value_enum)]
        suite: SuiteArg,
        /// TOML density description; a built-in two-component mixture when
        /// omitted.
        #[arg(long)]
        density: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "ddpm_linear")]
        schedule: ScheduleArg,
        #[arg(long, default_value_t = 100)]
        steps: usize,
        #[arg(long, default_value_t = 200)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Override the suite's tolerance.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Print the default training config.
    PrintConfig,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum LossModeArg {
    Both,
    CeOnly,
    MseOnly,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum SamplerArg {
    Ddpm,
    Ddim,
    OtEuler,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Raw,
}

#[derive(Clone, Copy, ValueEnum)]
enum ParamsArg {
    Ema,
    Raw,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum SigmaArg {
    Beta,
    PosteriorVariance,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Theorem1,
    Theorem2,
    Tweedie,
    Gradcheck,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum ScheduleArg {
    DdpmLinear,
    TreUniform,
    Ot,
}

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum CliError {
    Core(CdmError),
    Invalid(String),
    Verification(String),
}

impl From<CdmError> for CliError {
    fn from(e: CdmError) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_numeric() => 3,
            CliError::Core(_) | CliError::Invalid(_) => 2,
            CliError::Verification(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Invalid(m) => write!(f, "{m}"),
            CliError::Verification(m) => write!(f, "verification failed: {m}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            config,
            out,
            loss_mode,
            steps,
            seed,
            quiet,
        } => commands::train(commands::TrainArgs {
            config,
            out,
            loss_mode: loss_mode.map(|m| match m {
                LossModeArg::Both => cdm_core::LossMode::Both,
                LossModeArg::CeOnly => cdm_core::LossMode::CeOnly,
                LossModeArg::MseOnly => cdm_core::LossMode::MseOnly,
            }),
            steps,
            seed,
            quiet,
        }),
        Command::Sample {
            checkpoint,
            sampler,
            steps,
            n,
            seed,
            format,
            params,
            sigma,
            out,
        } => commands::sample(commands::SampleArgs {
            checkpoint,
            sampler: match sampler {
                SamplerArg::Ddpm => cdm_core::SamplerKind::Ddpm,
                SamplerArg::Ddim => cdm_core::SamplerKind::Ddim,
                SamplerArg::OtEuler => cdm_core::SamplerKind::OtEuler,
            },
            steps,
            n,
            seed,
            format: match format {
                FormatArg::Csv => cdm_core::sample::SampleFormat::Csv,
                FormatArg::Raw => cdm_core::sample::SampleFormat::Raw,
            },
            params: params.into(),
            sigma: match sigma {
                SigmaArg::Beta => cdm_core::SigmaChoice::Beta,
                SigmaArg::PosteriorVariance => cdm_core::SigmaChoice::PosteriorVariance,
            },
            out,
        }),
        Command::Nll {
            checkpoint,
            data,
            t,
            params,
            out,
        } => commands::nll(&checkpoint, &data, t, params.into(), out.as_deref()),
        Command::Eval {
            checkpoint,
            density,
            out,
            n_per_t,
            t_stride,
            bins,
            n_class,
            n_nll,
            seed,
            params,
        } => commands::eval(commands::EvalArgs {
            checkpoint,
            density,
            out,
            n_per_t,
            t_stride,
            bins,
            n_class,
            n_nll,
            seed,
            params: params.into(),
        }),
        Command::Verify {
            suite,
            density,
            schedule,
            steps,
            points,
            seed,
            tol,
        } => commands::verify(commands::VerifyArgs {
            suite: match suite {
                SuiteArg::Theorem1 => commands::Suite::Theorem1,
                SuiteArg::Theorem2 => commands::Suite::Theorem2,
                SuiteArg::Tweedie => commands::Suite::Tweedie,
                SuiteArg::Gradcheck => commands::Suite::Gradcheck,
            },
            density,
            schedule: match schedule {
                ScheduleArg::DdpmLinear => cdm_core::ScheduleKind::DdpmLinear,
                ScheduleArg::TreUniform => cdm_core::ScheduleKind::TreUniform,
                ScheduleArg::Ot => cdm_core::ScheduleKind::Ot,
            },
            steps,
            points,
            seed,
            tol,
        }),
        Command::PrintConfig => {
            print!("{}", commands::default_config().to_toml_string());
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

impl From<ParamsArg> for cdm_core::ParamSet {
    fn from(p: ParamsArg) -> Self {
        match p {
            ParamsArg::Ema => cdm_core::ParamSet::Ema,
            ParamsArg::Raw => cdm_core::ParamSet::Raw,
        }
    }
}

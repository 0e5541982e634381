//! `vseg`: preprocess, augment, train, segment and evaluate retinal vessel
//! segmentation models.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use vseg_core::model::WidthFactor;

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] vseg_core::Error),
}

impl CliError {
    /// 1 usage/config, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> u8 {
        use vseg_core::Error as E;
        match self {
            CliError::Config(_) | CliError::Core(E::InvalidArgument { .. }) => 1,
            CliError::Core(E::NonFiniteLoss { .. } | E::NonFinite { .. }) => 3,
            CliError::Data(_) | CliError::Core(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "vseg", version, about = "Retinal vessel segmentation with an Inception-encoder U-Net")]
struct Cli {
    /// TOML configuration file
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// random seed, overrides train.seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Apply CLAHE, gamma correction and the 5x5 median filter to every image in a directory
    Preprocess { input: PathBuf, output: PathBuf },
    /// Write the 60 crop/rotation/flip variants of every image/mask pair
    Augment {
        /// directory with images/ and masks/
        input: PathBuf,
        output: PathBuf,
    },
    /// Train one model per fold of the configured split protocol
    Train {
        /// dataset root with images/ and masks/ (default paths.data_dir)
        #[arg(long)]
        data: Option<PathBuf>,
        /// output directory (default paths.output_dir)
        #[arg(long)]
        out: Option<PathBuf>,
        /// channel width multiplier, e.g. 1/8
        #[arg(long)]
        width_factor: Option<WidthFactor>,
        /// weight archive to start from; unmatched names are reported, not fatal
        #[arg(long, value_name = "ARCHIVE")]
        init_weights: Option<PathBuf>,
    },
    /// Segment images, writing <stem>_mask.png and <stem>_overlay.png
    Segment {
        /// trained weight archive
        #[arg(long, value_name = "ARCHIVE")]
        weights: PathBuf,
        #[arg(long)]
        width_factor: Option<WidthFactor>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Score fold{k}.vswa on fold k's test images and write a metric CSV
    Evaluate {
        #[arg(long)]
        data: Option<PathBuf>,
        /// directory holding fold{k}.vswa (default paths.output_dir)
        #[arg(long)]
        weights_dir: Option<PathBuf>,
        #[arg(long)]
        width_factor: Option<WidthFactor>,
        /// CSV path (default <paths.output_dir>/eval.csv)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if cli.seed.is_some() {
        cfg.train.seed = cli.seed;
    }
    match cli.command {
        Command::Preprocess { input, output } => commands::preprocess(&cfg, &input, &output),
        Command::Augment { input, output } => commands::augment(&input, &output),
        Command::Train {
            data,
            out,
            width_factor,
            init_weights,
        } => commands::train(
            &cfg,
            commands::TrainArgs {
                data,
                out,
                width_factor,
                init_weights,
            },
        ),
        Command::Segment {
            weights,
            width_factor,
            out,
            images,
        } => commands::segment(&cfg, &weights, width_factor, &images, &out),
        Command::Evaluate {
            data,
            weights_dir,
            width_factor,
            out,
        } => commands::evaluate_cmd(&cfg, data, weights_dir, width_factor, out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let matches = Cli::command().after_long_help(config::help_text()).try_get_matches();
    let cli = match matches.and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_error_kind() {
        use vseg_core::Error as E;
        assert_eq!(CliError::Config("x".into()).exit_code(), 1);
        assert_eq!(CliError::Core(E::InvalidArgument { op: "model", msg: "x".into() }).exit_code(), 1);
        assert_eq!(CliError::Core(E::Data("x".into())).exit_code(), 2);
        assert_eq!(CliError::Core(E::WeightMismatch("x".into())).exit_code(), 2);
        assert_eq!(CliError::Core(E::NonFiniteLoss { epoch: 3, batch: 1 }).exit_code(), 3);
    }
}

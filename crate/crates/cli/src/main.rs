use std::path::PathBuf;
use std::process::ExitCode;

use bfc_sim::config::{self, ConfigError};
use bfc_sim::experiments::{self, Experiment};
use bfc_sim::manifest::{manifest, write_outputs};
use clap::{Parser, Subcommand};

/// Exit status for an invalid or unreadable configuration.
const EXIT_CONFIG: u8 = 2;
/// Exit status for a failed simulation or an unwritable output directory.
const EXIT_RUN: u8 = 1;

#[derive(Parser)]
#[command(name = "bfc-sim", version, about = "Biphoton frequency comb simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment, or all of them, and write its outputs.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        experiment: Experiment,
        /// Overrides `source.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; falls back to BFC_SIM_OUT, then `output_dir`.
        #[arg(long, env = "BFC_SIM_OUT")]
        out: Option<PathBuf>,
    },
    /// Parse and check a configuration without running anything.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load(path: &std::path::Path) -> Result<config::LoadedConfig, ExitCode> {
    config::load(path).map_err(|e: ConfigError| {
        eprintln!("error: {e}");
        ExitCode::from(EXIT_CONFIG)
    })
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Validate { config } => match load(&config) {
            Ok(c) => {
                let (lo, hi) = c.config.k_range();
                println!(
                    "{}: ok ({} sidebands from S{}, JSI scan S{lo}..S{hi})",
                    config.display(),
                    c.config.ring.n_sidebands,
                    c.config.ring.min_sideband
                );
                ExitCode::SUCCESS
            }
            Err(code) => code,
        },
        Command::Run {
            config,
            experiment,
            seed,
            out,
        } => {
            let mut loaded = match load(&config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            if let Some(s) = seed {
                loaded.config.source.seed = s;
            }
            let cfg = &loaded.config;
            let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            let result = match experiments::run(cfg, experiment) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_RUN);
                }
            };
            for w in &result.warnings {
                eprintln!("warning: {w}");
            }
            let text = manifest(
                &loaded.raw,
                cfg.source.seed,
                experiment.name(),
                &result.artifacts,
            );
            if let Err(e) = write_outputs(&dir, &result.artifacts, &text) {
                eprintln!("error: cannot write outputs: {e}");
                return ExitCode::from(EXIT_RUN);
            }
            println!(
                "wrote {} outputs to {}",
                result.artifacts.len() + 1,
                dir.display()
            );
            ExitCode::SUCCESS
        }
    }
}

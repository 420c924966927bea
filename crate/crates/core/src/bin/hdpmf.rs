use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hdpmf::cli::{self, NoiseCheckParams};
use hdpmf::config::parse_config;
use hdpmf::Error;

#[derive(Parser)]
#[command(name = "hdpmf", version, about = "Heterogeneous differentially private matrix factorization experiments")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured method over every seed and write the results CSV.
    Run {
        /// Flat `key = value` config file.
        config: PathBuf,
    },
    /// Repeat `run` for each value of one privacy or sparsity parameter.
    Sweep {
        config: PathBuf,
        /// One of eps_uc, f_uc, fraction.
        #[arg(long)]
        key: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Monte-Carlo check of the distributed Laplace noise.
    CheckNoise {
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 4.0)]
        delta: f64,
        #[arg(long, default_value_t = 1.0)]
        epsilon: f64,
        #[arg(long, default_value_t = 5)]
        raters: usize,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Cross-validated learning-rate / lambda grid search.
    Tune {
        config: PathBuf,
        #[arg(long, default_value_t = 5)]
        folds: usize,
    },
}

fn fail(err: Error) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(cli::exit_code(&err) as u8)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let outcome = match args.command {
        Command::Run { config } => parse_config(&config)
            .map_err(Error::from)
            .and_then(|cfg| cli::cmd_run(&cfg).map(|(_, s)| (s, cfg.output))),
        Command::Sweep { config, key, values } => parse_config(&config)
            .map_err(Error::from)
            .and_then(|cfg| cli::cmd_sweep(&cfg, &key, &values).map(|(_, s)| (s, cfg.output))),
        Command::Tune { config, folds } => parse_config(&config)
            .map_err(Error::from)
            .and_then(|cfg| cli::cmd_tune(&cfg, folds))
            .map(|s| (s, PathBuf::new())),
        Command::CheckNoise {
            k,
            delta,
            epsilon,
            raters,
            samples,
            seed,
        } => {
            let report = cli::cmd_check_noise(NoiseCheckParams {
                k,
                delta,
                epsilon,
                raters,
                samples,
                seed,
            });
            return match report {
                Ok(r) => {
                    print!("{}", r.render());
                    if r.passed() {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(cli::EXIT_RUN_FAILURE as u8)
                    }
                }
                Err(e) => fail(e),
            };
        }
    };
    match outcome {
        Ok((summary, output)) => {
            print!("{summary}");
            if !output.as_os_str().is_empty() {
                println!("results written to {}", output.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(e),
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cbnorm::experiments::{describe_registry, format_stat};
use cbnorm_cli::{
    fit_file, parse_config, resolve_outdir, run_campaign, with_threads, EXIT_RUNTIME, EXIT_USAGE, OUTDIR_ENV,
};

#[derive(Parser)]
#[command(name = "cbnorm", version, about = "Random tensor norm experiments")]
struct Cli {
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config and the environment).
    #[arg(long, global = true)]
    outdir: Option<PathBuf>,
    /// Exit with status 3 when a band or slope check fails.
    #[arg(long, global = true)]
    strict: bool,
    /// Worker threads.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    threads: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a campaign file.
    Run { config: PathBuf },
    /// List experiments, parameters and statistics.
    Describe,
    /// Log-log fit of a statistic from a record CSV.
    Fit {
        csv: PathBuf,
        experiment_id: String,
        statistic: String,
    },
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(c as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return code(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match cli.command {
        Command::Describe => {
            print!("{}", describe_registry());
            code(0)
        }
        Command::Fit {
            csv,
            experiment_id,
            statistic,
        } => match fit_file(&csv, &experiment_id, &statistic) {
            Ok((points, fit)) => {
                for (x, y) in points {
                    println!("{x} {}", format_stat(y));
                }
                println!(
                    "slope {} +/- {} intercept {} rms {} points {}",
                    format_stat(fit.slope),
                    format_stat(fit.slope_half_width),
                    format_stat(fit.intercept),
                    format_stat(fit.residual_rms),
                    fit.points
                );
                code(0)
            }
            Err(e) => {
                eprintln!("error: {e}");
                code(EXIT_RUNTIME)
            }
        },
        Command::Run { config } => {
            let text = match std::fs::read_to_string(&config) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: cannot read {}: {e}", config.display());
                    return code(EXIT_USAGE);
                }
            };
            let mut cfg = match parse_config(&text) {
                Ok(c) => c,
                Err(errors) => {
                    for e in errors {
                        eprintln!("{}:{e}", config.display());
                    }
                    return code(EXIT_USAGE);
                }
            };
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            cfg.strict |= cli.strict;
            let threads = cli.threads.map(|t| t as usize).or(cfg.threads);
            let env = std::env::var(OUTDIR_ENV).ok();
            let outdir = resolve_outdir(cli.outdir.as_deref(), &cfg, env.as_deref());
            match with_threads(threads, || run_campaign(&cfg, &outdir)) {
                Ok(Ok(outcome)) => {
                    print!("{}", cbnorm_cli::campaign::summary_table(&outcome));
                    code(outcome.exit_code())
                }
                Ok(Err(e)) => {
                    eprintln!("error: {e}");
                    code(EXIT_RUNTIME)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    code(EXIT_USAGE)
                }
            }
        }
    }
}

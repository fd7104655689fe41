//! Campaign runner for the `cbnorm` experiments.

pub mod campaign;
pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use cbnorm::experiments::{fit_csv_rows, read_records_csv};
use cbnorm::stats::FitResult;
use cbnorm::LabError;

pub use campaign::{run_campaign, CampaignError, CampaignOutcome, EXIT_OK, EXIT_RUNTIME, EXIT_STRICT, EXIT_USAGE};
pub use config::{parse_config, CampaignConfig, ConfigError};

/// Environment variable naming the default output directory.
pub const OUTDIR_ENV: &str = "CBNORM_OUTDIR";
pub const DEFAULT_OUTDIR: &str = "cbnorm-out";

/// Output directory: flag, then config, then environment, then default.
pub fn resolve_outdir(flag: Option<&Path>, cfg: &CampaignConfig, env: Option<&str>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.outdir.clone())
        .or_else(|| env.filter(|s| !s.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTDIR))
}

/// Reads a record CSV and fits one statistic against the experiment's
/// scaling parameter.
pub fn fit_file(path: &Path, experiment: &str, statistic: &str) -> Result<(Vec<(f64, f64)>, FitResult), LabError> {
    let file = fs::File::open(path)?;
    let rows = read_records_csv(file)?;
    fit_csv_rows(&rows, experiment, statistic)
}

/// Runs `f` on a pool of `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, LabError> {
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| LabError::invalid("threads", e.to_string()))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

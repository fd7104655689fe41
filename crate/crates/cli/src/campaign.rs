//! Campaign execution and output files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use cbnorm::experiments::{
    format_stat, lookup, run_experiment, write_records_csv, write_records_jsonl, write_timings_csv,
    ExperimentRecord, ParamValue,
};
use cbnorm::stats::{aggregate_values, loglog_fit, Aggregate, Band, FitResult};
use cbnorm::LabError;

use crate::config::{CampaignConfig, RunSpec, SlopeBand};

pub const RECORDS_CSV: &str = "records.csv";
pub const RECORDS_JSONL: &str = "records.jsonl";
pub const TIMINGS_CSV: &str = "timings.csv";
pub const SUMMARY: &str = "summary.txt";
pub const METADATA: &str = "metadata.json";
pub const STATUS: &str = "campaign.status";

#[derive(Clone, Debug, PartialEq)]
pub struct BandCheck {
    pub statistic: String,
    pub band: Band,
    pub aggregate: Aggregate,
    pub pass: bool,
}

/// One experiment invocation: an unscaled run or one scale value.
#[derive(Clone, Debug)]
pub struct PointOutcome {
    pub scale_value: Option<usize>,
    pub records: Vec<ExperimentRecord>,
    pub aggregates: BTreeMap<String, Aggregate>,
    pub bands: Vec<BandCheck>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub experiment: String,
    pub points: Vec<PointOutcome>,
    pub fit: Option<FitResult>,
    pub slope_band: Option<SlopeBand>,
    pub plot_file: Option<PathBuf>,
}

impl RunOutcome {
    pub fn slope_pass(&self) -> Option<bool> {
        match (self.fit, self.slope_band) {
            (Some(f), Some(b)) => Some(b.contains(f.slope)),
            _ => None,
        }
    }

    pub fn bands_pass(&self) -> bool {
        self.points.iter().all(|p| p.bands.iter().all(|b| b.pass))
    }

    pub fn pass(&self) -> bool {
        self.bands_pass() && self.slope_pass() != Some(false)
    }
}

#[derive(Clone, Debug)]
pub struct CampaignOutcome {
    pub outdir: PathBuf,
    pub runs: Vec<RunOutcome>,
    pub strict: bool,
}

impl CampaignOutcome {
    pub fn all_pass(&self) -> bool {
        self.runs.iter().all(RunOutcome::pass)
    }

    pub fn exit_code(&self) -> i32 {
        if self.strict && !self.all_pass() {
            EXIT_STRICT
        } else {
            EXIT_OK
        }
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_STRICT: i32 = 3;

#[derive(Debug, thiserror::Error)]
#[error("{stage}: {source}")]
pub struct CampaignError {
    pub stage: String,
    #[source]
    pub source: LabError,
}

fn stage(stage: impl Into<String>) -> impl FnOnce(LabError) -> CampaignError {
    let stage = stage.into();
    move |source| CampaignError { stage, source }
}

fn io_stage(s: impl Into<String>) -> impl FnOnce(std::io::Error) -> CampaignError {
    let s = s.into();
    move |e| CampaignError {
        stage: s,
        source: LabError::Io(e),
    }
}

/// Trials the campaign would run.
pub fn planned_trials(cfg: &CampaignConfig) -> u64 {
    let mut total = 0u64;
    for run in &cfg.runs {
        let Ok(def) = lookup(&run.experiment) else { continue };
        let Ok(params) = def.resolve(&cfg.run_params(run)) else { continue };
        let trials = match params.get("trials") {
            Some(ParamValue::Int(t)) => *t as u64,
            _ => 1,
        };
        total += trials * cfg.schedule(run).len() as u64;
    }
    total
}

/// Runs every entry of a validated config and writes the output files to
/// `outdir`. On failure `campaign.status` names the failing step.
pub fn run_campaign(cfg: &CampaignConfig, outdir: &Path) -> Result<CampaignOutcome, CampaignError> {
    fs::create_dir_all(outdir).map_err(io_stage("creating output directory"))?;
    let status = outdir.join(STATUS);
    fs::write(&status, "running\n").map_err(io_stage("writing status marker"))?;
    match execute(cfg, outdir) {
        Ok(outcome) => {
            fs::write(&status, "complete\n").map_err(io_stage("writing status marker"))?;
            Ok(outcome)
        }
        Err(e) => {
            let _ = fs::write(&status, format!("failed\n{e}\n"));
            Err(e)
        }
    }
}

fn execute(cfg: &CampaignConfig, outdir: &Path) -> Result<CampaignOutcome, CampaignError> {
    if let Some(budget) = cfg.budgets.max_trials {
        let requested = planned_trials(cfg);
        if requested > budget {
            return Err(CampaignError {
                stage: "budget check".into(),
                source: LabError::BudgetExceeded {
                    requested: requested as u128,
                    budget: budget as u128,
                },
            });
        }
    }
    let mut runs = Vec::with_capacity(cfg.runs.len());
    let mut all_records = Vec::new();
    let mut plot_names: BTreeMap<String, usize> = BTreeMap::new();
    for (index, run) in cfg.runs.iter().enumerate() {
        let mut outcome = execute_run(cfg, run, index)?;
        if let (Some(stat), Some(fit)) = (&run.statistic, outcome.fit) {
            let base = format!("scaling_{}_{}", run.experiment, stat);
            let n = plot_names.entry(base.clone()).or_insert(0);
            *n += 1;
            let name = if *n == 1 { format!("{base}.dat") } else { format!("{base}_{n}.dat") };
            let path = outdir.join(name);
            write_plot(&path, &outcome, stat, &fit).map_err(io_stage(format!("run {index}: writing plot data")))?;
            outcome.plot_file = Some(path);
        }
        for p in &outcome.points {
            all_records.extend(p.records.iter().cloned());
        }
        runs.push(outcome);
    }
    let outcome = CampaignOutcome {
        outdir: outdir.to_path_buf(),
        runs,
        strict: cfg.strict,
    };
    write_outputs(cfg, &outcome, &all_records, outdir)?;
    Ok(outcome)
}

fn execute_run(cfg: &CampaignConfig, run: &RunSpec, index: usize) -> Result<RunOutcome, CampaignError> {
    let def = lookup(&run.experiment).map_err(stage(format!("run {index}")))?;
    let bands = cfg.run_bands(run);
    let mut points = Vec::new();
    for value in cfg.schedule(run) {
        let mut params = cfg.run_params(run);
        let label = match value {
            Some(v) => {
                params.insert(def.scaling_param.to_string(), ParamValue::Int(v as i64));
                format!("run {index} ({}, {} = {v})", run.experiment, def.scaling_param)
            }
            None => format!("run {index} ({})", run.experiment),
        };
        let records = run_experiment(&run.experiment, &params, cfg.seed).map_err(stage(label.clone()))?;
        let mut aggregates = BTreeMap::new();
        let mut checks = Vec::new();
        let names: Vec<String> = records
            .first()
            .map(|r| r.statistics.keys().cloned().collect())
            .unwrap_or_default();
        for name in names {
            let values: Vec<f64> = records.iter().filter_map(|r| r.statistics.get(&name).copied()).collect();
            let band = bands.get(&name);
            let agg = aggregate_values(&values, band).map_err(stage(label.clone()))?;
            if let Some(b) = band {
                let rate = agg.pass_rate.unwrap_or(0.0);
                checks.push(BandCheck {
                    statistic: name.clone(),
                    band: *b,
                    aggregate: agg,
                    pass: rate >= b.pass_rate,
                });
            }
            aggregates.insert(name, agg);
        }
        points.push(PointOutcome {
            scale_value: value,
            records,
            aggregates,
            bands: checks,
        });
    }
    let fit = match &run.statistic {
        Some(stat) => {
            let pts: Vec<(f64, f64)> = points
                .iter()
                .map(|p| (p.scale_value.unwrap_or(0) as f64, p.aggregates.get(stat).map_or(f64::NAN, |a| a.mean)))
                .collect();
            Some(loglog_fit(&pts).map_err(stage(format!("run {index} ({}): fitting {stat}", run.experiment)))?)
        }
        None => None,
    };
    Ok(RunOutcome {
        experiment: run.experiment.clone(),
        points,
        fit,
        slope_band: run.slope,
        plot_file: None,
    })
}

fn write_plot(path: &Path, outcome: &RunOutcome, stat: &str, fit: &FitResult) -> std::io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "# {} {stat} slope {}", outcome.experiment, format_stat(fit.slope))?;
    for p in &outcome.points {
        let y = p.aggregates.get(stat).map_or(f64::NAN, |a| a.mean);
        writeln!(w, "{} {}", p.scale_value.unwrap_or(0), format_stat(y))?;
    }
    w.flush()
}

fn write_outputs(
    cfg: &CampaignConfig,
    outcome: &CampaignOutcome,
    records: &[ExperimentRecord],
    outdir: &Path,
) -> Result<(), CampaignError> {
    let create = |name: &str| {
        fs::File::create(outdir.join(name))
            .map(BufWriter::new)
            .map_err(io_stage(format!("creating {name}")))
    };
    write_records_csv(records, create(RECORDS_CSV)?).map_err(stage(format!("writing {RECORDS_CSV}")))?;
    write_records_jsonl(records, create(RECORDS_JSONL)?).map_err(stage(format!("writing {RECORDS_JSONL}")))?;
    write_timings_csv(records, create(TIMINGS_CSV)?).map_err(stage(format!("writing {TIMINGS_CSV}")))?;
    fs::write(outdir.join(SUMMARY), summary_table(outcome)).map_err(io_stage(format!("writing {SUMMARY}")))?;
    let meta = metadata(cfg);
    let text = serde_json::to_string_pretty(&meta).map_err(|e| CampaignError {
        stage: format!("writing {METADATA}"),
        source: LabError::Json(e),
    })?;
    fs::write(outdir.join(METADATA), text + "\n").map_err(io_stage(format!("writing {METADATA}")))
}

fn metadata(cfg: &CampaignConfig) -> serde_json::Value {
    let runs: Vec<serde_json::Value> = cfg
        .runs
        .iter()
        .map(|run| {
            let params = lookup(&run.experiment)
                .ok()
                .and_then(|d| d.resolve(&cfg.run_params(run)).ok())
                .unwrap_or_default();
            serde_json::json!({
                "experiment": run.experiment,
                "params": params,
                "schedule": run.scale,
                "statistic": run.statistic,
                "bands": cfg.run_bands(run),
                "slope": run.slope.map(|s| serde_json::json!({"min": s.min, "max": s.max})),
            })
        })
        .collect();
    serde_json::json!({
        "seed": cfg.seed,
        "strict": cfg.strict,
        "tolerances": cfg.tolerances,
        "budgets": {
            "max_trials": cfg.budgets.max_trials,
            "element_budget": cfg.budgets.element_budget,
        },
        "runs": runs,
        "version": env!("CARGO_PKG_VERSION"),
    })
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Plain-text table of every run, statistic and check.
pub fn summary_table(outcome: &CampaignOutcome) -> String {
    let mut s = String::new();
    for (i, run) in outcome.runs.iter().enumerate() {
        let _ = writeln!(s, "run {i}: {}", run.experiment);
        for p in &run.points {
            if let Some(v) = p.scale_value {
                let param = lookup(&run.experiment).map(|d| d.scaling_param).unwrap_or("x");
                let _ = writeln!(s, "  {param} = {v}");
            }
            let _ = writeln!(
                s,
                "    {:<20} {:>5} {:>12} {:>11} {:>12} {:>12} {:>12}",
                "statistic", "n", "mean", "se", "q05", "q50", "q95"
            );
            for (name, a) in &p.aggregates {
                let _ = writeln!(
                    s,
                    "    {name:<20} {:>5} {:>12.6} {:>11.3e} {:>12.6} {:>12.6} {:>12.6}",
                    a.count, a.mean, a.se, a.q05, a.q50, a.q95
                );
            }
            for b in &p.bands {
                let _ = writeln!(
                    s,
                    "    band {} in [{}, {}]: {:.3} inside, need {:.3}  {}",
                    b.statistic,
                    b.band.min,
                    b.band.max,
                    b.aggregate.pass_rate.unwrap_or(0.0),
                    b.band.pass_rate,
                    verdict(b.pass)
                );
            }
        }
        if let Some(f) = run.fit {
            let _ = write!(
                s,
                "  slope {:.4} +/- {:.4} (rms {:.3e}, {} points)",
                f.slope, f.slope_half_width, f.residual_rms, f.points
            );
            match (run.slope_band, run.slope_pass()) {
                (Some(b), Some(ok)) => {
                    let _ = writeln!(s, " in [{}, {}]: {}", b.min, b.max, verdict(ok));
                }
                _ => s.push('\n'),
            }
        }
    }
    let _ = writeln!(s, "overall: {}", verdict(outcome.all_pass()));
    s
}

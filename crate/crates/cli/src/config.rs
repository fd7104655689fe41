//! Campaign configuration.
//!
//! A campaign file is TOML. Top-level keys:
//!
//! ```toml
//! seed = 7                 # master seed (integer >= 0)
//! outdir = "out"           # output directory
//! threads = 2              # worker threads
//! strict = false           # exit 3 when a band or slope check fails
//!
//! [budgets]
//! max_trials = 5000        # total trials over all runs and scale points
//! element_budget = 400000000  # default for experiments that take one
//!
//! [tolerances]             # defaults for every run that takes the key
//! rel_tol = 1e-6
//! max_iterations = 2000
//!
//! [[run]]
//! experiment = "ymn"
//! params = { n = 64, trials = 3 }
//! scale = [2, 4, 8]        # values of the scaling parameter
//! statistic = "norm"       # fitted against the scale values
//! slope = { min = 0.4, max = 0.6 }
//! [run.bands.ratio]
//! min = 1.8
//! max = 2.2
//! pass_rate = 0.9
//! ```
//!
//! Every problem in a file is collected, each with its line number.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::path::PathBuf;

use cbnorm::experiments::{lookup, ParamValue, Params};
use cbnorm::stats::Band;
use toml::de::{DeTable, DeValue};
use toml::Spanned;

pub const TOLERANCE_KEYS: [&str; 6] = [
    "rel_tol",
    "max_iterations",
    "restarts",
    "cp_rel_tol",
    "cp_max_iterations",
    "tri_rel_tol",
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    /// One-based line.
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Budgets {
    pub max_trials: Option<u64>,
    pub element_budget: Option<i64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlopeBand {
    pub min: f64,
    pub max: f64,
}

impl SlopeBand {
    pub fn contains(&self, s: f64) -> bool {
        s >= self.min && s <= self.max
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    pub experiment: String,
    /// Parameters as written, before defaults.
    pub params: Params,
    pub scale: Option<Vec<usize>>,
    pub statistic: Option<String>,
    /// Overrides on top of the experiment's default bands.
    pub bands: BTreeMap<String, Band>,
    pub slope: Option<SlopeBand>,
    pub line: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CampaignConfig {
    pub seed: u64,
    pub outdir: Option<PathBuf>,
    pub threads: Option<usize>,
    pub strict: bool,
    pub budgets: Budgets,
    pub tolerances: Params,
    pub runs: Vec<RunSpec>,
}

impl CampaignConfig {
    /// Parameters handed to the experiment for one run: tolerances the
    /// experiment accepts, the budget default, then the run's own values.
    pub fn run_params(&self, run: &RunSpec) -> Params {
        let mut out = Params::new();
        if let Ok(def) = lookup(&run.experiment) {
            for (k, v) in &self.tolerances {
                if def.param(k).is_some() {
                    out.insert(k.clone(), v.clone());
                }
            }
            if let (Some(b), Some(_)) = (self.budgets.element_budget, def.param("element_budget")) {
                out.insert("element_budget".into(), ParamValue::Int(b));
            }
        }
        out.extend(run.params.iter().map(|(k, v)| (k.clone(), v.clone())));
        out
    }

    /// Bands checked for a run: defaults, then overrides.
    pub fn run_bands(&self, run: &RunSpec) -> BTreeMap<String, Band> {
        let mut out: BTreeMap<String, Band> = lookup(&run.experiment)
            .map(|d| d.default_bands.iter().map(|(k, b)| (k.to_string(), *b)).collect())
            .unwrap_or_default();
        out.extend(run.bands.iter().map(|(k, b)| (k.clone(), *b)));
        out
    }

    /// Values of the scaling parameter, or a single unscaled point.
    pub fn schedule(&self, run: &RunSpec) -> Vec<Option<usize>> {
        match &run.scale {
            Some(v) => v.iter().map(|&x| Some(x)).collect(),
            None => vec![None],
        }
    }
}

struct Ctx<'a> {
    text: &'a str,
    errors: Vec<ConfigError>,
}

impl Ctx<'_> {
    fn line(&self, span: &Range<usize>) -> usize {
        let end = span.start.min(self.text.len());
        self.text[..end].bytes().filter(|&b| b == b'\n').count() + 1
    }

    fn err(&mut self, span: &Range<usize>, message: impl Into<String>) {
        let line = self.line(span);
        self.errors.push(ConfigError {
            line,
            message: message.into(),
        });
    }
}

fn type_error(ctx: &mut Ctx, key: &str, want: &str, v: &Spanned<DeValue>) {
    ctx.err(&v.span(), format!("`{key}` must be {want}, found {}", v.get_ref().type_str()));
}

fn as_int(ctx: &mut Ctx, key: &str, v: &Spanned<DeValue>) -> Option<i64> {
    match v.get_ref() {
        DeValue::Integer(i) => match i64::from_str_radix(i.as_str(), i.radix()) {
            Ok(x) => Some(x),
            Err(_) => {
                ctx.err(&v.span(), format!("`{key}` is out of range"));
                None
            }
        },
        _ => {
            type_error(ctx, key, "an integer", v);
            None
        }
    }
}

fn as_nonneg(ctx: &mut Ctx, key: &str, v: &Spanned<DeValue>) -> Option<u64> {
    let x = as_int(ctx, key, v)?;
    if x < 0 {
        ctx.err(&v.span(), format!("`{key}` must be >= 0"));
        return None;
    }
    Some(x as u64)
}

fn as_float(ctx: &mut Ctx, key: &str, v: &Spanned<DeValue>) -> Option<f64> {
    match v.get_ref() {
        DeValue::Float(f) => match f.as_str().parse::<f64>() {
            Ok(x) => Some(x),
            Err(_) => {
                ctx.err(&v.span(), format!("`{key}` is not a valid float"));
                None
            }
        },
        DeValue::Integer(_) => as_int(ctx, key, v).map(|x| x as f64),
        _ => {
            type_error(ctx, key, "a number", v);
            None
        }
    }
}

fn as_str<'a>(ctx: &mut Ctx, key: &str, v: &'a Spanned<DeValue>) -> Option<&'a str> {
    match v.get_ref() {
        DeValue::String(s) => Some(s.as_ref()),
        _ => {
            type_error(ctx, key, "a string", v);
            None
        }
    }
}

fn as_table<'a, 'i>(ctx: &mut Ctx, key: &str, v: &'a Spanned<DeValue<'i>>) -> Option<&'a DeTable<'i>> {
    match v.get_ref() {
        DeValue::Table(t) => Some(t),
        _ => {
            type_error(ctx, key, "a table", v);
            None
        }
    }
}

fn unknown_key(ctx: &mut Ctx, section: &str, k: &Spanned<std::borrow::Cow<str>>) {
    ctx.err(&k.span(), format!("unknown key `{}` in {section}", k.get_ref()));
}

fn param_value(ctx: &mut Ctx, key: &str, v: &Spanned<DeValue>) -> Option<ParamValue> {
    match v.get_ref() {
        DeValue::Integer(_) => as_int(ctx, key, v).map(ParamValue::Int),
        DeValue::Float(_) => as_float(ctx, key, v).map(ParamValue::Float),
        DeValue::String(s) => Some(ParamValue::Text(s.to_string())),
        DeValue::Array(a) => {
            let mut out = Vec::with_capacity(a.len());
            let mut ok = true;
            for item in a.iter() {
                match as_int(ctx, key, item) {
                    Some(x) => out.push(x),
                    None => ok = false,
                }
            }
            ok.then_some(ParamValue::List(out))
        }
        _ => {
            type_error(ctx, key, "an integer, float, string or integer array", v);
            None
        }
    }
}

fn parse_band(ctx: &mut Ctx, stat: &str, v: &Spanned<DeValue>) -> Option<Band> {
    let t = as_table(ctx, stat, v)?;
    let (mut min, mut max, mut rate) = (f64::NEG_INFINITY, f64::INFINITY, 1.0);
    let mut ok = true;
    for (k, val) in t.iter() {
        let slot = match k.get_ref().as_ref() {
            "min" => &mut min,
            "max" => &mut max,
            "pass_rate" => &mut rate,
            _ => {
                unknown_key(ctx, &format!("band `{stat}`"), k);
                ok = false;
                continue;
            }
        };
        match as_float(ctx, k.get_ref(), val) {
            Some(x) => *slot = x,
            None => ok = false,
        }
    }
    if ok && (min.is_nan() || max.is_nan() || min > max) {
        ctx.err(&v.span(), format!("band `{stat}` has min > max"));
        ok = false;
    }
    if ok && !(0.0..=1.0).contains(&rate) {
        ctx.err(&v.span(), format!("band `{stat}` pass_rate must lie in [0, 1]"));
        ok = false;
    }
    ok.then_some(Band {
        min,
        max,
        pass_rate: rate,
    })
}

fn parse_slope(ctx: &mut Ctx, v: &Spanned<DeValue>) -> Option<SlopeBand> {
    let t = as_table(ctx, "slope", v)?;
    let (mut min, mut max) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut ok = true;
    for (k, val) in t.iter() {
        let slot = match k.get_ref().as_ref() {
            "min" => &mut min,
            "max" => &mut max,
            _ => {
                unknown_key(ctx, "slope", k);
                ok = false;
                continue;
            }
        };
        match as_float(ctx, k.get_ref(), val) {
            Some(x) => *slot = x,
            None => ok = false,
        }
    }
    ok.then_some(SlopeBand { min, max })
}

fn parse_run(ctx: &mut Ctx, cfg: &CampaignConfig, v: &Spanned<DeValue>) -> Option<RunSpec> {
    let t = as_table(ctx, "run", v)?;
    let line = ctx.line(&v.span());
    let errors_before = ctx.errors.len();
    let mut experiment: Option<(String, Range<usize>)> = None;
    let mut params = Params::new();
    let mut param_spans: BTreeMap<String, Range<usize>> = BTreeMap::new();
    let mut scale = None;
    let mut statistic: Option<(String, Range<usize>)> = None;
    let mut bands = BTreeMap::new();
    let mut band_spans = Vec::new();
    let mut slope = None;
    for (k, val) in t.iter() {
        match k.get_ref().as_ref() {
            "experiment" => {
                if let Some(s) = as_str(ctx, "experiment", val) {
                    experiment = Some((s.to_string(), val.span()));
                }
            }
            "params" => {
                if let Some(pt) = as_table(ctx, "params", val) {
                    for (pk, pv) in pt.iter() {
                        if let Some(x) = param_value(ctx, pk.get_ref(), pv) {
                            params.insert(pk.get_ref().to_string(), x);
                            param_spans.insert(pk.get_ref().to_string(), pk.span());
                        }
                    }
                }
            }
            "scale" => match val.get_ref() {
                DeValue::Array(a) => {
                    let mut xs = Vec::new();
                    for item in a.iter() {
                        if let Some(x) = as_int(ctx, "scale", item) {
                            if x < 1 {
                                ctx.err(&item.span(), "`scale` entries must be >= 1");
                            } else {
                                xs.push(x as usize);
                            }
                        }
                    }
                    if xs.len() < 3 {
                        ctx.err(&val.span(), "`scale` needs at least 3 values");
                    }
                    scale = Some(xs);
                }
                _ => type_error(ctx, "scale", "an integer array", val),
            },
            "statistic" => {
                if let Some(s) = as_str(ctx, "statistic", val) {
                    statistic = Some((s.to_string(), val.span()));
                }
            }
            "bands" => {
                if let Some(bt) = as_table(ctx, "bands", val) {
                    for (bk, bv) in bt.iter() {
                        if let Some(b) = parse_band(ctx, bk.get_ref(), bv) {
                            bands.insert(bk.get_ref().to_string(), b);
                            band_spans.push((bk.get_ref().to_string(), bk.span()));
                        }
                    }
                }
            }
            "slope" => slope = parse_slope(ctx, val),
            _ => unknown_key(ctx, "[[run]]", k),
        }
    }
    let Some((experiment, exp_span)) = experiment else {
        if ctx.errors.len() == errors_before {
            ctx.err(&v.span(), "run is missing `experiment`");
        }
        return None;
    };
    let def = match lookup(&experiment) {
        Ok(d) => d,
        Err(_) => {
            ctx.err(&exp_span, format!("unknown experiment `{experiment}`"));
            return None;
        }
    };
    if let Some((s, span)) = &statistic {
        if def.stat(s).is_none() {
            ctx.err(span, format!("experiment `{experiment}` has no statistic `{s}`"));
        }
    }
    for (s, span) in &band_spans {
        if def.stat(s).is_none() {
            ctx.err(span, format!("experiment `{experiment}` has no statistic `{s}`"));
        }
    }
    match (&scale, &statistic) {
        (Some(_), None) => ctx.err(&v.span(), "`scale` requires `statistic`"),
        (None, Some((_, span))) => ctx.err(span, "`statistic` requires `scale`"),
        _ => {}
    }
    if slope.is_some() && scale.is_none() {
        ctx.err(&v.span(), "`slope` requires `scale`");
    }
    if scale.is_some() && params.contains_key(def.scaling_param) {
        let span = param_spans[def.scaling_param].clone();
        ctx.err(&span, format!("`{}` is set by `scale`", def.scaling_param));
    }
    let run = RunSpec {
        experiment,
        params,
        scale,
        statistic: statistic.map(|s| s.0),
        bands,
        slope,
        line,
    };
    if ctx.errors.len() == errors_before {
        for point in cfg.schedule(&run) {
            let mut p = cfg.run_params(&run);
            if let Some(x) = point {
                p.insert(def.scaling_param.to_string(), ParamValue::Int(x as i64));
            }
            if let Err(issues) = def.resolve(&p) {
                for i in issues {
                    let span = param_spans.get(&i.key).cloned().unwrap_or(v.span());
                    let at = point.map(|x| format!(" at {} = {x}", def.scaling_param)).unwrap_or_default();
                    ctx.err(&span, format!("{}{at}: {i}", run.experiment));
                }
                break;
            }
        }
    }
    Some(run)
}

/// Parses and validates a campaign file against the experiment registry.
pub fn parse_config(text: &str) -> Result<CampaignConfig, Vec<ConfigError>> {
    let (root, syntax) = DeTable::parse_recoverable(text);
    let mut ctx = Ctx {
        text,
        errors: Vec::new(),
    };
    for e in &syntax {
        let span = e.span().unwrap_or(0..0);
        ctx.err(&span, e.message().trim().to_string());
    }
    let mut cfg = CampaignConfig {
        seed: 0,
        outdir: None,
        threads: None,
        strict: false,
        budgets: Budgets::default(),
        tolerances: Params::new(),
        runs: Vec::new(),
    };
    let mut seen_seed = false;
    let mut run_values = Vec::new();
    for (k, v) in root.get_ref().iter() {
        match k.get_ref().as_ref() {
            "seed" => {
                seen_seed = true;
                if let Some(s) = as_nonneg(&mut ctx, "seed", v) {
                    cfg.seed = s;
                }
            }
            "outdir" => {
                if let Some(s) = as_str(&mut ctx, "outdir", v) {
                    cfg.outdir = Some(PathBuf::from(s));
                }
            }
            "threads" => {
                if let Some(n) = as_int(&mut ctx, "threads", v) {
                    if n < 1 {
                        ctx.err(&v.span(), "`threads` must be >= 1");
                    } else {
                        cfg.threads = Some(n as usize);
                    }
                }
            }
            "strict" => match v.get_ref() {
                DeValue::Boolean(b) => cfg.strict = *b,
                _ => type_error(&mut ctx, "strict", "a boolean", v),
            },
            "budgets" => {
                if let Some(t) = as_table(&mut ctx, "budgets", v) {
                    for (bk, bv) in t.iter() {
                        match bk.get_ref().as_ref() {
                            "max_trials" => cfg.budgets.max_trials = as_nonneg(&mut ctx, "max_trials", bv),
                            "element_budget" => match as_int(&mut ctx, "element_budget", bv) {
                                Some(x) if x >= 1 => cfg.budgets.element_budget = Some(x),
                                Some(_) => ctx.err(&bv.span(), "`element_budget` must be >= 1"),
                                None => {}
                            },
                            _ => unknown_key(&mut ctx, "[budgets]", bk),
                        }
                    }
                }
            }
            "tolerances" => {
                if let Some(t) = as_table(&mut ctx, "tolerances", v) {
                    for (tk, tv) in t.iter() {
                        let name = tk.get_ref().as_ref();
                        if !TOLERANCE_KEYS.contains(&name) {
                            unknown_key(&mut ctx, "[tolerances]", tk);
                            continue;
                        }
                        let value = if name.ends_with("iterations") || name == "restarts" {
                            as_int(&mut ctx, name, tv).map(ParamValue::Int)
                        } else {
                            as_float(&mut ctx, name, tv).map(ParamValue::Float)
                        };
                        if let Some(x) = value {
                            cfg.tolerances.insert(name.to_string(), x);
                        }
                    }
                }
            }
            "run" => match v.get_ref() {
                DeValue::Array(a) => run_values.extend(a.iter()),
                _ => type_error(&mut ctx, "run", "an array of tables", v),
            },
            _ => unknown_key(&mut ctx, "the top level", k),
        }
    }
    if !seen_seed && syntax.is_empty() {
        ctx.err(&(0..0), "missing `seed`");
    }
    if run_values.is_empty() && syntax.is_empty() {
        ctx.err(&(0..0), "no [[run]] entries");
    }
    for v in run_values {
        if let Some(run) = parse_run(&mut ctx, &cfg, v) {
            cfg.runs.push(run);
        }
    }
    if ctx.errors.is_empty() {
        Ok(cfg)
    } else {
        ctx.errors.sort_by_key(|e| e.line);
        Err(ctx.errors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_numbers_follow_source() {
        let text = "seed = 1\n\n[[run]]\nexperiment = \"nope\"\n";
        let errs = parse_config(text).unwrap_err();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].line, 4);
        assert!(errs[0].message.contains("nope"));
    }

    #[test]
    fn tolerances_reach_only_matching_runs() {
        let text = "seed = 3\n[tolerances]\nrel_tol = 1e-4\n[[run]]\nexperiment = \"ginibre\"\n";
        let cfg = parse_config(text).unwrap();
        let p = cfg.run_params(&cfg.runs[0]);
        assert_eq!(p.get("rel_tol"), Some(&ParamValue::Float(1e-4)));
    }
}

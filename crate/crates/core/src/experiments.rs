//! Named, parameterized experiments and their record streams.
//!
//! Every experiment id has a registry entry listing its parameters (with
//! defaults), the statistics it emits (with units) and a reference line
//! stating the bound it probes. Trial `t` of experiment `e` under master
//! seed `s` draws its families from `s/code(e)/t/0` and its estimator start
//! vectors from `s/code(e)/t/1`, so any record can be replayed from its own
//! parameters and seed path.
//!
//! Record files use a fixed column order: `experiment_id`, `seed`, then the
//! parameter names sorted, then the statistic names sorted. Wall times go
//! to a separate file so that record files are reproducible byte for byte.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::sync::LazyLock;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constructions::{
    build_chain, cb_lower_witness, check_sublemma28, ht_inequality_check, product_family, theorem29_sandwich,
};
use crate::ensembles::{
    sample_coeff_family, sample_ginibre, sample_ht_tuple, sample_ymn, ChainFamilySpec, CoeffDistribution,
    GinibreSpec, NaiveFamilySpec, DEFAULT_ELEMENT_BUDGET,
};
use crate::error::{LabError, Result};
use crate::rng::{derive_stream, SeedPath};
use crate::specnorm::{cpmap_norm, iterative_norm, trilinear_sup, EstimatorSettings, Tolerance};
use crate::stats::{loglog_fit, Band, FitResult};
use crate::tensorop::CPMapOperator;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Float(f64),
    List(Vec<i64>),
    Text(String),
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Float(v) => write!(f, "{v:?}"),
            ParamValue::List(v) => {
                let parts: Vec<String> = v.iter().map(i64::to_string).collect();
                write!(f, "{}", parts.join(";"))
            }
            ParamValue::Text(v) => write!(f, "{v}"),
        }
    }
}

pub type Params = BTreeMap<String, ParamValue>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Integer, at least 1.
    Count,
    /// Real in the open unit interval.
    Fraction,
    /// Positive real.
    Positive,
    /// Nonempty list of positive integers.
    Sizes,
    /// One of a fixed set of words.
    Choice(&'static [&'static str]),
}

impl ParamKind {
    fn describe(&self) -> String {
        match self {
            ParamKind::Count => "integer >= 1".into(),
            ParamKind::Fraction => "real in (0, 1)".into(),
            ParamKind::Positive => "real > 0".into(),
            ParamKind::Sizes => "list of integers >= 1".into(),
            ParamKind::Choice(c) => format!("one of {}", c.join(", ")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ParamDefault {
    Int(i64),
    Float(f64),
    Text(&'static str),
    /// Same value as another parameter.
    Inherit(&'static str),
    /// `n1, n1/size_ratio, n1/size_ratio^2, …` with one entry per level.
    Staircase,
}

impl fmt::Display for ParamDefault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamDefault::Int(v) => write!(f, "{v}"),
            ParamDefault::Float(v) => write!(f, "{v:?}"),
            ParamDefault::Text(v) => write!(f, "{v}"),
            ParamDefault::Inherit(p) => write!(f, "same as {p}"),
            ParamDefault::Staircase => write!(f, "n1, n1/size_ratio, ... (one per level)"),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ParamDef {
    pub name: &'static str,
    pub kind: ParamKind,
    pub default: ParamDefault,
    pub doc: &'static str,
}

#[derive(Clone, Copy, Debug)]
pub struct StatDef {
    pub name: &'static str,
    pub unit: &'static str,
    pub doc: &'static str,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Runner {
    Ginibre,
    Ht,
    Ymn,
    Lemma14,
    Corollary13,
    Sublemma28,
    Theorem29,
}

#[derive(Clone, Debug)]
pub struct ExperimentDef {
    pub id: &'static str,
    /// Component of every seed path of this experiment.
    pub code: u64,
    pub summary: &'static str,
    /// The bound the experiment probes.
    pub reference: &'static str,
    pub params: Vec<ParamDef>,
    pub stats: Vec<StatDef>,
    /// Parameter varied by scaling runs.
    pub scaling_param: &'static str,
    /// Levels in `sizes` are `d + sizes_offset` (when the experiment has `sizes`).
    pub sizes_offset: i64,
    pub default_bands: Vec<(&'static str, Band)>,
    runner: Runner,
}

const fn p(name: &'static str, kind: ParamKind, default: ParamDefault, doc: &'static str) -> ParamDef {
    ParamDef {
        name,
        kind,
        default,
        doc,
    }
}

const fn s(name: &'static str, unit: &'static str, doc: &'static str) -> StatDef {
    StatDef { name, unit, doc }
}

const fn band(min: f64, max: f64, pass_rate: f64) -> Band {
    Band { min, max, pass_rate }
}

fn common_params() -> Vec<ParamDef> {
    use ParamDefault::*;
    use ParamKind::*;
    vec![
        p("trials", Count, Int(20), "independent trials"),
        p("rel_tol", Positive, Float(1e-6), "relative tolerance of plain norm estimates"),
        p("max_iterations", Count, Int(2000), "iteration cap of every estimator"),
        p("restarts", Count, Int(8), "random starts of the alternating maximization"),
        p("cp_rel_tol", Positive, Inherit("rel_tol"), "relative tolerance of CP map norms"),
        p("cp_max_iterations", Count, Inherit("max_iterations"), "iteration cap of CP map norms"),
        p("tri_rel_tol", Positive, Inherit("rel_tol"), "relative tolerance of the alternating maximization"),
    ]
}

fn staircase_params(n1: i64) -> Vec<ParamDef> {
    use ParamDefault::*;
    use ParamKind::*;
    vec![
        p("n1", Count, Int(n1), "size of the first (largest) level"),
        p("size_ratio", Count, Int(2), "ratio between consecutive level sizes"),
        p("sizes", Sizes, Staircase, "level sizes; overrides n1 and size_ratio"),
    ]
}

fn with_common(mut own: Vec<ParamDef>) -> Vec<ParamDef> {
    own.extend(common_params());
    own
}

static REGISTRY: LazyLock<Vec<ExperimentDef>> = LazyLock::new(|| {
    use ParamDefault::*;
    use ParamKind::*;
    vec![
        ExperimentDef {
            id: "ginibre",
            code: 1,
            summary: "operator norm of one N x N Ginibre matrix",
            reference: "‖Y‖ -> 2 almost surely for Ginibre matrices with entry variance 1/N",
            params: with_common(vec![p("n", Count, Int(500), "matrix size")]),
            stats: vec![
                s("norm", "operator norm", "‖Y‖"),
                s("converged", "flag", "norm estimate met its tolerance"),
            ],
            scaling_param: "n",
            sizes_offset: 0,
            default_bands: vec![("norm", band(1.9, 2.2, 0.9))],
            runner: Runner::Ginibre,
        },
        ExperimentDef {
            id: "ht",
            code: 2,
            summary: "‖Σ a_j ⊗ g_j‖ against the two-sided square-function bound",
            reference: "limsup ‖Σ a_j ⊗ g_j‖ <= ‖Σ a_j^* a_j‖^{1/2} + ‖Σ a_j a_j^*‖^{1/2} for independent Ginibre g_j",
            params: with_common(vec![
                p("r", Count, Int(4), "number of terms"),
                p("p", Count, Int(3), "coefficient size"),
                p("n", Count, Int(300), "Ginibre size"),
                p("coeff", Choice(&["unit-sphere", "gaussian"]), Text("unit-sphere"), "coefficient distribution"),
            ]),
            stats: vec![
                s("lhs", "operator norm", "‖Σ a_j ⊗ g_j‖"),
                s("rhs", "operator norm", "‖Σ a_j^* a_j‖^{1/2} + ‖Σ a_j a_j^*‖^{1/2}"),
                s("slack", "operator norm", "rhs - lhs"),
                s("converged", "flag", "lhs estimate met its tolerance"),
            ],
            scaling_param: "r",
            sizes_offset: 0,
            default_bands: vec![("slack", band(-0.3, f64::INFINITY, 0.95))],
            runner: Runner::Ht,
        },
        ExperimentDef {
            id: "ymn",
            code: 3,
            summary: "norm of the m x m block matrix of independent Ginibre blocks",
            reference: "limsup ‖Σ e_ij ⊗ Y_ij‖ <= 2 m^{1/2}",
            params: with_common(vec![
                p("m", Count, Int(4), "block grid size"),
                p("n", Count, Int(200), "block size"),
            ]),
            stats: vec![
                s("norm", "operator norm", "‖Y_{m,N}‖"),
                s("ratio", "dimensionless", "‖Y_{m,N}‖ / m^{1/2}"),
                s("converged", "flag", "norm estimate met its tolerance"),
            ],
            scaling_param: "m",
            sizes_offset: 0,
            default_bands: vec![("ratio", band(1.8, 2.2, 0.9))],
            runner: Runner::Ymn,
        },
        ExperimentDef {
            id: "lemma14",
            code: 4,
            summary: "CP map norm of the product family g^1_{j1} ⊗ ... ⊗ g^d_{jd}",
            reference: "‖Σ_j U_j ⊗ conj(U_j)‖ >= N^{-1} tr Σ U_j U_j^*, which tends to m^d",
            params: with_common({
                let mut v = vec![
                    p("m", Count, Int(2), "matrices per level"),
                    p("d", Count, Int(2), "number of levels"),
                ];
                v.extend(staircase_params(60));
                v
            }),
            stats: vec![
                s("cpmap", "operator norm", "‖Σ U_j ⊗ conj(U_j)‖"),
                s("trace_bound", "operator norm", "N^{-1} tr Σ U_j U_j^*"),
                s("ratio_md", "dimensionless", "cpmap / m^d"),
                s("trace_ok", "flag", "cpmap >= trace_bound - 1e-6"),
                s("converged", "flag", "cpmap estimate met its tolerance"),
            ],
            scaling_param: "m",
            sizes_offset: 0,
            default_bands: vec![("ratio_md", band(0.85, f64::INFINITY, 0.9)), ("trace_ok", band(1.0, 1.0, 1.0))],
            runner: Runner::Lemma14,
        },
        ExperimentDef {
            id: "corollary13",
            code: 5,
            summary: "sup ‖Σ a_j ⊗ g^1_{j1} ⊗ ... ⊗ g^d_{jd}‖ over Σ ‖a_j‖^2 <= 1",
            reference: "the supremum Z(r, p; N_1, ..., N_d) has iterated limsup at most 2^d",
            params: with_common({
                let mut v = vec![
                    p("r", Count, Int(2), "matrices per level"),
                    p("d", Count, Int(2), "number of levels"),
                    p("p", Count, Int(1), "coefficient size"),
                ];
                v.extend(staircase_params(256));
                v
            }),
            stats: vec![
                s("z", "operator norm", "estimated supremum"),
                s("ratio", "dimensionless", "z / 2^d"),
                s("converged", "flag", "alternating maximization met its tolerance"),
                s("monotone", "flag", "objective never decreased"),
            ],
            scaling_param: "r",
            sizes_offset: 0,
            default_bands: vec![("ratio", band(0.0, 1.25, 0.9))],
            runner: Runner::Corollary13,
        },
        ExperimentDef {
            id: "sublemma28",
            code: 6,
            summary: "items (i), (ii), (iv) and the cb lower bound for the chained family",
            reference: "2^{-2(d-1)} m^{(d-1)/2} <= ‖Id: E_m^d -> max(E_m^d)‖_cb; the chained family certifies exponent (d-1)/2",
            params: with_common({
                let mut v = vec![
                    p("m", Count, Int(4), "alphabet size"),
                    p("d", Count, Int(2), "degree"),
                    p("epsilon", Fraction, Float(0.3), "slack in the three items"),
                ];
                v.extend(staircase_params(256));
                v
            }),
            stats: vec![
                s("cpmap", "operator norm", "‖Σ U_i ⊗ conj(U_i)‖"),
                s("trace_bound", "operator norm", "N^{-1} tr Σ U_i U_i^*"),
                s("item_i", "flag", "cpmap >= (1 - epsilon) m^d"),
                s("z2", "operator norm", "sup over unit l2 coefficients of ‖Σ λ_i U_i‖"),
                s("item_ii", "flag", "z2 <= (1 + epsilon) 2^{d-1}"),
                s("uk_max", "operator norm", "max_k ‖U^k‖"),
                s("z4", "dimensionless", "m^{-1/2} max_k ‖U^k‖"),
                s("item_iv", "flag", "every ‖U^k‖ <= 2 (1 + epsilon) m^{1/2}"),
                s("all_items", "flag", "items (i), (ii) and (iv) all hold"),
                s("certified_cb_lower", "dimensionless", "cpmap / (m Π_k ‖U^k‖)"),
                s("id_max_lower", "dimensionless", "certified_cb_lower / z2"),
                s("cprime_lower", "dimensionless", "certified_cb_lower / z2, as a factorization constant bound"),
                s("cpmap_converged", "flag", "cpmap estimate met its tolerance"),
                s("z2_converged", "flag", "z2 estimate met its tolerance"),
                s("z2_monotone", "flag", "z2 objective never decreased"),
                s("coherent", "flag", "flags recompute from stored values"),
            ],
            scaling_param: "m",
            sizes_offset: -1,
            default_bands: vec![("all_items", band(1.0, 1.0, 0.8))],
            runner: Runner::Sublemma28,
        },
        ExperimentDef {
            id: "theorem29",
            code: 7,
            summary: "flattening norm and the a-b sandwich for the naive Gaussian family",
            reference: "for the naive family, (E‖flattening‖^2)^{1/2} is of order m^{d/4} (even d) or m^{(d-1)/4} (odd d), and ab >= m^d",
            params: with_common(vec![
                p("m", Count, Int(3), "alphabet size"),
                p("d", Count, Int(2), "degree"),
                p("n", Count, Int(150), "matrix size"),
                p("element_budget", Count, Int(DEFAULT_ELEMENT_BUDGET as i64), "cap on m^d n^2"),
            ]),
            stats: vec![
                s("a_surrogate", "operator norm", "flattening norm, max over the held index for odd d"),
                s("a_normalized", "dimensionless", "a_surrogate / (2 m^{⌊d/2⌋/2})"),
                s("b_lower", "operator norm", "m^d / a_surrogate"),
                s("b_upper", "operator norm", "m^{⌈d/2⌉} a_surrogate"),
                s("sandwich_ok", "flag", "b_lower <= b_upper"),
                s("abproduct_lower", "operator norm", "‖Σ Y_i ⊗ conj(Y_i)‖"),
                s("trace_bound", "operator norm", "N^{-1} tr Σ Y_i Y_i^*"),
                s("naive_cb_lower", "dimensionless", "abproduct_lower / b_upper"),
                s("cpmap_converged", "flag", "abproduct estimate met its tolerance"),
            ],
            scaling_param: "m",
            sizes_offset: 0,
            default_bands: vec![("a_normalized", band(0.85, 1.15, 0.9)), ("sandwich_ok", band(1.0, 1.0, 1.0))],
            runner: Runner::Theorem29,
        },
    ]
});

pub fn registry() -> &'static [ExperimentDef] {
    &REGISTRY
}

pub fn lookup(id: &str) -> Result<&'static ExperimentDef> {
    registry()
        .iter()
        .find(|e| e.id == id)
        .ok_or_else(|| LabError::UnknownExperiment(id.to_string()))
}

/// Parameter problem found while resolving a run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamIssue {
    pub key: String,
    pub message: String,
}

impl fmt::Display for ParamIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "`{}`: {}", self.key, self.message)
    }
}

fn issue(key: &str, message: impl Into<String>) -> ParamIssue {
    ParamIssue {
        key: key.to_string(),
        message: message.into(),
    }
}

fn check_kind(def: &ParamDef, v: &ParamValue) -> std::result::Result<ParamValue, String> {
    let bad = || format!("expected {}, got {v}", def.kind.describe());
    match (def.kind, v) {
        (ParamKind::Count, ParamValue::Int(i)) if *i >= 1 => Ok(v.clone()),
        (ParamKind::Fraction, ParamValue::Float(x)) if *x > 0.0 && *x < 1.0 => Ok(v.clone()),
        (ParamKind::Positive, ParamValue::Float(x)) if *x > 0.0 && x.is_finite() => Ok(v.clone()),
        (ParamKind::Positive, ParamValue::Int(i)) if *i > 0 => Ok(ParamValue::Float(*i as f64)),
        (ParamKind::Sizes, ParamValue::List(l)) if !l.is_empty() && l.iter().all(|&x| x >= 1) => Ok(v.clone()),
        (ParamKind::Choice(words), ParamValue::Text(t)) if words.contains(&t.as_str()) => Ok(v.clone()),
        _ => Err(bad()),
    }
}

impl ExperimentDef {
    pub fn param(&self, name: &str) -> Option<&ParamDef> {
        self.params.iter().find(|d| d.name == name)
    }

    pub fn stat(&self, name: &str) -> Option<&StatDef> {
        self.stats.iter().find(|d| d.name == name)
    }

    /// Fills defaults and checks every given value; reports all problems.
    pub fn resolve(&self, given: &Params) -> std::result::Result<Params, Vec<ParamIssue>> {
        let mut issues = Vec::new();
        let mut out = Params::new();
        for key in given.keys() {
            if self.param(key).is_none() {
                issues.push(issue(key, format!("unknown parameter for experiment `{}`", self.id)));
            }
        }
        for def in &self.params {
            if let Some(v) = given.get(def.name) {
                match check_kind(def, v) {
                    Ok(v) => {
                        out.insert(def.name.to_string(), v);
                    }
                    Err(msg) => issues.push(issue(def.name, msg)),
                }
            }
        }
        for def in &self.params {
            if out.contains_key(def.name) || given.contains_key(def.name) {
                continue;
            }
            let value = match def.default {
                ParamDefault::Int(v) => Some(ParamValue::Int(v)),
                ParamDefault::Float(v) => Some(ParamValue::Float(v)),
                ParamDefault::Text(v) => Some(ParamValue::Text(v.to_string())),
                ParamDefault::Inherit(_) | ParamDefault::Staircase => None,
            };
            if let Some(v) = value {
                out.insert(def.name.to_string(), v);
            }
        }
        for def in &self.params {
            if out.contains_key(def.name) || given.contains_key(def.name) {
                continue;
            }
            match def.default {
                ParamDefault::Inherit(src) => {
                    if let Some(v) = out.get(src).cloned() {
                        out.insert(def.name.to_string(), v);
                    }
                }
                ParamDefault::Staircase => {
                    if let (Some(ParamValue::Int(n1)), Some(ParamValue::Int(ratio)), Some(ParamValue::Int(d))) =
                        (out.get("n1"), out.get("size_ratio"), out.get("d"))
                    {
                        let levels = d + self.sizes_offset;
                        if levels >= 1 {
                            let sizes = (0..levels)
                                .map(|k| (n1 / ratio.saturating_pow(k as u32)).max(1))
                                .collect();
                            out.insert(def.name.to_string(), ParamValue::List(sizes));
                        }
                    }
                }
                _ => {}
            }
        }
        if issues.is_empty() {
            issues.extend(self.cross_checks(&out));
        }
        if issues.is_empty() {
            Ok(out)
        } else {
            Err(issues)
        }
    }

    fn cross_checks(&self, params: &Params) -> Vec<ParamIssue> {
        let mut issues = Vec::new();
        let int = |k: &str| match params.get(k) {
            Some(ParamValue::Int(v)) => Some(*v),
            _ => None,
        };
        if let (Some(ParamValue::List(sizes)), Some(d)) = (params.get("sizes"), int("d")) {
            let levels = d + self.sizes_offset;
            if sizes.len() as i64 != levels {
                issues.push(issue("sizes", format!("expected {levels} entries for d = {d}, got {}", sizes.len())));
            }
        }
        if self.runner == Runner::Sublemma28 && int("d").is_some_and(|d| d < 2) {
            issues.push(issue("d", "chained family needs d >= 2"));
        }
        if self.runner == Runner::Theorem29 {
            if let (Some(m), Some(d), Some(n), Some(budget)) = (int("m"), int("d"), int("n"), int("element_budget")) {
                let count = (m as u128)
                    .checked_pow(d as u32)
                    .and_then(|c| c.checked_mul((n as u128) * (n as u128)));
                match count {
                    Some(c) if c <= budget as u128 => {}
                    _ => issues.push(issue(
                        "element_budget",
                        format!("m^d n^2 for m = {m}, d = {d}, n = {n} exceeds the budget {budget}"),
                    )),
                }
            }
        }
        issues
    }
}

pub fn describe_registry() -> String {
    let mut out = String::new();
    for e in registry() {
        out.push_str(&format!("{}\n  {}\n  reference: {}\n", e.id, e.summary, e.reference));
        out.push_str(&format!("  scaling parameter: {}\n  parameters:\n", e.scaling_param));
        for p in &e.params {
            out.push_str(&format!(
                "    {:<18} {:<28} {} (default {})\n",
                p.name,
                p.kind.describe(),
                p.doc,
                p.default
            ));
        }
        out.push_str("  statistics:\n");
        for s in &e.stats {
            out.push_str(&format!("    {:<20} [{}] {}\n", s.name, s.unit, s.doc));
        }
        if !e.default_bands.is_empty() {
            out.push_str("  default bands:\n");
            for (stat, b) in &e.default_bands {
                out.push_str(&format!(
                    "    {stat}: [{}, {}] in >= {}% of trials\n",
                    b.min,
                    b.max,
                    b.pass_rate * 100.0
                ));
            }
        }
        out.push('\n');
    }
    out
}

/// The exponents the chained and naive certificates aim at for degree `d`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentRow {
    pub d: usize,
    /// `(d - 1) / 2`.
    pub chain: f64,
    /// `d / 4` for even `d`, `(d - 1) / 4` for odd `d`.
    pub naive: f64,
}

pub fn exponent_table(degrees: &[usize]) -> Vec<ExponentRow> {
    degrees
        .iter()
        .map(|&d| ExponentRow {
            d,
            chain: (d as f64 - 1.0) / 2.0,
            naive: (2 * (d / 2)) as f64 / 4.0,
        })
        .collect()
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub experiment_id: String,
    pub seed_path: SeedPath,
    pub params: Params,
    pub statistics: BTreeMap<String, f64>,
    /// Seconds spent on the trial.
    pub wall_time: f64,
}

impl ExperimentRecord {
    pub fn trial(&self) -> Option<u64> {
        self.seed_path.path.last().copied()
    }
}

struct Resolved<'a>(&'a Params);

impl Resolved<'_> {
    fn int(&self, k: &str) -> usize {
        match self.0.get(k) {
            Some(ParamValue::Int(v)) => *v as usize,
            other => panic!("parameter {k} missing or not an integer: {other:?}"),
        }
    }

    fn float(&self, k: &str) -> f64 {
        match self.0.get(k) {
            Some(ParamValue::Float(v)) => *v,
            Some(ParamValue::Int(v)) => *v as f64,
            other => panic!("parameter {k} missing or not a number: {other:?}"),
        }
    }

    fn sizes(&self) -> Vec<usize> {
        match self.0.get("sizes") {
            Some(ParamValue::List(v)) => v.iter().map(|&x| x as usize).collect(),
            other => panic!("parameter sizes missing: {other:?}"),
        }
    }

    fn text(&self, k: &str) -> &str {
        match self.0.get(k) {
            Some(ParamValue::Text(v)) => v,
            other => panic!("parameter {k} missing or not text: {other:?}"),
        }
    }

    fn settings(&self) -> EstimatorSettings {
        let max_iterations = self.int("max_iterations");
        let restarts = self.int("restarts");
        EstimatorSettings {
            norm: Tolerance {
                rel_tol: self.float("rel_tol"),
                max_iterations,
                restarts,
            },
            cpmap: Tolerance {
                rel_tol: self.float("cp_rel_tol"),
                max_iterations: self.int("cp_max_iterations"),
                restarts,
            },
            trilinear: Tolerance {
                rel_tol: self.float("tri_rel_tol"),
                max_iterations,
                restarts,
            },
        }
    }
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn run_trial(def: &ExperimentDef, params: &Params, seed_path: &SeedPath) -> Result<BTreeMap<String, f64>> {
    let r = Resolved(params);
    let family_path = seed_path.child(0);
    let mut stream = derive_stream(&seed_path.child(1));
    let settings = r.settings();
    let mut st = BTreeMap::new();
    let mut put = |k: &str, v: f64| {
        st.insert(k.to_string(), v);
    };
    match def.runner {
        Runner::Ginibre => {
            let g = sample_ginibre(&GinibreSpec::new(r.int("n"))?, &mut derive_stream(&family_path));
            let e = iterative_norm(&g, &settings.norm, &mut stream);
            put("norm", e.value);
            put("converged", flag(e.converged));
        }
        Runner::Ht => {
            let g = sample_ht_tuple(r.int("r"), r.int("n"), &family_path)?;
            let dist = match r.text("coeff") {
                "gaussian" => CoeffDistribution::Gaussian,
                _ => CoeffDistribution::UnitSphere,
            };
            let a = sample_coeff_family(r.int("r"), 1, r.int("p"), dist, &mut stream)?;
            let h = ht_inequality_check(&a, &g, &settings.norm, &mut stream)?;
            put("lhs", h.lhs);
            put("rhs", h.rhs);
            put("slack", h.slack);
            put("converged", flag(h.lhs_estimate.converged));
        }
        Runner::Ymn => {
            let m = r.int("m");
            let y = sample_ymn(m, r.int("n"), &family_path)?;
            let e = iterative_norm(&y, &settings.norm, &mut stream);
            put("norm", e.value);
            put("ratio", e.value / (m as f64).sqrt());
            put("converged", flag(e.converged));
        }
        Runner::Lemma14 => {
            let (m, d) = (r.int("m"), r.int("d"));
            let fam = product_family(m, &r.sizes(), &family_path)?;
            let rep = cpmap_norm(&CPMapOperator::from_network(fam), &settings.cpmap);
            put("cpmap", rep.estimate.value);
            put("trace_bound", rep.trace_bound);
            put("ratio_md", rep.estimate.value / (m as f64).powi(d as i32));
            put("trace_ok", flag(rep.trace_bound_ok));
            put("converged", flag(rep.estimate.converged));
        }
        Runner::Corollary13 => {
            let d = r.int("d");
            let fam = product_family(r.int("r"), &r.sizes(), &family_path)?;
            let res = trilinear_sup(&fam, r.int("p"), &settings.trilinear, &mut stream)?;
            put("z", res.estimate.value);
            put("ratio", res.estimate.value / 2f64.powi(d as i32));
            put("converged", flag(res.estimate.converged));
            put("monotone", flag(res.monotone()));
        }
        Runner::Sublemma28 => {
            let spec = ChainFamilySpec::new(r.int("m"), r.int("d"), r.sizes(), family_path)?;
            let chain = build_chain(&spec)?;
            let chk = check_sublemma28(&chain, r.float("epsilon"), &settings, &mut stream)?;
            let w = cb_lower_witness(&chk)?;
            put("cpmap", chk.item_i.value);
            put("trace_bound", chk.trace_bound);
            put("item_i", flag(chk.item_i.pass));
            put("z2", chk.item_ii.value);
            put("item_ii", flag(chk.item_ii.pass));
            let z4 = chk.z4();
            put("uk_max", z4.block_norms.iter().cloned().fold(0.0, f64::max));
            put("z4", z4.value);
            put("item_iv", flag(chk.item_iv_pass()));
            put("all_items", flag(chk.all_pass()));
            put("certified_cb_lower", chk.certified_cb_lower);
            put("id_max_lower", w.id_max_lower);
            put("cprime_lower", w.cprime_lower);
            put("cpmap_converged", flag(chk.cpmap.converged));
            put("z2_converged", flag(chk.z2.converged));
            put("z2_monotone", flag(chk.z2_monotone));
            put("coherent", flag(chk.is_coherent()));
        }
        Runner::Theorem29 => {
            let (m, d) = (r.int("m"), r.int("d"));
            let spec = NaiveFamilySpec::new(m, d, r.int("n"), family_path)?.with_budget(r.int("element_budget") as u128);
            let sw = theorem29_sandwich(&spec, &settings, &mut stream)?;
            put("a_surrogate", sw.a_surrogate);
            put("a_normalized", sw.a_surrogate / (2.0 * (m as f64).powf((d / 2) as f64 / 2.0)));
            put("b_lower", sw.b_lower);
            put("b_upper", sw.b_upper);
            put("sandwich_ok", flag(sw.is_ordered()));
            put("abproduct_lower", sw.abproduct_lower);
            put("trace_bound", sw.abproduct.trace_bound);
            put("naive_cb_lower", sw.naive_cb_lower);
            put("cpmap_converged", flag(sw.abproduct.estimate.converged));
        }
    }
    Ok(st)
}

fn resolve_or_err(def: &ExperimentDef, params: &Params) -> Result<Params> {
    def.resolve(params).map_err(|issues| {
        let msg: Vec<String> = issues.iter().map(ToString::to_string).collect();
        LabError::invalid(def.id, msg.join("; "))
    })
}

/// All trials of one experiment, in trial order.
pub fn run_experiment(id: &str, params: &Params, master_seed: u64) -> Result<Vec<ExperimentRecord>> {
    let def = lookup(id)?;
    let params = resolve_or_err(def, params)?;
    let trials = Resolved(&params).int("trials");
    (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let seed_path = SeedPath::new(master_seed, [def.code, t]);
            let start = Instant::now();
            let statistics = run_trial(def, &params, &seed_path)?;
            Ok(ExperimentRecord {
                experiment_id: def.id.to_string(),
                seed_path,
                params: params.clone(),
                statistics,
                wall_time: start.elapsed().as_secs_f64(),
            })
        })
        .collect()
}

/// Recomputes a record from its own parameters and seed path.
pub fn replay(record: &ExperimentRecord) -> Result<ExperimentRecord> {
    let def = lookup(&record.experiment_id)?;
    let params = resolve_or_err(def, &record.params)?;
    let start = Instant::now();
    let statistics = run_trial(def, &params, &record.seed_path)?;
    Ok(ExperimentRecord {
        experiment_id: def.id.to_string(),
        seed_path: record.seed_path.clone(),
        params,
        statistics,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingSeries {
    pub experiment_id: String,
    pub statistic: String,
    pub param: String,
    pub abscissa: Vec<f64>,
    pub means: Vec<f64>,
    pub records: Vec<Vec<ExperimentRecord>>,
    pub fit: FitResult,
}

/// Mean of `statistic` over records.
pub fn statistic_mean(records: &[ExperimentRecord], statistic: &str) -> Result<f64> {
    let values: Vec<f64> = records
        .iter()
        .filter_map(|r| r.statistics.get(statistic).copied())
        .collect();
    if values.is_empty() {
        return Err(LabError::InsufficientData(format!("no records carry `{statistic}`")));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Runs the experiment at every value of its scaling parameter and fits
/// `ln mean` against `ln value`.
pub fn run_scaling(
    id: &str,
    statistic: &str,
    values: &[usize],
    params: &Params,
    master_seed: u64,
) -> Result<ScalingSeries> {
    let def = lookup(id)?;
    if def.stat(statistic).is_none() {
        return Err(LabError::UnknownStatistic {
            experiment: id.to_string(),
            statistic: statistic.to_string(),
        });
    }
    if values.len() < 3 {
        return Err(LabError::InsufficientData(format!(
            "scaling needs at least 3 values of {}, got {}",
            def.scaling_param,
            values.len()
        )));
    }
    let mut records = Vec::with_capacity(values.len());
    let mut means = Vec::with_capacity(values.len());
    for &v in values {
        let mut p = params.clone();
        p.insert(def.scaling_param.to_string(), ParamValue::Int(v as i64));
        let recs = run_experiment(id, &p, master_seed)?;
        means.push(statistic_mean(&recs, statistic)?);
        records.push(recs);
    }
    let abscissa: Vec<f64> = values.iter().map(|&v| v as f64).collect();
    let points: Vec<(f64, f64)> = abscissa.iter().cloned().zip(means.iter().cloned()).collect();
    let fit = loglog_fit(&points)?;
    Ok(ScalingSeries {
        experiment_id: id.to_string(),
        statistic: statistic.to_string(),
        param: def.scaling_param.to_string(),
        abscissa,
        means,
        records,
        fit,
    })
}

/// Difference between the chained and naive certificate slopes at one degree.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastReport {
    pub d: usize,
    pub chain_slope: f64,
    pub naive_slope: f64,
    pub difference: f64,
    pub targets: ExponentRow,
}

pub fn contrast_report(d: usize, chain: &ScalingSeries, naive: &ScalingSeries) -> ContrastReport {
    ContrastReport {
        d,
        chain_slope: chain.fit.slope,
        naive_slope: naive.fit.slope,
        difference: chain.fit.slope - naive.fit.slope,
        targets: exponent_table(&[d])[0],
    }
}

// ---------------------------------------------------------------------------

/// Column names for a set of records: `experiment_id`, `seed`, sorted
/// parameter names, sorted statistic names.
pub fn csv_header(records: &[ExperimentRecord]) -> Vec<String> {
    let params: BTreeSet<&String> = records.iter().flat_map(|r| r.params.keys()).collect();
    let stats: BTreeSet<&String> = records.iter().flat_map(|r| r.statistics.keys()).collect();
    let mut header = vec!["experiment_id".to_string(), "seed".to_string()];
    header.extend(params.into_iter().cloned());
    header.extend(stats.into_iter().cloned());
    header
}

/// Shortest round-trip rendering of a statistic.
pub fn format_stat(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_records_csv<W: Write>(records: &[ExperimentRecord], w: W) -> Result<()> {
    let header = csv_header(records);
    let mut out = csv::Writer::from_writer(w);
    out.write_record(&header).map_err(csv_err)?;
    for r in records {
        let row: Vec<String> = header
            .iter()
            .map(|col| match col.as_str() {
                "experiment_id" => r.experiment_id.clone(),
                "seed" => r.seed_path.display(),
                c => r
                    .params
                    .get(c)
                    .map(ToString::to_string)
                    .or_else(|| r.statistics.get(c).map(|v| format_stat(*v)))
                    .unwrap_or_default(),
            })
            .collect();
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// One JSON object per line; `wall_time` is left out.
pub fn write_records_jsonl<W: Write>(records: &[ExperimentRecord], mut w: W) -> Result<()> {
    for r in records {
        let v = serde_json::json!({
            "experiment_id": r.experiment_id,
            "seed": r.seed_path.display(),
            "params": r.params,
            "statistics": r.statistics,
        });
        serde_json::to_writer(&mut w, &v)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_timings_csv<W: Write>(records: &[ExperimentRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["experiment_id", "seed", "wall_time"]).map_err(csv_err)?;
    for r in records {
        out.write_record([r.experiment_id.clone(), r.seed_path.display(), format_stat(r.wall_time)])
            .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> LabError {
    LabError::Io(std::io::Error::other(e))
}

/// A record row read back from a CSV file, keyed by column name.
pub type CsvRow = BTreeMap<String, String>;

pub fn read_records_csv<R: std::io::Read>(r: R) -> Result<Vec<CsvRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers().map_err(csv_err)?.clone();
    rdr.records()
        .map(|row| {
            let row = row.map_err(csv_err)?;
            Ok(header
                .iter()
                .zip(row.iter())
                .filter(|(_, v)| !v.is_empty())
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect())
        })
        .collect()
}

/// Groups CSV rows of one experiment by its scaling parameter and fits the
/// mean of `statistic`.
pub fn fit_csv_rows(rows: &[CsvRow], id: &str, statistic: &str) -> Result<(Vec<(f64, f64)>, FitResult)> {
    let def = lookup(id)?;
    if def.stat(statistic).is_none() {
        return Err(LabError::UnknownStatistic {
            experiment: id.to_string(),
            statistic: statistic.to_string(),
        });
    }
    let mut groups: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for row in rows.iter().filter(|r| r.get("experiment_id").map(String::as_str) == Some(id)) {
        let x = row
            .get(def.scaling_param)
            .and_then(|v| v.parse::<i64>().ok())
            .ok_or_else(|| LabError::invalid(def.scaling_param, "missing or not an integer in a row"))?;
        let y = row
            .get(statistic)
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| LabError::invalid(statistic, "missing or not a number in a row"))?;
        groups.entry(x).or_default().push(y);
    }
    let points: Vec<(f64, f64)> = groups
        .into_iter()
        .map(|(x, ys)| (x as f64, ys.iter().sum::<f64>() / ys.len() as f64))
        .collect();
    let fit = loglog_fit(&points)?;
    Ok((points, fit))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_names_are_disjoint() {
        for e in registry() {
            for s in &e.stats {
                assert!(e.param(s.name).is_none(), "{}: {} is both", e.id, s.name);
            }
            assert!(e.param(e.scaling_param).is_some());
        }
    }

    #[test]
    fn resolve_defaults_and_staircase() {
        let def = lookup("sublemma28").unwrap();
        let mut given = Params::new();
        given.insert("d".into(), ParamValue::Int(3));
        given.insert("n1".into(), ParamValue::Int(64));
        let p = def.resolve(&given).unwrap();
        assert_eq!(p["sizes"], ParamValue::List(vec![64, 32]));
        assert_eq!(p["cp_rel_tol"], ParamValue::Float(1e-6));
        assert_eq!(p["epsilon"], ParamValue::Float(0.3));
    }

    #[test]
    fn resolve_reports_every_issue() {
        let def = lookup("ymn").unwrap();
        let mut given = Params::new();
        given.insert("bogus".into(), ParamValue::Int(1));
        given.insert("m".into(), ParamValue::Int(0));
        let issues = def.resolve(&given).unwrap_err();
        assert_eq!(issues.len(), 2);
    }

    #[test]
    fn param_rendering() {
        assert_eq!(ParamValue::Float(0.3).to_string(), "0.3");
        assert_eq!(ParamValue::Float(1e-6).to_string(), "1e-6");
        assert_eq!(ParamValue::List(vec![256, 128]).to_string(), "256;128");
    }

    #[test]
    fn exponent_targets() {
        let t = exponent_table(&[2, 3, 4]);
        assert_eq!((t[0].chain, t[0].naive), (0.5, 0.5));
        assert_eq!((t[1].chain, t[1].naive), (1.0, 0.5));
        assert_eq!((t[2].chain, t[2].naive), (1.5, 1.0));
    }
}

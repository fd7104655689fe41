//! Homogeneous noncommutative polynomials `P = Σ_i λ_i X^1_{i1} ⋯ X^d_{id}`,
//! their evaluation at operator tuples, sampled lower bounds on the
//! universal norm, and factorization checks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constructions::{cb_lower_witness, ChainConstruction, SublemmaCheck};
use crate::ensembles::{checked_pow, linear_index, multi_index};
use crate::error::{LabError, Result};
use crate::matrix::{ComplexMatrix, C64, ONE};
use crate::rng::{derive_stream, SeedPath, Stream};
use crate::specnorm::NormEstimate;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NCPolynomial {
    pub m: usize,
    pub d: usize,
    /// `λ_i` in row-major multi-index order.
    pub coeffs: Vec<C64>,
}

impl NCPolynomial {
    pub fn new(m: usize, d: usize, coeffs: Vec<C64>) -> Result<Self> {
        if m == 0 || d == 0 {
            return Err(LabError::invalid("m, d", "must be at least 1"));
        }
        let count = checked_pow(m, d)?;
        if coeffs.len() != count {
            return Err(LabError::DimensionMismatch {
                context: "NCPolynomial::new",
                expected: count,
                actual: coeffs.len(),
            });
        }
        if coeffs.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(LabError::invalid("coeffs", "all coefficients must be finite"));
        }
        Ok(NCPolynomial { m, d, coeffs })
    }

    /// The single monomial `X^1_{i1} ⋯ X^d_{id}`.
    pub fn monomial(m: usize, index: &[usize]) -> Result<Self> {
        let d = index.len();
        let mut coeffs = vec![C64::new(0.0, 0.0); checked_pow(m, d)?];
        if index.iter().any(|&i| i >= m) {
            return Err(LabError::invalid("index", "entry out of range"));
        }
        coeffs[linear_index(index, m)] = ONE;
        NCPolynomial::new(m, d, coeffs)
    }

    pub fn coeff(&self, index: &[usize]) -> C64 {
        self.coeffs[linear_index(index, self.m)]
    }

    pub fn scaled(&self, alpha: C64) -> Self {
        NCPolynomial {
            m: self.m,
            d: self.d,
            coeffs: self.coeffs.iter().map(|c| c * alpha).collect(),
        }
    }

    /// `(Σ |λ_i|^2)^{1/2}`, a lower bound on `‖P‖`.
    pub fn l2_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// `d` lists of `m` square matrices of a common size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorTuple {
    pub n: usize,
    /// `factors[k][j] = x^{k+1}_{j+1}`.
    pub factors: Vec<Vec<ComplexMatrix>>,
    /// All factors were verified to have norm at most one.
    pub contraction: bool,
}

/// Slack allowed when verifying a claimed contraction.
pub const CONTRACTION_SLACK: f64 = 1e-12;

impl OperatorTuple {
    pub fn new(factors: Vec<Vec<ComplexMatrix>>) -> Result<Self> {
        let first = factors
            .first()
            .and_then(|l| l.first())
            .ok_or_else(|| LabError::invalid("factors", "need at least one level with one matrix"))?;
        let (n, m) = (first.rows(), factors[0].len());
        for level in &factors {
            if level.len() != m {
                return Err(LabError::DimensionMismatch {
                    context: "OperatorTuple::new",
                    expected: m,
                    actual: level.len(),
                });
            }
            if level.iter().any(|x| x.rows() != n || x.cols() != n) {
                return Err(LabError::invalid("factors", format!("all matrices must be {n}x{n}")));
            }
        }
        Ok(OperatorTuple {
            n,
            factors,
            contraction: false,
        })
    }

    /// Builds the tuple and checks that every factor is a contraction.
    pub fn contractive(factors: Vec<Vec<ComplexMatrix>>) -> Result<Self> {
        let mut t = OperatorTuple::new(factors)?;
        let worst = t.max_factor_norm();
        if worst > 1.0 + CONTRACTION_SLACK {
            return Err(LabError::invalid("factors", format!("factor norm {worst} exceeds 1")));
        }
        t.contraction = true;
        Ok(t)
    }

    pub fn m(&self) -> usize {
        self.factors[0].len()
    }

    pub fn d(&self) -> usize {
        self.factors.len()
    }

    pub fn max_factor_norm(&self) -> f64 {
        self.factors
            .iter()
            .flatten()
            .map(ComplexMatrix::spectral_norm)
            .fold(0.0, f64::max)
    }

    /// `x^1_{i1} x^2_{i2} ⋯ x^d_{id}`, multiplied left to right.
    pub fn monomial(&self, index: &[usize]) -> ComplexMatrix {
        let mut acc = self.factors[0][index[0]].clone();
        for (k, &i) in index.iter().enumerate().skip(1) {
            acc = acc.matmul(&self.factors[k][i]).expect("uniform sizes");
        }
        acc
    }
}

fn check_shapes(p: &NCPolynomial, t: &OperatorTuple) -> Result<()> {
    if p.m != t.m() || p.d != t.d() {
        return Err(LabError::invalid(
            "tuple",
            format!("polynomial is (m={}, d={}), tuple is (m={}, d={})", p.m, p.d, t.m(), t.d()),
        ));
    }
    Ok(())
}

/// `Σ_i λ_i x^1_{i1} ⋯ x^d_{id}`; prefix products are shared between
/// monomials, each product is formed left to right.
pub fn eval_poly(p: &NCPolynomial, t: &OperatorTuple) -> Result<ComplexMatrix> {
    check_shapes(p, t)?;
    let mut out = ComplexMatrix::zeros(t.n, t.n);
    let mut index = Vec::with_capacity(p.d);
    accumulate(p, t, None, &mut index, &mut out);
    Ok(out)
}

fn accumulate(
    p: &NCPolynomial,
    t: &OperatorTuple,
    prefix: Option<&ComplexMatrix>,
    index: &mut Vec<usize>,
    out: &mut ComplexMatrix,
) {
    let k = index.len();
    let stride = p.m.pow((p.d - k - 1) as u32);
    let base = if k == 0 { 0 } else { linear_index(index, p.m) * p.m * stride };
    for j in 0..p.m {
        let block = &p.coeffs[base + j * stride..base + (j + 1) * stride];
        if block.iter().all(|c| *c == C64::new(0.0, 0.0)) {
            continue;
        }
        let x = &t.factors[k][j];
        let next = match prefix {
            None => x.clone(),
            Some(pre) => pre.matmul(x).expect("uniform sizes"),
        };
        index.push(j);
        if k + 1 == p.d {
            out.axpy(block[0], &next).expect("uniform sizes");
        } else {
            accumulate(p, t, Some(&next), index, out);
        }
        index.pop();
    }
}

/// How random contraction tuples are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContractionModel {
    /// Haar unitaries.
    Unitary,
    /// Ginibre matrices divided by their norm.
    Ginibre,
    /// Even trials unitary, odd trials Ginibre.
    Mixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerOptions {
    pub model: ContractionModel,
    /// Use the same `m` matrices at every level.
    pub tied: bool,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        SamplerOptions {
            model: ContractionModel::Mixed,
            tied: false,
        }
    }
}

/// Haar unitary: QR of a Ginibre sample with the phases of `diag(R)` moved into `Q`.
pub fn haar_unitary(n: usize, stream: &mut Stream) -> ComplexMatrix {
    let g = ComplexMatrix::from_fn(n, n, |_, _| stream.complex_standard()).to_nalgebra();
    let qr = g.qr();
    let (mut q, r) = qr.unpack();
    for j in 0..n {
        let rjj = r[(j, j)];
        let phase = if rjj.norm() > 0.0 { rjj / rjj.norm() } else { ONE };
        for i in 0..n {
            q[(i, j)] *= phase;
        }
    }
    ComplexMatrix::from_nalgebra(&q)
}

/// Ginibre sample scaled to operator norm one.
pub fn ginibre_contraction(n: usize, stream: &mut Stream) -> ComplexMatrix {
    let g = ComplexMatrix::from_fn(n, n, |_, _| stream.complex_standard());
    let s = g.spectral_norm();
    g.scaled(C64::new(1.0 / s, 0.0))
}

pub fn sample_contraction_tuple(
    m: usize,
    d: usize,
    n: usize,
    unitary: bool,
    tied: bool,
    stream: &mut Stream,
) -> Result<OperatorTuple> {
    if m == 0 || d == 0 || n == 0 {
        return Err(LabError::invalid("m, d, n", "must be at least 1"));
    }
    let draw = |stream: &mut Stream| -> Vec<ComplexMatrix> {
        (0..m)
            .map(|_| if unitary { haar_unitary(n, stream) } else { ginibre_contraction(n, stream) })
            .collect()
    };
    let factors = if tied {
        vec![draw(stream); d]
    } else {
        (0..d).map(|_| draw(stream)).collect()
    };
    Ok(OperatorTuple {
        n,
        factors,
        contraction: true,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyNormLower {
    /// Largest `‖P(x)‖` over the sampled tuples.
    pub value: f64,
    /// `(Σ |λ_i|^2)^{1/2}`, reported alongside and never enforced.
    pub l2_bound: f64,
    pub trial_values: Vec<f64>,
    pub best_trial: usize,
    pub n: usize,
    pub options: SamplerOptions,
    /// Seed of the per-trial streams `base/t`.
    pub base_seed: u64,
}

/// Per-trial tuple of [`poly_norm_lower`].
pub fn poly_trial_tuple(
    p: &NCPolynomial,
    n: usize,
    options: &SamplerOptions,
    base_seed: u64,
    trial: usize,
) -> Result<OperatorTuple> {
    let unitary = match options.model {
        ContractionModel::Unitary => true,
        ContractionModel::Ginibre => false,
        ContractionModel::Mixed => trial.is_multiple_of(2),
    };
    let mut s = derive_stream(&SeedPath::new(base_seed, [trial as u64]));
    sample_contraction_tuple(p.m, p.d, n, unitary, options.tied, &mut s)
}

/// Largest `‖P(x)‖` over `trials` random contraction tuples of size `n`.
pub fn poly_norm_lower(
    p: &NCPolynomial,
    n: usize,
    trials: usize,
    options: &SamplerOptions,
    stream: &mut Stream,
) -> Result<PolyNormLower> {
    if n == 0 || trials == 0 {
        return Err(LabError::invalid("n, trials", "must be at least 1"));
    }
    let base_seed = stream.next_u64();
    let trial_values = (0..trials)
        .into_par_iter()
        .map(|t| {
            let tuple = poly_trial_tuple(p, n, options, base_seed, t)?;
            Ok(eval_poly(p, &tuple)?.spectral_norm())
        })
        .collect::<Result<Vec<f64>>>()?;
    let (best_trial, value) = trial_values
        .iter()
        .cloned()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best });
    Ok(PolyNormLower {
        value,
        l2_bound: p.l2_norm(),
        trial_values,
        best_trial,
        n,
        options: *options,
        base_seed,
    })
}

/// `x_i = C x^1_{i1} ⋯ x^d_{id}` for every `i ∈ [m]^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorizationClaim {
    /// `x_i` in row-major multi-index order.
    pub targets: Vec<ComplexMatrix>,
    pub factors: OperatorTuple,
    pub constant: f64,
}

impl FactorizationClaim {
    /// Claim obtained by multiplying out the factors.
    pub fn from_factors(factors: OperatorTuple, constant: f64) -> Result<Self> {
        let count = checked_pow(factors.m(), factors.d())?;
        let c = C64::new(constant, 0.0);
        let targets = (0..count)
            .map(|lin| factors.monomial(&multi_index(lin, factors.m(), factors.d())).scaled(c))
            .collect();
        Ok(FactorizationClaim {
            targets,
            factors,
            constant,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorizationVerdict {
    pub pass: bool,
    pub max_residual: f64,
    pub max_factor_norm: f64,
    pub contraction_ok: bool,
}

pub fn verify_factorization(claim: &FactorizationClaim, tol: f64) -> Result<FactorizationVerdict> {
    if claim.constant.is_nan() || claim.constant < 0.0 {
        return Err(LabError::invalid("constant", "must be nonnegative"));
    }
    let f = &claim.factors;
    let (m, d) = (f.m(), f.d());
    let count = checked_pow(m, d)?;
    if claim.targets.len() != count {
        return Err(LabError::DimensionMismatch {
            context: "verify_factorization",
            expected: count,
            actual: claim.targets.len(),
        });
    }
    if claim.targets.iter().any(|x| x.rows() != f.n || x.cols() != f.n) {
        return Err(LabError::invalid("targets", format!("all targets must be {0}x{0}", f.n)));
    }
    let c = C64::new(claim.constant, 0.0);
    let max_residual = (0..count)
        .into_par_iter()
        .map(|lin| {
            let prod = f.monomial(&multi_index(lin, m, d)).scaled(c);
            claim.targets[lin].sub(&prod).expect("shapes checked").spectral_norm()
        })
        .reduce(|| 0.0, f64::max);
    let max_factor_norm = f.max_factor_norm();
    let contraction_ok = max_factor_norm <= 1.0 + tol;
    Ok(FactorizationVerdict {
        pass: contraction_ok && max_residual <= tol,
        max_residual,
        max_factor_norm,
        contraction_ok,
    })
}

/// Impossibility certificate for factorizations of the rescaled chain family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CPrimeCertificate {
    pub claim: String,
    pub value: f64,
    pub m: usize,
    pub d: usize,
    pub sizes: Vec<usize>,
    pub seed_path: SeedPath,
    pub epsilon: f64,
    /// The family is `x_i = rescale · U_i`.
    pub rescale: f64,
    pub cpmap: NormEstimate,
    pub trace_bound: f64,
    pub block_norms: Vec<f64>,
    pub z2: NormEstimate,
    pub certified_cb_lower: f64,
    /// `m^{(d-1)/2}`, the known upper bound on the constant.
    pub reference_upper: f64,
}

impl CPrimeCertificate {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn cprime_certificate(c: &ChainConstruction, check: &SublemmaCheck) -> Result<CPrimeCertificate> {
    let w = cb_lower_witness(check)?;
    let spec = c.spec();
    if spec.m != check.m || spec.d != check.d {
        return Err(LabError::invalid("check", "does not belong to this construction"));
    }
    Ok(CPrimeCertificate {
        claim: format!(
            "with x_i = U_i / {:.6e}, sup over unit l2 coefficients of ||sum lambda_i x_i|| is at most 1; \
             any factorization x_i = C x^1_(i1) ... x^{}_(i{}) through contractions requires C >= {:.6e}",
            check.z2.value, spec.d, spec.d, w.cprime_lower
        ),
        value: w.cprime_lower,
        m: spec.m,
        d: spec.d,
        sizes: spec.sizes.clone(),
        seed_path: spec.seed_path.clone(),
        epsilon: check.epsilon,
        rescale: 1.0 / check.z2.value,
        cpmap: check.cpmap.clone(),
        trace_bound: check.trace_bound,
        block_norms: check.block_norms.iter().map(|e| e.value).collect(),
        z2: check.z2.clone(),
        certified_cb_lower: check.certified_cb_lower,
        reference_upper: (spec.m as f64).powf((spec.d as f64 - 1.0) / 2.0),
    })
}

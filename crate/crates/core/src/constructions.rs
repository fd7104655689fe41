//! Composite objects built from sampled families: the chained tensor family
//! and its block matrices, the cb lower-bound checks on it, the product
//! family, the naive family sandwich, and the two-sided bound for
//! `Σ a_j ⊗ g_j`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ensembles::{
    sample_chain_family, sample_naive_family, sample_product_family, ChainFamily, ChainFamilySpec,
    MatrixCoefficientFamily, NaiveFamily, NaiveFamilySpec,
};
use crate::error::{LabError, Result};
use crate::matrix::{ComplexMatrix, C64};
use crate::rng::{SeedPath, Stream};
use crate::specnorm::{
    cpmap_norm, dense_norm, iterative_norm, trilinear_sup, CpNormReport, EstimatorSettings, NormEstimate,
    Tolerance,
};
use crate::tensorop::{
    flatten_family, CPMapOperator, Coefficient, FlattenSpec, KroneckerChain, OperatorSum, PathFamily,
};

/// Smallest Z₂ estimate accepted as a divisor.
pub const Z2_FLOOR: f64 = 1e-9;

/// The chained family `U_i = Y^1_{i1 i2} ⊗ … ⊗ Y^{d-1}_{i_{d-1} i_d}`.
///
/// Levels and indices are zero-based. Every `U_i` shares its factors with
/// the sampled `Y^k_{pq}`, so only `m^2 (d-1)` matrices are stored.
#[derive(Clone, Debug)]
pub struct ChainConstruction {
    family: ChainFamily,
    network: PathFamily,
}

pub fn build_chain(spec: &ChainFamilySpec) -> Result<ChainConstruction> {
    Ok(ChainConstruction::from_family(sample_chain_family(spec)?))
}

impl ChainConstruction {
    pub fn from_family(family: ChainFamily) -> Self {
        let network = PathFamily::chain(&family);
        ChainConstruction { family, network }
    }

    pub fn spec(&self) -> &ChainFamilySpec {
        &self.family.spec
    }

    pub fn family(&self) -> &ChainFamily {
        &self.family
    }

    /// The `m^d` terms `U_i` as paths of a layered graph.
    pub fn network(&self) -> &PathFamily {
        &self.network
    }

    pub fn total_dim(&self) -> usize {
        self.family.spec.total_dim()
    }

    pub fn term_count(&self) -> usize {
        self.network.path_count()
    }

    pub fn u(&self, index: &[usize]) -> Result<KroneckerChain> {
        let spec = &self.family.spec;
        if index.len() != spec.d {
            return Err(LabError::DimensionMismatch {
                context: "ChainConstruction::u",
                expected: spec.d,
                actual: index.len(),
            });
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= spec.m) {
            return Err(LabError::invalid("index", format!("entry {bad} out of range for m = {}", spec.m)));
        }
        let factors = (0..spec.d - 1)
            .map(|k| self.family.get(k, index[k], index[k + 1]).clone())
            .collect();
        KroneckerChain::new(factors)
    }

    /// `X ↦ Σ_i U_i X U_i^†`.
    pub fn cpmap(&self) -> CPMapOperator {
        CPMapOperator::from_network(self.network.clone())
    }

    /// The same construction with every `U_i` multiplied by `alpha`.
    pub fn scaled(&self, alpha: f64) -> ChainConstruction {
        let spec = self.family.spec.clone();
        let s = C64::new(alpha, 0.0);
        let levels = (0..self.family.num_levels())
            .map(|k| {
                self.family
                    .level(k)
                    .iter()
                    .map(|y| if k == 0 { y.scaled(s) } else { y.as_ref().clone() })
                    .collect()
            })
            .collect();
        let family = ChainFamily::from_levels(spec, levels).expect("shapes are unchanged");
        ChainConstruction::from_family(family)
    }
}

/// `U^k = Σ_{p,q} e_pq ⊗ Y^k_pq`, of size `m N_k`; `level` is zero-based.
pub fn block_matrix_uk(c: &ChainConstruction, level: usize) -> Result<ComplexMatrix> {
    let spec = c.spec();
    if level >= spec.d - 1 {
        return Err(LabError::invalid(
            "level",
            format!("must be below {} for d = {}", spec.d - 1, spec.d),
        ));
    }
    let blocks: Vec<&ComplexMatrix> = c.family.level(level).iter().map(Arc::as_ref).collect();
    ComplexMatrix::from_blocks(spec.m, spec.m, &blocks)
}

/// Norms of all block matrices `U^k`.
pub fn block_norms(c: &ChainConstruction, tol: &Tolerance, stream: &mut Stream) -> Result<Vec<NormEstimate>> {
    (0..c.spec().d - 1)
        .map(|k| Ok(iterative_norm(&block_matrix_uk(c, k)?, tol, stream)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Z4Statistic {
    /// `m^{-1/2} max_k ‖U^k‖`.
    pub value: f64,
    pub block_norms: Vec<f64>,
}

pub fn z4_statistic(c: &ChainConstruction, tol: &Tolerance, stream: &mut Stream) -> Result<Z4Statistic> {
    let norms: Vec<f64> = block_norms(c, tol, stream)?.into_iter().map(|e| e.value).collect();
    Ok(z4_from_norms(c.spec().m, norms))
}

fn z4_from_norms(m: usize, norms: Vec<f64>) -> Z4Statistic {
    let max = norms.iter().cloned().fold(0.0, f64::max);
    Z4Statistic {
        value: max / (m as f64).sqrt(),
        block_norms: norms,
    }
}

/// A measured value against a threshold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemCheck {
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl ItemCheck {
    pub fn at_least(value: f64, threshold: f64) -> Self {
        ItemCheck {
            value,
            threshold,
            pass: value >= threshold,
        }
    }

    pub fn at_most(value: f64, threshold: f64) -> Self {
        ItemCheck {
            value,
            threshold,
            pass: value <= threshold,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SublemmaCheck {
    pub m: usize,
    pub d: usize,
    pub epsilon: f64,
    /// `‖Σ U_i ⊗ Ū_i‖ ≥ (1 − ε) m^d`.
    pub item_i: ItemCheck,
    /// `Z₂ ≤ (1 + ε) 2^{d-1}`.
    pub item_ii: ItemCheck,
    /// `‖U^k‖ ≤ 2 (1 + ε) m^{1/2}` for every level.
    pub item_iv: Vec<ItemCheck>,
    pub trace_bound: f64,
    /// `cpmap / (m Π_k ‖U^k‖)`.
    pub certified_cb_lower: f64,
    pub cpmap: NormEstimate,
    pub z2: NormEstimate,
    pub z2_monotone: bool,
    pub block_norms: Vec<NormEstimate>,
}

impl SublemmaCheck {
    pub fn item_iv_pass(&self) -> bool {
        self.item_iv.iter().all(|c| c.pass)
    }

    pub fn all_pass(&self) -> bool {
        self.item_i.pass && self.item_ii.pass && self.item_iv_pass()
    }

    pub fn z4(&self) -> Z4Statistic {
        z4_from_norms(self.m, self.block_norms.iter().map(|e| e.value).collect())
    }

    pub fn thresholds(m: usize, d: usize, epsilon: f64) -> (f64, f64, f64) {
        let (m, d) = (m as f64, d as i32);
        (
            (1.0 - epsilon) * m.powi(d),
            (1.0 + epsilon) * 2f64.powi(d - 1),
            2.0 * (1.0 + epsilon) * m.sqrt(),
        )
    }

    /// Recomputes every flag and the certificate from the stored values.
    pub fn is_coherent(&self) -> bool {
        let (t1, t2, t4) = Self::thresholds(self.m, self.d, self.epsilon);
        let prod: f64 = self.item_iv.iter().map(|c| c.value).product();
        let cert = self.item_i.value / (self.m as f64 * prod);
        self.item_i == ItemCheck::at_least(self.item_i.value, t1)
            && self.item_ii == ItemCheck::at_most(self.item_ii.value, t2)
            && self.item_iv.iter().all(|c| *c == ItemCheck::at_most(c.value, t4))
            && (cert - self.certified_cb_lower).abs() <= 1e-12 * cert.abs()
    }
}

/// Items (i), (ii) and (iv) on one sampled chain, plus the certified lower
/// bound on the cb norm of the associated map.
///
/// The stream feeds the Z₂ restarts first, then the block-norm start vectors.
pub fn check_sublemma28(
    c: &ChainConstruction,
    epsilon: f64,
    settings: &EstimatorSettings,
    stream: &mut Stream,
) -> Result<SublemmaCheck> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(LabError::invalid("epsilon", "must lie in (0, 1)"));
    }
    settings.validate()?;
    let spec = c.spec();
    let (m, d) = (spec.m, spec.d);
    let (t1, t2, t4) = SublemmaCheck::thresholds(m, d, epsilon);

    let cp: CpNormReport = cpmap_norm(&c.cpmap(), &settings.cpmap);
    let z2 = trilinear_sup(c.network(), 1, &settings.trilinear, stream)?;
    let blocks = block_norms(c, &settings.norm, stream)?;

    let prod: f64 = blocks.iter().map(|e| e.value).product();
    let certified_cb_lower = cp.estimate.value / (m as f64 * prod);
    Ok(SublemmaCheck {
        m,
        d,
        epsilon,
        item_i: ItemCheck::at_least(cp.estimate.value, t1),
        item_ii: ItemCheck::at_most(z2.estimate.value, t2),
        item_iv: blocks.iter().map(|e| ItemCheck::at_most(e.value, t4)).collect(),
        trace_bound: cp.trace_bound,
        certified_cb_lower,
        z2_monotone: z2.monotone(),
        cpmap: cp.estimate,
        z2: z2.estimate,
        block_norms: blocks,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CbWitness {
    /// Lower bound on the cb norm of the map `v`.
    pub cb_lower: f64,
    /// `cb_lower / Z₂`, a lower bound on the cb norm of the identity into
    /// the maximal structure.
    pub id_max_lower: f64,
    /// The same ratio, read as a lower bound on the factorization constant.
    pub cprime_lower: f64,
}

pub fn cb_lower_witness(check: &SublemmaCheck) -> Result<CbWitness> {
    let z2 = check.z2.value;
    if z2.is_nan() || z2 <= Z2_FLOOR {
        return Err(LabError::Degenerate(format!("Z2 estimate {z2:e} is below {Z2_FLOOR:e}")));
    }
    let ratio = check.certified_cb_lower / z2;
    Ok(CbWitness {
        cb_lower: check.certified_cb_lower,
        id_max_lower: ratio,
        cprime_lower: ratio,
    })
}

// ---------------------------------------------------------------------------

/// `{g^1_{j_1} ⊗ … ⊗ g^d_{j_d}}` with `m` Ginibre matrices per level.
pub fn product_family(m: usize, sizes: &[usize], seed_path: &SeedPath) -> Result<PathFamily> {
    PathFamily::product(sample_product_family(m, sizes, seed_path)?)
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HtCheck {
    /// `‖Σ a_j ⊗ g_j‖`.
    pub lhs: f64,
    /// `‖Σ a_j^† a_j‖^{1/2} + ‖Σ a_j a_j^†‖^{1/2}`.
    pub rhs: f64,
    pub slack: f64,
    pub lhs_estimate: NormEstimate,
}

pub fn ht_inequality_check(
    a: &MatrixCoefficientFamily,
    g: &[ComplexMatrix],
    tol: &Tolerance,
    stream: &mut Stream,
) -> Result<HtCheck> {
    if a.d != 1 {
        return Err(LabError::invalid("a", "coefficient family must have d = 1"));
    }
    if a.len() != g.len() {
        return Err(LabError::DimensionMismatch {
            context: "ht_inequality_check",
            expected: a.len(),
            actual: g.len(),
        });
    }
    let n = g.first().map_or(0, |m| m.rows());
    if g.iter().any(|m| m.rows() != n || m.cols() != n) {
        return Err(LabError::invalid("g", "matrices must be square of equal size"));
    }
    let p = a.p;
    let mut sum = OperatorSum::new(p * n, p * n);
    let mut gram_left = ComplexMatrix::zeros(p, p);
    let mut gram_right = ComplexMatrix::zeros(p, p);
    for (aj, gj) in a.coeffs.iter().zip(g) {
        sum.push(Coefficient::Matrix(aj.clone()), KroneckerChain::from_matrices(vec![gj.clone()])?)?;
        gram_left.axpy(C64::new(1.0, 0.0), &aj.adjoint().matmul(aj)?)?;
        gram_right.axpy(C64::new(1.0, 0.0), &aj.matmul(&aj.adjoint())?)?;
    }
    let lhs_estimate = iterative_norm(&sum, tol, stream);
    let rhs = dense_norm(&gram_left)?.value.sqrt() + dense_norm(&gram_right)?.value.sqrt();
    Ok(HtCheck {
        lhs: lhs_estimate.value,
        rhs,
        slack: rhs - lhs_estimate.value,
        lhs_estimate,
    })
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sandwich {
    pub m: usize,
    pub d: usize,
    pub n: usize,
    /// Norm of the flattening (even `d`) or the largest over the held index (odd `d`).
    pub a_surrogate: f64,
    pub flatten_norms: Vec<f64>,
    /// `m^d / a`.
    pub b_lower: f64,
    /// `m^{d/2} a` (even `d`) or `m^{(d+1)/2} a` (odd `d`).
    pub b_upper: f64,
    /// `‖Σ Y_i ⊗ Ȳ_i‖`.
    pub abproduct_lower: f64,
    pub abproduct: CpNormReport,
    /// `abproduct_lower / b_upper`.
    pub naive_cb_lower: f64,
}

impl Sandwich {
    pub fn is_ordered(&self) -> bool {
        self.b_lower <= self.b_upper
    }
}

pub fn theorem29_sandwich(spec: &NaiveFamilySpec, settings: &EstimatorSettings, stream: &mut Stream) -> Result<Sandwich> {
    settings.validate()?;
    let family = sample_naive_family(spec)?;
    sandwich_for_family(&family, settings, stream)
}

pub fn sandwich_for_family(family: &NaiveFamily, settings: &EstimatorSettings, stream: &mut Stream) -> Result<Sandwich> {
    let NaiveFamilySpec { m, d, n, .. } = family.spec;
    let flat = flatten_family(family, &FlattenSpec::standard(m, d, n))?;
    let flatten_norms: Vec<f64> = flat
        .iter()
        .map(|f| iterative_norm(f, &settings.norm, stream).value)
        .collect();
    let a = flatten_norms.iter().cloned().fold(0.0, f64::max);
    if a.is_nan() || a <= 0.0 {
        return Err(LabError::Degenerate("flattening has zero norm".into()));
    }
    let mf = m as f64;
    let b_lower = mf.powi(d as i32) / a;
    let b_upper = if d % 2 == 0 {
        mf.powi((d / 2) as i32) * a
    } else {
        mf.powi(d.div_ceil(2) as i32) * a
    };
    let abproduct = cpmap_norm(&CPMapOperator::from_network(PathFamily::naive(family)), &settings.cpmap);
    Ok(Sandwich {
        m,
        d,
        n,
        a_surrogate: a,
        flatten_norms,
        b_lower,
        b_upper,
        abproduct_lower: abproduct.estimate.value,
        naive_cb_lower: abproduct.estimate.value / b_upper,
        abproduct,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;

    fn stream(i: u64) -> Stream {
        derive_stream(&SeedPath::new(5, [i]))
    }

    #[test]
    fn u_accessor_follows_chain_indices() {
        let spec = ChainFamilySpec::new(2, 3, vec![3, 2], SeedPath::new(1, [0])).unwrap();
        let c = build_chain(&spec).unwrap();
        let u = c.u(&[0, 1, 0]).unwrap();
        assert_eq!(u.factors().len(), 2);
        assert_eq!(u.factors()[0].as_ref(), c.family().get(0, 0, 1).as_ref());
        assert_eq!(u.factors()[1].as_ref(), c.family().get(1, 1, 0).as_ref());
        assert!(c.u(&[0, 2, 0]).is_err());
        assert!(c.u(&[0, 1]).is_err());
        assert_eq!(c.term_count(), 8);
    }

    #[test]
    fn block_matrix_layout() {
        let spec = ChainFamilySpec::new(2, 2, vec![2], SeedPath::new(1, [1])).unwrap();
        let levels = vec![(0..4)
            .map(|b| ComplexMatrix::from_fn(2, 2, |i, j| C64::new((10 * b + 2 * i + j) as f64, 0.0)))
            .collect()];
        let c = ChainConstruction::from_family(ChainFamily::from_levels(spec, levels).unwrap());
        let u = block_matrix_uk(&c, 0).unwrap();
        for p in 0..2 {
            for q in 0..2 {
                for i in 0..2 {
                    for j in 0..2 {
                        let expect = (10 * (2 * p + q) + 2 * i + j) as f64;
                        assert_eq!(u.get(2 * p + i, 2 * q + j).re, expect);
                    }
                }
            }
        }
        assert!(block_matrix_uk(&c, 1).is_err());
    }

    #[test]
    fn check_is_coherent_and_m1_reduces() {
        let spec = ChainFamilySpec::new(1, 3, vec![4, 3], SeedPath::new(2, [0])).unwrap();
        let c = build_chain(&spec).unwrap();
        let chk = check_sublemma28(&c, 0.3, &EstimatorSettings::default(), &mut stream(0)).unwrap();
        assert!(chk.is_coherent());
        assert_eq!(chk.item_i.threshold, 0.7);
        assert!(chk.item_i.value >= chk.trace_bound - 1e-6);
        assert!(check_sublemma28(&c, 1.0, &EstimatorSettings::default(), &mut stream(0)).is_err());
    }

    #[test]
    fn witness_ratio_and_guard() {
        let spec = ChainFamilySpec::new(2, 2, vec![6], SeedPath::new(3, [0])).unwrap();
        let c = build_chain(&spec).unwrap();
        let mut chk = check_sublemma28(&c, 0.3, &EstimatorSettings::default(), &mut stream(1)).unwrap();
        chk.z2.value = chk.certified_cb_lower;
        assert_eq!(cb_lower_witness(&chk).unwrap().id_max_lower, 1.0);
        chk.z2.value = 0.0;
        assert!(cb_lower_witness(&chk).is_err());
    }

    #[test]
    fn scaled_construction_scales_terms() {
        let spec = ChainFamilySpec::new(2, 3, vec![2, 2], SeedPath::new(4, [0])).unwrap();
        let c = build_chain(&spec).unwrap();
        let s = c.scaled(2.0);
        let a = c.u(&[1, 0, 1]).unwrap().materialize();
        let b = s.u(&[1, 0, 1]).unwrap().materialize();
        assert!(b.max_abs_diff(&a.scaled(C64::new(2.0, 0.0))) < 1e-14);
    }

    #[test]
    fn ht_zero_coefficients() {
        let a = MatrixCoefficientFamily::new(2, 1, 2, vec![ComplexMatrix::zeros(2, 2); 2]).unwrap();
        let g = vec![ComplexMatrix::identity(3), ComplexMatrix::identity(3)];
        let h = ht_inequality_check(&a, &g, &Tolerance::default(), &mut stream(2)).unwrap();
        assert_eq!(h.lhs, 0.0);
        assert_eq!(h.rhs, 0.0);
        assert!(ht_inequality_check(&a, &g[..1], &Tolerance::default(), &mut stream(2)).is_err());
    }

    #[test]
    fn sandwich_is_ordered() {
        for d in [2, 3] {
            let spec = NaiveFamilySpec::new(2, d, 5, SeedPath::new(6, [d as u64])).unwrap();
            let s = theorem29_sandwich(&spec, &EstimatorSettings::default(), &mut stream(3)).unwrap();
            assert!(s.is_ordered());
            assert_eq!(s.flatten_norms.len(), if d == 2 { 1 } else { 2 });
            assert!(s.abproduct.trace_bound_ok);
        }
    }
}

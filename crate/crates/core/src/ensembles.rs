//! Random matrix families.
//!
//! Every family member is drawn from its own stream so that sampling can run
//! in parallel without changing the output. Sub-path conventions:
//!
//! * `sample_ht_tuple`: member `j` uses `path/j`.
//! * `sample_ymn`: block `(i, j)` uses `path/(i*m + j)`.
//! * chain family: `Y^k_{pq}` (all indices zero-based) uses `path/(k*m*m + p*m + q)`,
//!   so level 0 of a `d = 2` chain coincides with `sample_ymn` on the same path.
//! * naive family: `Y_i` uses `path/lin(i)`, with `lin` the row-major rank of
//!   the multi-index.
//! * product family: `g^k_j` uses `path/(k*m + j)`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::matrix::{ComplexMatrix, C64};
use crate::rng::{derive_stream, SeedPath, Stream};

/// Default cap on the number of complex entries a single family may hold.
pub const DEFAULT_ELEMENT_BUDGET: u128 = 200_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GinibreSpec {
    n: usize,
}

impl GinibreSpec {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(LabError::invalid("n", "matrix size must be at least 1"));
        }
        Ok(GinibreSpec { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }
}

/// `N x N` matrix of iid complex Gaussians with `E|g_ij|^2 = 1/N`.
pub fn sample_ginibre(spec: &GinibreSpec, stream: &mut Stream) -> ComplexMatrix {
    let n = spec.n;
    let s = (1.0 / n as f64).sqrt();
    let data = (0..n * n).map(|_| stream.complex_standard() * s).collect();
    ComplexMatrix::from_vec_unchecked(n, n, data)
}

fn ginibre_at(n: usize, path: &SeedPath) -> ComplexMatrix {
    let spec = GinibreSpec { n };
    sample_ginibre(&spec, &mut derive_stream(path))
}

fn sample_members(n: usize, base: &SeedPath, indices: std::ops::Range<u64>) -> Vec<ComplexMatrix> {
    indices
        .into_par_iter()
        .map(|i| ginibre_at(n, &base.child(i)))
        .collect()
}

/// `r` independent `n x n` Ginibre matrices.
pub fn sample_ht_tuple(r: usize, n: usize, seed_path: &SeedPath) -> Result<Vec<ComplexMatrix>> {
    if r == 0 {
        return Err(LabError::invalid("r", "tuple length must be at least 1"));
    }
    GinibreSpec::new(n)?;
    Ok(sample_members(n, seed_path, 0..r as u64))
}

/// The `mn x mn` block matrix `Σ e_ij ⊗ g_ij` with independent Ginibre blocks.
pub fn sample_ymn(m: usize, n: usize, seed_path: &SeedPath) -> Result<ComplexMatrix> {
    if m == 0 {
        return Err(LabError::invalid("m", "block count must be at least 1"));
    }
    GinibreSpec::new(n)?;
    let blocks = sample_members(n, seed_path, 0..(m * m) as u64);
    let refs: Vec<&ComplexMatrix> = blocks.iter().collect();
    ComplexMatrix::from_blocks(m, m, &refs)
}

/// Row-major rank of a multi-index over `[0, m)^d`.
pub fn linear_index(index: &[usize], m: usize) -> usize {
    index.iter().fold(0, |acc, &i| acc * m + i)
}

/// Inverse of [`linear_index`].
pub fn multi_index(mut lin: usize, m: usize, d: usize) -> Vec<usize> {
    let mut out = vec![0; d];
    for slot in out.iter_mut().rev() {
        *slot = lin % m;
        lin /= m;
    }
    out
}

pub(crate) fn checked_pow(m: usize, d: usize) -> Result<usize> {
    m.checked_pow(d as u32)
        .ok_or_else(|| LabError::invalid("m^d", format!("{m}^{d} overflows")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainFamilySpec {
    pub m: usize,
    pub d: usize,
    /// `N_1, ..., N_{d-1}`.
    pub sizes: Vec<usize>,
    pub seed_path: SeedPath,
}

impl ChainFamilySpec {
    pub fn new(m: usize, d: usize, sizes: Vec<usize>, seed_path: SeedPath) -> Result<Self> {
        let spec = ChainFamilySpec {
            m,
            d,
            sizes,
            seed_path,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(LabError::invalid("m", "must be at least 1"));
        }
        if self.d < 2 {
            return Err(LabError::invalid("d", "chain degree must be at least 2"));
        }
        if self.sizes.len() != self.d - 1 {
            return Err(LabError::invalid(
                "sizes",
                format!("expected {} sizes for d = {}, got {}", self.d - 1, self.d, self.sizes.len()),
            ));
        }
        if self.sizes.contains(&0) {
            return Err(LabError::invalid("sizes", "all sizes must be at least 1"));
        }
        Ok(())
    }

    /// Product of the level sizes.
    pub fn total_dim(&self) -> usize {
        self.sizes.iter().product()
    }
}

/// The sampled collection `{Y^k_pq}`; levels are zero-based.
#[derive(Clone, Debug)]
pub struct ChainFamily {
    pub spec: ChainFamilySpec,
    levels: Vec<Vec<Arc<ComplexMatrix>>>,
}

impl ChainFamily {
    pub fn get(&self, level: usize, p: usize, q: usize) -> &Arc<ComplexMatrix> {
        &self.levels[level][p * self.spec.m + q]
    }

    /// All `m^2` matrices of one level in row-major `(p, q)` order.
    pub fn level(&self, level: usize) -> &[Arc<ComplexMatrix>] {
        &self.levels[level]
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn len(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Builds a family from explicit matrices, `levels[k][p*m + q]`.
    pub fn from_levels(spec: ChainFamilySpec, levels: Vec<Vec<ComplexMatrix>>) -> Result<Self> {
        spec.validate()?;
        if levels.len() != spec.d - 1 {
            return Err(LabError::DimensionMismatch {
                context: "ChainFamily::from_levels",
                expected: spec.d - 1,
                actual: levels.len(),
            });
        }
        for (k, level) in levels.iter().enumerate() {
            if level.len() != spec.m * spec.m {
                return Err(LabError::DimensionMismatch {
                    context: "ChainFamily::from_levels",
                    expected: spec.m * spec.m,
                    actual: level.len(),
                });
            }
            let n = spec.sizes[k];
            if level.iter().any(|y| y.rows() != n || y.cols() != n) {
                return Err(LabError::invalid("levels", format!("level {k} matrices must be {n}x{n}")));
            }
        }
        let levels = levels
            .into_iter()
            .map(|l| l.into_iter().map(Arc::new).collect())
            .collect();
        Ok(ChainFamily { spec, levels })
    }
}

pub fn sample_chain_family(spec: &ChainFamilySpec) -> Result<ChainFamily> {
    spec.validate()?;
    let m2 = spec.m * spec.m;
    let levels = spec
        .sizes
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let start = (k * m2) as u64;
            sample_members(n, &spec.seed_path, start..start + m2 as u64)
                .into_iter()
                .map(Arc::new)
                .collect()
        })
        .collect();
    Ok(ChainFamily {
        spec: spec.clone(),
        levels,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NaiveFamilySpec {
    pub m: usize,
    pub d: usize,
    pub n: usize,
    pub seed_path: SeedPath,
    pub element_budget: u128,
}

impl NaiveFamilySpec {
    pub fn new(m: usize, d: usize, n: usize, seed_path: SeedPath) -> Result<Self> {
        let spec = NaiveFamilySpec {
            m,
            d,
            n,
            seed_path,
            element_budget: DEFAULT_ELEMENT_BUDGET,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_budget(mut self, budget: u128) -> Self {
        self.element_budget = budget;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.d == 0 || self.n == 0 {
            return Err(LabError::invalid("m, d, n", "all must be at least 1"));
        }
        Ok(())
    }

    /// `m^d * n^2`, saturating.
    pub fn element_count(&self) -> u128 {
        let mut count = (self.n as u128).saturating_mul(self.n as u128);
        for _ in 0..self.d {
            count = count.saturating_mul(self.m as u128);
        }
        count
    }

    pub fn check_budget(&self) -> Result<()> {
        let requested = self.element_count();
        if requested > self.element_budget {
            return Err(LabError::BudgetExceeded {
                requested,
                budget: self.element_budget,
            });
        }
        Ok(())
    }
}

/// `{Y_i : i ∈ [m]^d}` stored in row-major multi-index order.
#[derive(Clone, Debug)]
pub struct NaiveFamily {
    pub spec: NaiveFamilySpec,
    members: Vec<Arc<ComplexMatrix>>,
}

impl NaiveFamily {
    pub fn get(&self, index: &[usize]) -> &Arc<ComplexMatrix> {
        &self.members[linear_index(index, self.spec.m)]
    }

    pub fn members(&self) -> &[Arc<ComplexMatrix>] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn from_members(spec: NaiveFamilySpec, members: Vec<ComplexMatrix>) -> Result<Self> {
        spec.validate()?;
        let count = checked_pow(spec.m, spec.d)?;
        if members.len() != count {
            return Err(LabError::DimensionMismatch {
                context: "NaiveFamily::from_members",
                expected: count,
                actual: members.len(),
            });
        }
        if members.iter().any(|y| y.rows() != spec.n || y.cols() != spec.n) {
            return Err(LabError::invalid("members", format!("all members must be {0}x{0}", spec.n)));
        }
        Ok(NaiveFamily {
            spec,
            members: members.into_iter().map(Arc::new).collect(),
        })
    }
}

pub fn sample_naive_family(spec: &NaiveFamilySpec) -> Result<NaiveFamily> {
    spec.validate()?;
    spec.check_budget()?;
    let count = checked_pow(spec.m, spec.d)? as u64;
    let members = sample_members(spec.n, &spec.seed_path, 0..count)
        .into_iter()
        .map(Arc::new)
        .collect();
    Ok(NaiveFamily {
        spec: spec.clone(),
        members,
    })
}

/// `m` independent Ginibre matrices per level, level `k` of size `sizes[k]`.
pub fn sample_product_family(m: usize, sizes: &[usize], seed_path: &SeedPath) -> Result<Vec<Vec<Arc<ComplexMatrix>>>> {
    if m == 0 {
        return Err(LabError::invalid("m", "must be at least 1"));
    }
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(LabError::invalid("sizes", "need at least one level, all sizes at least 1"));
    }
    Ok(sizes
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let start = (k * m) as u64;
            sample_members(n, seed_path, start..start + m as u64)
                .into_iter()
                .map(Arc::new)
                .collect()
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoeffDistribution {
    /// Entries iid standard complex Gaussian.
    Gaussian,
    /// Gaussian, then rescaled so that `Σ_j ‖a_j‖^2 = 1` (operator norms).
    UnitSphere,
}

/// Coefficients `a_j ∈ M_p` for `j ∈ [r]^d`, row-major in `j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixCoefficientFamily {
    pub r: usize,
    pub d: usize,
    pub p: usize,
    pub coeffs: Vec<ComplexMatrix>,
}

impl MatrixCoefficientFamily {
    pub fn new(r: usize, d: usize, p: usize, coeffs: Vec<ComplexMatrix>) -> Result<Self> {
        let count = checked_pow(r, d)?;
        if coeffs.len() != count {
            return Err(LabError::DimensionMismatch {
                context: "MatrixCoefficientFamily::new",
                expected: count,
                actual: coeffs.len(),
            });
        }
        if coeffs.iter().any(|a| a.rows() != p || a.cols() != p) {
            return Err(LabError::invalid("coeffs", format!("coefficients must be {p}x{p}")));
        }
        Ok(MatrixCoefficientFamily { r, d, p, coeffs })
    }

    /// `Σ_j ‖a_j‖^2` with operator norms.
    pub fn sum_sq_norms(&self) -> f64 {
        self.coeffs.iter().map(|a| a.spectral_norm().powi(2)).sum()
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }
}

pub fn sample_coeff_family(
    r: usize,
    d: usize,
    p: usize,
    distribution: CoeffDistribution,
    stream: &mut Stream,
) -> Result<MatrixCoefficientFamily> {
    if r == 0 || d == 0 || p == 0 {
        return Err(LabError::invalid("r, d, p", "all must be at least 1"));
    }
    let count = checked_pow(r, d)?;
    let coeffs: Vec<ComplexMatrix> = (0..count)
        .map(|_| ComplexMatrix::from_fn(p, p, |_, _| stream.complex_standard()))
        .collect();
    let mut fam = MatrixCoefficientFamily { r, d, p, coeffs };
    if distribution == CoeffDistribution::UnitSphere {
        let s = fam.sum_sq_norms().sqrt();
        if s == 0.0 {
            return Err(LabError::Degenerate("all-zero coefficient sample".into()));
        }
        for a in &mut fam.coeffs {
            a.scale_in_place(C64::new(1.0 / s, 0.0));
        }
    }
    Ok(fam)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(i: u64) -> SeedPath {
        SeedPath::new(42, [i])
    }

    #[test]
    fn ginibre_entry_variance_n1() {
        let spec = GinibreSpec::new(1).unwrap();
        let mut s = derive_stream(&path(0));
        let n = 100_000;
        let m2 = (0..n)
            .map(|_| sample_ginibre(&spec, &mut s).get(0, 0).norm_sqr())
            .sum::<f64>()
            / n as f64;
        assert!((0.98..=1.02).contains(&m2), "{m2}");
    }

    #[test]
    fn ginibre_normalization_over_trials() {
        let n = 20;
        let spec = GinibreSpec::new(n).unwrap();
        let mut total = 0.0;
        for t in 0..100 {
            let g = sample_ginibre(&spec, &mut derive_stream(&path(t)));
            total += g.frobenius_norm_sqr();
        }
        let mean = total / (100.0 * (n * n) as f64);
        assert!(mean > 0.95 / n as f64 && mean < 1.05 / n as f64);
    }

    #[test]
    fn ginibre_deterministic() {
        let spec = GinibreSpec::new(3).unwrap();
        let a = sample_ginibre(&spec, &mut derive_stream(&path(5)));
        let b = sample_ginibre(&spec, &mut derive_stream(&path(5)));
        assert_eq!(a, b);
        assert!(GinibreSpec::new(0).is_err());
    }

    #[test]
    fn ht_tuple_r1_is_ginibre() {
        let t = sample_ht_tuple(1, 4, &path(1)).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0], ginibre_at(4, &path(1).child(0)));
    }

    #[test]
    fn ymn_m1_and_layout() {
        let y = sample_ymn(1, 5, &path(2)).unwrap();
        assert_eq!(y, ginibre_at(5, &path(2).child(0)));

        let y = sample_ymn(2, 2, &path(3)).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let g = ginibre_at(2, &path(3).child((i * 2 + j) as u64));
                for a in 0..2 {
                    for b in 0..2 {
                        assert_eq!(y.get(i * 2 + a, j * 2 + b), g.get(a, b));
                    }
                }
            }
        }
    }

    #[test]
    fn chain_counts_and_ymn_coincidence() {
        let spec = ChainFamilySpec::new(2, 3, vec![3, 5], path(4)).unwrap();
        let fam = sample_chain_family(&spec).unwrap();
        assert_eq!(fam.len(), 8);
        assert!(fam.level(0).iter().all(|y| y.rows() == 3));
        assert!(fam.level(1).iter().all(|y| y.rows() == 5));

        let spec2 = ChainFamilySpec::new(3, 2, vec![4], path(6)).unwrap();
        let fam2 = sample_chain_family(&spec2).unwrap();
        let blocks: Vec<&ComplexMatrix> = fam2.level(0).iter().map(|a| a.as_ref()).collect();
        let assembled = ComplexMatrix::from_blocks(3, 3, &blocks).unwrap();
        assert_eq!(assembled, sample_ymn(3, 4, &path(6)).unwrap());

        let again = sample_chain_family(&spec).unwrap();
        for k in 0..2 {
            for (a, b) in fam.level(k).iter().zip(again.level(k)) {
                assert_eq!(a, b);
            }
        }
        assert!(ChainFamilySpec::new(2, 1, vec![], path(0)).is_err());
        assert!(ChainFamilySpec::new(2, 3, vec![3], path(0)).is_err());
    }

    #[test]
    fn naive_family_counts_and_budget() {
        let spec = NaiveFamilySpec::new(2, 3, 4, path(7)).unwrap();
        let fam = sample_naive_family(&spec).unwrap();
        assert_eq!(fam.len(), 8);
        assert_eq!(fam.get(&[1, 0, 1]).as_ref(), &ginibre_at(4, &path(7).child(5)));

        let big = NaiveFamilySpec::new(10, 6, 10, path(8)).unwrap().with_budget(1_000_000);
        match sample_naive_family(&big) {
            Err(LabError::BudgetExceeded { requested, budget }) => {
                assert_eq!(requested, 100_000_000);
                assert_eq!(budget, 1_000_000);
            }
            other => panic!("expected budget error, got {other:?}"),
        }
    }

    #[test]
    fn multi_index_roundtrip() {
        for lin in 0..27 {
            assert_eq!(linear_index(&multi_index(lin, 3, 3), 3), lin);
        }
        assert_eq!(multi_index(5, 2, 3), vec![1, 0, 1]);
    }

    #[test]
    fn coefficient_families() {
        let mut s = derive_stream(&path(9));
        let one = sample_coeff_family(1, 1, 1, CoeffDistribution::UnitSphere, &mut s).unwrap();
        assert!((one.coeffs[0].get(0, 0).norm() - 1.0).abs() < 1e-12);

        let fam = sample_coeff_family(3, 2, 4, CoeffDistribution::UnitSphere, &mut s).unwrap();
        assert!((fam.sum_sq_norms() - 1.0).abs() < 1e-12);

        let a = sample_coeff_family(2, 2, 2, CoeffDistribution::Gaussian, &mut derive_stream(&path(10))).unwrap();
        let b = sample_coeff_family(2, 2, 2, CoeffDistribution::Gaussian, &mut derive_stream(&path(10))).unwrap();
        assert_eq!(a.coeffs.len(), 4);
        assert_eq!(a, b);
    }
}

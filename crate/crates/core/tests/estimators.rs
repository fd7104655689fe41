mod common;

use std::sync::Arc;

use cbnorm::ncpoly::haar_unitary;
use cbnorm::rng::{derive_stream, SeedPath};
use cbnorm::specnorm::{cpmap_norm, dense_norm, iterative_norm, is_monotone, trilinear_sup, Tolerance};
use cbnorm::tensorop::{CPMapOperator, KroneckerChain, PathFamily};
use cbnorm::{ComplexMatrix, C64};
use common::*;
use proptest::prelude::*;

/// `U diag(s) V^†` with Haar `U`, `V`.
fn with_singular_values(s: &[f64], seed: u64) -> ComplexMatrix {
    let n = s.len();
    let mut st = derive_stream(&SeedPath::new(seed, [9]));
    let u = haar_unitary(n, &mut st);
    let v = haar_unitary(n, &mut st);
    matmul(&matmul(&u, &ComplexMatrix::from_real_diagonal(s)), &adjoint(&v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn iterative_matches_dense(r in 1usize..=64, c in 1usize..=64, seed in any::<u64>()) {
        let a = rand_mat(r, c, seed, 0);
        let d = dense_norm(&a).unwrap().value;
        let e = iterative_norm(&a, &Tolerance::default(), &mut derive_stream(&SeedPath::new(seed, [1])));
        prop_assert!((e.value - d).abs() <= 1e-6 * d);
        prop_assert!(e.value <= d * (1.0 + 1e-12));
    }

    #[test]
    fn known_spectrum_recovered(s in prop::collection::vec(0.0f64..10.0, 2..=40), seed in any::<u64>()) {
        let top = s.iter().cloned().fold(0.0, f64::max);
        prop_assume!(top > 1e-3);
        let a = with_singular_values(&s, seed);
        prop_assert!((dense_norm(&a).unwrap().value - top).abs() <= 1e-10 * top);
        let e = iterative_norm(&a, &Tolerance::default(), &mut derive_stream(&SeedPath::new(seed, [2])));
        prop_assert!((e.value - top).abs() <= 1e-6 * top);
    }

    #[test]
    fn trilinear_within_norm_bounds(j in 1usize..=4, n in 1usize..=8, seed in any::<u64>()) {
        let members: Vec<Arc<ComplexMatrix>> = (0..j).map(|t| Arc::new(rand_mat(n, n, seed, t as u64))).collect();
        let norms: Vec<f64> = members.iter().map(|g| dense_norm(g).unwrap().value).collect();
        let lo = norms.iter().cloned().fold(0.0, f64::max);
        let hi = norms.iter().map(|x| x * x).sum::<f64>().sqrt();
        let fam = PathFamily::independent(members).unwrap();
        let r = trilinear_sup(&fam, 1, &Tolerance::new(1e-9, 2000, 4).unwrap(), &mut derive_stream(&SeedPath::new(seed, [3]))).unwrap();
        prop_assert!(r.monotone());
        prop_assert!(r.estimate.value >= lo * (1.0 - 1e-6));
        prop_assert!(r.estimate.value <= hi * (1.0 + 1e-9));
    }
}

#[test]
fn trilinear_exact_cases() {
    // Proportional terms: the sup is ‖H‖ ‖c‖_2.
    let h = rand_mat(6, 6, 4, 0);
    let c = [1.0, -2.0, 0.5];
    let members: Vec<Arc<ComplexMatrix>> = c.iter().map(|&x| Arc::new(h.scaled(C64::new(x, 0.0)))).collect();
    let want = dense_norm(&h).unwrap().value * c.iter().map(|x| x * x).sum::<f64>().sqrt();
    let r = trilinear_sup(
        &PathFamily::independent(members).unwrap(),
        1,
        &Tolerance::default(),
        &mut derive_stream(&SeedPath::new(4, [1])),
    )
    .unwrap();
    assert!((r.estimate.value - want).abs() <= 1e-6 * want);

    // Disjoint diagonal blocks: the sup is the largest block norm.
    let blocks = [rand_mat(3, 3, 5, 0), rand_mat(3, 3, 5, 1).scaled(C64::new(3.0, 0.0))];
    let zero = ComplexMatrix::zeros(3, 3);
    let g0 = ComplexMatrix::from_blocks(2, 2, &[&blocks[0], &zero, &zero, &zero]).unwrap();
    let g1 = ComplexMatrix::from_blocks(2, 2, &[&zero, &zero, &zero, &blocks[1]]).unwrap();
    let want = dense_norm(&blocks[1]).unwrap().value;
    let r = trilinear_sup(
        &PathFamily::independent(vec![Arc::new(g0), Arc::new(g1)]).unwrap(),
        1,
        &Tolerance::default(),
        &mut derive_stream(&SeedPath::new(5, [2])),
    )
    .unwrap();
    assert!((r.estimate.value - want).abs() <= 1e-6 * want);
}

#[test]
fn trilinear_matrix_coefficients_dominate_scalar() {
    let members: Vec<Arc<ComplexMatrix>> = (0..3).map(|t| Arc::new(rand_mat(5, 5, 6, t))).collect();
    let fam = PathFamily::independent(members).unwrap();
    let tol = Tolerance::new(1e-8, 2000, 4).unwrap();
    let s = trilinear_sup(&fam, 1, &tol, &mut derive_stream(&SeedPath::new(6, [1]))).unwrap();
    let m = trilinear_sup(&fam, 2, &tol, &mut derive_stream(&SeedPath::new(6, [2]))).unwrap();
    assert!(m.monotone());
    assert!(m.estimate.value >= s.estimate.value * (1.0 - 1e-6));
    assert!(m.objective_trace.iter().all(|t| is_monotone(t)));
}

#[test]
fn cpmap_norm_matches_dense_superoperator() {
    let terms: Vec<KroneckerChain> = (0..3)
        .map(|t| KroneckerChain::from_matrices(vec![rand_mat(2, 2, 7, t), rand_mat(3, 3, 7, 10 + t)]).unwrap())
        .collect();
    let n = 6;
    // Superoperator of X ↦ Σ U X U^† on row-major vec(X): Σ U ⊗ conj(U).
    let mut sup = ComplexMatrix::zeros(n * n, n * n);
    for t in &terms {
        let u = t.materialize();
        sup.axpy(C64::new(1.0, 0.0), &kron(&u, &u.conj())).unwrap();
    }
    let want = dense_norm(&sup).unwrap().value;
    let r = cpmap_norm(&CPMapOperator::from_terms(terms).unwrap(), &Tolerance::default());
    assert!((r.estimate.value - want).abs() <= 1e-6 * want);
    assert!(r.trace_bound_ok);
}

#[test]
fn tolerance_validation() {
    assert!(Tolerance::new(0.0, 10, 1).is_err());
    assert!(Tolerance::new(1e-6, 0, 1).is_err());
    assert!(Tolerance::new(1e-6, 10, 0).is_ok());
}

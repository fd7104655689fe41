mod common;

use cbnorm::constructions::{build_chain, check_sublemma28};
use cbnorm::ensembles::{multi_index, ChainFamilySpec};
use cbnorm::ncpoly::{
    cprime_certificate, eval_poly, poly_norm_lower, sample_contraction_tuple, verify_factorization,
    FactorizationClaim, NCPolynomial, OperatorTuple, SamplerOptions,
};
use cbnorm::rng::{derive_stream, SeedPath};
use cbnorm::specnorm::{EstimatorSettings, Tolerance};
use cbnorm::{ComplexMatrix, C64};
use common::*;
use proptest::prelude::*;

fn tuple(m: usize, d: usize, n: usize, unitary: bool, seed: u64) -> OperatorTuple {
    sample_contraction_tuple(m, d, n, unitary, false, &mut derive_stream(&SeedPath::new(seed, [0]))).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn eval_matches_monomial_sum(m in 1usize..=3, d in 1usize..=3, n in 1usize..=4, seed in any::<u64>()) {
        let t = tuple(m, d, n, seed % 2 == 0, seed);
        let count = m.pow(d as u32);
        let coeffs = rand_vec(count, seed, 1);
        let p = NCPolynomial::new(m, d, coeffs.clone()).unwrap();
        let mut want = ComplexMatrix::zeros(n, n);
        for (lin, c) in coeffs.iter().enumerate() {
            let idx = multi_index(lin, m, d);
            let mut acc = t.factors[0][idx[0]].clone();
            for (level, &i) in t.factors.iter().zip(&idx).skip(1) {
                acc = matmul(&acc, &level[i]);
            }
            want.axpy(*c, &acc).unwrap();
        }
        prop_assert!(rel_diff(eval_poly(&p, &t).unwrap().data(), want.data()) < 1e-12);
    }

    #[test]
    fn constructed_factorizations_verify(m in 1usize..=3, d in 1usize..=3, n in 1usize..=4, c in 0.1f64..3.0, seed in any::<u64>()) {
        let claim = FactorizationClaim::from_factors(tuple(m, d, n, true, seed), c).unwrap();
        let v = verify_factorization(&claim, 1e-6).unwrap();
        prop_assert!(v.pass);
        prop_assert!(v.max_residual < 1e-12);
        let mut bad = claim.clone();
        let k = (seed as usize) % bad.targets.len();
        let e = ComplexMatrix::unit(n, 0, 0).scaled(C64::new(1e-3, 0.0));
        bad.targets[k].axpy(C64::new(1.0, 0.0), &e).unwrap();
        prop_assert!(!verify_factorization(&bad, 1e-6).unwrap().pass);
    }

    #[test]
    fn contraction_tuples_are_contractive(m in 1usize..=3, d in 1usize..=3, n in 1usize..=6, seed in any::<u64>(), unitary in any::<bool>()) {
        let t = tuple(m, d, n, unitary, seed);
        prop_assert!(t.contraction);
        prop_assert!(t.max_factor_norm() <= 1.0 + 1e-12);
    }
}

#[test]
fn poly_norm_lower_is_homogeneous() {
    let p = NCPolynomial::new(2, 2, rand_vec(4, 3, 0)).unwrap();
    let opts = SamplerOptions::default();
    let a = poly_norm_lower(&p, 6, 8, &opts, &mut derive_stream(&SeedPath::new(3, [1]))).unwrap();
    let alpha = C64::new(-2.5, 0.0);
    let b = poly_norm_lower(&p.scaled(alpha), 6, 8, &opts, &mut derive_stream(&SeedPath::new(3, [1]))).unwrap();
    assert_eq!(a.best_trial, b.best_trial);
    for (x, y) in a.trial_values.iter().zip(&b.trial_values) {
        assert!((y - 2.5 * x).abs() <= 1e-12 * y);
    }
    // A single monomial of unitaries has norm one.
    let mono = NCPolynomial::monomial(2, &[1, 0]).unwrap();
    let opts = SamplerOptions {
        model: cbnorm::ncpoly::ContractionModel::Unitary,
        tied: false,
    };
    let r = poly_norm_lower(&mono, 5, 3, &opts, &mut derive_stream(&SeedPath::new(3, [2]))).unwrap();
    assert!((r.value - 1.0).abs() < 1e-12);
    assert!(r.value >= r.l2_bound - 1e-12);
}

#[test]
fn factorization_rejects_expansive_factors() {
    let mut t = tuple(2, 2, 3, true, 8);
    t.factors[1][0] = t.factors[1][0].scaled(C64::new(1.5, 0.0));
    let claim = FactorizationClaim::from_factors(t, 1.0).unwrap();
    let v = verify_factorization(&claim, 1e-6).unwrap();
    assert!(v.max_residual < 1e-12);
    assert!(!v.contraction_ok && !v.pass);
}

#[test]
fn cprime_invariant_under_rescaling() {
    let spec = ChainFamilySpec::new(2, 3, vec![6, 4], SeedPath::new(21, [0])).unwrap();
    let c = build_chain(&spec).unwrap();
    let settings = EstimatorSettings::uniform(Tolerance::new(1e-10, 4000, 4).unwrap());
    let run = |c: &cbnorm::constructions::ChainConstruction| {
        let chk = check_sublemma28(c, 0.3, &settings, &mut derive_stream(&SeedPath::new(21, [1]))).unwrap();
        cprime_certificate(c, &chk).unwrap()
    };
    let base = run(&c);
    for alpha in [1e-3, 0.37, 5.0, 1e3] {
        let s = run(&c.scaled(alpha));
        assert!((s.value - base.value).abs() <= 1e-8 * base.value, "alpha {alpha}: {} vs {}", s.value, base.value);
        assert!((s.certified_cb_lower - alpha * base.certified_cb_lower).abs() <= 1e-8 * s.certified_cb_lower);
    }
    let json = base.to_json().unwrap();
    assert!(json.contains("\"value\""));
}

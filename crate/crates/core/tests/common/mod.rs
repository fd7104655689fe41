#![allow(dead_code)]

use cbnorm::rng::{derive_stream, SeedPath};
use cbnorm::{ComplexMatrix, C64};

pub fn rand_mat(r: usize, c: usize, seed: u64, tag: u64) -> ComplexMatrix {
    let mut s = derive_stream(&SeedPath::new(seed, [tag, r as u64, c as u64]));
    ComplexMatrix::from_fn(r, c, |_, _| s.complex_standard())
}

pub fn rand_vec(n: usize, seed: u64, tag: u64) -> Vec<C64> {
    let mut s = derive_stream(&SeedPath::new(seed, [tag, n as u64]));
    (0..n).map(|_| s.complex_standard()).collect()
}

/// Kronecker product by the entry formula.
pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let (br, bc) = (b.rows(), b.cols());
    ComplexMatrix::from_fn(a.rows() * br, a.cols() * bc, |i, j| a.get(i / br, j / bc) * b.get(i % br, j % bc))
}

pub fn kron_all(factors: &[&ComplexMatrix]) -> ComplexMatrix {
    let mut acc = factors[0].clone();
    for f in &factors[1..] {
        acc = kron(&acc, f);
    }
    acc
}

/// Plain triple-loop product.
pub fn matmul(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    ComplexMatrix::from_fn(a.rows(), b.cols(), |i, j| (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum())
}

pub fn matvec(a: &ComplexMatrix, v: &[C64]) -> Vec<C64> {
    (0..a.rows()).map(|i| (0..a.cols()).map(|k| a.get(i, k) * v[k]).sum()).collect()
}

pub fn adjoint(a: &ComplexMatrix) -> ComplexMatrix {
    ComplexMatrix::from_fn(a.cols(), a.rows(), |i, j| a.get(j, i).conj())
}

pub fn rel_diff(a: &[C64], b: &[C64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

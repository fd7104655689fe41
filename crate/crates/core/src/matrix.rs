//! Dense complex matrices and the strided GEMM kernels everything else is
//! built on.
//!
//! Storage is row-major. Kronecker products follow the usual convention
//! `(A ⊗ B)[(i1, i2), (j1, j2)] = A[i1, j1] B[i2, j2]` with the first factor
//! most significant, so a vector of length `N1 * N2` is a row-major
//! `N1 x N2` array.

use std::io::{Read, Write};
use std::path::Path;
use std::cell::Cell;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };

thread_local! {
    static MADDS: Cell<u64> = const { Cell::new(0) };
}

/// Complex multiply-adds issued by the kernels on the calling thread.
pub fn madd_count() -> u64 {
    MADDS.with(|c| c.get())
}

fn count(n: usize) {
    MADDS.with(|c| c.set(c.get() + n as u64));
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl ComplexMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(LabError::DimensionMismatch {
                context: "ComplexMatrix::new",
                expected: rows * cols,
                actual: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(LabError::invalid(
                "entries",
                format!("non-finite entry at ({}, {})", pos / cols.max(1), pos % cols.max(1)),
            ));
        }
        Ok(ComplexMatrix { rows, cols, data })
    }

    pub(crate) fn from_vec_unchecked(rows: usize, cols: usize, data: Vec<C64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        ComplexMatrix { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        ComplexMatrix {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        ComplexMatrix { rows, cols, data }
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = C64::new(d, 0.0);
        }
        m
    }

    /// Matrix units `e_{ij}` of size `n`.
    pub fn unit(n: usize, i: usize, j: usize) -> Self {
        let mut m = Self::zeros(n, n);
        m.data[i * n + j] = ONE;
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<C64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: C64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn adjoint(&self) -> Self {
        let mut out = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                out.push(self.data[i * self.cols + j].conj());
            }
        }
        ComplexMatrix::from_vec_unchecked(self.cols, self.rows, out)
    }

    pub fn conj(&self) -> Self {
        ComplexMatrix::from_vec_unchecked(
            self.rows,
            self.cols,
            self.data.iter().map(|z| z.conj()).collect(),
        )
    }

    pub fn scaled(&self, alpha: C64) -> Self {
        ComplexMatrix::from_vec_unchecked(
            self.rows,
            self.cols,
            self.data.iter().map(|z| z * alpha).collect(),
        )
    }

    pub fn scale_in_place(&mut self, alpha: C64) {
        self.data.iter_mut().for_each(|z| *z *= alpha);
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: C64, other: &ComplexMatrix) -> Result<()> {
        self.check_same_shape(other, "ComplexMatrix::axpy")?;
        axpy(alpha, &other.data, &mut self.data);
        Ok(())
    }

    pub fn sub(&self, other: &ComplexMatrix) -> Result<ComplexMatrix> {
        let mut out = self.clone();
        out.axpy(-ONE, other)?;
        Ok(out)
    }

    fn check_same_shape(&self, other: &ComplexMatrix, context: &'static str) -> Result<()> {
        if self.rows != other.rows {
            return Err(LabError::DimensionMismatch {
                context,
                expected: self.rows,
                actual: other.rows,
            });
        }
        if self.cols != other.cols {
            return Err(LabError::DimensionMismatch {
                context,
                expected: self.cols,
                actual: other.cols,
            });
        }
        Ok(())
    }

    pub fn matmul(&self, other: &ComplexMatrix) -> Result<ComplexMatrix> {
        if self.cols != other.rows {
            return Err(LabError::DimensionMismatch {
                context: "ComplexMatrix::matmul",
                expected: self.cols,
                actual: other.rows,
            });
        }
        let mut out = ComplexMatrix::zeros(self.rows, other.cols);
        gemm_rowmajor(
            self.rows,
            other.cols,
            self.cols,
            &self.data,
            &other.data,
            &mut out.data,
            false,
        );
        Ok(out)
    }

    pub fn matvec(&self, v: &[C64]) -> Result<Vec<C64>> {
        if v.len() != self.cols {
            return Err(LabError::DimensionMismatch {
                context: "ComplexMatrix::matvec",
                expected: self.cols,
                actual: v.len(),
            });
        }
        let mut out = vec![ZERO; self.rows];
        self.matvec_into(v, &mut out, false);
        Ok(out)
    }

    /// `out (+)= self * v` without shape checks beyond debug assertions.
    pub(crate) fn matvec_into(&self, v: &[C64], out: &mut [C64], accumulate: bool) {
        debug_assert_eq!(v.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            let s: C64 = row.iter().zip(v).map(|(a, b)| a * b).sum();
            if accumulate {
                *o += s;
            } else {
                *o = s;
            }
        }
        count(self.rows * self.cols);
    }

    /// `out (+)= self^† * v`.
    pub(crate) fn matvec_adjoint_into(&self, v: &[C64], out: &mut [C64], accumulate: bool) {
        debug_assert_eq!(v.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        if !accumulate {
            out.iter_mut().for_each(|z| *z = ZERO);
        }
        for (i, vi) in v.iter().enumerate() {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            for (o, a) in out.iter_mut().zip(row) {
                *o += a.conj() * vi;
            }
        }
        count(self.rows * self.cols);
    }

    pub fn matvec_adjoint(&self, v: &[C64]) -> Result<Vec<C64>> {
        if v.len() != self.rows {
            return Err(LabError::DimensionMismatch {
                context: "ComplexMatrix::matvec_adjoint",
                expected: self.rows,
                actual: v.len(),
            });
        }
        let mut out = vec![ZERO; self.cols];
        self.matvec_adjoint_into(v, &mut out, false);
        Ok(out)
    }

    pub fn kron(&self, other: &ComplexMatrix) -> ComplexMatrix {
        let rows = self.rows * other.rows;
        let cols = self.cols * other.cols;
        let mut data = vec![ZERO; rows * cols];
        for i1 in 0..self.rows {
            for j1 in 0..self.cols {
                let a = self.data[i1 * self.cols + j1];
                if a == ZERO {
                    continue;
                }
                for i2 in 0..other.rows {
                    let r = i1 * other.rows + i2;
                    let dst = &mut data[r * cols + j1 * other.cols..r * cols + (j1 + 1) * other.cols];
                    let src = &other.data[i2 * other.cols..(i2 + 1) * other.cols];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d = a * s;
                    }
                }
            }
        }
        ComplexMatrix::from_vec_unchecked(rows, cols, data)
    }

    /// Block matrix from a row-major grid of equally sized blocks.
    pub fn from_blocks(grid_rows: usize, grid_cols: usize, blocks: &[&ComplexMatrix]) -> Result<Self> {
        if blocks.len() != grid_rows * grid_cols || blocks.is_empty() {
            return Err(LabError::DimensionMismatch {
                context: "ComplexMatrix::from_blocks",
                expected: grid_rows * grid_cols,
                actual: blocks.len(),
            });
        }
        let (br, bc) = (blocks[0].rows, blocks[0].cols);
        for b in blocks {
            if b.rows != br || b.cols != bc {
                return Err(LabError::invalid("blocks", "blocks must share one shape"));
            }
        }
        let rows = grid_rows * br;
        let cols = grid_cols * bc;
        let mut data = vec![ZERO; rows * cols];
        for gi in 0..grid_rows {
            for gj in 0..grid_cols {
                let b = blocks[gi * grid_cols + gj];
                for i in 0..br {
                    let r = gi * br + i;
                    data[r * cols + gj * bc..r * cols + (gj + 1) * bc]
                        .copy_from_slice(&b.data[i * bc..(i + 1) * bc]);
                }
            }
        }
        Ok(ComplexMatrix::from_vec_unchecked(rows, cols, data))
    }

    pub fn frobenius_norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_norm_sqr().sqrt()
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn max_abs_diff(&self, other: &ComplexMatrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Largest singular value from a full dense decomposition.
    pub fn spectral_norm(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.to_nalgebra()
            .singular_values()
            .iter()
            .cloned()
            .fold(0.0, f64::max)
    }

    pub fn to_nalgebra(&self) -> DMatrix<C64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn from_nalgebra(m: &DMatrix<C64>) -> Self {
        ComplexMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }

    /// Little-endian dump: `rows: u64`, `cols: u64`, then row-major
    /// interleaved `re, im` as `f64`.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.rows as u64).to_le_bytes())?;
        w.write_all(&(self.cols as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.data.len() * 16);
        for z in &self.data {
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut word = [0u8; 8];
        r.read_exact(&mut word)
            .map_err(|e| LabError::MalformedDump(format!("header: {e}")))?;
        let rows = u64::from_le_bytes(word) as usize;
        r.read_exact(&mut word)
            .map_err(|e| LabError::MalformedDump(format!("header: {e}")))?;
        let cols = u64::from_le_bytes(word) as usize;
        let len = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(16))
            .ok_or_else(|| LabError::MalformedDump("dimensions overflow".into()))?;
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() != len {
            return Err(LabError::MalformedDump(format!(
                "expected {len} payload bytes, found {}",
                body.len()
            )));
        }
        let data = body
            .chunks_exact(16)
            .map(|c| {
                let re = f64::from_le_bytes(c[..8].try_into().unwrap());
                let im = f64::from_le_bytes(c[8..].try_into().unwrap());
                C64::new(re, im)
            })
            .collect();
        ComplexMatrix::new(rows, cols, data)
    }

    pub fn save_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_binary(std::io::BufWriter::new(f))
    }

    pub fn load_binary(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_binary(std::io::BufReader::new(f))
    }

    /// Long-format CSV: `row,col,re,im`, one line per entry.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "row,col,re,im")?;
        for i in 0..self.rows {
            for j in 0..self.cols {
                let z = self.get(i, j);
                writeln!(w, "{i},{j},{:e},{:e}", z.re, z.im)?;
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// vector helpers

/// `u^† v`.
pub fn dot(u: &[C64], v: &[C64]) -> C64 {
    debug_assert_eq!(u.len(), v.len());
    u.iter().zip(v).map(|(a, b)| a.conj() * b).sum()
}

pub fn norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn axpy(alpha: C64, x: &[C64], y: &mut [C64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(v: &mut [C64], alpha: C64) {
    v.iter_mut().for_each(|z| *z *= alpha);
}

/// Normalizes in place; returns the original norm.
pub fn normalize(v: &mut [C64]) -> f64 {
    let n = norm(v);
    if n > 0.0 {
        scale(v, C64::new(1.0 / n, 0.0));
    }
    n
}

// ---------------------------------------------------------------------------
// GEMM kernels

/// How a factor enters a mode product.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FactorOp {
    Plain,
    Conj,
    Transpose,
    Adjoint,
}

impl FactorOp {
    pub fn adjoint(self) -> Self {
        match self {
            FactorOp::Plain => FactorOp::Adjoint,
            FactorOp::Adjoint => FactorOp::Plain,
            FactorOp::Conj => FactorOp::Transpose,
            FactorOp::Transpose => FactorOp::Conj,
        }
    }

    fn is_transposed(self) -> bool {
        matches!(self, FactorOp::Transpose | FactorOp::Adjoint)
    }

    fn is_conj(self) -> bool {
        matches!(self, FactorOp::Conj | FactorOp::Adjoint)
    }
}

/// `dst (+)= lhs * rhs` for contiguous row-major operands.
pub(crate) fn gemm_rowmajor(
    m: usize,
    n: usize,
    k: usize,
    lhs: &[C64],
    rhs: &[C64],
    dst: &mut [C64],
    accumulate: bool,
) {
    assert!(lhs.len() >= m * k && rhs.len() >= k * n && dst.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            dst[..m * n].iter_mut().for_each(|z| *z = ZERO);
        }
        return;
    }
    // SAFETY: bounds asserted above; row-major strides stay within the slices.
    unsafe {
        gemm::gemm(
            m,
            n,
            k,
            dst.as_mut_ptr(),
            1,
            n as isize,
            accumulate,
            lhs.as_ptr(),
            1,
            k as isize,
            rhs.as_ptr(),
            1,
            n as isize,
            ONE,
            ONE,
            false,
            false,
            false,
            gemm::Parallelism::None,
        );
    }
    count(m * n * k);
}

/// Mode product on a 3-way tensor view.
///
/// `src` is read as a row-major `(pre, n_in, post)` array and
/// `dst` as `(pre, n_out, post)`; the effective factor `F` (after `op`) is
/// `n_out x n_in` and
/// `dst[p, i, q] (+)= alpha * Σ_j F[i, j] src[p, j, q]`.
#[allow(clippy::too_many_arguments)]
pub fn mode_product(
    factor: &ComplexMatrix,
    op: FactorOp,
    alpha: C64,
    src: &[C64],
    dst: &mut [C64],
    pre: usize,
    post: usize,
    accumulate: bool,
) {
    let (n_out, n_in) = if op.is_transposed() {
        (factor.cols, factor.rows)
    } else {
        (factor.rows, factor.cols)
    };
    assert_eq!(src.len(), pre * n_in * post, "mode_product: source length");
    assert_eq!(dst.len(), pre * n_out * post, "mode_product: destination length");
    if dst.is_empty() {
        return;
    }
    // effective factor strides: F_eff[i, j] = data[i * f_rs + j * f_cs]
    let (f_rs, f_cs) = if op.is_transposed() {
        (1isize, factor.cols as isize)
    } else {
        (factor.cols as isize, 1isize)
    };
    let conj = op.is_conj();
    let fptr = factor.data.as_ptr();
    // SAFETY: every view below addresses indices p*n*post + i*post + q with
    // p < pre, i < n, q < post, which the length assertions bound.
    unsafe {
        // contiguous (n x post) slabs beat one strided product unless post is tiny
        if pre <= post || post >= 4 {
            for p in 0..pre {
                gemm::gemm(
                    n_out,
                    post,
                    n_in,
                    dst.as_mut_ptr().add(p * n_out * post),
                    1,
                    post as isize,
                    accumulate,
                    fptr,
                    f_cs,
                    f_rs,
                    src.as_ptr().add(p * n_in * post),
                    1,
                    post as isize,
                    ONE,
                    alpha,
                    false,
                    conj,
                    false,
                    gemm::Parallelism::None,
                );
            }
        } else {
            for q in 0..post {
                // dst[:, i, q] = Σ_j src[:, j, q] * F_eff^T[j, i]
                gemm::gemm(
                    pre,
                    n_out,
                    n_in,
                    dst.as_mut_ptr().add(q),
                    post as isize,
                    (n_out * post) as isize,
                    accumulate,
                    src.as_ptr().add(q),
                    post as isize,
                    (n_in * post) as isize,
                    fptr,
                    f_rs,
                    f_cs,
                    ONE,
                    alpha,
                    false,
                    false,
                    conj,
                    gemm::Parallelism::None,
                );
            }
        }
    }
    count(pre * post * n_in * n_out);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive_stream, SeedPath};

    pub(crate) fn random(rows: usize, cols: usize, seed: u64) -> ComplexMatrix {
        let mut s = derive_stream(&SeedPath::new(seed, [rows as u64, cols as u64]));
        ComplexMatrix::from_fn(rows, cols, |_, _| s.complex_standard())
    }

    fn naive_mul(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix::from_fn(a.rows, b.cols, |i, j| (0..a.cols).map(|k| a.get(i, k) * b.get(k, j)).sum())
    }

    #[test]
    fn matmul_matches_naive() {
        let a = random(5, 7, 1);
        let b = random(7, 3, 2);
        assert!(a.matmul(&b).unwrap().max_abs_diff(&naive_mul(&a, &b)) < 1e-12);
        assert!(a.matmul(&a).is_err());
    }

    #[test]
    fn kron_entries() {
        let a = random(2, 3, 3);
        let b = random(4, 2, 4);
        let k = a.kron(&b);
        assert_eq!((k.rows(), k.cols()), (8, 6));
        for i1 in 0..2 {
            for j1 in 0..3 {
                for i2 in 0..4 {
                    for j2 in 0..2 {
                        assert_eq!(k.get(i1 * 4 + i2, j1 * 2 + j2), a.get(i1, j1) * b.get(i2, j2));
                    }
                }
            }
        }
    }

    #[test]
    fn mode_product_all_ops_and_loop_orders() {
        // (pre, post) chosen to hit both loop orders
        for &(pre, post) in &[(1, 6), (6, 1), (3, 4), (4, 3)] {
            let f = random(5, 5, 11);
            let src = random(1, pre * 5 * post, 12).into_data();
            for op in [FactorOp::Plain, FactorOp::Conj, FactorOp::Transpose, FactorOp::Adjoint] {
                let eff = match op {
                    FactorOp::Plain => f.clone(),
                    FactorOp::Conj => f.conj(),
                    FactorOp::Transpose => f.adjoint().conj(),
                    FactorOp::Adjoint => f.adjoint(),
                };
                let full = ComplexMatrix::identity(pre)
                    .kron(&eff)
                    .kron(&ComplexMatrix::identity(post));
                let expect = full.matvec(&src).unwrap();
                let mut got = vec![ONE; src.len()];
                mode_product(&f, op, ONE, &src, &mut got, pre, post, false);
                let err = expect.iter().zip(&got).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
                assert!(err < 1e-12, "op {op:?} pre {pre} post {post}: {err}");
                // accumulate with a scale
                let mut acc = expect.clone();
                mode_product(&f, op, C64::new(0.0, 2.0), &src, &mut acc, pre, post, true);
                for (a, e) in acc.iter().zip(&expect) {
                    assert!((a - e * C64::new(1.0, 2.0)).norm() < 1e-11);
                }
            }
        }
    }

    #[test]
    fn rectangular_mode_product() {
        let f = random(3, 5, 21);
        let src = random(1, 2 * 5 * 4, 22).into_data();
        let full = ComplexMatrix::identity(2).kron(&f).kron(&ComplexMatrix::identity(4));
        let expect = full.matvec(&src).unwrap();
        let mut got = vec![ZERO; 2 * 3 * 4];
        mode_product(&f, FactorOp::Plain, ONE, &src, &mut got, 2, 4, false);
        let err = expect.iter().zip(&got).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn binary_dump_layout() {
        let m = ComplexMatrix::new(1, 2, vec![C64::new(1.5, -2.0), C64::new(0.0, 3.0)]).unwrap();
        let mut buf = Vec::new();
        m.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 32);
        assert_eq!(&buf[..8], &1u64.to_le_bytes());
        assert_eq!(&buf[8..16], &2u64.to_le_bytes());
        assert_eq!(&buf[16..24], &1.5f64.to_le_bytes());
        assert_eq!(&buf[24..32], &(-2.0f64).to_le_bytes());
        assert_eq!(ComplexMatrix::read_binary(&buf[..]).unwrap(), m);
        assert!(ComplexMatrix::read_binary(&buf[..40]).is_err());
    }

    #[test]
    fn csv_dump() {
        let m = ComplexMatrix::identity(2);
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with("row,col,re,im\n0,0,1e0,0e0"));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(ComplexMatrix::new(1, 1, vec![C64::new(f64::NAN, 0.0)]).is_err());
        assert!(ComplexMatrix::new(2, 1, vec![ONE]).is_err());
    }

    #[test]
    fn adjoint_matvec() {
        let a = random(4, 3, 5);
        let v = random(1, 4, 6).into_data();
        let x = a.matvec_adjoint(&v).unwrap();
        let y = a.adjoint().matvec(&v).unwrap();
        for (p, q) in x.iter().zip(&y) {
            assert!((p - q).norm() < 1e-13);
        }
    }
}

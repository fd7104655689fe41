//! Operator-norm estimators.
//!
//! * [`dense_norm`]: full SVD, the oracle for small sizes.
//! * [`iterative_norm`]: Golub–Kahan–Lanczos bidiagonalization with full
//!   reorthogonalization and explicit restarts from the Ritz vector. The
//!   reported value is `‖A^† u‖` for an explicit unit vector `u`, hence a
//!   lower bound on `‖A‖` up to rounding.
//! * [`cpmap_norm`]: the above on the Hilbert–Schmidt action of a CP map,
//!   started from the normalized identity.
//! * [`trilinear_sup`]: alternating maximization for
//!   `sup { ‖Σ a_j ⊗ G_j‖ : Σ ‖a_j‖^2 ≤ 1 }`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::matrix::{dot, norm, normalize, ComplexMatrix, C64, ZERO};
use crate::rng::Stream;
use crate::tensorop::{CPMapOperator, FamilyCombination, LinearOperator, TermFamily};

/// Largest `rows * cols` accepted by [`dense_norm`].
pub const DENSE_ORACLE_BUDGET: u128 = 1 << 24;

/// Memory allowed for the Krylov basis of [`iterative_norm`].
pub const KRYLOV_MEMORY_BYTES: usize = 768 << 20;

const MAX_BASIS: usize = 256;

/// Relative slack used when checking that objective sequences never decrease.
pub const MONOTONE_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormMethod {
    DenseOracle,
    Iterative,
    Trilinear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormEstimate {
    pub value: f64,
    pub method: NormMethod,
    pub iterations: usize,
    pub residual: f64,
    pub restarts: usize,
    /// The value is attained at an explicit feasible point.
    pub certified_lower: bool,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub rel_tol: f64,
    pub max_iterations: usize,
    pub restarts: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            rel_tol: 1e-6,
            max_iterations: 2000,
            restarts: 8,
        }
    }
}

impl Tolerance {
    pub fn new(rel_tol: f64, max_iterations: usize, restarts: usize) -> Result<Self> {
        let t = Tolerance {
            rel_tol,
            max_iterations,
            restarts,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.rel_tol.is_finite()) {
            return Err(LabError::invalid("rel_tol", "must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(LabError::invalid("max_iterations", "must be at least 1"));
        }
        Ok(())
    }
}

/// Tolerances for the three estimator families used by a pipeline.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSettings {
    /// Plain operator norms.
    pub norm: Tolerance,
    pub cpmap: Tolerance,
    pub trilinear: Tolerance,
}

impl EstimatorSettings {
    pub fn uniform(tol: Tolerance) -> Self {
        EstimatorSettings {
            norm: tol,
            cpmap: tol,
            trilinear: tol,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.norm.validate()?;
        self.cpmap.validate()?;
        self.trilinear.validate()
    }
}

pub fn dense_norm(a: &ComplexMatrix) -> Result<NormEstimate> {
    dense_norm_with_budget(a, DENSE_ORACLE_BUDGET)
}

pub fn dense_norm_with_budget(a: &ComplexMatrix, budget: u128) -> Result<NormEstimate> {
    let requested = a.rows() as u128 * a.cols() as u128;
    if requested > budget {
        return Err(LabError::BudgetExceeded { requested, budget });
    }
    Ok(NormEstimate {
        value: a.spectral_norm(),
        method: NormMethod::DenseOracle,
        iterations: 0,
        residual: 0.0,
        restarts: 0,
        certified_lower: false,
        converged: true,
    })
}

// ---------------------------------------------------------------------------

/// Top singular triple of a small real matrix.
fn top_singular(b: &DMatrix<f64>) -> (f64, Vec<f64>, Vec<f64>) {
    let svd = b.clone().svd(true, true);
    let (idx, &s) = svd
        .singular_values
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.total_cmp(y.1))
        .expect("nonempty matrix");
    let u = svd.u.as_ref().unwrap().column(idx).iter().cloned().collect();
    let v = svd.v_t.as_ref().unwrap().row(idx).iter().cloned().collect();
    (s, u, v)
}

fn orthogonalize(v: &mut [C64], basis: &[Vec<C64>]) {
    // two passes of classical Gram–Schmidt
    for _ in 0..2 {
        for b in basis {
            let c = dot(b, v);
            for (x, y) in v.iter_mut().zip(b) {
                *x -= c * y;
            }
        }
    }
}

fn combine(basis: &[Vec<C64>], coeffs: &[f64]) -> Vec<C64> {
    let mut out = vec![ZERO; basis[0].len()];
    for (b, &c) in basis.iter().zip(coeffs) {
        for (o, x) in out.iter_mut().zip(b) {
            *o += x * c;
        }
    }
    out
}

fn basis_size(rows: usize, cols: usize) -> usize {
    let by_memory = KRYLOV_MEMORY_BYTES / (16 * (rows + cols)).max(1);
    by_memory.clamp(2, MAX_BASIS).min(rows.min(cols) + 1)
}

/// Golub–Kahan–Lanczos from a random start vector.
pub fn iterative_norm(op: &dyn LinearOperator, tol: &Tolerance, stream: &mut Stream) -> NormEstimate {
    let start: Vec<C64> = (0..op.cols()).map(|_| stream.complex_standard()).collect();
    iterative_norm_from(op, tol, &start)
}

/// Golub–Kahan–Lanczos from a given start vector.
pub fn iterative_norm_from(op: &dyn LinearOperator, tol: &Tolerance, start: &[C64]) -> NormEstimate {
    let (rows, cols) = (op.rows(), op.cols());
    let mut est = NormEstimate {
        value: 0.0,
        method: NormMethod::Iterative,
        iterations: 0,
        residual: 0.0,
        restarts: 0,
        certified_lower: true,
        converged: true,
    };
    if rows == 0 || cols == 0 {
        return est;
    }
    assert_eq!(start.len(), cols, "iterative_norm: start vector length");
    let kmax = basis_size(rows, cols);
    let mut p0 = start.to_vec();
    if normalize(&mut p0) == 0.0 {
        p0[0] = C64::new(1.0, 0.0);
    }
    est.converged = false;
    let mut cycles = 0;
    loop {
        cycles += 1;
        let mut ps: Vec<Vec<C64>> = vec![p0.clone()];
        let mut qs: Vec<Vec<C64>> = Vec::new();
        let mut alphas: Vec<f64> = Vec::new();
        let mut betas: Vec<f64> = Vec::new();
        let mut ritz: Option<Vec<f64>> = None;
        let mut done = false;
        for j in 0..kmax {
            let mut q = vec![ZERO; rows];
            op.apply_into(&ps[j], &mut q);
            est.iterations += 1;
            orthogonalize(&mut q, &qs);
            let alpha = norm(&q);
            if alpha <= 1e-14 * est.value.max(f64::MIN_POSITIVE) {
                // invariant subspace: the previous step already holds the answer
                est.converged = true;
                done = true;
                break;
            }
            q.iter_mut().for_each(|z| *z /= alpha);
            alphas.push(alpha);
            qs.push(q);

            let mut p = vec![ZERO; cols];
            op.apply_adjoint_into(&qs[j], &mut p);
            orthogonalize(&mut p, &ps);
            let beta = norm(&p);
            betas.push(beta);

            let k = alphas.len();
            // square bidiagonal B_k for the residual, B_k with one extra column for the value
            let mut b = DMatrix::<f64>::zeros(k, k + 1);
            for i in 0..k {
                b[(i, i)] = alphas[i];
                b[(i, i + 1)] = betas[i];
            }
            let (sigma_ext, _, w) = top_singular(&b);
            let (sigma_sq, _, y) = top_singular(&b.columns(0, k).into_owned());
            let residual = beta * y[k - 1].abs();
            if sigma_ext > est.value {
                est.value = sigma_ext;
            }
            est.residual = residual;
            ritz = Some(w);

            let exhausted = beta <= 1e-14 * sigma_sq.max(f64::MIN_POSITIVE);
            if residual <= tol.rel_tol * sigma_sq || exhausted {
                est.converged = true;
                done = true;
                break;
            }
            if est.iterations >= tol.max_iterations {
                done = true;
                break;
            }
            p.iter_mut().for_each(|z| *z /= beta);
            ps.push(p);
        }
        if done || est.iterations >= tol.max_iterations {
            break;
        }
        match ritz {
            Some(w) => {
                let mut x = combine(&ps[..w.len()], &w);
                if normalize(&mut x) == 0.0 {
                    break;
                }
                p0 = x;
            }
            None => break,
        }
    }
    est.restarts = cycles - 1;
    est
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CpNormReport {
    pub estimate: NormEstimate,
    /// `N^{-1} tr Σ U_j U_j^†`.
    pub trace_bound: f64,
    /// `estimate.value ≥ trace_bound − 1e-6`.
    pub trace_bound_ok: bool,
}

/// Norm of `X ↦ Σ U_j X U_j^†` on Hilbert–Schmidt space, i.e. `‖Σ U_j ⊗ Ū_j‖`.
///
/// The iteration starts at `I / √N`, whose image norm already dominates the
/// trace bound, so the estimate is never below it. Maps built from a product
/// network are tensor products of one-level maps; their norm is the product
/// of the factor norms, attained at the tensor product of the witnesses.
pub fn cpmap_norm(map: &CPMapOperator, tol: &Tolerance) -> CpNormReport {
    let estimate = match map.product_factors() {
        Some(parts) => {
            let mut est = NormEstimate {
                value: 1.0,
                method: NormMethod::Iterative,
                iterations: 0,
                residual: 0.0,
                restarts: 0,
                certified_lower: true,
                converged: true,
            };
            let mut rel_residual = 0.0f64;
            for part in &parts {
                let e = identity_start_norm(part, tol);
                est.value *= e.value;
                est.iterations += e.iterations;
                est.restarts += e.restarts;
                est.converged &= e.converged;
                est.certified_lower &= e.certified_lower;
                if e.value > 0.0 {
                    rel_residual = rel_residual.max(e.residual / e.value);
                }
            }
            est.residual = rel_residual * est.value;
            est
        }
        None => identity_start_norm(map, tol),
    };
    let trace_bound = map.trace_bound();
    CpNormReport {
        trace_bound_ok: estimate.value >= trace_bound - 1e-6,
        estimate,
        trace_bound,
    }
}

fn identity_start_norm(map: &CPMapOperator, tol: &Tolerance) -> NormEstimate {
    let n = map.dim();
    let mut start = vec![ZERO; n * n];
    for i in 0..n {
        start[i * n + i] = C64::new(1.0, 0.0);
    }
    iterative_norm_from(map, tol, &start)
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrilinearResult {
    pub estimate: NormEstimate,
    /// Maximizing coefficients `a_j` (`p x p`; `1 x 1` when `p = 1`).
    pub coefficients: Vec<ComplexMatrix>,
    /// Objective after every block update, one list per restart.
    pub objective_trace: Vec<Vec<f64>>,
}

impl TrilinearResult {
    /// Whether every restart's objective sequence is nondecreasing.
    pub fn monotone(&self) -> bool {
        self.objective_trace.iter().all(|t| is_monotone(t))
    }

    /// Number of consecutive objective pairs checked, and how many decrease.
    pub fn monotone_counts(&self) -> (usize, usize) {
        let mut total = 0;
        let mut bad = 0;
        for t in &self.objective_trace {
            for w in t.windows(2) {
                total += 1;
                if w[1] < w[0] * (1.0 - MONOTONE_SLACK) {
                    bad += 1;
                }
            }
        }
        (total, bad)
    }
}

pub fn is_monotone(trace: &[f64]) -> bool {
    trace.windows(2).all(|w| w[1] >= w[0] * (1.0 - MONOTONE_SLACK))
}

const INNER_POWER_STEPS: usize = 4;

/// `sup ‖Σ_j a_j ⊗ G_j‖` over `a_j ∈ M_p` with `Σ ‖a_j‖^2 ≤ 1`.
///
/// For `p = 1` the sweep alternates two exact-ascent blocks, `(u, λ)` given
/// `v` and `(v, λ)` given `u`; each block is the top singular pair of the
/// `N x J` matrix `[G_1 v, …, G_J v]` (resp. `[G_1^† u, …]`), refined by
/// warm-started power steps. Restarts run as one batch. The best restart is
/// polished by Lanczos on `Σ λ_j G_j`. For `p > 1` the sweep updates the
/// coefficients (polar factors of `B_j[s,t] = u_s^† G_j v_t`, weighted by
/// nuclear norms), then `u`, then `v`.
pub fn trilinear_sup<F: TermFamily + ?Sized>(
    family: &F,
    p: usize,
    tol: &Tolerance,
    stream: &mut Stream,
) -> Result<TrilinearResult> {
    tol.validate()?;
    if p == 0 {
        return Err(LabError::invalid("p", "must be at least 1"));
    }
    if family.term_count() == 0 || family.term_dim() == 0 {
        return Err(LabError::invalid("terms", "need at least one nonempty term"));
    }
    if p == 1 {
        Ok(trilinear_scalar(family, tol, stream))
    } else {
        Ok(trilinear_matrix(family, p, tol, stream))
    }
}

fn random_unit(n: usize, stream: &mut Stream) -> Vec<C64> {
    let mut v: Vec<C64> = (0..n).map(|_| stream.complex_standard()).collect();
    normalize(&mut v);
    v
}

struct RestartState {
    v: Vec<C64>,
    u: Vec<C64>,
    lambda: Vec<C64>,
    value: f64,
    trace: Vec<f64>,
    sweeps: usize,
    converged: bool,
    last_change: f64,
}

/// Power steps for the top right singular vector of the `n x J` matrix whose
/// column `j` is `cols(j)`; returns `(‖H x‖, H x / ‖H x‖, x)`.
fn block_top(
    h: &[C64],
    j_count: usize,
    n: usize,
    batch: usize,
    r: usize,
    start: &[C64],
) -> (f64, Vec<C64>, Vec<C64>) {
    let col = |j: usize, i: usize| h[(j * n + i) * batch + r];
    let apply = |x: &[C64]| {
        let mut w = vec![ZERO; n];
        for (j, xj) in x.iter().enumerate() {
            if *xj == ZERO {
                continue;
            }
            for (i, wi) in w.iter_mut().enumerate() {
                *wi += col(j, i) * xj;
            }
        }
        w
    };
    let apply_adj = |w: &[C64]| {
        (0..j_count)
            .map(|j| (0..n).map(|i| col(j, i).conj() * w[i]).sum::<C64>())
            .collect::<Vec<C64>>()
    };
    let mut x = start.to_vec();
    let mut w = apply(&x);
    for _ in 0..INNER_POWER_STEPS {
        let mut nx = apply_adj(&w);
        if normalize(&mut nx) == 0.0 {
            break;
        }
        let nw = apply(&nx);
        // a power step never lowers ‖H x‖ for PSD H^†H, rounding aside
        if norm(&nw) < norm(&w) {
            break;
        }
        let gain = norm(&nw) - norm(&w);
        x = nx;
        w = nw;
        if gain <= 1e-15 * norm(&w) {
            break;
        }
    }
    let f = normalize(&mut w);
    (f, w, x)
}

fn trilinear_scalar<F: TermFamily + ?Sized>(family: &F, tol: &Tolerance, stream: &mut Stream) -> TrilinearResult {
    let n = family.term_dim();
    let jc = family.term_count();
    let restarts = tol.restarts.max(1);
    let mut states: Vec<RestartState> = (0..restarts)
        .map(|_| RestartState {
            v: random_unit(n, stream),
            u: vec![ZERO; n],
            lambda: random_unit(jc, stream),
            value: 0.0,
            trace: Vec::new(),
            sweeps: 0,
            converged: false,
            last_change: f64::INFINITY,
        })
        .collect();

    for _ in 0..tol.max_iterations {
        let active: Vec<usize> = (0..restarts).filter(|&r| !states[r].converged).collect();
        if active.is_empty() {
            break;
        }
        let b = active.len();
        // (u, λ) given v
        let mut x = vec![ZERO; n * b];
        for (c, &r) in active.iter().enumerate() {
            for i in 0..n {
                x[i * b + c] = states[r].v[i];
            }
        }
        let h = family.apply_all(&x, b, false);
        for (c, &r) in active.iter().enumerate() {
            let st = &mut states[r];
            let (f, u, lam) = block_top(&h, jc, n, b, c, &st.lambda);
            st.u = u;
            st.lambda = lam;
            st.trace.push(f);
        }
        // (v, λ) given u
        for (c, &r) in active.iter().enumerate() {
            for i in 0..n {
                x[i * b + c] = states[r].u[i];
            }
        }
        let w = family.apply_all(&x, b, true);
        for (c, &r) in active.iter().enumerate() {
            let st = &mut states[r];
            let mu: Vec<C64> = st.lambda.iter().map(|z| z.conj()).collect();
            let (f, v, mu) = block_top(&w, jc, n, b, c, &mu);
            st.v = v;
            st.lambda = mu.iter().map(|z| z.conj()).collect();
            st.trace.push(f);
            st.sweeps += 1;
            let change = (f - st.value).abs();
            st.last_change = change;
            st.value = f;
            if change <= tol.rel_tol * f {
                st.converged = true;
            }
        }
    }

    let best = (0..restarts)
        .max_by(|&a, &b| states[a].value.total_cmp(&states[b].value).then(b.cmp(&a)))
        .unwrap();
    let st = &states[best];
    let combo = FamilyCombination {
        family,
        lambda: st.lambda.clone(),
    };
    let polish = iterative_norm_from(&combo, tol, &st.v);
    let value = st.value.max(polish.value);
    let coefficients = st
        .lambda
        .iter()
        .map(|&l| ComplexMatrix::from_vec_unchecked(1, 1, vec![l]))
        .collect();
    TrilinearResult {
        estimate: NormEstimate {
            value,
            method: NormMethod::Trilinear,
            iterations: states.iter().map(|s| s.sweeps).sum(),
            residual: st.last_change,
            restarts,
            certified_lower: true,
            converged: st.converged,
        },
        coefficients,
        objective_trace: states.into_iter().map(|s| s.trace).collect(),
    }
}

/// Applies the family to the `p` blocks of a `(p, N)` vector; returns
/// `(J, N, p)`.
fn apply_blocks<F: TermFamily + ?Sized>(family: &F, x: &[C64], p: usize, adjoint: bool) -> Vec<C64> {
    let n = family.term_dim();
    let mut xt = vec![ZERO; n * p];
    for t in 0..p {
        for i in 0..n {
            xt[i * p + t] = x[t * n + i];
        }
    }
    family.apply_all(&xt, p, adjoint)
}

/// `(Σ_j op(a_j) ⊗ G_j^{(†)}) x` from precomputed `G_j^{(†)} x_t`.
fn contract_blocks(h: &[C64], coeffs: &[ComplexMatrix], n: usize, p: usize, adjoint: bool) -> Vec<C64> {
    let mut out = vec![ZERO; p * n];
    for (j, a) in coeffs.iter().enumerate() {
        for s in 0..p {
            for t in 0..p {
                // forward: out_s += a[s,t] G_j x_t ; adjoint: out_t += conj(a[s,t]) G_j^† x_s
                let (dst, src, c) = if adjoint {
                    (t, s, a.get(s, t).conj())
                } else {
                    (s, t, a.get(s, t))
                };
                if c == ZERO {
                    continue;
                }
                for i in 0..n {
                    out[dst * n + i] += c * h[(j * n + i) * p + src];
                }
            }
        }
    }
    out
}

fn trilinear_matrix<F: TermFamily + ?Sized>(
    family: &F,
    p: usize,
    tol: &Tolerance,
    stream: &mut Stream,
) -> TrilinearResult {
    let n = family.term_dim();
    let jc = family.term_count();
    let restarts = tol.restarts.max(1);
    let mut traces = Vec::with_capacity(restarts);
    let mut best: Option<(f64, Vec<ComplexMatrix>, bool, f64)> = None;
    let mut total_sweeps = 0;

    for _ in 0..restarts {
        let mut u = random_unit(p * n, stream);
        let mut v = random_unit(p * n, stream);
        let mut coeffs: Vec<ComplexMatrix> = (0..jc)
            .map(|_| ComplexMatrix::from_fn(p, p, |_, _| stream.complex_standard()))
            .collect();
        let s: f64 = coeffs.iter().map(|a| a.spectral_norm().powi(2)).sum::<f64>().sqrt();
        coeffs.iter_mut().for_each(|a| a.scale_in_place(C64::new(1.0 / s, 0.0)));

        let mut trace = Vec::new();
        let mut value = 0.0;
        let mut converged = false;
        let mut change = f64::INFINITY;
        for _ in 0..tol.max_iterations {
            total_sweeps += 1;
            // coefficients given (u, v)
            let hv = apply_blocks(family, &v, p, false);
            let mut nuclear = vec![0.0; jc];
            let mut polars = Vec::with_capacity(jc);
            for (j, nu) in nuclear.iter_mut().enumerate() {
                // C = B_j^T, C[t, s] = u_s^† G_j v_t
                let c = DMatrix::from_fn(p, p, |t, s| dot(&u[s * n..(s + 1) * n], &hv_col(&hv, j, t, n, p)));
                let svd = c.svd(true, true);
                *nu = svd.singular_values.iter().sum();
                let w = svd.u.unwrap();
                let vt = svd.v_t.unwrap();
                // a = V W^†
                polars.push(vt.adjoint() * w.adjoint());
            }
            let total = norm_f64(&nuclear);
            if total > 0.0 {
                coeffs = polars
                    .iter()
                    .zip(&nuclear)
                    .map(|(pl, nu)| ComplexMatrix::from_nalgebra(pl).scaled(C64::new(nu / total, 0.0)))
                    .collect();
            }
            trace.push(total);
            // u given (a, v)
            let mut mv = contract_blocks(&hv, &coeffs, n, p, false);
            let f_u = normalize(&mut mv);
            if f_u == 0.0 {
                break;
            }
            u = mv;
            trace.push(f_u);
            // v given (a, u)
            let hu = apply_blocks(family, &u, p, true);
            let mut mu = contract_blocks(&hu, &coeffs, n, p, true);
            let f_v = normalize(&mut mu);
            if f_v == 0.0 {
                break;
            }
            v = mu;
            trace.push(f_v);
            change = (f_v - value).abs();
            value = f_v;
            if change <= tol.rel_tol * f_v {
                converged = true;
                break;
            }
        }
        if best.as_ref().is_none_or(|b| value > b.0) {
            best = Some((value, coeffs, converged, change));
        }
        traces.push(trace);
    }
    let (value, coefficients, converged, change) = best.unwrap();
    TrilinearResult {
        estimate: NormEstimate {
            value,
            method: NormMethod::Trilinear,
            iterations: total_sweeps,
            residual: change,
            restarts,
            certified_lower: true,
            converged,
        },
        coefficients,
        objective_trace: traces,
    }
}

fn hv_col(hv: &[C64], j: usize, t: usize, n: usize, p: usize) -> Vec<C64> {
    (0..n).map(|i| hv[(j * n + i) * p + t]).collect()
}

fn norm_f64(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

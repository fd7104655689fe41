//! Implicit operators: Kronecker chains, operator sums, completely positive
//! maps and flattenings.
//!
//! Vectorization convention: a matrix `X` (`N x N`) is identified with the
//! row-major vector `vec(X)[i*N + j] = X[i, j]`. Under this convention
//! `vec(U X U^†) = (U ⊗ Ū) vec(X)`, so the Hilbert–Schmidt action of
//! `X ↦ Σ_j U_j X U_j^†` is the matrix `Σ_j U_j ⊗ Ū_j`.

use std::sync::Arc;

use crate::ensembles::{linear_index, multi_index, ChainFamily, NaiveFamily};
use crate::error::{LabError, Result};
use crate::matrix::{axpy, mode_product, ComplexMatrix, FactorOp, C64, ONE, ZERO};

/// An operator known through its action and the action of its adjoint.
pub trait LinearOperator: Send + Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;

    /// `y = A x`; `x.len() == cols()`, `y.len() == rows()`.
    fn apply_into(&self, x: &[C64], y: &mut [C64]);

    /// `y = A^† x`.
    fn apply_adjoint_into(&self, x: &[C64], y: &mut [C64]);

    fn apply(&self, x: &[C64]) -> Result<Vec<C64>> {
        check_len("LinearOperator::apply", self.cols(), x.len())?;
        let mut y = vec![ZERO; self.rows()];
        self.apply_into(x, &mut y);
        Ok(y)
    }

    fn apply_adjoint(&self, x: &[C64]) -> Result<Vec<C64>> {
        check_len("LinearOperator::apply_adjoint", self.rows(), x.len())?;
        let mut y = vec![ZERO; self.cols()];
        self.apply_adjoint_into(x, &mut y);
        Ok(y)
    }

    /// Dense matrix obtained column by column from the action.
    fn materialize(&self) -> ComplexMatrix {
        let (r, c) = (self.rows(), self.cols());
        let mut out = ComplexMatrix::zeros(r, c);
        let mut e = vec![ZERO; c];
        let mut col = vec![ZERO; r];
        for j in 0..c {
            e[j] = ONE;
            self.apply_into(&e, &mut col);
            e[j] = ZERO;
            for (i, v) in col.iter().enumerate() {
                out.set(i, j, *v);
            }
        }
        out
    }
}

fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(LabError::DimensionMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}

impl LinearOperator for ComplexMatrix {
    fn rows(&self) -> usize {
        ComplexMatrix::rows(self)
    }

    fn cols(&self) -> usize {
        ComplexMatrix::cols(self)
    }

    fn apply_into(&self, x: &[C64], y: &mut [C64]) {
        self.matvec_into(x, y, false);
    }

    fn apply_adjoint_into(&self, x: &[C64], y: &mut [C64]) {
        self.matvec_adjoint_into(x, y, false);
    }

    fn materialize(&self) -> ComplexMatrix {
        self.clone()
    }
}

// ---------------------------------------------------------------------------

/// `F_1 ⊗ F_2 ⊗ … ⊗ F_L`, never materialized during application.
#[derive(Clone, Debug)]
pub struct KroneckerChain {
    factors: Vec<Arc<ComplexMatrix>>,
}

impl KroneckerChain {
    pub fn new(factors: Vec<Arc<ComplexMatrix>>) -> Result<Self> {
        if factors.is_empty() {
            return Err(LabError::invalid("factors", "a Kronecker chain needs at least one factor"));
        }
        Ok(KroneckerChain { factors })
    }

    pub fn from_matrices(factors: Vec<ComplexMatrix>) -> Result<Self> {
        Self::new(factors.into_iter().map(Arc::new).collect())
    }

    pub fn factors(&self) -> &[Arc<ComplexMatrix>] {
        &self.factors
    }

    pub fn rows(&self) -> usize {
        self.factors.iter().map(|f| f.rows()).product()
    }

    pub fn cols(&self) -> usize {
        self.factors.iter().map(|f| f.cols()).product()
    }

    /// Dense Kronecker product; for oracles only.
    pub fn materialize(&self) -> ComplexMatrix {
        let mut acc = (*self.factors[0]).clone();
        for f in &self.factors[1..] {
            acc = acc.kron(f);
        }
        acc
    }

    /// Applies `op(F_1) ⊗ … ⊗ op(F_L)` to the middle modes of `x`, read as a
    /// row-major `(outer, n_1, …, n_L, inner)` array.
    pub fn apply_embedded(&self, x: &[C64], outer: usize, inner: usize, op: FactorOp) -> Vec<C64> {
        let transposed = matches!(op, FactorOp::Transpose | FactorOp::Adjoint);
        let dims_in: Vec<usize> = self
            .factors
            .iter()
            .map(|f| if transposed { f.rows() } else { f.cols() })
            .collect();
        let dims_out: Vec<usize> = self
            .factors
            .iter()
            .map(|f| if transposed { f.cols() } else { f.rows() })
            .collect();
        assert_eq!(x.len(), outer * dims_in.iter().product::<usize>() * inner);
        let mut buf: Option<Vec<C64>> = None;
        for (k, f) in self.factors.iter().enumerate() {
            let pre = outer * dims_out[..k].iter().product::<usize>();
            let post = dims_in[k + 1..].iter().product::<usize>() * inner;
            let mut out = vec![ZERO; pre * dims_out[k] * post];
            mode_product(f, op, ONE, buf.as_deref().unwrap_or(x), &mut out, pre, post, false);
            buf = Some(out);
        }
        buf.expect("chain has at least one factor")
    }
}

impl LinearOperator for KroneckerChain {
    fn rows(&self) -> usize {
        KroneckerChain::rows(self)
    }

    fn cols(&self) -> usize {
        KroneckerChain::cols(self)
    }

    fn apply_into(&self, x: &[C64], y: &mut [C64]) {
        y.copy_from_slice(&self.apply_embedded(x, 1, 1, FactorOp::Plain));
    }

    fn apply_adjoint_into(&self, x: &[C64], y: &mut [C64]) {
        y.copy_from_slice(&self.apply_embedded(x, 1, 1, FactorOp::Adjoint));
    }

    fn materialize(&self) -> ComplexMatrix {
        KroneckerChain::materialize(self)
    }
}

pub fn chain_apply(chain: &KroneckerChain, v: &[C64]) -> Result<Vec<C64>> {
    LinearOperator::apply(chain, v)
}

pub fn chain_apply_adjoint(chain: &KroneckerChain, v: &[C64]) -> Result<Vec<C64>> {
    LinearOperator::apply_adjoint(chain, v)
}

// ---------------------------------------------------------------------------

/// Coefficient attached to a term of an [`OperatorSum`].
#[derive(Clone, Debug)]
pub enum Coefficient {
    Scalar(C64),
    /// `a ⊗ G`, with `a` acting on the leading tensor factor.
    Matrix(ComplexMatrix),
}

/// `Σ_t c_t ⊗ G_t`.
#[derive(Clone, Debug)]
pub struct OperatorSum {
    rows: usize,
    cols: usize,
    terms: Vec<(C64, KroneckerChain)>,
}

impl OperatorSum {
    pub fn new(rows: usize, cols: usize) -> Self {
        OperatorSum {
            rows,
            cols,
            terms: Vec::new(),
        }
    }

    pub fn push(&mut self, coeff: Coefficient, op: KroneckerChain) -> Result<()> {
        let (scale, chain) = match coeff {
            Coefficient::Scalar(c) => (c, op),
            Coefficient::Matrix(a) => {
                let mut factors = vec![Arc::new(a)];
                factors.extend(op.factors.iter().cloned());
                (ONE, KroneckerChain::new(factors)?)
            }
        };
        check_len("OperatorSum::push (rows)", self.rows, chain.rows())?;
        check_len("OperatorSum::push (cols)", self.cols, chain.cols())?;
        self.terms.push((scale, chain));
        Ok(())
    }

    pub fn with_term(mut self, coeff: Coefficient, op: KroneckerChain) -> Result<Self> {
        self.push(coeff, op)?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[(C64, KroneckerChain)] {
        &self.terms
    }
}

impl LinearOperator for OperatorSum {
    fn rows(&self) -> usize {
        self.rows
    }

    fn cols(&self) -> usize {
        self.cols
    }

    fn apply_into(&self, x: &[C64], y: &mut [C64]) {
        y.iter_mut().for_each(|z| *z = ZERO);
        for (c, chain) in &self.terms {
            axpy(*c, &chain.apply_embedded(x, 1, 1, FactorOp::Plain), y);
        }
    }

    fn apply_adjoint_into(&self, x: &[C64], y: &mut [C64]) {
        y.iter_mut().for_each(|z| *z = ZERO);
        for (c, chain) in &self.terms {
            axpy(c.conj(), &chain.apply_embedded(x, 1, 1, FactorOp::Adjoint), y);
        }
    }
}

pub fn opsum_apply(s: &OperatorSum, v: &[C64]) -> Result<Vec<C64>> {
    LinearOperator::apply(s, v)
}

// ---------------------------------------------------------------------------

/// A family of square matrices `G_j` that can be applied all at once.
///
/// `apply_all(x, batch, adjoint)` reads `x` as a row-major `(cols, batch)`
/// array and returns the row-major `(J, rows, batch)` array of `G_j x`
/// (or `G_j^† x`).
pub trait TermFamily: Sync {
    fn term_dim(&self) -> usize;
    fn term_count(&self) -> usize;
    fn apply_all(&self, x: &[C64], batch: usize, adjoint: bool) -> Vec<C64>;
}

impl TermFamily for [KroneckerChain] {
    fn term_dim(&self) -> usize {
        self.first().map_or(0, |c| c.rows())
    }

    fn term_count(&self) -> usize {
        self.len()
    }

    fn apply_all(&self, x: &[C64], batch: usize, adjoint: bool) -> Vec<C64> {
        let op = if adjoint { FactorOp::Adjoint } else { FactorOp::Plain };
        let mut out = Vec::with_capacity(self.len() * x.len());
        for chain in self {
            out.extend(chain.apply_embedded(x, 1, batch, op));
        }
        out
    }
}

/// `x ↦ Σ_j λ_j G_j x` for a [`TermFamily`].
pub struct FamilyCombination<'a, F: TermFamily + ?Sized> {
    pub family: &'a F,
    pub lambda: Vec<C64>,
}

impl<F: TermFamily + ?Sized> FamilyCombination<'_, F> {
    fn combine(&self, x: &[C64], y: &mut [C64], adjoint: bool) {
        let n = self.family.term_dim();
        let all = self.family.apply_all(x, 1, adjoint);
        y.iter_mut().for_each(|z| *z = ZERO);
        for (j, lam) in self.lambda.iter().enumerate() {
            let c = if adjoint { lam.conj() } else { *lam };
            axpy(c, &all[j * n..(j + 1) * n], y);
        }
    }
}

impl<F: TermFamily + ?Sized> LinearOperator for FamilyCombination<'_, F> {
    fn rows(&self) -> usize {
        self.family.term_dim()
    }

    fn cols(&self) -> usize {
        self.family.term_dim()
    }

    fn apply_into(&self, x: &[C64], y: &mut [C64]) {
        self.combine(x, y, false);
    }

    fn apply_adjoint_into(&self, x: &[C64], y: &mut [C64]) {
        self.combine(x, y, true);
    }
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct NetworkEdge {
    pub from: usize,
    pub to: usize,
    pub factor: Arc<ComplexMatrix>,
}

/// Kronecker products indexed by the paths through a layered graph.
///
/// Level `k` carries edges between the states of boundary `k` and boundary
/// `k + 1`; a path picks one edge per level with matching endpoints, and its
/// term is the Kronecker product of the edge factors. Paths are ordered
/// lexicographically by edge position. The chain family, the product family
/// `g^1_{j_1} ⊗ … ⊗ g^d_{j_d}` and a plain list of matrices are all special
/// cases, and sums over all paths can be contracted level by level.
#[derive(Clone, Debug)]
pub struct PathFamily {
    level_dims: Vec<usize>,
    states: Vec<usize>,
    levels: Vec<Vec<NetworkEdge>>,
}

impl PathFamily {
    pub fn new(states: Vec<usize>, levels: Vec<Vec<NetworkEdge>>) -> Result<Self> {
        if levels.is_empty() {
            return Err(LabError::invalid("levels", "need at least one level"));
        }
        check_len("PathFamily::new (states)", levels.len() + 1, states.len())?;
        let mut level_dims = Vec::with_capacity(levels.len());
        for (k, edges) in levels.iter().enumerate() {
            let first = edges
                .first()
                .ok_or_else(|| LabError::invalid("levels", format!("level {k} has no edges")))?;
            let n = first.factor.rows();
            for e in edges {
                if e.factor.rows() != n || e.factor.cols() != n {
                    return Err(LabError::invalid("levels", format!("level {k} factors must all be {n}x{n}")));
                }
                if e.from >= states[k] || e.to >= states[k + 1] {
                    return Err(LabError::invalid("levels", format!("level {k} edge endpoint out of range")));
                }
            }
            level_dims.push(n);
        }
        Ok(PathFamily {
            level_dims,
            states,
            levels,
        })
    }

    /// `U_i = Y^1_{i1 i2} ⊗ … ⊗ Y^{d-1}_{i_{d-1} i_d}` for `i ∈ [m]^d`, in
    /// row-major multi-index order.
    pub fn chain(family: &ChainFamily) -> Self {
        let m = family.spec.m;
        let levels = (0..family.num_levels())
            .map(|k| {
                let mut edges = Vec::with_capacity(m * m);
                for p in 0..m {
                    for q in 0..m {
                        edges.push(NetworkEdge {
                            from: p,
                            to: q,
                            factor: family.get(k, p, q).clone(),
                        });
                    }
                }
                edges
            })
            .collect::<Vec<_>>();
        let states = vec![m; levels.len() + 1];
        PathFamily::new(states, levels).expect("chain family is well formed")
    }

    /// `g^1_{j_1} ⊗ … ⊗ g^L_{j_L}` over all `j`, one list per level.
    pub fn product(levels: Vec<Vec<Arc<ComplexMatrix>>>) -> Result<Self> {
        let states = vec![1; levels.len() + 1];
        let levels = levels
            .into_iter()
            .map(|l| {
                l.into_iter()
                    .map(|factor| NetworkEdge { from: 0, to: 0, factor })
                    .collect()
            })
            .collect();
        PathFamily::new(states, levels)
    }

    /// The matrices themselves, one term each.
    pub fn independent(members: Vec<Arc<ComplexMatrix>>) -> Result<Self> {
        PathFamily::product(vec![members])
    }

    pub fn naive(family: &NaiveFamily) -> Self {
        PathFamily::independent(family.members().to_vec()).expect("naive family is well formed")
    }

    pub fn dim(&self) -> usize {
        self.level_dims.iter().product()
    }

    pub fn level_dims(&self) -> &[usize] {
        &self.level_dims
    }

    pub fn levels(&self) -> &[Vec<NetworkEdge>] {
        &self.levels
    }

    pub fn path_count(&self) -> usize {
        let mut w = vec![1usize; *self.states.last().unwrap()];
        for (k, edges) in self.levels.iter().enumerate().rev() {
            let mut next = vec![0usize; self.states[k]];
            for e in edges {
                next[e.from] += w[e.to];
            }
            w = next;
        }
        w.iter().sum()
    }

    /// For a family with a single state at every boundary, the one-level
    /// families whose Kronecker product it is.
    pub fn product_factors(&self) -> Option<Vec<PathFamily>> {
        if self.levels.len() < 2 || self.states.iter().any(|&s| s != 1) {
            return None;
        }
        let parts = self
            .levels
            .iter()
            .map(|edges| PathFamily {
                level_dims: vec![edges[0].factor.rows()],
                states: vec![1, 1],
                levels: vec![edges.clone()],
            })
            .collect();
        Some(parts)
    }

    /// All terms in path order; for oracles and small sizes.
    pub fn terms(&self) -> Vec<KroneckerChain> {
        let mut out = Vec::new();
        let mut stack: Vec<Arc<ComplexMatrix>> = Vec::new();
        self.collect_paths(0, None, &mut stack, &mut out);
        out
    }

    fn collect_paths(
        &self,
        k: usize,
        state: Option<usize>,
        stack: &mut Vec<Arc<ComplexMatrix>>,
        out: &mut Vec<KroneckerChain>,
    ) {
        if k == self.levels.len() {
            out.push(KroneckerChain { factors: stack.clone() });
            return;
        }
        for e in &self.levels[k] {
            if state.is_some_and(|s| s != e.from) {
                continue;
            }
            stack.push(e.factor.clone());
            self.collect_paths(k + 1, Some(e.to), stack, out);
            stack.pop();
        }
    }

    /// `N^{-1} Σ_paths ‖U‖_F^2 = N^{-1} tr Σ U U^†`.
    pub fn trace_bound(&self) -> f64 {
        let mut w = vec![1.0f64; *self.states.last().unwrap()];
        for (k, edges) in self.levels.iter().enumerate().rev() {
            let mut next = vec![0.0; self.states[k]];
            for e in edges {
                next[e.from] += e.factor.frobenius_norm_sqr() * w[e.to];
            }
            w = next;
        }
        w.iter().sum::<f64>() / self.dim() as f64
    }

    fn mode_split(&self, k: usize) -> (usize, usize) {
        let pre = self.level_dims[..k].iter().product();
        let post = self.level_dims[k + 1..].iter().product();
        (pre, post)
    }

    /// `Σ_paths U X U^†` (or `U^† X U`), contracted level by level from the
    /// last level; `x` is `vec(X)`.
    pub fn cp_apply(&self, x: &[C64], adjoint: bool) -> Vec<C64> {
        let n = self.dim();
        assert_eq!(x.len(), n * n, "cp_apply: input length");
        let (row_op, col_op) = if adjoint {
            (FactorOp::Adjoint, FactorOp::Transpose)
        } else {
            (FactorOp::Plain, FactorOp::Conj)
        };
        let mut tmp = vec![ZERO; n * n];
        let mut result = vec![ZERO; n * n];
        let mut result_touched = false;
        // accumulated per-state blocks of the boundary below; None = x everywhere
        let mut cur: Option<Vec<Option<Vec<C64>>>> = None;
        for k in (0..self.levels.len()).rev() {
            let (pre, post) = self.mode_split(k);
            let mut next: Vec<Option<Vec<C64>>> = vec![None; if k == 0 { 0 } else { self.states[k] }];
            for e in &self.levels[k] {
                let src: &[C64] = match &cur {
                    None => x,
                    Some(blocks) => match &blocks[e.to] {
                        Some(b) => b,
                        None => continue,
                    },
                };
                mode_product(&e.factor, row_op, ONE, src, &mut tmp, pre, post * n, false);
                let (dst, acc) = if k == 0 {
                    let acc = result_touched;
                    result_touched = true;
                    (&mut result, acc)
                } else {
                    let slot = &mut next[e.from];
                    let acc = slot.is_some();
                    (slot.get_or_insert_with(|| vec![ZERO; n * n]), acc)
                };
                mode_product(&e.factor, col_op, ONE, &tmp, dst, n * pre, post, acc);
            }
            cur = Some(next);
        }
        result
    }
}

impl TermFamily for PathFamily {
    fn term_dim(&self) -> usize {
        self.dim()
    }

    fn term_count(&self) -> usize {
        self.path_count()
    }

    fn apply_all(&self, x: &[C64], batch: usize, adjoint: bool) -> Vec<C64> {
        let n = self.dim();
        assert_eq!(x.len(), n * batch, "apply_all: input length");
        let op = if adjoint { FactorOp::Adjoint } else { FactorOp::Plain };
        let mut partials: Vec<(usize, Vec<C64>)> = Vec::new();
        for (k, edges) in self.levels.iter().enumerate() {
            let (pre, post) = self.mode_split(k);
            let mut next = Vec::new();
            let run = |src: &[C64], e: &NetworkEdge, next: &mut Vec<(usize, Vec<C64>)>| {
                let mut out = vec![ZERO; n * batch];
                mode_product(&e.factor, op, ONE, src, &mut out, pre, post * batch, false);
                next.push((e.to, out));
            };
            if k == 0 {
                for e in edges {
                    run(x, e, &mut next);
                }
            } else {
                for (state, v) in &partials {
                    for e in edges.iter().filter(|e| e.from == *state) {
                        run(v, e, &mut next);
                    }
                }
            }
            partials = next;
        }
        let mut out = Vec::with_capacity(partials.len() * n * batch);
        for (_, v) in partials {
            out.extend(v);
        }
        out
    }
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
enum KrausRepr {
    Terms(Vec<KroneckerChain>),
    Network(PathFamily),
}

/// `X ↦ Σ_j U_j X U_j^†` on `N x N` matrices.
#[derive(Clone, Debug)]
pub struct CPMapOperator {
    dim: usize,
    repr: KrausRepr,
}

impl CPMapOperator {
    pub fn from_terms(terms: Vec<KroneckerChain>) -> Result<Self> {
        let first = terms
            .first()
            .ok_or_else(|| LabError::invalid("kraus_terms", "need at least one Kraus term"))?;
        let dim = first.rows();
        for t in &terms {
            if t.rows() != dim || t.cols() != dim {
                return Err(LabError::invalid("kraus_terms", format!("all terms must be {dim}x{dim}")));
            }
        }
        Ok(CPMapOperator {
            dim,
            repr: KrausRepr::Terms(terms),
        })
    }

    /// All paths of the network as Kraus terms, applied through the
    /// level-by-level contraction.
    pub fn from_network(family: PathFamily) -> Self {
        CPMapOperator {
            dim: family.dim(),
            repr: KrausRepr::Network(family),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Tensor factors of a product-structured network map.
    pub fn product_factors(&self) -> Option<Vec<CPMapOperator>> {
        match &self.repr {
            KrausRepr::Network(f) => f
                .product_factors()
                .map(|parts| parts.into_iter().map(CPMapOperator::from_network).collect()),
            KrausRepr::Terms(_) => None,
        }
    }

    pub fn kraus_count(&self) -> usize {
        match &self.repr {
            KrausRepr::Terms(t) => t.len(),
            KrausRepr::Network(f) => f.path_count(),
        }
    }

    pub fn kraus_terms(&self) -> Vec<KroneckerChain> {
        match &self.repr {
            KrausRepr::Terms(t) => t.clone(),
            KrausRepr::Network(f) => f.terms(),
        }
    }

    /// `N^{-1} tr Σ_j U_j U_j^†`.
    pub fn trace_bound(&self) -> f64 {
        match &self.repr {
            KrausRepr::Terms(t) => {
                t.iter()
                    .map(|c| c.factors().iter().map(|f| f.frobenius_norm_sqr()).product::<f64>())
                    .sum::<f64>()
                    / self.dim as f64
            }
            KrausRepr::Network(f) => f.trace_bound(),
        }
    }

    /// Action on `vec(X)`.
    pub fn apply_vec(&self, x: &[C64], adjoint: bool) -> Vec<C64> {
        let n = self.dim;
        match &self.repr {
            KrausRepr::Network(f) => f.cp_apply(x, adjoint),
            KrausRepr::Terms(terms) => {
                let (row_op, col_op) = if adjoint {
                    (FactorOp::Adjoint, FactorOp::Transpose)
                } else {
                    (FactorOp::Plain, FactorOp::Conj)
                };
                let mut out = vec![ZERO; n * n];
                for u in terms {
                    let left = u.apply_embedded(x, 1, n, row_op);
                    let both = u.apply_embedded(&left, n, 1, col_op);
                    axpy(ONE, &both, &mut out);
                }
                out
            }
        }
    }
}

impl LinearOperator for CPMapOperator {
    fn rows(&self) -> usize {
        self.dim * self.dim
    }

    fn cols(&self) -> usize {
        self.dim * self.dim
    }

    fn apply_into(&self, x: &[C64], y: &mut [C64]) {
        y.copy_from_slice(&self.apply_vec(x, false));
    }

    fn apply_adjoint_into(&self, x: &[C64], y: &mut [C64]) {
        y.copy_from_slice(&self.apply_vec(x, true));
    }
}

pub fn cpmap_apply(map: &CPMapOperator, x: &ComplexMatrix) -> Result<ComplexMatrix> {
    check_len("cpmap_apply (rows)", map.dim, x.rows())?;
    check_len("cpmap_apply (cols)", map.dim, x.cols())?;
    Ok(ComplexMatrix::from_vec_unchecked(
        map.dim,
        map.dim,
        map.apply_vec(x.data(), false),
    ))
}

// ---------------------------------------------------------------------------

/// Partition of the `d` index positions of a family `{Y_i : i ∈ [m]^d}`
/// into row positions, an optional held position and column positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlattenSpec {
    pub m: usize,
    pub d: usize,
    pub n: usize,
    pub row_group: Vec<usize>,
    pub middle: Option<usize>,
    pub col_group: Vec<usize>,
}

impl FlattenSpec {
    /// Even `d`: rows are the first `d/2` positions. Odd `d`: rows are the
    /// first `(d-1)/2`, the next position is held, the rest are columns.
    pub fn standard(m: usize, d: usize, n: usize) -> Self {
        let h = d / 2;
        let (middle, col_start) = if d.is_multiple_of(2) { (None, h) } else { (Some(h), h + 1) };
        FlattenSpec {
            m,
            d,
            n,
            row_group: (0..h).collect(),
            middle,
            col_group: (col_start..d).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.d];
        let all = self
            .row_group
            .iter()
            .chain(self.middle.iter())
            .chain(self.col_group.iter());
        for &pos in all {
            if pos >= self.d || seen[pos] {
                return Err(LabError::invalid(
                    "flatten partition",
                    format!("position {pos} is out of range or repeated"),
                ));
            }
            seen[pos] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(LabError::invalid("flatten partition", "every position must be assigned"));
        }
        Ok(())
    }
}

/// Block matrices with `(R, C)` block `Y_i`, where `R`, `C` are the row and
/// column sub-multi-indices; one matrix per value of the held position.
pub fn flatten_family(family: &NaiveFamily, spec: &FlattenSpec) -> Result<Vec<ComplexMatrix>> {
    spec.validate()?;
    let fs = &family.spec;
    if fs.m != spec.m || fs.d != spec.d || fs.n != spec.n {
        return Err(LabError::invalid("flatten spec", "shape does not match the family"));
    }
    let (m, n) = (spec.m, spec.n);
    let nr = m.pow(spec.row_group.len() as u32);
    let nc = m.pow(spec.col_group.len() as u32);
    let held = if spec.middle.is_some() { m } else { 1 };
    let mut out = Vec::with_capacity(held);
    for h in 0..held {
        let mut mat = ComplexMatrix::zeros(n * nr, n * nc);
        let cols = n * nc;
        let mut index = vec![0usize; spec.d];
        for r in 0..nr {
            for (pos, v) in spec.row_group.iter().zip(multi_index(r, m, spec.row_group.len())) {
                index[*pos] = v;
            }
            if let Some(mid) = spec.middle {
                index[mid] = h;
            }
            for c in 0..nc {
                for (pos, v) in spec.col_group.iter().zip(multi_index(c, m, spec.col_group.len())) {
                    index[*pos] = v;
                }
                let y = family.members()[linear_index(&index, m)].as_ref();
                let data = mat.data_mut();
                for a in 0..n {
                    let row = r * n + a;
                    data[row * cols + c * n..row * cols + (c + 1) * n]
                        .copy_from_slice(&y.data()[a * n..(a + 1) * n]);
                }
            }
        }
        out.push(mat);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::{sample_chain_family, sample_naive_family, ChainFamilySpec, NaiveFamilySpec};
    use crate::matrix::madd_count;
    use crate::rng::{derive_stream, SeedPath};

    fn rand_mat(r: usize, c: usize, seed: u64) -> ComplexMatrix {
        let mut s = derive_stream(&SeedPath::new(seed, [r as u64, c as u64]));
        ComplexMatrix::from_fn(r, c, |_, _| s.complex_standard())
    }

    fn rand_vec(n: usize, seed: u64) -> Vec<C64> {
        let mut s = derive_stream(&SeedPath::new(seed, [n as u64]));
        (0..n).map(|_| s.complex_standard()).collect()
    }

    fn max_diff(a: &[C64], b: &[C64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn identity_chain_is_identity() {
        let c = KroneckerChain::from_matrices(vec![ComplexMatrix::identity(2), ComplexMatrix::identity(3)]).unwrap();
        let v = rand_vec(6, 1);
        assert_eq!(chain_apply(&c, &v).unwrap(), v);
        assert_eq!(chain_apply_adjoint(&c, &v).unwrap(), v);
        assert!(chain_apply(&c, &v[..5]).is_err());
    }

    #[test]
    fn chain_matches_materialization() {
        let a = rand_mat(2, 2, 1);
        let b = rand_mat(3, 3, 2);
        let c = KroneckerChain::from_matrices(vec![a.clone(), b.clone()]).unwrap();
        let v = rand_vec(6, 3);
        let dense = a.kron(&b);
        assert!(max_diff(&chain_apply(&c, &v).unwrap(), &dense.matvec(&v).unwrap()) < 1e-12);
        assert!(max_diff(&chain_apply_adjoint(&c, &v).unwrap(), &dense.adjoint().matvec(&v).unwrap()) < 1e-12);
    }

    #[test]
    fn single_factor_chain_is_matvec() {
        let a = rand_mat(4, 4, 5);
        let c = KroneckerChain::from_matrices(vec![a.clone()]).unwrap();
        let v = rand_vec(4, 6);
        assert!(max_diff(&chain_apply(&c, &v).unwrap(), &a.matvec(&v).unwrap()) < 1e-12);
    }

    #[test]
    fn chain_cost_is_linear_in_factor_sizes() {
        let sizes = [8usize, 4, 16];
        let c = KroneckerChain::from_matrices(sizes.iter().enumerate().map(|(i, &n)| rand_mat(n, n, i as u64)).collect())
            .unwrap();
        let n: usize = sizes.iter().product();
        let v = rand_vec(n, 9);
        let before = madd_count();
        chain_apply(&c, &v).unwrap();
        let used = madd_count() - before;
        assert_eq!(used as usize, n * sizes.iter().sum::<usize>());
    }

    #[test]
    fn empty_opsum_is_zero() {
        let s = OperatorSum::new(3, 3);
        assert_eq!(opsum_apply(&s, &rand_vec(3, 1)).unwrap(), vec![ZERO; 3]);
    }

    #[test]
    fn opsum_with_matrix_coefficient() {
        let a = rand_mat(2, 2, 11);
        let g = rand_mat(3, 3, 12);
        let s = OperatorSum::new(6, 6)
            .with_term(Coefficient::Matrix(a.clone()), KroneckerChain::from_matrices(vec![g.clone()]).unwrap())
            .unwrap();
        let v = rand_vec(6, 13);
        assert!(max_diff(&opsum_apply(&s, &v).unwrap(), &a.kron(&g).matvec(&v).unwrap()) < 1e-12);
        assert!(OperatorSum::new(5, 5)
            .with_term(Coefficient::Scalar(ONE), KroneckerChain::from_matrices(vec![g]).unwrap())
            .is_err());
    }

    #[test]
    fn cpmap_identity_and_definition() {
        let id = CPMapOperator::from_terms(vec![KroneckerChain::from_matrices(vec![ComplexMatrix::identity(3)]).unwrap()])
            .unwrap();
        let x = rand_mat(3, 3, 1);
        assert!(cpmap_apply(&id, &x).unwrap().max_abs_diff(&x) < 1e-14);

        let u = rand_mat(3, 3, 2);
        let map = CPMapOperator::from_terms(vec![KroneckerChain::from_matrices(vec![u.clone()]).unwrap()]).unwrap();
        let uu = u.matmul(&u.adjoint()).unwrap();
        assert!(cpmap_apply(&map, &ComplexMatrix::identity(3)).unwrap().max_abs_diff(&uu) < 1e-12);
    }

    #[test]
    fn network_cpmap_matches_term_loop() {
        let spec = ChainFamilySpec::new(2, 4, vec![2, 3, 2], SeedPath::new(3, [1])).unwrap();
        let fam = sample_chain_family(&spec).unwrap();
        let net = PathFamily::chain(&fam);
        assert_eq!(net.path_count(), 16);
        let fast = CPMapOperator::from_network(net.clone());
        let slow = CPMapOperator::from_terms(net.terms()).unwrap();
        let x = rand_vec(144, 4);
        for adjoint in [false, true] {
            let a = fast.apply_vec(&x, adjoint);
            let b = slow.apply_vec(&x, adjoint);
            let scale = b.iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(max_diff(&a, &b) < 1e-12 * scale);
        }
        assert!((fast.trace_bound() - slow.trace_bound()).abs() < 1e-12 * slow.trace_bound());
    }

    #[test]
    fn chain_terms_follow_multi_index_order() {
        let spec = ChainFamilySpec::new(2, 3, vec![2, 3], SeedPath::new(5, [0])).unwrap();
        let fam = sample_chain_family(&spec).unwrap();
        let terms = PathFamily::chain(&fam).terms();
        assert_eq!(terms.len(), 8);
        for (lin, t) in terms.iter().enumerate() {
            let i = multi_index(lin, 2, 3);
            assert_eq!(t.factors()[0].as_ref(), fam.get(0, i[0], i[1]).as_ref());
            assert_eq!(t.factors()[1].as_ref(), fam.get(1, i[1], i[2]).as_ref());
        }
    }

    #[test]
    fn apply_all_matches_terms() {
        let spec = ChainFamilySpec::new(3, 3, vec![3, 2], SeedPath::new(6, [0])).unwrap();
        let net = PathFamily::chain(&sample_chain_family(&spec).unwrap());
        let terms = net.terms();
        let batch = 2;
        let x = rand_vec(6 * batch, 7);
        for adjoint in [false, true] {
            let fast = net.apply_all(&x, batch, adjoint);
            let slow = terms.as_slice().apply_all(&x, batch, adjoint);
            assert_eq!(fast.len(), 27 * 6 * batch);
            assert!(max_diff(&fast, &slow) < 1e-12);
        }
    }

    #[test]
    fn flatten_layout_d2() {
        let spec = NaiveFamilySpec::new(2, 2, 1, SeedPath::new(8, [0])).unwrap();
        let fam = sample_naive_family(&spec).unwrap();
        let flat = flatten_family(&fam, &FlattenSpec::standard(2, 2, 1)).unwrap();
        assert_eq!(flat.len(), 1);
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(flat[0].get(i, j), fam.get(&[i, j]).get(0, 0));
            }
        }
    }

    #[test]
    fn flatten_odd_counts() {
        let spec = NaiveFamilySpec::new(2, 3, 3, SeedPath::new(9, [0])).unwrap();
        let fam = sample_naive_family(&spec).unwrap();
        let flat = flatten_family(&fam, &FlattenSpec::standard(2, 3, 3)).unwrap();
        assert_eq!(flat.len(), 2);
        assert!(flat.iter().all(|f| f.rows() == 6 && f.cols() == 6));
        // held index 1, row index 0, column index 1 -> Y_(0,1,1)
        assert_eq!(flat[1].get(0, 3), fam.get(&[0, 1, 1]).get(0, 0));

        let mut bad = FlattenSpec::standard(2, 3, 3);
        bad.col_group = vec![1];
        assert!(flatten_family(&fam, &bad).is_err());
    }
}

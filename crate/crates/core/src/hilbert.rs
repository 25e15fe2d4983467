//! Finite-dimensional representation of a separable Hilbert space `H` and of
//! the product space `H^P`.
//!
//! Elements of `H` are coefficient vectors with respect to a fixed orthonormal
//! basis `e_1, ..., e_d`. Operators are `d x d` arrays laid out so that
//! `A[(j, i)] = <A e_i, e_j>`, which makes operator application ordinary
//! matrix-vector multiplication. Block operators are grids of such arrays and
//! act on stacked coefficient vectors.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for the self-adjointness check in [`spectral_decomp`].
pub const SELF_ADJOINT_TOL: f64 = 1e-8;

/// An operator counts as zero when its HS norm is at or below this value.
pub const ZERO_OPERATOR_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    /// `1, sqrt(2) cos(2 pi k t), sqrt(2) sin(2 pi k t), ...` on `[0, 1]`.
    Fourier,
    /// An unspecified orthonormal basis; only coefficient algebra is available.
    Abstract,
}

/// Truncation dimension and kind of the orthonormal basis of `H`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSpec {
    d: usize,
    kind: BasisKind,
}

impl BasisSpec {
    pub fn new(d: usize, kind: BasisKind) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidParameter("basis dimension d must be >= 1".into()));
        }
        Ok(Self { d, kind })
    }

    pub fn fourier(d: usize) -> Result<Self> {
        Self::new(d, BasisKind::Fourier)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    /// Value of the `j`-th Fourier basis function (1-based) at `t`.
    pub fn fourier_eval(j: usize, t: f64) -> f64 {
        debug_assert!(j >= 1);
        if j == 1 {
            return 1.0;
        }
        let k = (j / 2) as f64;
        if j % 2 == 0 {
            2f64.sqrt() * (2.0 * PI * k * t).cos()
        } else {
            2f64.sqrt() * (2.0 * PI * k * t).sin()
        }
    }
}

/// An element of the discretized `H`: its first `d` basis coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionRep {
    coeffs: DVector<f64>,
}

impl FunctionRep {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self {
            coeffs: DVector::from_vec(coeffs),
        }
    }

    pub fn from_vector(coeffs: DVector<f64>) -> Self {
        Self { coeffs }
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            coeffs: DVector::zeros(d),
        }
    }

    /// The `j`-th basis element (0-based).
    pub fn basis(d: usize, j: usize) -> Self {
        let mut coeffs = DVector::zeros(d);
        coeffs[j] = 1.0;
        Self { coeffs }
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &DVector<f64> {
        &self.coeffs
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.coeffs
    }

    /// Norm via Parseval.
    pub fn norm(&self) -> f64 {
        self.coeffs.norm()
    }

    pub fn inner(&self, other: &FunctionRep) -> Result<f64> {
        check_dim(self.dim(), other.dim(), "inner product")?;
        Ok(self.coeffs.dot(&other.coeffs))
    }
}

/// A Hilbert-Schmidt operator on the discretized `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorRep {
    entries: DMatrix<f64>,
}

impl OperatorRep {
    pub fn from_matrix(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "operator array must be square, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        Ok(Self { entries })
    }

    /// Builds an operator from rows; `rows[j][i] = <A e_i, e_j>`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if d == 0 || rows.iter().any(|r| r.len() != d) {
            return Err(Error::DimensionMismatch(
                "operator rows must form a non-empty square array".into(),
            ));
        }
        Ok(Self {
            entries: DMatrix::from_fn(d, d, |j, i| rows[j][i]),
        })
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.entries.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            entries: DMatrix::zeros(d, d),
        }
    }

    pub fn identity(d: usize) -> Self {
        Self {
            entries: DMatrix::identity(d, d),
        }
    }

    pub fn diagonal(values: &[f64]) -> Self {
        Self {
            entries: DMatrix::from_diagonal(&DVector::from_column_slice(values)),
        }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn apply(&self, x: &FunctionRep) -> Result<FunctionRep> {
        check_dim(self.dim(), x.dim(), "operator application")?;
        Ok(FunctionRep::from_vector(&self.entries * x.coeffs()))
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &OperatorRep) -> Result<OperatorRep> {
        check_dim(self.dim(), other.dim(), "operator composition")?;
        Ok(Self {
            entries: &self.entries * &other.entries,
        })
    }

    pub fn adjoint(&self) -> OperatorRep {
        Self {
            entries: self.entries.transpose(),
        }
    }

    pub fn scale(&self, c: f64) -> OperatorRep {
        Self {
            entries: &self.entries * c,
        }
    }

    pub fn add(&self, other: &OperatorRep) -> Result<OperatorRep> {
        check_dim(self.dim(), other.dim(), "operator sum")?;
        Ok(Self {
            entries: &self.entries + &other.entries,
        })
    }

    pub fn sub(&self, other: &OperatorRep) -> Result<OperatorRep> {
        check_dim(self.dim(), other.dim(), "operator difference")?;
        Ok(Self {
            entries: &self.entries - &other.entries,
        })
    }

    pub fn hs_norm(&self) -> f64 {
        self.entries.norm()
    }

    pub fn op_norm(&self) -> f64 {
        largest_singular_value(&self.entries)
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace()
    }

    pub fn is_zero(&self) -> bool {
        self.hs_norm() <= ZERO_OPERATOR_TOL
    }
}

/// The rank-one operator `x ⊗ y = <x, ·> y`.
pub fn tensor_product(x: &FunctionRep, y: &FunctionRep) -> Result<OperatorRep> {
    check_dim(x.dim(), y.dim(), "tensor product")?;
    Ok(OperatorRep {
        entries: y.coeffs() * x.coeffs().transpose(),
    })
}

/// A grid of `d x d` operators acting on stacked coefficient vectors.
///
/// Square grids (`rows == cols == P`) are operators on `H^P`; rectangular
/// grids appear as the block rows and principal sub-blocks used during
/// operator extraction. Block indices are 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockOp {
    rows: usize,
    cols: usize,
    d: usize,
    blocks: Vec<DMatrix<f64>>,
}

impl BlockOp {
    pub fn zeros(rows: usize, cols: usize, d: usize) -> Self {
        Self {
            rows,
            cols,
            d,
            blocks: vec![DMatrix::zeros(d, d); rows * cols],
        }
    }

    pub fn identity(p: usize, d: usize) -> Self {
        let mut out = Self::zeros(p, p, d);
        for i in 0..p {
            out.blocks[i * p + i] = DMatrix::identity(d, d);
        }
        out
    }

    /// Block-diagonal operator with the given diagonal blocks.
    pub fn block_diagonal(diag: &[OperatorRep]) -> Result<Self> {
        let p = diag.len();
        let d = diag
            .first()
            .map(|b| b.dim())
            .ok_or_else(|| Error::InvalidParameter("empty block diagonal".into()))?;
        let mut out = Self::zeros(p, p, d);
        for (i, b) in diag.iter().enumerate() {
            out.set_block(i, i, b)?;
        }
        Ok(out)
    }

    pub fn from_flat(rows: usize, cols: usize, d: usize, flat: &DMatrix<f64>) -> Result<Self> {
        if flat.nrows() != rows * d || flat.ncols() != cols * d {
            return Err(Error::DimensionMismatch(format!(
                "flat array {}x{} does not match {rows}x{cols} grid of {d}x{d} blocks",
                flat.nrows(),
                flat.ncols()
            )));
        }
        let mut blocks = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                blocks.push(flat.view((i * d, j * d), (d, d)).into_owned());
            }
        }
        Ok(Self { rows, cols, d, blocks })
    }

    pub fn to_flat(&self) -> DMatrix<f64> {
        let d = self.d;
        let mut flat = DMatrix::zeros(self.rows * d, self.cols * d);
        for i in 0..self.rows {
            for j in 0..self.cols {
                flat.view_mut((i * d, j * d), (d, d)).copy_from(self.block(i, j));
            }
        }
        flat
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn block_dim(&self) -> usize {
        self.d
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn block(&self, i: usize, j: usize) -> &DMatrix<f64> {
        &self.blocks[i * self.cols + j]
    }

    pub fn block_op(&self, i: usize, j: usize) -> OperatorRep {
        OperatorRep {
            entries: self.block(i, j).clone(),
        }
    }

    pub fn set_block(&mut self, i: usize, j: usize, op: &OperatorRep) -> Result<()> {
        if i >= self.rows || j >= self.cols {
            return Err(Error::InvalidParameter(format!(
                "block ({i}, {j}) outside {}x{} grid",
                self.rows, self.cols
            )));
        }
        check_dim(self.d, op.dim(), "block assignment")?;
        let cols = self.cols;
        self.blocks[i * cols + j] = op.entries.clone();
        Ok(())
    }

    pub(crate) fn block_mut(&mut self, i: usize, j: usize) -> &mut DMatrix<f64> {
        let cols = self.cols;
        &mut self.blocks[i * cols + j]
    }

    /// Blockwise action: component `i` of the output is `Σ_j B_ij(v_j)`.
    pub fn apply(&self, v: &[FunctionRep]) -> Result<Vec<FunctionRep>> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch(format!(
                "block operator has {} block columns, got {} components",
                self.cols,
                v.len()
            )));
        }
        for x in v {
            check_dim(self.d, x.dim(), "block application")?;
        }
        Ok((0..self.rows)
            .map(|i| {
                let mut acc = DVector::zeros(self.d);
                for (j, x) in v.iter().enumerate() {
                    acc += self.block(i, j) * x.coeffs();
                }
                FunctionRep::from_vector(acc)
            })
            .collect())
    }

    /// Action on a stacked coefficient vector of length `cols * d`.
    pub fn apply_stacked(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let d = self.d;
        if v.len() != self.cols * d {
            return Err(Error::DimensionMismatch(format!(
                "stacked vector of length {} for {} block columns of size {d}",
                v.len(),
                self.cols
            )));
        }
        let mut out = DVector::zeros(self.rows * d);
        for i in 0..self.rows {
            let mut seg = out.rows_mut(i * d, d);
            for j in 0..self.cols {
                seg.gemv(1.0, self.block(i, j), &v.rows(j * d, d), 1.0);
            }
        }
        Ok(out)
    }

    /// Blockwise composition `self ∘ other`.
    pub fn compose(&self, other: &BlockOp) -> Result<BlockOp> {
        if self.cols != other.rows || self.d != other.d {
            return Err(Error::DimensionMismatch(format!(
                "cannot compose {}x{} grid (d={}) with {}x{} grid (d={})",
                self.rows, self.cols, self.d, other.rows, other.cols, other.d
            )));
        }
        let mut out = BlockOp::zeros(self.rows, other.cols, self.d);
        for i in 0..self.rows {
            for j in 0..other.cols {
                let target = out.block_mut(i, j);
                for k in 0..self.cols {
                    target.gemm(1.0, self.block(i, k), other.block(k, j), 1.0);
                }
            }
        }
        Ok(out)
    }

    pub fn adjoint(&self) -> BlockOp {
        let mut out = BlockOp::zeros(self.cols, self.rows, self.d);
        for i in 0..self.rows {
            for j in 0..self.cols {
                *out.block_mut(j, i) = self.block(i, j).transpose();
            }
        }
        out
    }

    pub fn add(&self, other: &BlockOp) -> Result<BlockOp> {
        self.check_same_shape(other)?;
        Ok(self.zip_blocks(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &BlockOp) -> Result<BlockOp> {
        self.check_same_shape(other)?;
        Ok(self.zip_blocks(other, |a, b| a - b))
    }

    pub fn scale(&self, c: f64) -> BlockOp {
        self.with_blocks(self.blocks.iter().map(|b| b * c).collect())
    }

    /// `j`-fold composition; `power(0)` is the identity.
    pub fn power(&self, j: usize) -> Result<BlockOp> {
        if !self.is_square() {
            return Err(Error::DimensionMismatch("power of a non-square block grid".into()));
        }
        let mut acc = BlockOp::identity(self.rows, self.d);
        for _ in 0..j {
            acc = self.compose(&acc)?;
        }
        Ok(acc)
    }

    /// Largest singular value of the flattened array.
    pub fn op_norm(&self) -> f64 {
        largest_singular_value(&self.to_flat())
    }

    pub fn hs_norm(&self) -> f64 {
        self.blocks.iter().map(|b| b.norm_squared()).sum::<f64>().sqrt()
    }

    pub fn hs_distance(&self, other: &BlockOp) -> Result<f64> {
        Ok(self.sub(other)?.hs_norm())
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.block(i, i).trace()).sum()
    }

    fn with_blocks(&self, blocks: Vec<DMatrix<f64>>) -> BlockOp {
        BlockOp {
            rows: self.rows,
            cols: self.cols,
            d: self.d,
            blocks,
        }
    }

    fn zip_blocks(&self, other: &BlockOp, f: impl Fn(&DMatrix<f64>, &DMatrix<f64>) -> DMatrix<f64>) -> BlockOp {
        self.with_blocks(self.blocks.iter().zip(&other.blocks).map(|(a, b)| f(a, b)).collect())
    }

    fn check_same_shape(&self, other: &BlockOp) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols || self.d != other.d {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} grid (d={}) vs {}x{} grid (d={})",
                self.rows, self.cols, self.d, other.rows, other.cols, other.d
            )));
        }
        Ok(())
    }
}

/// Free-function forms of the block algebra.
pub fn apply_block(b: &BlockOp, v: &[FunctionRep]) -> Result<Vec<FunctionRep>> {
    b.apply(v)
}

pub fn compose_block(a: &BlockOp, b: &BlockOp) -> Result<BlockOp> {
    a.compose(b)
}

pub fn operator_norm(b: &BlockOp) -> f64 {
    b.op_norm()
}

pub fn hs_norm(b: &BlockOp) -> f64 {
    b.hs_norm()
}

pub fn hs_distance(a: &BlockOp, b: &BlockOp) -> Result<f64> {
    a.hs_distance(b)
}

/// Tikhonov-regularized inverse `A* (A A* + θ I)^{-1}`.
pub fn tikhonov_inverse(a: &BlockOp, theta: f64) -> Result<BlockOp> {
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "Tikhonov parameter must be positive, got {theta}"
        )));
    }
    let flat = a.to_flat();
    let n = flat.nrows();
    let mut gram = &flat * flat.transpose();
    for i in 0..n {
        gram[(i, i)] += theta;
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Numerical("regularized Gram operator is not positive definite".into()))?;
    // (A A* + θI)^{-1} A is symmetric-solve friendly; its transpose is the inverse we want.
    let solved = chol.solve(&flat);
    BlockOp::from_flat(a.cols(), a.rows(), a.block_dim(), &solved.transpose())
}

/// Eigen-decomposition of a self-adjoint square block operator.
#[derive(Debug, Clone)]
pub struct SpectralDecomp {
    /// Non-increasing.
    pub eigenvalues: Vec<f64>,
    /// Column `k` is the stacked eigenvector for `eigenvalues[k]`.
    pub eigenvectors: DMatrix<f64>,
    blocks: usize,
    d: usize,
}

impl SpectralDecomp {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `Σ_k λ_k v_k ⊗ v_k`.
    pub fn reconstruct(&self) -> BlockOp {
        let scaled = DMatrix::from_fn(self.dim(), self.dim(), |r, c| {
            self.eigenvectors[(r, c)] * self.eigenvalues[c]
        });
        let flat = scaled * self.eigenvectors.transpose();
        BlockOp::from_flat(self.blocks, self.blocks, self.d, &flat).expect("shape preserved")
    }
}

/// Symmetric eigen-decomposition with eigenvalues sorted non-increasingly.
///
/// With `assume_self_adjoint` set the input must be self-adjoint to
/// [`SELF_ADJOINT_TOL`] in HS norm; otherwise its self-adjoint part
/// `(A + A*)/2` is decomposed.
pub fn spectral_decomp(a: &BlockOp, assume_self_adjoint: bool) -> Result<SpectralDecomp> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch(
            "spectral decomposition of a non-square block grid".into(),
        ));
    }
    let flat = a.to_flat();
    let asym = (&flat - flat.transpose()).norm();
    if assume_self_adjoint && asym > SELF_ADJOINT_TOL {
        return Err(Error::NotSelfAdjoint(asym));
    }
    let sym = (&flat + flat.transpose()) * 0.5;
    if sym.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("spectral decomposition input".into()));
    }
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
    let eigenvalues = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let eigenvectors = DMatrix::from_fn(flat.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(SpectralDecomp {
        eigenvalues,
        eigenvectors,
        blocks: a.rows(),
        d: a.block_dim(),
    })
}

/// Orthogonal projection onto the span of the `k` leading eigenvectors.
pub fn projector_onto_leading(s: &SpectralDecomp, k: usize) -> Result<BlockOp> {
    if k == 0 || k > s.dim() {
        return Err(Error::InvalidParameter(format!(
            "projection rank {k} outside 1..={}",
            s.dim()
        )));
    }
    let v = s.eigenvectors.columns(0, k);
    BlockOp::from_flat(s.blocks, s.blocks, s.d, &(v * v.transpose()))
}

/// Discretizes the integral operator `x ↦ ∫ g(s, ·) x(s) ds` on `[0, 1]`.
///
/// Entries `A[j][i] = ∬ g(s, t) e_i(s) e_j(t) ds dt` are computed with the
/// tensor-product trapezoid rule on `quad_points` equispaced nodes.
pub fn kernel_to_operator<G>(g: G, spec: &BasisSpec, quad_points: usize) -> Result<OperatorRep>
where
    G: Fn(f64, f64) -> f64,
{
    if spec.kind() != BasisKind::Fourier {
        return Err(Error::InvalidParameter(
            "kernel discretization needs a Fourier basis".into(),
        ));
    }
    let d = spec.dim();
    if quad_points < 2 * d || quad_points < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least {} quadrature points, got {quad_points}",
            2 * d
        )));
    }
    let n = quad_points;
    let h = 1.0 / (n - 1) as f64;
    let nodes: Vec<f64> = (0..n).map(|a| a as f64 * h).collect();
    let weight = |a: usize| if a == 0 || a == n - 1 { 0.5 * h } else { h };

    // b[(j, a)] = w_a e_j(t_a)
    let b = DMatrix::from_fn(d, n, |j, a| weight(a) * BasisSpec::fourier_eval(j + 1, nodes[a]));
    let mut kernel = DMatrix::zeros(n, n);
    for a in 0..n {
        for c in 0..n {
            let v = g(nodes[a], nodes[c]);
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("kernel at ({}, {})", nodes[a], nodes[c])));
            }
            kernel[(a, c)] = v;
        }
    }
    // kernel[(a, c)] = g(s_a, t_c); A = B g^T B^T
    Ok(OperatorRep {
        entries: &b * kernel.transpose() * b.transpose(),
    })
}

pub(crate) fn largest_singular_value(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    // via the Gram matrix: the SVD can return NaN when entries span hundreds
    // of orders of magnitude, the symmetric eigensolver does not
    let scale = m.amax();
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    let a = m / scale;
    let gram = if a.nrows() < a.ncols() {
        &a * a.transpose()
    } else {
        a.transpose() * &a
    };
    gram.symmetric_eigenvalues().max().max(0.0).sqrt() * scale
}

pub(crate) fn check_dim(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch(format!("{what}: dimension {a} vs {b}")));
    }
    Ok(())
}

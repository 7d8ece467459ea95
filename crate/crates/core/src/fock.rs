//! Truncated Fock space `h (x) F` over a [`PointSpace`].
//!
//! Vectors hold the raw coefficients `chi(theta)` laid out block by block in
//! chain enumeration order. The Hilbert structure carries the measure:
//! `<u|v> = sum_theta w(theta) <u(theta)|v(theta)>`, so the Hilbert adjoint of
//! a matrix `A` in these coordinates is `W^-1 A^H W` with `W = diag(w)`.

use crate::chainspace::{Chain, PointSpace};
use crate::C64;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub type FockVector = DVector<C64>;
pub type FockOperator = DMatrix<C64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FockError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("Q field block at point {0} has the wrong shape")]
    QShape(usize),
    #[error("weight function must be positive at every point")]
    NonPositiveWeight,
}

/// Per-point positive weight `q(x)`, extended multiplicatively to chains.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightFunction(pub Vec<f64>);

impl WeightFunction {
    pub fn constant(space: &PointSpace, c: f64) -> Self {
        WeightFunction(vec![c; space.n()])
    }

    pub fn ones(space: &PointSpace) -> Self {
        Self::constant(space, 1.0)
    }

    pub fn validate(&self, space: &PointSpace) -> Result<(), FockError> {
        if self.0.len() != space.n() {
            return Err(FockError::Dimension {
                expected: space.n(),
                got: self.0.len(),
            });
        }
        if self.0.iter().any(|&v| v.is_nan() || v <= 0.0) {
            return Err(FockError::NonPositiveWeight);
        }
        Ok(())
    }

    pub fn on_chain(&self, c: Chain) -> f64 {
        c.members().map(|x| self.0[x]).product()
    }

    pub fn recip(&self) -> Self {
        WeightFunction(self.0.iter().map(|v| 1.0 / v).collect())
    }

    pub fn add(&self, o: &WeightFunction) -> Self {
        WeightFunction(self.0.iter().zip(&o.0).map(|(a, b)| a + b).collect())
    }
}

/// Per-point operator `Q(x)` on `k_x`.
#[derive(Clone, Debug, PartialEq)]
pub struct QField(pub Vec<DMatrix<C64>>);

impl QField {
    pub fn identity(space: &PointSpace) -> Self {
        QField(
            space
                .points()
                .iter()
                .map(|p| DMatrix::identity(p.multiplicity, p.multiplicity))
                .collect(),
        )
    }

    pub fn zero(space: &PointSpace) -> Self {
        QField(
            space
                .points()
                .iter()
                .map(|p| DMatrix::zeros(p.multiplicity, p.multiplicity))
                .collect(),
        )
    }

    pub fn scalar(space: &PointSpace, c: C64) -> Self {
        let mut q = Self::identity(space);
        for m in &mut q.0 {
            *m *= c;
        }
        q
    }

    pub fn validate(&self, space: &PointSpace) -> Result<(), FockError> {
        if self.0.len() != space.n() {
            return Err(FockError::Dimension {
                expected: space.n(),
                got: self.0.len(),
            });
        }
        for (x, m) in self.0.iter().enumerate() {
            let d = space.multiplicity(x);
            if m.nrows() != d || m.ncols() != d {
                return Err(FockError::QShape(x));
            }
        }
        Ok(())
    }

    pub fn at(&self, x: usize) -> &DMatrix<C64> {
        &self.0[x]
    }

    /// Pointwise product `x -> Q(x) Q'(x)`.
    pub fn compose(&self, o: &QField) -> QField {
        QField(self.0.iter().zip(&o.0).map(|(a, b)| a * b).collect())
    }

    pub fn adjoint(&self) -> QField {
        QField(self.0.iter().map(|m| m.adjoint()).collect())
    }

    pub fn neg(&self) -> QField {
        QField(self.0.iter().map(|m| -m).collect())
    }

    /// Whether every `Q(x)` satisfies `Q = Q* = Q*Q` within `tol`.
    pub fn is_orthoprojector(&self, tol: f64) -> bool {
        self.0.iter().all(|q| {
            let qa = q.adjoint();
            (q - &qa).norm() <= tol && (&qa * q - q).norm() <= tol
        })
    }

    /// `(x) Q(x)` over the chain in time order, acting on `k(chain)` only.
    pub fn tensor(&self, c: Chain) -> DMatrix<C64> {
        let mut acc = DMatrix::from_element(1, 1, C64::new(1.0, 0.0));
        for x in c.members() {
            acc = acc.kronecker(&self.0[x]);
        }
        acc
    }
}

fn check_len(space: &PointSpace, len: usize) -> Result<(), FockError> {
    if len != space.fock_dim() {
        Err(FockError::Dimension {
            expected: space.fock_dim(),
            got: len,
        })
    } else {
        Ok(())
    }
}

/// Per-basis-index measure weight `w(theta)`.
pub fn basis_weights(space: &PointSpace) -> Vec<f64> {
    let mut w = vec![0.0; space.fock_dim()];
    for &c in space.chains() {
        let o = space.fock_offset(c);
        for i in 0..space.block_dim(c) {
            w[o + i] = space.chain_weight(c);
        }
    }
    w
}

/// Chain owning each basis index.
pub fn basis_chains(space: &PointSpace) -> Vec<Chain> {
    let mut v = vec![Chain::EMPTY; space.fock_dim()];
    for &c in space.chains() {
        let o = space.fock_offset(c);
        for i in 0..space.block_dim(c) {
            v[o + i] = c;
        }
    }
    v
}

pub fn vacuum(space: &PointSpace, initial: usize) -> FockVector {
    let mut v = FockVector::zeros(space.fock_dim());
    v[initial] = C64::new(1.0, 0.0);
    v
}

/// `chi(theta)` as a slice view.
pub fn component(space: &PointSpace, chi: &FockVector, c: Chain) -> DVector<C64> {
    chi.rows(space.fock_offset(c), space.block_dim(c)).into_owned()
}

/// `(sum_theta w(theta) q(theta) |chi(theta)|^2)^(1/2)`.
pub fn weighted_norm(
    space: &PointSpace,
    chi: &FockVector,
    q: &WeightFunction,
) -> Result<f64, FockError> {
    check_len(space, chi.len())?;
    q.validate(space)?;
    let mut s = 0.0;
    for &c in space.chains() {
        let o = space.fock_offset(c);
        let b = chi.rows(o, space.block_dim(c)).norm_squared();
        s += space.chain_weight(c) * q.on_chain(c) * b;
    }
    Ok(s.sqrt())
}

/// Plain Hilbert pairing `<u|v>` (antilinear in `u`).
pub fn inner(space: &PointSpace, u: &FockVector, v: &FockVector) -> C64 {
    let w = basis_weights(space);
    u.iter()
        .zip(v.iter())
        .zip(w.iter())
        .map(|((a, b), w)| a.conj() * b * *w)
        .sum()
}

pub fn norm(space: &PointSpace, u: &FockVector) -> f64 {
    inner(space, u, u).re.max(0.0).sqrt()
}

/// `sup |A chi|(1/p) / |chi|(p)` as the top singular value of
/// `W(1/p) A W(p)^-1`.
pub fn weighted_operator_norm(
    space: &PointSpace,
    a: &FockOperator,
    p: &WeightFunction,
) -> Result<f64, FockError> {
    check_len(space, a.nrows())?;
    check_len(space, a.ncols())?;
    p.validate(space)?;
    let s = scale_vector(space, p);
    let b = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| {
        // sqrt(w/p)_i A_ij / sqrt(w p)_j
        a[(i, j)] * (s.0[i] / s.1[j])
    });
    Ok(spectral_norm(&b))
}

fn scale_vector(space: &PointSpace, p: &WeightFunction) -> (Vec<f64>, Vec<f64>) {
    let mut left = vec![0.0; space.fock_dim()];
    let mut right = vec![0.0; space.fock_dim()];
    for &c in space.chains() {
        let w = space.chain_weight(c);
        let pc = p.on_chain(c);
        let o = space.fock_offset(c);
        for i in 0..space.block_dim(c) {
            left[o + i] = (w / pc).sqrt();
            right[o + i] = (w * pc).sqrt();
        }
    }
    (left, right)
}

/// Largest singular value; zero for empty matrices.
pub fn spectral_norm(m: &DMatrix<C64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    if m.iter().all(|z| *z == C64::new(0.0, 0.0)) {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0f64, |a, &b| a.max(b))
}

/// Block-diagonal `(x) Q(x)` on `k(theta)`, identity on `h`.
pub fn q_tensor(space: &PointSpace, q: &QField) -> Result<FockOperator, FockError> {
    q.validate(space)?;
    let n = space.fock_dim();
    let mut m = FockOperator::zeros(n, n);
    let ih = DMatrix::<C64>::identity(space.initial_dim(), space.initial_dim());
    for &c in space.chains() {
        let o = space.fock_offset(c);
        let b = q.tensor(c).kronecker(&ih);
        m.view_mut((o, o), b.shape()).copy_from(&b);
    }
    Ok(m)
}

pub fn vacuum_projector(space: &PointSpace) -> FockOperator {
    let n = space.fock_dim();
    let mut m = FockOperator::zeros(n, n);
    for i in 0..space.initial_dim() {
        m[(i, i)] = C64::new(1.0, 0.0);
    }
    m
}

/// Hilbert adjoint in raw coordinates: `W^-1 A^H W`.
pub fn hilbert_adjoint(space: &PointSpace, a: &FockOperator) -> FockOperator {
    let w = basis_weights(space);
    let ah = a.adjoint();
    DMatrix::from_fn(ah.nrows(), ah.ncols(), |i, j| ah[(i, j)] * (w[j] / w[i]))
}

/// Plain conjugate transpose, for callers working in orthonormal coordinates.
pub fn conjugate_transpose(a: &FockOperator) -> FockOperator {
    a.adjoint()
}

pub fn compose(a: &FockOperator, b: &FockOperator) -> Result<FockOperator, FockError> {
    if a.ncols() != b.nrows() {
        return Err(FockError::Dimension {
            expected: a.ncols(),
            got: b.nrows(),
        });
    }
    Ok(a * b)
}

pub fn frobenius_distance(a: &FockOperator, b: &FockOperator) -> Result<f64, FockError> {
    if a.shape() != b.shape() {
        return Err(FockError::Dimension {
            expected: a.nrows() * a.ncols(),
            got: b.nrows() * b.ncols(),
        });
    }
    Ok((a - b).norm())
}

/// `chi(theta u x)` for chains `theta` omitting `x`, stored over the reduced
/// space with the `k_x` index as the most significant slot.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedVector {
    pub point: usize,
    /// `(theta, block)` pairs; block length `d(x) * block_dim(theta)`.
    pub blocks: Vec<(Chain, DVector<C64>)>,
}

impl ReducedVector {
    /// `sum_theta w(theta) |b(theta)|^2`.
    pub fn norm_squared(&self, space: &PointSpace) -> f64 {
        self.blocks
            .iter()
            .map(|(c, b)| space.chain_weight(*c) * b.norm_squared())
            .sum()
    }
}

pub fn point_evaluation(space: &PointSpace, chi: &FockVector, x: usize) -> ReducedVector {
    let dx = space.multiplicity(x);
    let mut blocks = Vec::new();
    for &c in space.chains() {
        if c.contains(x) {
            continue;
        }
        let cx = c.with(x);
        let bd = space.block_dim(c);
        let mut b = DVector::zeros(dx * bd);
        let o = space.fock_offset(cx);
        for l in 0..space.block_dim(cx) {
            let (digits, h) = space.split_local(cx, l);
            let r = space.join_local(c, &digits, h);
            b[digits[x] * bd + r] = chi[o + l];
        }
        blocks.push((c, b));
    }
    ReducedVector { point: x, blocks }
}

/// Inverse of [`point_evaluation`]: places the reduced coefficients on chains
/// containing `x`.
pub fn point_creation(space: &PointSpace, r: &ReducedVector) -> FockVector {
    let x = r.point;
    let mut out = FockVector::zeros(space.fock_dim());
    for (c, b) in &r.blocks {
        let cx = c.with(x);
        let bd = space.block_dim(*c);
        let o = space.fock_offset(cx);
        for l in 0..space.block_dim(cx) {
            let (digits, h) = space.split_local(cx, l);
            out[o + l] = b[digits[x] * bd + space.join_local(*c, &digits, h)];
        }
    }
    out
}

/// Diagonal projector onto chains containing `x` (`contains = true`) or
/// omitting it.
pub fn sector_projector(space: &PointSpace, x: usize, contains: bool) -> FockOperator {
    let n = space.fock_dim();
    let mut m = FockOperator::zeros(n, n);
    for (i, c) in basis_chains(space).into_iter().enumerate() {
        if c.contains(x) == contains {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
    }
    m
}

pub fn sector_restrict(space: &PointSpace, chi: &FockVector, x: usize, contains: bool) -> FockVector {
    let mut v = chi.clone();
    for (i, c) in basis_chains(space).into_iter().enumerate() {
        if c.contains(x) != contains {
            v[i] = C64::new(0.0, 0.0);
        }
    }
    v
}

/// Weights of the reduced space at `x`: chains containing `x` stand for
/// `k_x (x) G` and carry `w(theta)/Delta(x)`; the rest carry `w(theta)`.
pub fn reduced_weights(space: &PointSpace, x: usize) -> Vec<f64> {
    let dx = space.weight(x);
    basis_chains(space)
        .into_iter()
        .map(|c| {
            let w = space.chain_weight(c);
            if c.contains(x) {
                w / dx
            } else {
                w
            }
        })
        .collect()
}

pub fn reduced_inner(space: &PointSpace, x: usize, u: &FockVector, v: &FockVector) -> C64 {
    let w = reduced_weights(space, x);
    u.iter()
        .zip(v.iter())
        .zip(w.iter())
        .map(|((a, b), w)| a.conj() * b * *w)
        .sum()
}

/// Hilbert adjoint with respect to [`reduced_inner`].
pub fn reduced_adjoint(space: &PointSpace, x: usize, a: &FockOperator) -> FockOperator {
    let w = reduced_weights(space, x);
    let ah = a.adjoint();
    DMatrix::from_fn(ah.nrows(), ah.ncols(), |i, j| ah[(i, j)] * (w[j] / w[i]))
}

//! Factored iterates and the implicit shifted operator
//! `Z = W Hᵀ − α ∇f(W Hᵀ)`.
//!
//! `Z` is never formed. Everything downstream consumes it through block
//! products with `Z`, `Zᵀ` and `Z Zᵀ`, whose cost is `O((m + n) k p + |Ω| p)`
//! for a block of `p` columns.

use std::borrow::Cow;

use nalgebra::DMatrix;

use crate::data::{ObservationSet, SparseGradient};
use crate::error::{dim_err, Error, Result};
use crate::kernels::SvdTriplet;
use crate::scalar::Scalar;

/// Default cap on the number of entries of a dense matrix materialized from
/// an operator (oracle and test use only).
pub const DENSE_CAP: usize = 1_000_000;

/// Default cap on the `k × n` block produced by [`ShiftedOperator::project_rows`].
pub const PROJECTION_CAP: usize = 1 << 28;

/// Factors `(W, H)` of `X = W Hᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair<T: Scalar> {
    w: DMatrix<T>,
    h: DMatrix<T>,
}

impl<T: Scalar> FactorPair<T> {
    pub fn new(w: DMatrix<T>, h: DMatrix<T>) -> Result<Self> {
        if w.ncols() != h.ncols() {
            return Err(dim_err(format!("factor ranks differ: {} vs {}", w.ncols(), h.ncols())));
        }
        if w.iter().chain(h.iter()).any(|v| !v.is_finite_val()) {
            return Err(Error::InvalidParameter("factor entries must be finite".into()));
        }
        Ok(Self { w, h })
    }

    pub fn zeros(m: usize, n: usize, k: usize) -> Self {
        Self { w: DMatrix::zeros(m, k), h: DMatrix::zeros(n, k) }
    }

    pub fn w(&self) -> &DMatrix<T> {
        &self.w
    }

    pub fn h(&self) -> &DMatrix<T> {
        &self.h
    }

    pub fn rank(&self) -> usize {
        self.w.ncols()
    }

    pub fn nrows(&self) -> usize {
        self.w.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.h.nrows()
    }

    /// `½(‖W‖²_F + ‖H‖²_F)`.
    pub fn half_squared_norms(&self) -> T {
        (self.w.norm_squared() + self.h.norm_squared()) * T::of(0.5)
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        &self.w * self.h.transpose()
    }

    pub fn into_parts(self) -> (DMatrix<T>, DMatrix<T>) {
        (self.w, self.h)
    }
}

/// A matrix available as a product `L Rᵀ` of thin factors.
pub trait LowRank<T: Scalar> {
    fn shape(&self) -> (usize, usize);
    fn left(&self) -> Cow<'_, DMatrix<T>>;
    fn right(&self) -> Cow<'_, DMatrix<T>>;
}

impl<T: Scalar> LowRank<T> for FactorPair<T> {
    fn shape(&self) -> (usize, usize) {
        (self.w.nrows(), self.h.nrows())
    }
    fn left(&self) -> Cow<'_, DMatrix<T>> {
        Cow::Borrowed(&self.w)
    }
    fn right(&self) -> Cow<'_, DMatrix<T>> {
        Cow::Borrowed(&self.h)
    }
}

impl<T: Scalar> LowRank<T> for SvdTriplet<T> {
    fn shape(&self) -> (usize, usize) {
        (self.nrows(), self.ncols())
    }
    fn left(&self) -> Cow<'_, DMatrix<T>> {
        Cow::Owned(self.left_scaled())
    }
    fn right(&self) -> Cow<'_, DMatrix<T>> {
        Cow::Borrowed(self.v())
    }
}

/// `⟨A, B⟩ = trace(AᵀB)` from the factors: `Σ (L_aᵀ L_b) ⊙ (R_aᵀ R_b)`.
pub fn inner_product<T: Scalar, A: LowRank<T> + ?Sized, B: LowRank<T> + ?Sized>(a: &A, b: &B) -> Result<T> {
    if a.shape() != b.shape() {
        return Err(dim_err(format!("inner product of {:?} and {:?} matrices", a.shape(), b.shape())));
    }
    let (la, ra) = (a.left(), a.right());
    let (lb, rb) = (b.left(), b.right());
    if la.ncols() == 0 || lb.ncols() == 0 {
        return Ok(T::zero());
    }
    let gl = la.tr_mul(&lb);
    let gr = ra.tr_mul(&rb);
    Ok(gl.component_mul(&gr).sum())
}

/// `‖A − B‖²_F = ⟨A,A⟩ − 2⟨A,B⟩ + ⟨B,B⟩`, clamped at zero.
pub fn frob_dist_sq<T: Scalar, A: LowRank<T> + ?Sized, B: LowRank<T> + ?Sized>(a: &A, b: &B) -> Result<T> {
    let d = inner_product(a, a)? - T::of(2.0) * inner_product(a, b)? + inner_product(b, b)?;
    Ok(d.max(T::zero()))
}

/// `‖A − B‖_F` computed from a compressed factorization of the difference.
///
/// The difference is `[L_a, −L_b] [R_a, R_b]ᵀ`; the right factor is reduced
/// by QR so the norm is that of an `m × (r_a + r_b)` product. Unlike
/// [`frob_dist_sq`] this stays accurate when `A` and `B` nearly coincide.
pub fn frob_dist_compressed<T: Scalar, A: LowRank<T> + ?Sized, B: LowRank<T> + ?Sized>(a: &A, b: &B) -> Result<T> {
    if a.shape() != b.shape() {
        return Err(dim_err(format!("distance between {:?} and {:?} matrices", a.shape(), b.shape())));
    }
    let (la, ra) = (a.left(), a.right());
    let (lb, rb) = (b.left(), b.right());
    let (m, n) = a.shape();
    let q = la.ncols() + lb.ncols();
    if q == 0 {
        return Ok(T::zero());
    }
    let mut l = DMatrix::zeros(m, q);
    l.columns_mut(0, la.ncols()).copy_from(&*la);
    l.columns_mut(la.ncols(), lb.ncols()).copy_from(&(-&*lb));
    let mut r = DMatrix::zeros(n, q);
    r.columns_mut(0, ra.ncols()).copy_from(&*ra);
    r.columns_mut(ra.ncols(), rb.ncols()).copy_from(&*rb);
    if n >= q {
        let rr = r.qr().r(); // q × q, R = Q rr
        Ok((l * rr.transpose()).norm())
    } else {
        Ok((l * r.transpose()).norm())
    }
}

/// An operator whose Gram product `A Aᵀ · block` can be applied.
pub trait GramOperator<T: Scalar> {
    /// Row dimension of `A`.
    fn dim(&self) -> usize;
    /// `A Aᵀ U` for an `dim × p` block.
    fn apply_gram(&self, block: &DMatrix<T>) -> Result<DMatrix<T>>;
}

/// Dense matrix wrapped as a [`GramOperator`] (tests and small problems).
#[derive(Debug, Clone)]
pub struct DenseOperator<T: Scalar> {
    pub z: DMatrix<T>,
}

impl<T: Scalar> GramOperator<T> for DenseOperator<T> {
    fn dim(&self) -> usize {
        self.z.nrows()
    }
    fn apply_gram(&self, block: &DMatrix<T>) -> Result<DMatrix<T>> {
        if block.nrows() != self.z.nrows() {
            return Err(dim_err("dense gram product dimension mismatch"));
        }
        Ok(&self.z * self.z.tr_mul(block))
    }
}

/// Implicit `Z = W Hᵀ − α G` with `G` the sparse gradient on `Ω`.
#[derive(Debug, Clone, Copy)]
pub struct ShiftedOperator<'a, T: Scalar> {
    obs: &'a ObservationSet<T>,
    factors: &'a FactorPair<T>,
    grad: &'a SparseGradient<T>,
    alpha: T,
}

impl<'a, T: Scalar> ShiftedOperator<'a, T> {
    pub fn new(obs: &'a ObservationSet<T>, factors: &'a FactorPair<T>, grad: &'a SparseGradient<T>, alpha: T) -> Result<Self> {
        if factors.nrows() != obs.nrows() || factors.ncols() != obs.ncols() {
            return Err(dim_err(format!(
                "factors {}x{} vs observations {}x{}",
                factors.nrows(),
                factors.ncols(),
                obs.nrows(),
                obs.ncols()
            )));
        }
        if grad.len() != obs.len() {
            return Err(dim_err("gradient pattern does not match the observations"));
        }
        if !(alpha >= T::zero()) {
            return Err(Error::InvalidParameter("stepsize must be nonnegative".into()));
        }
        Ok(Self { obs, factors, grad, alpha })
    }

    /// Same factors and gradient, different stepsize.
    pub fn with_alpha(&self, alpha: T) -> Self {
        Self { alpha, ..*self }
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn nrows(&self) -> usize {
        self.obs.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.obs.ncols()
    }

    pub fn factors(&self) -> &FactorPair<T> {
        self.factors
    }

    pub fn observations(&self) -> &ObservationSet<T> {
        self.obs
    }

    pub fn gradient(&self) -> &SparseGradient<T> {
        self.grad
    }

    /// `Z V = W (Hᵀ V) − α G V` for an `n × p` block.
    pub fn apply(&self, v: &DMatrix<T>) -> Result<DMatrix<T>> {
        if v.nrows() != self.ncols() {
            return Err(dim_err(format!("apply: block has {} rows, operator has {} columns", v.nrows(), self.ncols())));
        }
        let mut out = self.factors.w() * self.factors.h().tr_mul(v);
        if self.alpha != T::zero() {
            out += self.obs.spmm(self.grad.values(), -self.alpha, v)?;
        }
        Ok(out)
    }

    /// `Zᵀ U = H (Wᵀ U) − α Gᵀ U` for an `m × p` block.
    pub fn apply_t(&self, u: &DMatrix<T>) -> Result<DMatrix<T>> {
        if u.nrows() != self.nrows() {
            return Err(dim_err(format!("apply_t: block has {} rows, operator has {} rows", u.nrows(), self.nrows())));
        }
        let mut out = self.factors.h() * self.factors.w().tr_mul(u);
        if self.alpha != T::zero() {
            out += self.obs.spmm_t(self.grad.values(), -self.alpha, u)?;
        }
        Ok(out)
    }

    /// `Z (Zᵀ U)` without forming `Z Zᵀ`.
    pub fn apply_gram(&self, u: &DMatrix<T>) -> Result<DMatrix<T>> {
        self.apply(&self.apply_t(u)?)
    }

    /// `Ûᵀ Z` as a dense `k × n` block.
    pub fn project_rows(&self, basis: &DMatrix<T>) -> Result<DMatrix<T>> {
        self.project_rows_capped(basis, PROJECTION_CAP)
    }

    pub fn project_rows_capped(&self, basis: &DMatrix<T>, cap: usize) -> Result<DMatrix<T>> {
        let k = basis.ncols();
        if k.saturating_mul(self.ncols()) > cap {
            return Err(Error::Capacity(format!("{}x{} projection exceeds {} entries", k, self.ncols(), cap)));
        }
        Ok(self.apply_t(basis)?.transpose())
    }

    /// `‖Z‖²_F = ‖WHᵀ‖²_F − 2α⟨WHᵀ, G⟩ + α²‖G‖²_F` without forming `Z`.
    pub fn squared_norm(&self) -> T {
        let (w, h) = (self.factors.w(), self.factors.h());
        let low = w.tr_mul(w).dot(&h.tr_mul(h));
        if self.alpha == T::zero() {
            return low.max(T::zero());
        }
        let cross = self.obs.iter().zip(self.grad.values()).fold(T::zero(), |acc, ((i, j, _), &g)| acc + g * w.row(i).dot(&h.row(j)));
        let g2 = self.grad.values().iter().fold(T::zero(), |acc, &g| acc + g * g);
        (low - T::of(2.0) * self.alpha * cross + self.alpha * self.alpha * g2).max(T::zero())
    }

    /// Materializes `Z`; refuses above `cap` entries.
    pub fn to_dense(&self, cap: usize) -> Result<DMatrix<T>> {
        let (m, n) = (self.nrows(), self.ncols());
        if m.saturating_mul(n) > cap {
            return Err(Error::Capacity(format!("dense {m}x{n} operator exceeds {cap} entries")));
        }
        let mut z = self.factors.to_dense();
        for ((i, j, _), &g) in self.obs.iter().zip(self.grad.values()) {
            z[(i, j)] -= self.alpha * g;
        }
        Ok(z)
    }
}

impl<T: Scalar> GramOperator<T> for ShiftedOperator<'_, T> {
    fn dim(&self) -> usize {
        self.nrows()
    }
    fn apply_gram(&self, block: &DMatrix<T>) -> Result<DMatrix<T>> {
        ShiftedOperator::apply_gram(self, block)
    }
}

//! Dense primitives composed by the solvers.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{dim_err, Error, Result};
use crate::scalar::Scalar;

/// Column-major dense matrix.
pub type DenseMatrix<T> = DMatrix<T>;

/// Relative tolerance used to decide the numerical rank of a block.
pub const RANK_TOL: f64 = 1e-10;

/// Singular values below this fraction of the largest are treated as zero.
pub const SIGMA_FLOOR: f64 = 1e-12;

/// A low-rank matrix `U diag(σ) Vᵀ` with orthonormal `U`, `V` and strictly
/// positive, nonincreasing `σ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdTriplet<T: Scalar> {
    u: DMatrix<T>,
    sigma: DVector<T>,
    v: DMatrix<T>,
}

impl<T: Scalar> SvdTriplet<T> {
    /// Validates shapes and the ordering/positivity of `sigma`.
    ///
    /// Orthonormality is the caller's responsibility; see
    /// [`SvdTriplet::orthonormality_error`].
    pub fn new(u: DMatrix<T>, sigma: DVector<T>, v: DMatrix<T>) -> Result<Self> {
        let k = sigma.len();
        if u.ncols() != k || v.ncols() != k {
            return Err(dim_err(format!(
                "triplet with {} singular values but {} left and {} right vectors",
                k,
                u.ncols(),
                v.ncols()
            )));
        }
        for i in 0..k {
            if !(sigma[i] > T::zero()) || !sigma[i].is_finite_val() {
                return Err(Error::InvalidParameter(format!("singular value {i} is not positive")));
            }
            if i > 0 && sigma[i] > sigma[i - 1] {
                return Err(Error::InvalidParameter("singular values are not sorted".into()));
            }
        }
        Ok(Self { u, sigma, v })
    }

    /// The zero matrix of the given shape.
    pub fn empty(m: usize, n: usize) -> Self {
        Self { u: DMatrix::zeros(m, 0), sigma: DVector::zeros(0), v: DMatrix::zeros(n, 0) }
    }

    pub fn u(&self) -> &DMatrix<T> {
        &self.u
    }

    pub fn sigma(&self) -> &DVector<T> {
        &self.sigma
    }

    pub fn v(&self) -> &DMatrix<T> {
        &self.v
    }

    pub fn nrows(&self) -> usize {
        self.u.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.v.nrows()
    }

    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn nuclear_norm(&self) -> T {
        self.sigma.iter().fold(T::zero(), |a, &s| a + s)
    }

    pub fn max_singular_value(&self) -> T {
        if self.sigma.is_empty() {
            T::zero()
        } else {
            self.sigma[0]
        }
    }

    /// `U diag(σ)`.
    pub fn left_scaled(&self) -> DMatrix<T> {
        let mut l = self.u.clone();
        for (j, mut c) in l.column_iter_mut().enumerate() {
            c *= self.sigma[j];
        }
        l
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        self.left_scaled() * self.v.transpose()
    }

    /// `max(‖UᵀU − I‖_F, ‖VᵀV − I‖_F)`.
    pub fn orthonormality_error(&self) -> T {
        let k = self.rank();
        let eu = (self.u.tr_mul(&self.u) - DMatrix::identity(k, k)).norm();
        let ev = (self.v.tr_mul(&self.v) - DMatrix::identity(k, k)).norm();
        eu.max(ev)
    }

    pub fn into_parts(self) -> (DMatrix<T>, DVector<T>, DMatrix<T>) {
        (self.u, self.sigma, self.v)
    }
}

/// Orthonormal basis of the range of `b` by blocked Gram–Schmidt with
/// reorthogonalization.
///
/// Columns are processed left to right. A column whose component orthogonal
/// to the columns already accepted has norm `≤ tol · ‖b‖_F` is dropped, so the
/// returned `rank` is the numerical rank of `b` at that tolerance and `Q` has
/// exactly `rank` columns. Each accepted column is oriented along the input
/// column it came from.
pub fn orthonormalize<T: Scalar>(b: &DMatrix<T>, tol: T) -> (DMatrix<T>, usize) {
    const PANEL: usize = 32;
    let (m, p) = b.shape();
    let scale = b.norm();
    if m == 0 || p == 0 || scale == T::zero() {
        return (DMatrix::zeros(m, 0), 0);
    }
    let thresh = tol * scale;
    let mut q = DMatrix::zeros(m, m.min(p));
    let mut rank = 0;
    let project_out = |q: &DMatrix<T>, from: usize, to: usize, block: &mut DMatrix<T>| {
        if to > from {
            let basis = q.columns(from, to - from);
            let c = basis.tr_mul(block);
            *block -= basis * c;
        }
    };
    for start in (0..p).step_by(PANEL) {
        if rank == m {
            break;
        }
        let width = PANEL.min(p - start);
        let mut panel = b.columns(start, width).clone_owned();
        // twice is enough against the columns accepted before this panel
        project_out(&q, 0, rank, &mut panel);
        project_out(&q, 0, rank, &mut panel);
        let panel_rank = rank;
        for j in 0..width {
            if rank == m {
                break;
            }
            let mut v = panel.columns(j, 1).clone_owned();
            let before = v.norm();
            project_out(&q, panel_rank, rank, &mut v);
            project_out(&q, panel_rank, rank, &mut v);
            let mut norm = v.norm();
            if norm <= thresh {
                continue;
            }
            if norm < T::of(0.5) * before {
                // heavy cancellation: one more pass against everything
                project_out(&q, 0, rank, &mut v);
                norm = v.norm();
                if norm <= thresh {
                    continue;
                }
            }
            q.column_mut(rank).copy_from(&(v / norm));
            rank += 1;
        }
    }
    (q.columns(0, rank).clone_owned(), rank)
}

/// Normalizes every column of `b`, dropping exact zero columns.
pub(crate) fn normalize_columns<T: Scalar>(b: &DMatrix<T>) -> DMatrix<T> {
    let cols: Vec<DVector<T>> = b
        .column_iter()
        .filter_map(|c| {
            let n = c.norm();
            (n > T::zero() && n.is_finite_val()).then(|| c / n)
        })
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(b.nrows(), 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Exact SVD `M = Ũ diag(σ̂) Vᵀ` of a short-fat `k × n` matrix, `k ≤ n`.
#[derive(Debug, Clone)]
pub struct ShortFatSvd<T: Scalar> {
    /// `k × k` orthogonal.
    pub u: DMatrix<T>,
    /// Nonincreasing, nonnegative, length `k`.
    pub sigma: DVector<T>,
    /// `n × k` orthonormal.
    pub v: DMatrix<T>,
}

/// Exact SVD of a `k × n` matrix with `k ≤ n`.
///
/// The transpose is reduced by a Householder QR, `Mᵀ = Q R`, and the small
/// `k × k` factor is decomposed densely, for `O(n k² + k³)` work overall.
pub fn exact_svd_short_fat<T: Scalar>(m: &DMatrix<T>) -> Result<ShortFatSvd<T>> {
    let (k, n) = m.shape();
    if k > n {
        return Err(dim_err(format!("short-fat SVD needs rows <= cols, got {k}x{n}")));
    }
    if k == 0 {
        return Ok(ShortFatSvd { u: DMatrix::zeros(0, 0), sigma: DVector::zeros(0), v: DMatrix::zeros(n, 0) });
    }
    let qr = m.transpose().qr();
    let q = qr.q(); // n × k
    let r = qr.r(); // k × k, Mᵀ = Q R  =>  M = Rᵀ Qᵀ
    let svd = SVD::new(r.transpose(), true, true);
    let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    // Rᵀ = U S Yᵀ  =>  M = U S (Q Y)ᵀ
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap_or(std::cmp::Ordering::Equal));
    let sigma = DVector::from_iterator(k, order.iter().map(|&i| svd.singular_values[i]));
    let u = DMatrix::from_columns(&order.iter().map(|&i| u.column(i).clone_owned()).collect::<Vec<_>>());
    let y = vt.transpose();
    let y = DMatrix::from_columns(&order.iter().map(|&i| y.column(i).clone_owned()).collect::<Vec<_>>());
    let v = q * y;
    Ok(ShortFatSvd { u, sigma, v })
}

/// Result of singular value soft-thresholding.
#[derive(Debug, Clone, PartialEq)]
pub struct Thresholded<T> {
    /// `[σ̂ − β]₊` restricted to the surviving positions.
    pub sigma: Vec<T>,
    /// Positions of `σ̂` that survived.
    pub kept: Vec<usize>,
    /// Positions of `σ̂` that were truncated to zero.
    pub truncated: Vec<usize>,
    /// Largest truncated `σ̂`, if any was truncated.
    pub largest_truncated: Option<T>,
}

/// Soft-thresholds a nonincreasing vector of singular values by `beta`.
///
/// Values at or below `SIGMA_FLOOR · σ̂₁` count as zero, and a value equal
/// to `beta` is truncated.
pub fn soft_threshold<T: Scalar>(sigma_hat: &[T], beta: T) -> Thresholded<T> {
    let floor = sigma_hat.first().map_or(T::zero(), |&s| s * T::of(SIGMA_FLOOR));
    let mut out = Thresholded { sigma: Vec::new(), kept: Vec::new(), truncated: Vec::new(), largest_truncated: None };
    for (i, &s) in sigma_hat.iter().enumerate() {
        let eff = if s <= floor { T::zero() } else { s };
        let shrunk = eff - beta;
        if shrunk > T::zero() {
            out.sigma.push(shrunk);
            out.kept.push(i);
        } else {
            out.truncated.push(i);
            out.largest_truncated = Some(match out.largest_truncated {
                Some(t) if t >= s => t,
                _ => s,
            });
        }
    }
    out
}

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted in
/// nonincreasing order.
pub fn sym_eig_desc<T: Scalar>(s: &DMatrix<T>) -> (DVector<T>, DMatrix<T>) {
    let n = s.nrows();
    if n == 0 {
        return (DVector::zeros(0), DMatrix::zeros(0, 0));
    }
    let sym = (s + s.transpose()) * T::of(0.5);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap_or(std::cmp::Ordering::Equal));
    let vals = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let vecs = DMatrix::from_columns(&order.iter().map(|&i| eig.eigenvectors.column(i).clone_owned()).collect::<Vec<_>>());
    (vals, vecs)
}

/// `m × p` matrix of independent standard normal entries.
pub fn gaussian_block<T: Scalar, R: Rng + ?Sized>(m: usize, p: usize, rng: &mut R) -> DMatrix<T> {
    DMatrix::from_fn(m, p, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        T::of(z)
    })
}

/// Extends an orthonormal `q` to at least `k` columns with random directions
/// orthogonal to it.
pub(crate) fn pad_orthonormal<T: Scalar, R: Rng + ?Sized>(q: DMatrix<T>, k: usize, rng: &mut R) -> DMatrix<T> {
    let m = q.nrows();
    let k = k.min(m);
    let mut q = q;
    let mut attempts = 0;
    while q.ncols() < k && attempts < 8 {
        let need = k - q.ncols();
        let mut g = gaussian_block::<T, R>(m, need, rng);
        if q.ncols() > 0 {
            for _ in 0..2 {
                let c = q.tr_mul(&g);
                g -= &q * c;
            }
        }
        let (extra, _) = orthonormalize(&g, T::of(RANK_TOL));
        let cols: Vec<DVector<T>> = q.column_iter().chain(extra.column_iter()).map(|c| c.clone_owned()).collect();
        q = if cols.is_empty() { DMatrix::zeros(m, 0) } else { DMatrix::from_columns(&cols) };
        attempts += 1;
    }
    q
}

//! Warm-started top-`k` eigenpairs of `Z Zᵀ`.
//!
//! Both methods share one sweep: build a search space, orthonormalize it,
//! apply the operator once to the basis and extract the top `k` Ritz pairs.
//! The power method searches `span(A Q)`; the limited-memory Krylov method
//! searches `span(A Q, Q, Q₋₁, …)` with `memory` blocks besides `A Q`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{dim_err, Error, Result};
use crate::kernels::{normalize_columns, orthonormalize, pad_orthonormal, sym_eig_desc, RANK_TOL};
use crate::operator::GramOperator;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigMethod {
    Power,
    LmKrylov,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigConfig<T> {
    /// Blocks kept besides `A Q` in the Krylov search space, the current
    /// block included. Zero reduces the Krylov method to the power method.
    pub memory: usize,
    /// Maximum operator applications, the initial Rayleigh–Ritz included.
    pub max_iters: usize,
    /// Target for the largest eigenpair residual `‖A u − θ u‖`.
    pub residual_tol: T,
    pub method: EigMethod,
    /// Seed for the random directions used when a search space is rank
    /// deficient.
    pub seed: u64,
}

impl<T: Scalar> Default for EigConfig<T> {
    fn default() -> Self {
        Self { memory: 3, max_iters: 30, residual_tol: T::of(1e-8), method: EigMethod::LmKrylov, seed: 0 }
    }
}

impl<T: Scalar> EigConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.residual_tol > T::zero()) {
            return Err(Error::InvalidParameter("eigensolver residual tolerance must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("eigensolver needs at least one iteration".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EigResult<T: Scalar> {
    /// `m × k` orthonormal Ritz vectors.
    pub basis: DMatrix<T>,
    /// Nonincreasing, clamped at zero.
    pub eigvals: DVector<T>,
    pub residuals: Vec<T>,
    pub iters_used: usize,
    pub converged: bool,
    /// Ritz values after every operator application.
    pub ritz_history: Vec<DVector<T>>,
}

impl<T: Scalar> EigResult<T> {
    pub fn max_residual(&self) -> T {
        self.residuals.iter().fold(T::zero(), |a, &r| a.max(r))
    }
}

/// Subspace iteration `Q ← orth(A Q)` with Rayleigh–Ritz extraction.
pub fn power_topk<T: Scalar, A: GramOperator<T> + ?Sized>(op: &A, r0: &DMatrix<T>, cfg: &EigConfig<T>) -> Result<EigResult<T>> {
    run(op, r0, cfg, 0)
}

/// Limited-memory block Krylov iteration.
pub fn lmkrylov_topk<T: Scalar, A: GramOperator<T> + ?Sized>(op: &A, r0: &DMatrix<T>, cfg: &EigConfig<T>) -> Result<EigResult<T>> {
    run(op, r0, cfg, cfg.memory)
}

/// Dispatches on `cfg.method`.
pub fn topk<T: Scalar, A: GramOperator<T> + ?Sized>(op: &A, r0: &DMatrix<T>, cfg: &EigConfig<T>) -> Result<EigResult<T>> {
    match cfg.method {
        EigMethod::Power => power_topk(op, r0, cfg),
        EigMethod::LmKrylov => lmkrylov_topk(op, r0, cfg),
    }
}

/// `rᵢ = ‖A uᵢ − θᵢ uᵢ‖₂` for every column of `basis`.
pub fn residuals<T: Scalar, A: GramOperator<T> + ?Sized>(op: &A, basis: &DMatrix<T>, eigvals: &DVector<T>) -> Result<Vec<T>> {
    if basis.nrows() != op.dim() || basis.ncols() != eigvals.len() {
        return Err(dim_err("residuals: basis and eigenvalues disagree with the operator"));
    }
    if basis.ncols() == 0 {
        return Ok(Vec::new());
    }
    let image = op.apply_gram(basis)?;
    Ok(residuals_from_image(basis, &image, eigvals))
}

fn residuals_from_image<T: Scalar>(q: &DMatrix<T>, aq: &DMatrix<T>, theta: &DVector<T>) -> Vec<T> {
    (0..q.ncols()).map(|i| (aq.column(i) - q.column(i) * theta[i]).norm()).collect()
}

/// Rayleigh–Ritz on basis `s` with image `as_`, keeping the top `k` pairs.
fn rayleigh_ritz<T: Scalar>(s: &DMatrix<T>, as_: &DMatrix<T>, k: usize) -> (DMatrix<T>, DMatrix<T>, DVector<T>) {
    let proj = s.tr_mul(as_);
    let (vals, vecs) = sym_eig_desc(&proj);
    let y = vecs.columns(0, k).clone_owned();
    let theta = DVector::from_iterator(k, vals.iter().take(k).map(|&v| v.max(T::zero())));
    (s * &y, as_ * &y, theta)
}

fn run<T: Scalar, A: GramOperator<T> + ?Sized>(op: &A, r0: &DMatrix<T>, cfg: &EigConfig<T>, memory: usize) -> Result<EigResult<T>> {
    cfg.validate()?;
    let m = op.dim();
    let k = r0.ncols();
    if r0.nrows() != m {
        return Err(dim_err(format!("warm start has {} rows, operator has {}", r0.nrows(), m)));
    }
    if k > m {
        return Err(dim_err(format!("requested {k} eigenpairs of a {m}x{m} operator")));
    }
    if k == 0 {
        return Ok(EigResult {
            basis: DMatrix::zeros(m, 0),
            eigvals: DVector::zeros(0),
            residuals: Vec::new(),
            iters_used: 0,
            converged: true,
            ritz_history: Vec::new(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tol = T::of(RANK_TOL);

    let (q0, _) = orthonormalize(&normalize_columns(r0), tol);
    let q0 = pad_orthonormal(q0, k, &mut rng);
    let aq0 = op.apply_gram(&q0)?;
    let (mut q, mut aq, mut theta) = rayleigh_ritz(&q0, &aq0, k);
    let mut iters = 1;
    let mut res = residuals_from_image(&q, &aq, &theta);
    let mut history = vec![theta.clone()];
    let mut prev_blocks: Vec<DMatrix<T>> = Vec::new();

    let target_of = |theta: &DVector<T>| {
        let floor = T::of(64.0) * T::eps() * theta[0] * T::of_usize(m).sqrt();
        cfg.residual_tol.max(floor)
    };
    let converged_now = |res: &[T], theta: &DVector<T>| {
        let target = target_of(theta);
        res.iter().all(|&r| r <= target)
    };
    let mut converged = converged_now(&res, &theta);

    while !converged && iters < cfg.max_iters {
        let c = if memory == 0 {
            aq.clone()
        } else {
            // converged pairs stay in the space through Q but are not
            // expanded further
            let target = target_of(&theta);
            let active: Vec<usize> = (0..k).filter(|&i| res[i] > target).collect();
            let mut blocks: Vec<DMatrix<T>> = vec![aq.select_columns(&active), q.clone()];
            blocks.extend(prev_blocks.iter().take(memory - 1).map(|b| b.select_columns(&active)));
            let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
            let mut c = DMatrix::zeros(m, cols);
            let mut at = 0;
            for b in &blocks {
                c.columns_mut(at, b.ncols()).copy_from(b);
                at += b.ncols();
            }
            c
        };
        let (s, _) = orthonormalize(&normalize_columns(&c), tol);
        let s = pad_orthonormal(s, k, &mut rng);
        let as_ = op.apply_gram(&s)?;
        iters += 1;
        let (nq, naq, ntheta) = rayleigh_ritz(&s, &as_, k);
        if memory > 1 {
            prev_blocks.insert(0, std::mem::replace(&mut q, nq));
            prev_blocks.truncate(memory - 1);
        } else {
            q = nq;
        }
        aq = naq;
        theta = ntheta;
        res = residuals_from_image(&q, &aq, &theta);
        history.push(theta.clone());
        converged = converged_now(&res, &theta);
    }

    Ok(EigResult { basis: q, eigvals: theta, residuals: res, iters_used: iters, converged, ritz_history: history })
}

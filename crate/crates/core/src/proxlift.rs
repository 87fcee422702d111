//! The lifting step: one inexact proximal gradient step on the
//! nuclear-norm problem, taken at the point produced by the factorization
//! phase.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::data::{loss_quad, residual_gap_sq, residual_on_omega_svd, ObservationSet, SparseGradient, SparseResidual};
use crate::eigensolver::{topk, EigConfig};
use crate::error::{dim_err, Error, Result};
use crate::kernels::{exact_svd_short_fat, gaussian_block, normalize_columns, orthonormalize, soft_threshold, SvdTriplet, RANK_TOL};
use crate::operator::{frob_dist_compressed, frob_dist_sq, FactorPair, LowRank, ShiftedOperator};
use crate::oracle::{min_norm_with_basis, ORACLE_CAP};
use crate::scalar::{det_sum2, Scalar};

/// Lipschitz constant of the gradient of the quadratic loss.
pub const LIPSCHITZ: f64 = 2.0;

/// Extra backtracking trials allowed beyond the count needed to walk from
/// `α_max` down to `α_min`.
pub const BACKTRACK_SAFETY: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepParams<T> {
    pub lambda: T,
    pub alpha_min: T,
    pub alpha_max: T,
    pub beta: T,
    pub delta: T,
}

impl<T: Scalar> StepParams<T> {
    pub fn new(lambda: T) -> Self {
        Self { lambda, alpha_min: T::of(1e-6), alpha_max: T::of(1e2), beta: T::of(0.5), delta: T::of(0.99) }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if !(self.lambda > T::zero()) || !self.lambda.is_finite_val() {
            return bad("lambda must be positive and finite");
        }
        if !(self.alpha_min > T::zero() && self.alpha_min <= self.alpha_max) || !self.alpha_max.is_finite_val() {
            return bad("need 0 < alpha_min <= alpha_max");
        }
        if !(self.beta > T::zero() && self.beta < T::one()) {
            return bad("beta must lie in (0, 1)");
        }
        if !(self.delta > T::zero() && self.delta < T::one()) {
            return bad("delta must lie in (0, 1)");
        }
        Ok(())
    }

    /// `⌈log_β(α_min/α_max)⌉ + BACKTRACK_SAFETY`.
    pub fn max_backtracks(&self) -> usize {
        let r = (self.alpha_min / self.alpha_max).ln() / self.beta.ln();
        r.ceil().as_f64().max(0.0) as usize + BACKTRACK_SAFETY
    }

    /// `2δβ/L`, the smallest stepsize backtracking can produce from an
    /// initial value of at least `1/L`.
    pub fn alpha_floor(&self) -> T {
        T::of(2.0) * self.delta * self.beta / T::of(LIPSCHITZ)
    }
}

/// How the Barzilai–Borwein quotient is oriented.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BbRule {
    /// `‖ΔX‖² / ⟨ΔX, Δ∇f⟩`, a stepsize.
    Reciprocal,
    /// `⟨ΔX, Δ∇f⟩ / ‖ΔX‖²`, a curvature.
    AsPrinted,
}

/// Clamped Barzilai–Borwein stepsize from two linearization points.
///
/// For the quadratic loss the iterate difference restricted to `Ω` is half
/// the gradient difference, so `⟨ΔX, Δ∇f⟩ = ½ Σ_Ω (Δ∇f)²`. When the points
/// coincide `fallback` is returned.
pub fn bb_stepsize<T: Scalar, A: LowRank<T> + ?Sized, B: LowRank<T> + ?Sized>(
    x_t: &A,
    x_prev: &B,
    grad_t: &SparseGradient<T>,
    grad_prev: &SparseGradient<T>,
    fallback: T,
    rule: BbRule,
    p: &StepParams<T>,
) -> Result<T> {
    if grad_t.len() != grad_prev.len() {
        return Err(dim_err("gradient patterns differ"));
    }
    let dx2 = frob_dist_sq(x_t, x_prev)?;
    let cross = det_sum2(grad_t.values(), grad_prev.values(), |a, b| (a - b) * (a - b)) * T::of(0.5);
    let clamp = |v: T| v.max(p.alpha_min).min(p.alpha_max);
    if !(dx2 > T::zero()) {
        return Ok(clamp(fallback));
    }
    let ratio = match rule {
        BbRule::AsPrinted => cross / dx2,
        BbRule::Reciprocal if cross > T::zero() => dx2 / cross,
        BbRule::Reciprocal => p.alpha_max,
    };
    Ok(if ratio.is_finite_val() { clamp(ratio) } else { clamp(fallback) })
}

/// Clamped ratio as a pure function, for callers that already have the
/// two inner products.
pub fn clamp_bb_ratio<T: Scalar>(ratio: T, p: &StepParams<T>) -> T {
    ratio.max(p.alpha_min).min(p.alpha_max)
}

/// State carried between lifting steps to build the eigensolver warm start.
#[derive(Debug, Clone)]
pub struct WarmStartState<T: Scalar> {
    /// Left singular vector of the largest value truncated in the most
    /// recent step that truncated anything.
    pub retained: Option<DVector<T>>,
    /// Bound on the random perturbation.
    pub psi: T,
    pub psi_rho: T,
    /// Rank of the iterate one step back.
    pub prev_rank: Option<usize>,
    /// Rank of the current iterate, recorded by [`build_warmstart`].
    pub current_rank: Option<usize>,
    /// Number of values truncated in the previous step.
    pub last_truncated: usize,
    rng: ChaCha20Rng,
}

impl<T: Scalar> WarmStartState<T> {
    pub fn new(psi0: T, psi_rho: T, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Self { retained: None, psi: psi0, psi_rho, prev_rank: None, current_rank: None, last_truncated: usize::MAX, rng }
    }

    /// Whether the rank of the iterates has stopped changing.
    pub fn rank_stable(&self, cur_rank: usize) -> bool {
        self.prev_rank == Some(cur_rank)
    }

    /// Whether a retained direction should be added to the warm start: the
    /// rank is unchanged and at most one value was truncated last step.
    pub fn growth_triggered(&self, cur_rank: usize) -> bool {
        self.rank_stable(cur_rank) && self.last_truncated <= 1
    }
}

fn hcat<T: Scalar>(m: usize, blocks: &[&DMatrix<T>]) -> DMatrix<T> {
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(m, cols);
    let mut at = 0;
    for b in blocks {
        out.columns_mut(at, b.ncols()).copy_from(*b);
        at += b.ncols();
    }
    out
}

/// Orthonormal warm start `R_t` built from the current singular vectors,
/// the factorization-phase `W`, and when the rank has stalled a retained
/// truncated direction plus a small random perturbation.
pub fn build_warmstart<T: Scalar>(u: &DMatrix<T>, w_mf: &DMatrix<T>, ws: &mut WarmStartState<T>, cur_rank: usize) -> Result<DMatrix<T>> {
    let m = u.nrows();
    if w_mf.nrows() != m {
        return Err(dim_err("warm start blocks have different row counts"));
    }
    ws.current_rank = Some(cur_rank);
    let tol = T::of(RANK_TOL);
    let base = normalize_columns(&hcat(m, &[u, w_mf]));
    let (r_hat, _) = orthonormalize(&base, tol);
    let stable = ws.rank_stable(cur_rank);
    let want_extra = ws.growth_triggered(cur_rank) || r_hat.ncols() == 0;

    let mut extra = DMatrix::zeros(m, 0);
    if want_extra && r_hat.ncols() < m {
        let project_out = |v: &mut DVector<T>, q: &DMatrix<T>| {
            for _ in 0..2 {
                if q.ncols() > 0 {
                    let c = q.tr_mul(v);
                    *v -= q * c;
                }
            }
        };
        let mut dir = match &ws.retained {
            Some(r) if r.len() == m => {
                let mut v = r.clone();
                project_out(&mut v, &r_hat);
                v
            }
            _ => DVector::zeros(m),
        };
        // ξ ⊥ [R̂, u] with ‖ξ‖ ≤ ψ
        let mut xi: DVector<T> = gaussian_block::<T, _>(m, 1, &mut ws.rng).column(0).into_owned();
        project_out(&mut xi, &r_hat);
        let un = dir.norm();
        if un > T::zero() {
            let d = xi.dot(&dir) / (un * un);
            xi -= &dir * d;
        }
        let xn = xi.norm();
        if xn > T::zero() {
            let scale = if un > T::zero() { ws.psi / xn } else { T::one() / xn };
            xi *= scale;
        }
        dir += xi;
        if dir.norm() > T::zero() {
            extra = DMatrix::from_column_slice(m, 1, dir.as_slice());
        }
    }

    let ordered = normalize_columns(&hcat(m, &[u, &extra, w_mf]));
    let (mut r, _) = orthonormalize(&ordered, tol);
    if stable && r.ncols() > cur_rank + 1 {
        r = r.columns(0, cur_rank + 1).clone_owned();
    }
    Ok(r)
}

/// Records the outcome of a step: keeps the largest truncated direction and
/// shrinks the perturbation bound.
pub fn update_warmstart_after_step<T: Scalar>(ws: &mut WarmStartState<T>, outcome: &LiftOutcome<T>) {
    if let Some(u) = &outcome.truncated_vector {
        ws.retained = Some(u.clone());
    }
    ws.prev_rank = ws.current_rank;
    ws.last_truncated = outcome.truncated_count;
    ws.psi *= ws.psi_rho;
}

/// Data at the point `X̃ = W Hᵀ` where the step linearizes `f`.
#[derive(Debug, Clone, Copy)]
pub struct LinearizationPoint<'a, T: Scalar> {
    pub obs: &'a ObservationSet<T>,
    pub factors: &'a FactorPair<T>,
    pub residual: &'a SparseResidual<T>,
    pub grad: &'a SparseGradient<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertifyMode {
    /// Materialize the subgradient; exact but limited to small problems.
    ExactDense,
    /// Estimate the complement term with deflated block power iterations.
    Estimated,
    /// `ExactDense` when `m·n ≤ ORACLE_CAP`, otherwise `Estimated`.
    Auto,
}

const COMPLEMENT_MAX_ITERS: usize = 30;
const CERTIFY_BLOCK_GROWTH: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxConfig<T> {
    pub eig: EigConfig<T>,
    /// Re-solves at a tighter eigensolver tolerance when the certified
    /// error misses its target.
    pub max_retries: usize,
    pub retry_factor: T,
    pub certify: CertifyMode,
    /// Power iterations and block size of the estimated certification.
    pub certify_iters: usize,
    pub certify_block: usize,
}

impl<T: Scalar> Default for ProxConfig<T> {
    fn default() -> Self {
        Self {
            eig: EigConfig::default(),
            max_retries: 2,
            retry_factor: T::of(1e-2),
            certify: CertifyMode::Auto,
            certify_iters: 5,
            certify_block: 6,
        }
    }
}

/// Result of [`inexact_prox_step`].
#[derive(Debug, Clone)]
pub struct LiftOutcome<T: Scalar> {
    pub x_next: SvdTriplet<T>,
    pub residual_next: SparseResidual<T>,
    pub f_next: T,
    pub alpha_used: T,
    pub backtracks: usize,
    pub eps_achieved: T,
    /// Set when the certified error is still above its target after all
    /// retries.
    pub eps_missed: bool,
    pub largest_truncated: Option<T>,
    pub truncated_vector: Option<DVector<T>>,
    pub truncated_count: usize,
    /// `‖X_{t+1} − X̃‖_F`, from a compressed factorization of the difference.
    pub step_norm: T,
    /// `f(X_{t+1}) − f(X̃) − ⟨∇f(X̃), X_{t+1} − X̃⟩` for the accepted trial.
    pub model_excess: T,
    /// `(δ/α) ‖X_{t+1} − X̃‖²` for the accepted trial.
    pub model_allowance: T,
    pub eig_sweeps: usize,
    pub eig_converged: bool,
    pub k_t: usize,
}

struct Trial<T: Scalar> {
    x: SvdTriplet<T>,
    basis: DMatrix<T>,
    residual: SparseResidual<T>,
    excess: T,
    allowance: T,
    truncated_vector: Option<DVector<T>>,
    largest_truncated: Option<T>,
    truncated_count: usize,
    eig_converged: bool,
    /// Ritz vectors beyond the kept ones; seeds the certification.
    spare: DMatrix<T>,
}

impl<T: Scalar> Trial<T> {
    fn accepted(&self) -> bool {
        self.excess <= self.allowance
    }
}

fn run_trial<T: Scalar>(lp: &LinearizationPoint<'_, T>, op: &ShiftedOperator<'_, T>, r0: &DMatrix<T>, eig: &EigConfig<T>, p: &StepParams<T>, sweeps: &mut usize) -> Result<Trial<T>> {
    let alpha = op.alpha();
    let res = topk(op, r0, eig)?;
    *sweeps += res.iters_used;
    let basis = res.basis;
    let proj = op.project_rows(&basis)?;
    let svd = exact_svd_short_fat(&proj)?;
    let u_full = &basis * &svd.u;
    let thr = soft_threshold(svd.sigma.as_slice(), alpha * p.lambda);
    let kept = thr.kept.len();
    let (m, n) = (op.nrows(), op.ncols());
    let x = if kept == 0 {
        SvdTriplet::empty(m, n)
    } else {
        SvdTriplet::new(u_full.columns(0, kept).clone_owned(), DVector::from_vec(thr.sigma.clone()), svd.v.columns(0, kept).clone_owned())?
    };
    let truncated_vector = thr.truncated.first().map(|&i| u_full.column(i).clone_owned());
    let spare = u_full.columns(kept, u_full.ncols() - kept).clone_owned();
    let residual = residual_on_omega_svd(lp.obs, &x)?;
    // For the quadratic loss the left side of the test minus its linear part
    // is exactly ‖P_Ω(X_{t+1} − X̃)‖², which also bounds ‖X_{t+1} − X̃‖² below.
    let excess = residual_gap_sq(&residual, lp.residual);
    let dist = frob_dist_sq(&x, lp.factors)?.max(excess);
    let allowance = p.delta / alpha * dist;
    Ok(Trial {
        x,
        basis,
        residual,
        excess,
        allowance,
        truncated_vector,
        largest_truncated: thr.largest_truncated,
        truncated_count: thr.truncated.len(),
        eig_converged: res.converged,
        spare,
    })
}

/// One inexact proximal gradient step with backtracking from `alpha_bb`.
///
/// `r_t` is the orthonormal warm start; its column count fixes `k_t`.
pub fn inexact_prox_step<T: Scalar>(
    lp: &LinearizationPoint<'_, T>,
    alpha_bb: T,
    p: &StepParams<T>,
    r_t: &DMatrix<T>,
    cfg: &ProxConfig<T>,
    eps_target: T,
) -> Result<LiftOutcome<T>> {
    p.validate()?;
    if !(eps_target > T::zero()) {
        return Err(Error::InvalidParameter("target error must be positive".into()));
    }
    let (m, n) = (lp.obs.nrows(), lp.obs.ncols());
    if r_t.nrows() != m {
        return Err(dim_err("warm start row count differs from the observations"));
    }
    let k_t = r_t.ncols();
    let i_max = p.max_backtracks();
    let base = ShiftedOperator::new(lp.obs, lp.factors, lp.grad, alpha_bb)?;
    let mut sweeps = 0;
    let mut warm = r_t.clone();
    let mut alpha = alpha_bb;
    let mut found = None;
    for i in 0..=i_max {
        alpha = alpha_bb * p.beta.powi(i as i32);
        let op = base.with_alpha(alpha);
        let trial = run_trial(lp, &op, &warm, &cfg.eig, p, &mut sweeps)?;
        warm = trial.basis.clone();
        if trial.accepted() {
            found = Some((i, trial));
            break;
        }
    }
    let (backtracks, mut trial) = found.ok_or(Error::BacktrackingExhausted(i_max + 1))?;
    let op = base.with_alpha(alpha);
    let mode = match cfg.certify {
        CertifyMode::Auto if m.saturating_mul(n) <= ORACLE_CAP => CertifyMode::ExactDense,
        CertifyMode::Auto => CertifyMode::Estimated,
        other => other,
    };
    let mut eps = certify_with_seed(&op, &trial.x, p.lambda, mode, &trial.spare, cfg)?;

    let mut tol = cfg.eig.residual_tol;
    let mut retries = 0;
    while eps > eps_target && trial.truncated_count > 0 && retries < cfg.max_retries {
        retries += 1;
        tol *= cfg.retry_factor;
        let eig = EigConfig { residual_tol: tol, ..cfg.eig };
        let refined = run_trial(lp, &op, &trial.basis, &eig, p, &mut sweeps)?;
        if !refined.accepted() {
            break;
        }
        let e = certify_with_seed(&op, &refined.x, p.lambda, mode, &refined.spare, cfg)?;
        let improved = e < eps;
        if improved {
            eps = e;
            trial = refined;
        }
        if !improved || e > eps * T::of(0.5) {
            break;
        }
    }

    let step_norm = frob_dist_compressed(&trial.x, lp.factors)?;
    let f_next = loss_quad(&trial.residual);
    Ok(LiftOutcome {
        f_next,
        residual_next: trial.residual,
        alpha_used: alpha,
        backtracks,
        eps_missed: eps > eps_target,
        eps_achieved: eps,
        largest_truncated: trial.largest_truncated,
        truncated_vector: trial.truncated_vector,
        truncated_count: trial.truncated_count,
        step_norm,
        model_excess: trial.excess,
        model_allowance: trial.allowance,
        eig_sweeps: sweeps,
        eig_converged: trial.eig_converged,
        k_t,
        x_next: trial.x,
    })
}

/// Upper estimate of `min ‖g‖` over `g ∈ ∂Q(X_{t+1})`, where
/// `Q(Y) = ⟨∇f(X̃), Y − X̃⟩ + ‖Y − X̃‖²/(2α) + λ‖Y‖_*`.
///
/// With `G = ∇f(X̃) + (X_{t+1} − X̃)/α + λUVᵀ = (X_{t+1} − Z)/α + λUVᵀ`
/// the minimum is `√(‖P_T G‖² + Σᵢ [sᵢ(P⊥G) − λ]₊²)`, and on the complement
/// `P⊥G = −P⊥Z/α`.
pub fn certify_epsilon<T: Scalar>(x_next: &SvdTriplet<T>, lp: &LinearizationPoint<'_, T>, alpha: T, lambda: T, mode: CertifyMode) -> Result<T> {
    let op = ShiftedOperator::new(lp.obs, lp.factors, lp.grad, alpha)?;
    let (m, n) = (op.nrows(), op.ncols());
    let mode = match mode {
        CertifyMode::Auto if m.saturating_mul(n) <= ORACLE_CAP => CertifyMode::ExactDense,
        CertifyMode::Auto => CertifyMode::Estimated,
        other => other,
    };
    certify_with_seed(&op, x_next, lambda, mode, &DMatrix::zeros(m, 0), &ProxConfig::default())
}

fn certify_with_seed<T: Scalar>(op: &ShiftedOperator<'_, T>, x: &SvdTriplet<T>, lambda: T, mode: CertifyMode, seed: &DMatrix<T>, cfg: &ProxConfig<T>) -> Result<T> {
    let alpha = op.alpha();
    let (u, v) = (x.u(), x.v());
    if mode == CertifyMode::ExactDense {
        let z = op.to_dense(ORACLE_CAP)?;
        let uvt = u * v.transpose();
        let g = (x.to_dense() - z) / alpha + uvt * lambda;
        return min_norm_with_basis(&g, u, v, lambda);
    }

    // tangent part: ‖UᵀG‖² + ‖(I − UUᵀ) G V‖²
    let mut tangent = T::zero();
    if x.rank() > 0 {
        let sig = x.sigma();
        let mut utg = op.apply_t(u)?.transpose(); // UᵀZ, k × n
        for (i, mut row) in utg.row_iter_mut().enumerate() {
            let s = sig[i];
            row.zip_apply(&v.column(i).transpose(), |a, b| *a = (s * b - *a) / alpha + lambda * b);
        }
        let zv = op.apply(v)?; // m × k
        let mut gv = zv;
        for (i, mut col) in gv.column_iter_mut().enumerate() {
            let s = sig[i];
            col.zip_apply(&u.column(i), |a, b| *a = (s * b - *a) / alpha + lambda * b);
        }
        let perp = &gv - u * u.tr_mul(&gv);
        tangent = utg.norm_squared() + perp.norm_squared();
    }

    // complement part from block power iterations on P⊥ Z P⊥ with
    // P⊥ = I − UUᵀ on the left and I − VVᵀ on the right. The block doubles
    // while its smallest value still exceeds λ, up to a cap; whatever lies
    // beyond the block is bounded through the remaining Frobenius mass.
    let m = op.nrows();
    let room = m.min(op.ncols()).saturating_sub(x.rank());
    let first = cfg.certify_block.max(1).min(room);
    let cap = (first * CERTIFY_BLOCK_GROWTH).min(room);
    let mut p = first;
    let mut clipped = T::zero();
    let mut rng = ChaCha20Rng::seed_from_u64(0x5eed);
    let mut prev_q = DMatrix::zeros(m, 0);
    while p > 0 {
        let mut start = DMatrix::zeros(m, p);
        let mut filled = 0;
        for src in [seed, &prev_q] {
            let take = src.ncols().min(p - filled);
            if take > 0 {
                start.columns_mut(filled, take).copy_from(&src.columns(0, take));
                filled += take;
            }
        }
        if filled < p {
            start.columns_mut(filled, p - filled).copy_from(&gaussian_block::<T, _>(m, p - filled, &mut rng));
        }
        let (sv, q) = complement_values(op, u, v, &start, alpha, cfg.certify_iters)?;
        clipped = sv.iter().fold(T::zero(), |acc, &s| {
            let e = (s - lambda).max(T::zero());
            acc + e * e
        });
        let smallest = sv.last().copied().unwrap_or(T::zero());
        let saturated = sv.len() == p && smallest > lambda;
        if !saturated || p == room {
            break;
        }
        if p == cap {
            // every value outside the block is at most `smallest`, and for
            // s ≤ smallest, [s − λ]₊ ≤ s (1 − λ/smallest)
            let captured = sv.iter().fold(T::zero(), |acc, &s| acc + s * s);
            let tail = (complement_mass(op, u, v)? / (alpha * alpha) - captured).max(T::zero());
            let shrink = T::one() - lambda / smallest;
            clipped += tail * shrink * shrink;
            break;
        }
        p = (2 * p).min(cap);
        prev_q = q;
    }
    Ok((tangent + clipped).sqrt())
}

/// `‖(I − UUᵀ) Z (I − VVᵀ)‖²_F` from products with the factor blocks.
fn complement_mass<T: Scalar>(op: &ShiftedOperator<'_, T>, u: &DMatrix<T>, v: &DMatrix<T>) -> Result<T> {
    let total = op.squared_norm();
    if u.ncols() == 0 {
        return Ok(total);
    }
    let utz = op.apply_t(u)?; // n × k, equals (UᵀZ)ᵀ
    let zv = op.apply(v)?;
    let utzv = u.tr_mul(&zv);
    Ok((total - utz.norm_squared() - zv.norm_squared() + utzv.norm_squared()).max(T::zero()))
}

/// Top singular values (divided by `alpha`) of the deflated complement of the
/// shifted operator, by block power iterations from `start`. Runs at least
/// `min_iters` sweeps and stops once the values settle.
fn complement_values<T: Scalar>(
    op: &ShiftedOperator<'_, T>,
    u: &DMatrix<T>,
    v: &DMatrix<T>,
    start: &DMatrix<T>,
    alpha: T,
    min_iters: usize,
) -> Result<(Vec<T>, DMatrix<T>)> {
    let deflate = |b: &mut DMatrix<T>, basis: &DMatrix<T>| {
        if basis.ncols() > 0 {
            let c = basis.tr_mul(b);
            *b -= basis * c;
        }
    };
    let mut s0 = start.clone();
    deflate(&mut s0, u);
    let (mut q, _) = orthonormalize(&normalize_columns(&s0), T::of(RANK_TOL));
    let mut sv: Vec<T> = Vec::new();
    let settle = T::of(1e-6);
    for it in 0..COMPLEMENT_MAX_ITERS.max(min_iters) {
        if q.ncols() == 0 {
            break;
        }
        let mut b = op.apply_t(&q)?;
        deflate(&mut b, v);
        let mut c = op.apply(&b)?;
        deflate(&mut c, u);
        let proj = q.tr_mul(&c);
        let (vals, vecs) = crate::kernels::sym_eig_desc(&proj);
        let next_sv: Vec<T> = vals.iter().map(|&t| t.max(T::zero()).sqrt() / alpha).collect();
        let moved = sv.len() == next_sv.len()
            && sv.iter().zip(&next_sv).all(|(&a, &b)| (a - b).abs() <= settle * b.abs().max(T::one()));
        sv = next_sv;
        let (nq, _) = orthonormalize(&normalize_columns(&(c * vecs)), T::of(RANK_TOL));
        q = nq;
        if moved && it + 1 >= min_iters {
            break;
        }
    }
    Ok((sv, q))
}

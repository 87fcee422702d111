//! Outer loops: MF-Global, the plain inexact proximal gradient baseline, and
//! factorization-only coordinate descent, with per-iteration traces.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, SVD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::data::{loss_quad, residual_on_omega, rmse, rmse_factors, EvalSplit, ObservationSet};
use crate::eigensolver::{EigConfig, EigMethod};
use crate::error::{Error, Result};
use crate::kernels::{SvdTriplet, SIGMA_FLOOR};
use crate::mfsolver::{bcd_epoch, factors_from_svd, mf_objective, mf_phase, MONOTONE_SLACK};
use crate::operator::FactorPair;
use crate::persist::Reference;
use crate::proxlift::{
    bb_stepsize, build_warmstart, inexact_prox_step, update_warmstart_after_step, BbRule, CertifyMode, LinearizationPoint, ProxConfig, StepParams, WarmStartState,
    LIPSCHITZ,
};
use crate::scalar::Scalar;

/// Trace CSV header.
pub const TRACE_HEADER: &str = "iter,time_s,obj,rel_obj,rank,rmse,rel_rmse,alpha,backtracks,eps_target,eps_achieved,eig_sweeps,k_t";

/// Every tunable of the outer loops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig<T> {
    pub lambda: T,
    pub k0: usize,
    pub mf_epochs: usize,
    pub beta: T,
    pub delta: T,
    pub alpha_min: T,
    pub alpha_max: T,
    /// `ε₀ = eps0_scale · ‖∇f(X₀)‖_F`, then `εₜ = ε₀ · eps_rhoᵗ`.
    pub eps0_scale: T,
    pub eps_rho: T,
    /// `ψ₀ = psi0_scale · σ_max(X₀)`, then `ψₜ = ψ₀ · psi_rhoᵗ`.
    pub psi0_scale: T,
    pub psi_rho: T,
    pub eig_memory: usize,
    pub eig_max_iters: usize,
    pub eig_method: EigMethod,
    pub max_outer_iters: usize,
    /// Stop once `|F_t − F_{t−w}| ≤ stop_tol · |F_t|` for window `w`.
    pub stop_tol: T,
    pub stop_window: usize,
    /// Worker threads; zero uses the global pool.
    pub threads: usize,
    pub seed: u64,
    pub bb_rule: BbRule,
    pub certify: CertifyMode,
    /// Half-width of the uniform initialization of `W̃₀`, `H̃₀`.
    pub init_scale: T,
    /// Write wall-clock seconds into the trace; zeros otherwise.
    pub record_time: bool,
}

impl<T: Scalar> SolverConfig<T> {
    pub fn new(lambda: T) -> Self {
        Self {
            lambda,
            k0: 8,
            mf_epochs: 3,
            beta: T::of(0.5),
            delta: T::of(0.99),
            alpha_min: T::of(1e-6),
            alpha_max: T::of(1e2),
            eps0_scale: T::of(1e-1),
            eps_rho: T::of(0.7),
            psi0_scale: T::of(1e-2),
            psi_rho: T::of(0.5),
            eig_memory: 3,
            eig_max_iters: 30,
            eig_method: EigMethod::LmKrylov,
            max_outer_iters: 500,
            stop_tol: T::of(1e-7),
            stop_window: 5,
            threads: 0,
            seed: 0,
            bb_rule: BbRule::Reciprocal,
            certify: CertifyMode::Auto,
            init_scale: T::of(1e-2),
            record_time: true,
        }
    }

    pub fn step_params(&self) -> StepParams<T> {
        StepParams { lambda: self.lambda, alpha_min: self.alpha_min, alpha_max: self.alpha_max, beta: self.beta, delta: self.delta }
    }

    pub fn validate(&self) -> Result<()> {
        self.step_params().validate()?;
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if !(self.eps0_scale > T::zero()) || !(self.eps_rho > T::zero() && self.eps_rho < T::one()) {
            return bad("need eps0_scale > 0 and eps_rho in (0, 1)");
        }
        if !(self.psi0_scale > T::zero()) || !(self.psi_rho > T::zero() && self.psi_rho < T::one()) {
            return bad("need psi0_scale > 0 and psi_rho in (0, 1)");
        }
        if !(self.stop_tol >= T::zero()) || self.stop_window == 0 {
            return bad("need stop_tol >= 0 and a positive stop window");
        }
        if self.eig_max_iters == 0 {
            return bad("eigensolver needs at least one iteration");
        }
        if !(self.init_scale > T::zero()) {
            return bad("initialization scale must be positive");
        }
        Ok(())
    }

    /// `Γ = (1 − δ)/α_max`.
    pub fn descent_gamma(&self) -> T {
        (T::one() - self.delta) / self.alpha_max
    }
}

/// One row of the trace. Row 0 describes the starting point; row `t`
/// describes `X_t` and the step that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub time_s: f64,
    pub obj: f64,
    pub rel_obj: f64,
    pub rank: usize,
    pub rmse: f64,
    pub rel_rmse: f64,
    pub alpha: f64,
    pub backtracks: usize,
    pub eps_target: f64,
    pub eps_achieved: f64,
    pub eig_sweeps: usize,
    pub k_t: usize,
    /// `‖X_t − X̃_{t−1}‖_F`.
    pub step_norm: f64,
    /// `F(W_{t−1}, H_{t−1})` after the factorization phase.
    pub mf_obj: f64,
    /// `F(X_{t−1})`, the value the factorization phase must not exceed.
    pub guard_bound: f64,
    /// Cumulative count of lifting steps plus coordinate descent epochs.
    pub work: usize,
    pub eps_missed: bool,
}

impl IterationRecord {
    fn initial(obj: f64, rank: usize) -> Self {
        Self {
            iter: 0,
            time_s: 0.0,
            obj,
            rel_obj: f64::NAN,
            rank,
            rmse: f64::NAN,
            rel_rmse: f64::NAN,
            alpha: f64::NAN,
            backtracks: 0,
            eps_target: f64::NAN,
            eps_achieved: f64::NAN,
            eig_sweeps: 0,
            k_t: 0,
            step_norm: f64::NAN,
            mf_obj: f64::NAN,
            guard_bound: f64::NAN,
            work: 0,
            eps_missed: false,
        }
    }

    fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.iter,
            self.time_s,
            self.obj,
            self.rel_obj,
            self.rank,
            self.rmse,
            self.rel_rmse,
            self.alpha,
            self.backtracks,
            self.eps_target,
            self.eps_achieved,
            self.eig_sweeps,
            self.k_t
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
}

impl IterationTrace {
    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{TRACE_HEADER}")?;
        for r in &self.records {
            writeln!(w, "{}", r.csv_line())?;
        }
        w.flush()
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))?;
        Ok(())
    }

    /// Recomputes the relative objective of every row against `f_star`.
    pub fn rebase_objective(&mut self, f_star: f64) {
        for r in &mut self.records {
            r.rel_obj = relative_objective(r.obj, f_star).unwrap_or(f64::NAN);
        }
    }

    /// Recomputes the relative RMSE of every row.
    pub fn rebase_rmse(&mut self, rmse_star: f64, rmse_zero: f64) {
        for r in &mut self.records {
            r.rel_rmse = relative_rmse(r.rmse, rmse_star, rmse_zero).unwrap_or(f64::NAN);
        }
    }
}

/// `(F − F*)/F*`.
pub fn relative_objective<T: Scalar>(f: T, f_star: T) -> Result<T> {
    if !(f_star > T::zero()) {
        return Err(Error::InvalidParameter("reference objective must be positive".into()));
    }
    Ok((f - f_star) / f_star)
}

/// `(RMSE(X) − RMSE(X*)) / (RMSE(0) − RMSE(X*))`.
pub fn relative_rmse<T: Scalar>(r: T, r_star: T, r_zero: T) -> Result<T> {
    let den = r_zero - r_star;
    if den == T::zero() || !den.is_finite_val() {
        return Err(Error::InvalidParameter("RMSE(0) equals the reference RMSE".into()));
    }
    Ok((r - r_star) / den)
}

/// `RMSE(0)` on a test split.
pub fn rmse_zero<T: Scalar>(split: &EvalSplit<T>) -> Result<T> {
    rmse(split, &SvdTriplet::empty(split.entries().nrows(), split.entries().ncols()))
}

/// Why an outer loop ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct SolveOutput<T: Scalar> {
    pub x: SvdTriplet<T>,
    pub factors: FactorPair<T>,
    pub trace: IterationTrace,
    pub stop: StopReason,
}

#[derive(Debug, Clone)]
pub struct MfOnlyOutput<T: Scalar> {
    pub factors: FactorPair<T>,
    pub trace: IterationTrace,
    pub stop: StopReason,
}

/// Exact SVD of `W Hᵀ` through thin QR factorizations of both factors.
pub fn svd_from_factors<T: Scalar>(wf: &FactorPair<T>) -> Result<SvdTriplet<T>> {
    let (m, n, k) = (wf.nrows(), wf.ncols(), wf.rank());
    if k == 0 || m == 0 || n == 0 {
        return Ok(SvdTriplet::empty(m, n));
    }
    let qw = wf.w().clone().qr();
    let qh = wf.h().clone().qr();
    let core = qw.r() * qh.r().transpose();
    let svd = SVD::new(core, true, true);
    let (cu, cvt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap_or(std::cmp::Ordering::Equal));
    let top = order.first().map_or(T::zero(), |&i| svd.singular_values[i]);
    let keep: Vec<usize> = order.into_iter().filter(|&i| svd.singular_values[i] > top * T::of(SIGMA_FLOOR) && svd.singular_values[i] > T::zero()).collect();
    if keep.is_empty() {
        return Ok(SvdTriplet::empty(m, n));
    }
    let (q_w, q_h) = (qw.q(), qh.q());
    let cols_u: Vec<DVector<T>> = keep.iter().map(|&i| &q_w * cu.column(i)).collect();
    let cols_v: Vec<DVector<T>> = keep.iter().map(|&i| &q_h * cvt.row(i).transpose()).collect();
    let sigma = DVector::from_iterator(keep.len(), keep.iter().map(|&i| svd.singular_values[i]));
    SvdTriplet::new(DMatrix::from_columns(&cols_u), sigma, DMatrix::from_columns(&cols_v))
}

struct Metrics<'a, T: Scalar> {
    split: Option<&'a EvalSplit<T>>,
    reference: Option<&'a Reference<T>>,
    rmse_zero: Option<T>,
}

impl<'a, T: Scalar> Metrics<'a, T> {
    fn new(split: Option<&'a EvalSplit<T>>, reference: Option<&'a Reference<T>>) -> Result<Self> {
        let rmse_zero = match (reference.and_then(|r| r.rmse_zero), split) {
            (Some(z), _) => Some(z),
            (None, Some(s)) if !s.is_empty() => Some(rmse_zero(s)?),
            _ => None,
        };
        Ok(Self { split, reference, rmse_zero })
    }

    fn fill(&self, rec: &mut IterationRecord, rmse_val: Option<T>) {
        if let Some(r) = self.reference {
            rec.rel_obj = relative_objective(rec.obj, r.f_star.as_f64()).unwrap_or(f64::NAN);
        }
        if let Some(v) = rmse_val {
            rec.rmse = v.as_f64();
            if let (Some(rs), Some(rz)) = (self.reference.and_then(|r| r.rmse_star), self.rmse_zero) {
                rec.rel_rmse = relative_rmse(v, rs, rz).map_or(f64::NAN, |x| x.as_f64());
            }
        }
    }

    fn rmse_of(&self, x: &SvdTriplet<T>) -> Result<Option<T>> {
        match self.split {
            Some(s) if !s.is_empty() => Ok(Some(rmse(s, x)?)),
            _ => Ok(None),
        }
    }

    fn rmse_of_factors(&self, wf: &FactorPair<T>) -> Result<Option<T>> {
        match self.split {
            Some(s) if !s.is_empty() => Ok(Some(rmse_factors(s, wf)?)),
            _ => Ok(None),
        }
    }
}

fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> Result<R> + Send) -> Result<R> {
    if threads == 0 {
        return f();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot build a pool of {threads} threads: {e}")))?;
    pool.install(f)
}

fn uniform_block<T: Scalar>(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha20Rng) -> DMatrix<T> {
    DMatrix::from_fn(rows, cols, |_, _| T::of(rng.random_range(-scale..=scale)))
}

fn stop_check<T: Scalar>(objs: &[T], tol: T, window: usize) -> bool {
    let t = objs.len();
    if t <= window {
        return false;
    }
    let (now, then) = (objs[t - 1], objs[t - 1 - window]);
    (now - then).abs() <= tol * now.abs()
}

fn numerical_failure(message: impl Into<String>, trace: &IterationTrace) -> Error {
    Error::NumericalFailure { message: message.into(), trace: Box::new(trace.clone()) }
}

/// MF-Global: alternate a factorization phase with an inexact proximal
/// gradient step on the nuclear-norm problem.
pub fn solve_mf_global<T: Scalar>(obs: &ObservationSet<T>, split: Option<&EvalSplit<T>>, cfg: &SolverConfig<T>, reference: Option<&Reference<T>>) -> Result<SolveOutput<T>> {
    cfg.validate()?;
    if obs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    with_threads(cfg.threads, || lifted_loop(obs, split, cfg, reference))
}

/// Inexact proximal gradient without the factorization phase.
pub fn solve_pg_baseline<T: Scalar>(obs: &ObservationSet<T>, split: Option<&EvalSplit<T>>, cfg: &SolverConfig<T>, reference: Option<&Reference<T>>) -> Result<SolveOutput<T>> {
    let cfg = SolverConfig { mf_epochs: 0, ..*cfg };
    solve_mf_global(obs, split, &cfg, reference)
}

fn lifted_loop<T: Scalar>(obs: &ObservationSet<T>, split: Option<&EvalSplit<T>>, cfg: &SolverConfig<T>, reference: Option<&Reference<T>>) -> Result<SolveOutput<T>> {
    let clock = Instant::now();
    let elapsed = || if cfg.record_time { clock.elapsed().as_secs_f64() } else { 0.0 };
    let metrics = Metrics::new(split, reference)?;
    let params = cfg.step_params();
    let (m, n) = (obs.nrows(), obs.ncols());
    let lambda = cfg.lambda;

    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let s = cfg.init_scale.as_f64();
    let init = FactorPair::new(uniform_block(m, cfg.k0, s, &mut rng), uniform_block(n, cfg.k0, s, &mut rng))?;
    let mut x = svd_from_factors(&init)?;
    let mut tilde = factors_from_svd(&x);
    let res0 = residual_on_omega(obs, &tilde)?;
    let mut f_x = loss_quad(&res0) + lambda * x.nuclear_norm();

    let mut trace = IterationTrace::default();
    let mut rec = IterationRecord::initial(f_x.as_f64(), x.rank());
    metrics.fill(&mut rec, metrics.rmse_of(&x)?);
    rec.time_s = elapsed();
    trace.records.push(rec);
    if !f_x.is_finite_val() {
        return Err(numerical_failure("initial objective is not finite", &trace));
    }

    let grad0_norm = res0.gradient().norm();
    let eps0 = if grad0_norm > T::zero() { cfg.eps0_scale * grad0_norm } else { cfg.eps0_scale };
    let sig0 = x.max_singular_value();
    let psi0 = if sig0 > T::zero() { cfg.psi0_scale * sig0 } else { cfg.psi0_scale };
    let mut ws = WarmStartState::new(psi0, cfg.psi_rho, cfg.seed);
    let mut prev: Option<(FactorPair<T>, crate::data::SparseGradient<T>)> = None;
    let mut alpha_prev = T::one() / T::of(LIPSCHITZ);
    let mut objs = vec![f_x];
    let mut work = 0;
    let mut stop = StopReason::MaxIterations;

    for t in 0..cfg.max_outer_iters {
        // factorization phase
        let phase = mf_phase(obs, &tilde, lambda, cfg.mf_epochs)?;
        work += cfg.mf_epochs;
        let mf_obj = *phase.objectives.last().expect("nonempty");
        if !(mf_obj <= f_x + T::of(MONOTONE_SLACK) * f_x.abs()) {
            return Err(Error::Internal(format!(
                "factorization phase ended above the lifted objective: {} > {}",
                mf_obj.as_f64(),
                f_x.as_f64()
            )));
        }
        let wh = phase.factors;
        let res = residual_on_omega(obs, &wh)?;
        let grad = res.gradient();

        // lifting step
        let alpha_bb = match &prev {
            Some((pw, pg)) => bb_stepsize(&wh, pw, &grad, pg, alpha_prev, cfg.bb_rule, &params)?,
            None => (T::one() / T::of(LIPSCHITZ)).max(cfg.alpha_min).min(cfg.alpha_max),
        };
        let r_t = build_warmstart(x.u(), wh.w(), &mut ws, x.rank())?;
        let eps_t = eps0 * cfg.eps_rho.powi(t as i32);
        let k_t = r_t.ncols().max(1);
        let eig = EigConfig {
            memory: cfg.eig_memory,
            max_iters: cfg.eig_max_iters,
            residual_tol: (eps_t / (cfg.alpha_max * T::of_usize(k_t))).max(T::eps() * T::eps()),
            method: cfg.eig_method,
            seed: cfg.seed.wrapping_add(t as u64),
        };
        let pcfg = ProxConfig { eig, certify: cfg.certify, ..ProxConfig::default() };
        let lp = LinearizationPoint { obs, factors: &wh, residual: &res, grad: &grad };
        let out = inexact_prox_step(&lp, alpha_bb, &params, &r_t, &pcfg, eps_t)?;
        update_warmstart_after_step(&mut ws, &out);
        work += 1;

        let f_next = out.f_next + lambda * out.x_next.nuclear_norm();
        let mut rec = IterationRecord {
            iter: t + 1,
            time_s: 0.0,
            obj: f_next.as_f64(),
            rel_obj: f64::NAN,
            rank: out.x_next.rank(),
            rmse: f64::NAN,
            rel_rmse: f64::NAN,
            alpha: out.alpha_used.as_f64(),
            backtracks: out.backtracks,
            eps_target: eps_t.as_f64(),
            eps_achieved: out.eps_achieved.as_f64(),
            eig_sweeps: out.eig_sweeps,
            k_t: out.k_t,
            step_norm: out.step_norm.as_f64(),
            mf_obj: mf_obj.as_f64(),
            guard_bound: f_x.as_f64(),
            work,
            eps_missed: out.eps_missed,
        };
        metrics.fill(&mut rec, metrics.rmse_of(&out.x_next)?);
        rec.time_s = elapsed();
        log::debug!(
            "iter {} obj {:.10e} rank {} alpha {:.3e} bt {} eps {:.2e}/{:.2e} k_t {} sweeps {}",
            rec.iter,
            rec.obj,
            rec.rank,
            rec.alpha,
            rec.backtracks,
            rec.eps_achieved,
            rec.eps_target,
            rec.k_t,
            rec.eig_sweeps
        );
        trace.records.push(rec);
        if !f_next.is_finite_val() || !out.eps_achieved.is_finite_val() {
            return Err(numerical_failure(format!("non-finite objective at iteration {}", t + 1), &trace));
        }

        x = out.x_next;
        f_x = f_next;
        tilde = factors_from_svd(&x);
        prev = Some((wh, grad));
        alpha_prev = out.alpha_used;
        objs.push(f_x);
        if stop_check(&objs, cfg.stop_tol, cfg.stop_window) {
            stop = StopReason::Converged;
            break;
        }
    }
    Ok(SolveOutput { x, factors: tilde, trace, stop })
}

/// Coordinate descent on the factorized problem at a fixed rank from a
/// random start; one trace row per epoch.
pub fn solve_mf_only<T: Scalar>(
    obs: &ObservationSet<T>,
    split: Option<&EvalSplit<T>>,
    cfg: &SolverConfig<T>,
    fixed_rank: usize,
    reference: Option<&Reference<T>>,
) -> Result<MfOnlyOutput<T>> {
    cfg.validate()?;
    if obs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if fixed_rank == 0 {
        return Err(Error::InvalidParameter("factorization rank must be positive".into()));
    }
    with_threads(cfg.threads, || {
        let clock = Instant::now();
        let elapsed = || if cfg.record_time { clock.elapsed().as_secs_f64() } else { 0.0 };
        let metrics = Metrics::new(split, reference)?;
        let (m, n) = (obs.nrows(), obs.ncols());
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        let scale = T::one() / T::of_usize(fixed_rank).sqrt();
        let mut draw = |rows| DMatrix::from_fn(rows, fixed_rank, |_, _| T::of(rng.random::<f64>()) * scale);
        let mut wf = FactorPair::new(draw(m), draw(n))?;
        let mut f = mf_objective(obs, &wf, cfg.lambda)?;
        let mut trace = IterationTrace::default();
        let mut rec = IterationRecord::initial(f.as_f64(), fixed_rank);
        rec.k_t = fixed_rank;
        metrics.fill(&mut rec, metrics.rmse_of_factors(&wf)?);
        trace.records.push(rec);
        let mut objs = vec![f];
        let mut stop = StopReason::MaxIterations;
        for t in 0..cfg.max_outer_iters {
            wf = bcd_epoch(obs, &wf, cfg.lambda)?;
            let next = mf_objective(obs, &wf, cfg.lambda)?;
            let mut rec = IterationRecord::initial(next.as_f64(), fixed_rank);
            rec.iter = t + 1;
            rec.k_t = fixed_rank;
            rec.work = t + 1;
            rec.guard_bound = f.as_f64();
            rec.mf_obj = next.as_f64();
            metrics.fill(&mut rec, metrics.rmse_of_factors(&wf)?);
            rec.time_s = elapsed();
            trace.records.push(rec);
            if !next.is_finite_val() {
                return Err(numerical_failure(format!("non-finite objective at epoch {}", t + 1), &trace));
            }
            if next > f + T::of(MONOTONE_SLACK) * f.abs() {
                return Err(Error::Internal("coordinate descent increased the objective".into()));
            }
            f = next;
            objs.push(f);
            if stop_check(&objs, cfg.stop_tol, cfg.stop_window) {
                stop = StopReason::Converged;
                break;
            }
        }
        Ok(MfOnlyOutput { factors: wf, trace, stop })
    })
}

//! The factorization phase: balanced factors of a lifted iterate and block
//! coordinate descent with exact row minimization.

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;

use crate::data::{loss_quad, residual_on_omega, residual_on_omega_svd, ObservationSet};
use crate::error::{Error, Result};
use crate::kernels::SvdTriplet;
use crate::operator::FactorPair;
use crate::scalar::Scalar;

/// Relative slack allowed when checking that an objective did not increase.
pub const MONOTONE_SLACK: f64 = 1e-12;

/// `W̃ = U diag(√σ)`, `H̃ = V diag(√σ)`.
pub fn factors_from_svd<T: Scalar>(x: &SvdTriplet<T>) -> FactorPair<T> {
    let mut w = x.u().clone();
    let mut h = x.v().clone();
    for (j, &s) in x.sigma().iter().enumerate() {
        let r = s.sqrt();
        w.column_mut(j).scale_mut(r);
        h.column_mut(j).scale_mut(r);
    }
    FactorPair::new(w, h).expect("triplet factors have matching ranks")
}

/// `f(W Hᵀ) + λ/2 (‖W‖²_F + ‖H‖²_F)`.
pub fn mf_objective<T: Scalar>(obs: &ObservationSet<T>, wf: &FactorPair<T>, lambda: T) -> Result<T> {
    let r = residual_on_omega(obs, wf)?;
    Ok(loss_quad(&r) + lambda * wf.half_squared_norms())
}

/// `f(X) + λ ‖X‖_*`.
pub fn mc_objective<T: Scalar>(obs: &ObservationSet<T>, x: &SvdTriplet<T>, lambda: T) -> Result<T> {
    let r = residual_on_omega_svd(obs, x)?;
    Ok(loss_quad(&r) + lambda * x.nuclear_norm())
}

/// Exact minimizer of `Σⱼ (wᵀ gⱼ − aⱼ)² + λ/2 ‖w‖²` over `w`, where the
/// `gⱼ` are the columns of `g` (`k × s`).
fn solve_row<T: Scalar>(g: &DMatrix<T>, a: &DVector<T>, lambda: T) -> DVector<T> {
    let k = g.nrows();
    if g.ncols() == 0 {
        return DVector::zeros(k);
    }
    let two = T::of(2.0);
    let mut normal = g * g.transpose() * two;
    for d in 0..k {
        normal[(d, d)] += lambda;
    }
    let rhs = g * a * two;
    Cholesky::new(normal).expect("λI + 2GGᵀ is positive definite for λ > 0").solve(&rhs)
}

fn row_objective<T: Scalar>(g: &DMatrix<T>, a: &DVector<T>, w: &DVector<T>, lambda: T) -> T {
    (g.tr_mul(w) - a).norm_squared() + lambda * T::of(0.5) * w.norm_squared()
}

/// New rows of `target` given the fixed factor `fixed_t` (`k × n`, transposed
/// for contiguous columns). `rows(i)` lists `(column, value)` for row `i`.
fn half_sweep<T: Scalar, F>(target: &DMatrix<T>, fixed_t: &DMatrix<T>, lambda: T, rows: F) -> DMatrix<T>
where
    F: Fn(usize) -> (Vec<usize>, Vec<T>) + Sync,
{
    let (count, k) = target.shape();
    let new_rows: Vec<DVector<T>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let (cols, vals) = rows(i);
            let mut g = DMatrix::zeros(k, cols.len());
            for (c, &j) in cols.iter().enumerate() {
                g.column_mut(c).copy_from(&fixed_t.column(j));
            }
            let a = DVector::from_vec(vals);
            let w = solve_row(&g, &a, lambda);
            if cfg!(debug_assertions) {
                let old = target.row(i).transpose();
                let (before, after) = (row_objective(&g, &a, &old, lambda), row_objective(&g, &a, &w, lambda));
                debug_assert!(after <= before + T::of(MONOTONE_SLACK) * before.abs().max(T::one()), "row update increased objective");
            }
            w
        })
        .collect();
    let mut out = DMatrix::zeros(count, k);
    for (i, w) in new_rows.iter().enumerate() {
        out.row_mut(i).copy_from(&w.transpose());
    }
    out
}

/// One sweep over all rows of `W`, then all rows of `H`, each set to the
/// exact minimizer of the objective with everything else fixed.
pub fn bcd_epoch<T: Scalar>(obs: &ObservationSet<T>, wf: &FactorPair<T>, lambda: T) -> Result<FactorPair<T>> {
    if !(lambda > T::zero()) {
        return Err(Error::InvalidParameter("coordinate descent needs a positive regularization".into()));
    }
    if wf.nrows() != obs.nrows() || wf.ncols() != obs.ncols() {
        return Err(crate::error::dim_err("factor shape does not match the observations"));
    }
    let values = obs.values();
    let ht = wf.h().transpose();
    let w = half_sweep(wf.w(), &ht, lambda, |i| {
        let (cols, vals) = obs.row(i);
        (cols.to_vec(), vals.to_vec())
    });
    let wt = w.transpose();
    let h = half_sweep(wf.h(), &wt, lambda, |j| {
        let (rows, pos) = obs.col(j);
        (rows.to_vec(), pos.iter().map(|&p| values[p]).collect())
    });
    FactorPair::new(w, h)
}

/// Result of [`mf_phase`].
#[derive(Debug, Clone)]
pub struct MfPhaseOutput<T: Scalar> {
    pub factors: FactorPair<T>,
    /// Objective at the start and after every epoch.
    pub objectives: Vec<T>,
}

/// Runs `epochs` sweeps of [`bcd_epoch`] and checks that the objective never
/// increases, so the result satisfies `F(W, H) ≤ F(start)`.
pub fn mf_phase<T: Scalar>(obs: &ObservationSet<T>, start: &FactorPair<T>, lambda: T, epochs: usize) -> Result<MfPhaseOutput<T>> {
    let mut factors = start.clone();
    let mut objectives = vec![mf_objective(obs, &factors, lambda)?];
    for _ in 0..epochs {
        factors = bcd_epoch(obs, &factors, lambda)?;
        let f = mf_objective(obs, &factors, lambda)?;
        let prev = *objectives.last().expect("nonempty");
        if !f.is_finite_val() {
            return Err(Error::Internal("non-finite objective in coordinate descent".into()));
        }
        if f > prev + T::of(MONOTONE_SLACK) * prev.abs() {
            return Err(Error::Internal(format!("coordinate descent increased the objective: {} -> {}", prev.as_f64(), f.as_f64())));
        }
        objectives.push(f);
    }
    Ok(MfPhaseOutput { factors, objectives })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{gaussian_block, orthonormalize};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_obs(m: usize, n: usize, p: f64, rng: &mut ChaCha8Rng) -> ObservationSet<f64> {
        let mut t = Vec::new();
        for i in 0..m {
            for j in 0..n {
                if rng.random::<f64>() < p {
                    t.push((i, j, rng.random_range(-2.0..2.0)));
                }
            }
        }
        ObservationSet::from_triplets(m, n, t).unwrap()
    }

    fn random_triplet(m: usize, n: usize, k: usize, rng: &mut ChaCha8Rng) -> SvdTriplet<f64> {
        let u = orthonormalize(&gaussian_block(m, k, rng), 1e-10).0;
        let v = orthonormalize(&gaussian_block(n, k, rng), 1e-10).0;
        let mut s: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..3.0)).collect();
        s.sort_by(|a, b| b.partial_cmp(a).unwrap());
        SvdTriplet::new(u, DVector::from_vec(s), v).unwrap()
    }

    #[test]
    fn balanced_factors() {
        let x = SvdTriplet::new(DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, 4.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let wf = factors_from_svd(&x);
        assert_eq!(wf.w()[(0, 0)], 2.0);
        assert_eq!(wf.h()[(0, 0)], 2.0);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_triplet(12, 15, 4, &mut rng);
        let wf = factors_from_svd(&x);
        assert!((wf.half_squared_norms() - x.nuclear_norm()).abs() < 1e-10);
        assert!((wf.to_dense() - x.to_dense()).norm() < 1e-10);
    }

    #[test]
    fn objectives_agree_through_lemma_factors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let obs = random_obs(10, 12, 0.5, &mut rng);
        let x = random_triplet(10, 12, 3, &mut rng);
        let a = mf_objective(&obs, &factors_from_svd(&x), 0.7).unwrap();
        let b = mc_objective(&obs, &x, 0.7).unwrap();
        assert!((a - b).abs() < 1e-10 * b);
        let zero = FactorPair::zeros(10, 12, 2);
        assert!((mf_objective(&obs, &zero, 1.0).unwrap() - obs.squared_norm()).abs() < 1e-12);
    }

    #[test]
    fn scalar_normal_equation() {
        let obs = ObservationSet::from_triplets(1, 1, vec![(0, 0, 3.0)]).unwrap();
        let wf = FactorPair::new(DMatrix::from_element(1, 1, 0.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let ht = wf.h().transpose();
        let w = half_sweep(wf.w(), &ht, 0.5f64, |i| {
            let (c, v) = obs.row(i);
            (c.to_vec(), v.to_vec())
        });
        assert!((w[(0, 0)] - 2.0f64 * 3.0 / (0.5 + 2.0)).abs() < 1e-15);
    }

    fn dense_bcd(a: &DMatrix<f64>, mask: &DMatrix<bool>, w: &DMatrix<f64>, h: &DMatrix<f64>, lambda: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let k = w.ncols();
        let mut w = w.clone();
        let mut h = h.clone();
        for i in 0..w.nrows() {
            let mut normal = DMatrix::identity(k, k) * lambda;
            let mut rhs = DVector::zeros(k);
            for j in 0..h.nrows() {
                if mask[(i, j)] {
                    let hj = h.row(j).transpose();
                    normal += &hj * hj.transpose() * 2.0;
                    rhs += hj * (2.0 * a[(i, j)]);
                }
            }
            w.set_row(i, &normal.lu().solve(&rhs).unwrap().transpose());
        }
        for j in 0..h.nrows() {
            let mut normal = DMatrix::identity(k, k) * lambda;
            let mut rhs = DVector::zeros(k);
            for i in 0..w.nrows() {
                if mask[(i, j)] {
                    let wi = w.row(i).transpose();
                    normal += &wi * wi.transpose() * 2.0;
                    rhs += wi * (2.0 * a[(i, j)]);
                }
            }
            h.set_row(j, &normal.lu().solve(&rhs).unwrap().transpose());
        }
        (w, h)
    }

    #[test]
    fn epoch_matches_dense_reference_and_descends() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let obs = random_obs(10, 12, 0.4, &mut rng);
        let wf = FactorPair::new(gaussian_block(10, 3, &mut rng), gaussian_block(12, 3, &mut rng)).unwrap();
        let lambda = 0.3;
        let next = bcd_epoch(&obs, &wf, lambda).unwrap();
        let mask = DMatrix::from_fn(10, 12, |i, j| obs.get(i, j).is_some());
        let (dw, dh) = dense_bcd(&obs.to_dense(), &mask, wf.w(), wf.h(), lambda);
        assert!((next.w() - dw).norm() < 1e-10);
        assert!((next.h() - dh).norm() < 1e-10);
        assert!(mf_objective(&obs, &next, lambda).unwrap() <= mf_objective(&obs, &wf, lambda).unwrap());
    }

    #[test]
    fn fixed_point_and_stationarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let obs = random_obs(8, 9, 0.6, &mut rng);
        let lambda = 0.5;
        let mut wf = FactorPair::new(gaussian_block(8, 2, &mut rng), gaussian_block(9, 2, &mut rng)).unwrap();
        for _ in 0..3000 {
            wf = bcd_epoch(&obs, &wf, lambda).unwrap();
        }
        let again = bcd_epoch(&obs, &wf, lambda).unwrap();
        assert!((again.w() - wf.w()).norm() < 1e-12 && (again.h() - wf.h()).norm() < 1e-12);
        // ∇_W F = 2 P_Ω(WHᵀ − A) H + λ W
        let r = residual_on_omega(&obs, &wf).unwrap();
        let mut g = DMatrix::zeros(8, 9);
        for ((i, j, _), &v) in obs.iter().zip(r.values()) {
            g[(i, j)] = 2.0 * v;
        }
        let gw = &g * wf.h() + wf.w() * lambda;
        let gh = g.transpose() * wf.w() + wf.h() * lambda;
        for i in 0..8 {
            assert!(gw.row(i).norm() < 1e-8);
        }
        for j in 0..9 {
            assert!(gh.row(j).norm() < 1e-8);
        }
    }

    #[test]
    fn phase_is_monotone_and_zero_epochs_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let obs = random_obs(15, 20, 0.3, &mut rng);
        let wf = FactorPair::new(gaussian_block(15, 4, &mut rng), gaussian_block(20, 4, &mut rng)).unwrap();
        let out = mf_phase(&obs, &wf, 0.2, 0).unwrap();
        assert_eq!(out.factors, wf);
        let out = mf_phase(&obs, &wf, 0.2, 3).unwrap();
        assert_eq!(out.objectives.len(), 4);
        for w in out.objectives.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn rejects_nonpositive_lambda() {
        let obs = ObservationSet::from_triplets(1, 1, vec![(0, 0, 1.0)]).unwrap();
        assert!(bcd_epoch(&obs, &FactorPair::zeros(1, 1, 1), 0.0).is_err());
    }
}

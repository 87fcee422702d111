//! Dense brute-force references for small problems.
//!
//! Everything here materializes `m × n` matrices and refuses inputs above
//! [`ORACLE_CAP`] entries.

use nalgebra::{DMatrix, DVector, SVD};

use crate::data::ObservationSet;
use crate::error::{Error, Result};
use crate::kernels::{soft_threshold, sym_eig_desc, SvdTriplet, SIGMA_FLOOR};
use crate::scalar::Scalar;

pub const ORACLE_CAP: usize = 1_000_000;

fn check_cap(m: usize, n: usize) -> Result<()> {
    if m.saturating_mul(n) > ORACLE_CAP {
        return Err(Error::Capacity(format!("dense oracle refuses a {m}x{n} matrix")));
    }
    Ok(())
}

/// Thin SVD from the eigendecomposition of the dilation `[0 Z; Zᵀ 0]`.
///
/// Returns the singular triplets with `σ > SIGMA_FLOOR · σ₁`.
pub fn dense_svd_dilation<T: Scalar>(z: &DMatrix<T>) -> Result<SvdTriplet<T>> {
    let (m, n) = z.shape();
    check_cap(m, n)?;
    let mut d = DMatrix::zeros(m + n, m + n);
    d.view_mut((0, m), (m, n)).copy_from(z);
    d.view_mut((m, 0), (n, m)).copy_from(&z.transpose());
    let (vals, vecs) = sym_eig_desc(&d);
    let r = m.min(n);
    let top = if r > 0 { vals[0] } else { T::zero() };
    let floor = top * T::of(SIGMA_FLOOR);
    let mut us = Vec::new();
    let mut vs = Vec::new();
    let mut ss = Vec::new();
    for i in 0..r {
        if !(vals[i] > floor) || vals[i] <= T::zero() {
            break;
        }
        let u = vecs.view((0, i), (m, 1)).clone_owned();
        let v = vecs.view((m, i), (n, 1)).clone_owned();
        let (nu, nv) = (u.norm(), v.norm());
        us.push(DVector::from_column_slice((u / nu).as_slice()));
        vs.push(DVector::from_column_slice((v / nv).as_slice()));
        ss.push(vals[i]);
    }
    if ss.is_empty() {
        return Ok(SvdTriplet::empty(m, n));
    }
    SvdTriplet::new(DMatrix::from_columns(&us), DVector::from_vec(ss), DMatrix::from_columns(&vs))
}

/// Soft-thresholded SVD of a dense matrix: the exact nuclear-norm prox.
pub fn dense_prox_exact<T: Scalar>(z: &DMatrix<T>, threshold: T) -> Result<SvdTriplet<T>> {
    let full = dense_svd_dilation(z)?;
    Ok(threshold_triplet(full, threshold))
}

fn threshold_triplet<T: Scalar>(full: SvdTriplet<T>, threshold: T) -> SvdTriplet<T> {
    let (m, n) = (full.nrows(), full.ncols());
    let t = soft_threshold(full.sigma().as_slice(), threshold);
    if t.kept.is_empty() {
        return SvdTriplet::empty(m, n);
    }
    let u = full.u().columns(0, t.kept.len()).clone_owned();
    let v = full.v().columns(0, t.kept.len()).clone_owned();
    SvdTriplet::new(u, DVector::from_vec(t.sigma), v).expect("thresholded spectrum stays sorted and positive")
}

/// Same prox through a LAPACK-style dense SVD; used by the iterative reference.
fn dense_prox_fast<T: Scalar>(z: &DMatrix<T>, threshold: T) -> DMatrix<T> {
    let svd = SVD::new(z.clone(), true, true);
    let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut x = DMatrix::zeros(z.nrows(), z.ncols());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        let shrunk = s - threshold;
        if shrunk > T::zero() {
            x += u.column(i) * vt.row(i) * shrunk;
        }
    }
    x
}

/// Output of [`dense_pg_reference`].
#[derive(Debug, Clone)]
pub struct PgReference<T: Scalar> {
    pub x: DMatrix<T>,
    pub objective: T,
    /// Objective after every iteration, the starting point first.
    pub objectives: Vec<T>,
    /// Iterations actually performed; fewer than requested only when an
    /// iterate was reproduced exactly.
    pub iters: usize,
}

fn dense_objective<T: Scalar>(obs: &ObservationSet<T>, x: &DMatrix<T>, nuclear: T, lambda: T) -> T {
    let loss = obs.iter().fold(T::zero(), |acc, (i, j, a)| {
        let r = x[(i, j)] - a;
        acc + r * r
    });
    loss + lambda * nuclear
}

fn nuclear_dense<T: Scalar>(x: &DMatrix<T>) -> T {
    SVD::new(x.clone(), false, false).singular_values.iter().fold(T::zero(), |a, &s| a + s)
}

/// Exact proximal gradient from `X = 0` with a fixed stepsize.
pub fn dense_pg_reference<T: Scalar>(obs: &ObservationSet<T>, lambda: T, iters: usize, step: T) -> Result<PgReference<T>> {
    let (m, n) = (obs.nrows(), obs.ncols());
    check_cap(m, n)?;
    if !(step > T::zero()) {
        return Err(Error::InvalidParameter("stepsize must be positive".into()));
    }
    let mut x = DMatrix::zeros(m, n);
    let mut objectives = vec![dense_objective(obs, &x, T::zero(), lambda)];
    let mut done = 0;
    for _ in 0..iters {
        let mut z = x.clone();
        for (i, j, a) in obs.iter() {
            z[(i, j)] -= step * T::of(2.0) * (x[(i, j)] - a);
        }
        let next = dense_prox_fast(&z, step * lambda);
        done += 1;
        let same = next == x;
        x = next;
        if same {
            break;
        }
        if done % 100 == 0 || done == iters {
            objectives.push(dense_objective(obs, &x, nuclear_dense(&x), lambda));
        }
    }
    let objective = dense_objective(obs, &x, nuclear_dense(&x), lambda);
    if objectives.len() == 1 || *objectives.last().expect("nonempty") != objective {
        objectives.push(objective);
    }
    Ok(PgReference { x, objective, objectives, iters: done })
}

/// Top-`k` eigenpairs of a symmetric matrix, eigenvalues nonincreasing.
pub fn dense_eig_topk<T: Scalar>(s: &DMatrix<T>, k: usize) -> Result<(DVector<T>, DMatrix<T>)> {
    let n = s.nrows();
    if s.ncols() != n {
        return Err(crate::error::dim_err("eigendecomposition of a non-square matrix"));
    }
    if k > n {
        return Err(crate::error::dim_err(format!("requested {k} eigenpairs of a {n}x{n} matrix")));
    }
    check_cap(n, n)?;
    let (vals, vecs) = sym_eig_desc(s);
    Ok((vals.rows(0, k).clone_owned(), vecs.columns(0, k).clone_owned()))
}

/// `‖G + λ W*‖_F` minimized over `W* ∈ ∂‖X‖_* − U Vᵀ` for `X = U Σ Vᵀ`.
///
/// `g` already includes the `λ U Vᵀ` term. The tangent part survives
/// unchanged; on the orthogonal complement the spectral norm ball of radius
/// `λ` absorbs singular values up to `λ`.
pub fn min_norm_with_basis<T: Scalar>(g: &DMatrix<T>, u: &DMatrix<T>, v: &DMatrix<T>, lambda: T) -> Result<T> {
    let (m, n) = g.shape();
    check_cap(m, n)?;
    let utg = u.tr_mul(g); // k × n
    let gv = g * v; // m × k
    let perp_gv = &gv - u * (u.tr_mul(&gv));
    let tangent = utg.norm_squared() + perp_gv.norm_squared();
    // (I − UUᵀ) G (I − VVᵀ)
    let left = g - u * &utg;
    let perp = &left - (&left * v) * v.transpose();
    let s = SVD::new(perp, false, false).singular_values;
    let clipped = s.iter().fold(T::zero(), |acc, &si| {
        let e = (si - lambda).max(T::zero());
        acc + e * e
    });
    Ok((tangent + clipped).sqrt())
}

/// Distance from zero to `grad + λ ∂‖X‖_*`.
pub fn min_norm_subgradient<T: Scalar>(x: &DMatrix<T>, grad: &DMatrix<T>, lambda: T) -> Result<T> {
    if x.shape() != grad.shape() {
        return Err(crate::error::dim_err("iterate and gradient shapes differ"));
    }
    let svd = dense_svd_dilation(x)?;
    // drop directions that are zero up to round-off
    let top = svd.max_singular_value();
    let keep = svd.sigma().iter().take_while(|&&s| s > top * T::of(1e-10)).count();
    let u = svd.u().columns(0, keep).clone_owned();
    let v = svd.v().columns(0, keep).clone_owned();
    let g = grad + &u * v.transpose() * lambda;
    min_norm_with_basis(&g, &u, &v, lambda)
}

/// `f(X) + λ‖X‖_*` for a dense `X`.
pub fn dense_mc_objective<T: Scalar>(obs: &ObservationSet<T>, x: &DMatrix<T>, lambda: T) -> Result<T> {
    check_cap(x.nrows(), x.ncols())?;
    if x.shape() != (obs.nrows(), obs.ncols()) {
        return Err(crate::error::dim_err("iterate shape differs from the observations"));
    }
    Ok(dense_objective(obs, x, nuclear_dense(x), lambda))
}

/// Dense `∇f(X) = 2 P_Ω(X − A)`.
pub fn dense_gradient<T: Scalar>(obs: &ObservationSet<T>, x: &DMatrix<T>) -> DMatrix<T> {
    let mut g = DMatrix::zeros(x.nrows(), x.ncols());
    for (i, j, a) in obs.iter() {
        g[(i, j)] = T::of(2.0) * (x[(i, j)] - a);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::gaussian_block;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn prox_trivial_cases() {
        let z = DMatrix::<f64>::zeros(3, 4);
        assert_eq!(dense_prox_exact(&z, 1.0).unwrap().rank(), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = gaussian_block::<f64, _>(5, 7, &mut rng);
        let x = dense_prox_exact(&z, 0.0).unwrap();
        assert_eq!(x.rank(), 5);
        assert!((x.to_dense() - &z).norm() < 1e-12);
    }

    #[test]
    fn dilation_matches_library_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = gaussian_block::<f64, _>(30, 40, &mut rng);
        let a = dense_svd_dilation(&z).unwrap();
        let b = SVD::new(z.clone(), false, false).singular_values;
        for i in 0..30 {
            assert!((a.sigma()[i] - b[i]).abs() < 1e-11 * b[0]);
        }
        assert!(a.orthonormality_error() < 1e-10);
        let p = dense_prox_exact(&z, 2.0).unwrap();
        let q = dense_prox_fast(&z, 2.0);
        assert!((p.to_dense() - q).norm() < 1e-10);
    }

    #[test]
    fn prox_beats_random_candidates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = gaussian_block::<f64, _>(8, 10, &mut rng);
        let t = 1.5;
        let model = |y: &DMatrix<f64>| 0.5 * (y - &z).norm_squared() + t * nuclear_dense(y);
        let best = model(&dense_prox_exact(&z, t).unwrap().to_dense());
        for _ in 0..100 {
            let y = gaussian_block::<f64, _>(8, 10, &mut rng) * rng.random_range(0.0..1.0);
            assert!(best <= model(&y));
        }
    }

    fn small_obs(rng: &mut ChaCha8Rng) -> ObservationSet<f64> {
        let mut t = Vec::new();
        for i in 0..12 {
            for j in 0..15 {
                if rng.random::<f64>() < 0.5 {
                    t.push((i, j, rng.random_range(-1.0..1.0)));
                }
            }
        }
        ObservationSet::from_triplets(12, 15, t).unwrap()
    }

    #[test]
    fn pg_reference_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let obs = small_obs(&mut rng);
        let big = dense_pg_reference(&obs, 1e3, 10, 0.5).unwrap();
        assert_eq!(big.x, DMatrix::zeros(12, 15));
        assert!((big.objective - obs.squared_norm()).abs() < 1e-12);

        let lambda = 0.4;
        let one = dense_pg_reference(&obs, lambda, 1, 0.5).unwrap();
        let z = -dense_gradient(&obs, &DMatrix::zeros(12, 15)) * 0.5;
        let expect = dense_prox_exact(&z, lambda * 0.5).unwrap().to_dense();
        assert!((one.x - expect).norm() < 1e-10);

        let run = dense_pg_reference(&obs, lambda, 2000, 0.5).unwrap();
        for w in run.objectives.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0]);
        }
        let g = dense_gradient(&obs, &run.x);
        assert!(min_norm_subgradient(&run.x, &g, lambda).unwrap() <= 1e-6);
    }

    #[test]
    fn eig_topk_cases() {
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0]));
        let (v, _) = dense_eig_topk(&d, 2).unwrap();
        assert_eq!(v.as_slice(), &[3.0, 1.0]);
        let (v, _) = dense_eig_topk(&DMatrix::<f64>::identity(4, 4), 4).unwrap();
        assert!(v.iter().all(|&x| (x - 1.0).abs() < 1e-15));
    }

    #[test]
    fn eig_topk_matches_cubic_roots() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = gaussian_block::<f64, _>(3, 3, &mut rng);
        let s = &b * b.transpose();
        let (vals, _) = dense_eig_topk(&s, 3).unwrap();
        // characteristic polynomial λ³ − c₂λ² + c₁λ − c₀ solved trigonometrically
        let c2 = s.trace();
        let c1 = s[(0, 0)] * s[(1, 1)] + s[(0, 0)] * s[(2, 2)] + s[(1, 1)] * s[(2, 2)]
            - s[(0, 1)] * s[(1, 0)]
            - s[(0, 2)] * s[(2, 0)]
            - s[(1, 2)] * s[(2, 1)];
        let c0 = s.determinant();
        let p = c1 - c2 * c2 / 3.0;
        let q = -2.0 * c2.powi(3) / 27.0 + c2 * c1 / 3.0 - c0;
        let r = 2.0 * (-p / 3.0).sqrt();
        let phi = (3.0 * q / (p * r)).clamp(-1.0, 1.0).acos() / 3.0;
        let mut roots: Vec<f64> = (0..3).map(|k| r * (phi - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos() + c2 / 3.0).collect();
        roots.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for i in 0..3 {
            assert!((vals[i] - roots[i]).abs() < 1e-9 * vals[0], "{} vs {}", vals[i], roots[i]);
        }
    }

    #[test]
    fn subgradient_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = gaussian_block::<f64, _>(6, 7, &mut rng);
        let x = gaussian_block::<f64, _>(6, 2, &mut rng) * gaussian_block::<f64, _>(2, 7, &mut rng);
        assert!((min_norm_subgradient(&x, &g, 0.0).unwrap() - g.norm()).abs() < 1e-10);

        let zero = DMatrix::zeros(6, 7);
        let s = SVD::new(g.clone(), false, false).singular_values;
        let lam = s[2];
        let expect: f64 = s.iter().map(|&v| (v - lam).max(0.0).powi(2)).sum::<f64>().sqrt();
        assert!((min_norm_subgradient(&zero, &g, lam).unwrap() - expect).abs() < 1e-10);
        assert_eq!(min_norm_subgradient(&zero, &g, s[0] * 1.0001).unwrap(), 0.0);
    }

    #[test]
    fn caps_are_enforced() {
        let obs = ObservationSet::from_triplets(2000, 1000, vec![(0, 0, 1.0)]).unwrap();
        assert!(matches!(dense_pg_reference(&obs, 1.0, 1, 0.5), Err(Error::Capacity(_))));
    }
}

//! Rating data: ingestion, the sparse observation structure and the
//! quadratic loss `f(X) = ||P_Ω(X - A)||_F^2` evaluated on it.
//!
//! Observations are kept row-compressed with column-sorted entries per row.
//! A column-compressed index over the same entries is built once so that
//! products with the transpose of a sparse matrix on the pattern are as cheap
//! as products with the matrix itself.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{dim_err, Error, Result};
use crate::kernels::{gaussian_block, SvdTriplet};
use crate::operator::FactorPair;
use crate::scalar::{det_sum, det_sum2, Scalar};

/// Sparse set of observed entries `A` restricted to `Ω`.
#[derive(Debug, Clone)]
pub struct ObservationSet<T> {
    m: usize,
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
    col_ptr: Vec<usize>,
    col_rows: Vec<usize>,
    // position in row-major order of each column-major entry
    col_perm: Vec<usize>,
    transposed: bool,
}

impl<T: Scalar> ObservationSet<T> {
    /// Builds the set from `(row, col, value)` triplets in any order.
    ///
    /// Duplicated positions are rejected.
    pub fn from_triplets(m: usize, n: usize, mut triplets: Vec<(usize, usize, T)>) -> Result<Self> {
        for &(i, j, _) in &triplets {
            if i >= m || j >= n {
                return Err(Error::OutOfRange { row: i, col: j, m, n });
            }
        }
        triplets.sort_by_key(|&(i, j, _)| (i, j));
        for w in triplets.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                return Err(Error::Duplicate { row: w[0].0 as u64, col: w[0].1 as u64, line: None });
            }
        }
        let mut row_ptr = vec![0usize; m + 1];
        for &(i, _, _) in &triplets {
            row_ptr[i + 1] += 1;
        }
        for i in 0..m {
            row_ptr[i + 1] += row_ptr[i];
        }
        let col_idx = triplets.iter().map(|t| t.1).collect();
        let values = triplets.iter().map(|t| t.2).collect();
        Ok(Self::from_csr(m, n, row_ptr, col_idx, values, false))
    }

    fn from_csr(m: usize, n: usize, row_ptr: Vec<usize>, col_idx: Vec<usize>, values: Vec<T>, transposed: bool) -> Self {
        let nnz = values.len();
        let mut col_ptr = vec![0usize; n + 1];
        for &j in &col_idx {
            col_ptr[j + 1] += 1;
        }
        for j in 0..n {
            col_ptr[j + 1] += col_ptr[j];
        }
        let mut next = col_ptr.clone();
        let mut col_rows = vec![0usize; nnz];
        let mut col_perm = vec![0usize; nnz];
        for i in 0..m {
            for (q, &j) in col_idx.iter().enumerate().take(row_ptr[i + 1]).skip(row_ptr[i]) {
                let slot = next[j];
                col_rows[slot] = i;
                col_perm[slot] = q;
                next[j] += 1;
            }
        }
        Self { m, n, row_ptr, col_idx, values, col_ptr, col_rows, col_perm, transposed }
    }

    /// Returns the transposed observation set with the `transposed` flag flipped.
    pub fn transpose(&self) -> Self {
        let values = self.col_perm.iter().map(|&q| self.values[q]).collect();
        Self::from_csr(self.n, self.m, self.col_ptr.clone(), self.col_rows.clone(), values, !self.transposed)
    }

    /// Transposes if needed so that `nrows() <= ncols()`.
    pub fn normalized(self) -> Self {
        if self.m > self.n {
            self.transpose()
        } else {
            self
        }
    }

    pub fn nrows(&self) -> usize {
        self.m
    }

    pub fn ncols(&self) -> usize {
        self.n
    }

    /// Number of observed entries `|Ω|`.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_transposed(&self) -> bool {
        self.transposed
    }

    /// Observed values in row-major order.
    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[T]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub(crate) fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.row_ptr[i]..self.row_ptr[i + 1]
    }

    /// Row indices of column `j` together with the row-major positions of
    /// those entries.
    pub fn col(&self, j: usize) -> (&[usize], &[usize]) {
        let r = self.col_ptr[j]..self.col_ptr[j + 1];
        (&self.col_rows[r.clone()], &self.col_perm[r])
    }

    /// Iterates `(row, col, value)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.m).flat_map(move |i| {
            let r = self.row_range(i);
            r.map(move |q| (i, self.col_idx[q], self.values[q]))
        })
    }

    /// Looks up an observed value.
    pub fn get(&self, i: usize, j: usize) -> Option<T> {
        if i >= self.m {
            return None;
        }
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).ok().map(|p| vals[p])
    }

    /// `‖P_Ω(A)‖_F^2`, i.e. the loss at `X = 0`.
    pub fn squared_norm(&self) -> T {
        det_sum(&self.values, |v| v * v)
    }

    /// `scale · S · rhs` where `S` is the sparse matrix with `vals` on this
    /// pattern (row-major order) and `rhs` is `n × p`.
    pub fn spmm(&self, vals: &[T], scale: T, rhs: &DMatrix<T>) -> Result<DMatrix<T>> {
        if vals.len() != self.len() || rhs.nrows() != self.n {
            return Err(dim_err(format!(
                "sparse product: pattern {}x{} with {} values against {}x{} block",
                self.m,
                self.n,
                vals.len(),
                rhs.nrows(),
                rhs.ncols()
            )));
        }
        let p = rhs.ncols();
        if p == 0 {
            return Ok(DMatrix::zeros(self.m, 0));
        }
        let rhs_t = rhs.transpose();
        let mut out_t = DMatrix::<T>::zeros(p, self.m);
        out_t.as_mut_slice().par_chunks_mut(p).enumerate().for_each(|(i, out)| {
            for q in self.row_range(i) {
                let v = vals[q] * scale;
                let src = &rhs_t.as_slice()[self.col_idx[q] * p..(self.col_idx[q] + 1) * p];
                for (o, &s) in out.iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        });
        Ok(out_t.transpose())
    }

    /// `scale · Sᵀ · rhs` for an `m × p` block.
    pub fn spmm_t(&self, vals: &[T], scale: T, rhs: &DMatrix<T>) -> Result<DMatrix<T>> {
        if vals.len() != self.len() || rhs.nrows() != self.m {
            return Err(dim_err(format!(
                "transposed sparse product: pattern {}x{} against {}x{} block",
                self.m,
                self.n,
                rhs.nrows(),
                rhs.ncols()
            )));
        }
        let p = rhs.ncols();
        if p == 0 {
            return Ok(DMatrix::zeros(self.n, 0));
        }
        let rhs_t = rhs.transpose();
        let mut out_t = DMatrix::<T>::zeros(p, self.n);
        out_t.as_mut_slice().par_chunks_mut(p).enumerate().for_each(|(j, out)| {
            let (rows, pos) = self.col(j);
            for (&i, &q) in rows.iter().zip(pos) {
                let v = vals[q] * scale;
                let src = &rhs_t.as_slice()[i * p..(i + 1) * p];
                for (o, &s) in out.iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        });
        Ok(out_t.transpose())
    }

    /// Dense `m × n` matrix with the observed values and zeros elsewhere.
    pub fn to_dense(&self) -> DMatrix<T> {
        let mut a = DMatrix::zeros(self.m, self.n);
        for (i, j, v) in self.iter() {
            a[(i, j)] = v;
        }
        a
    }
}

/// Held-out entries `Ω_test` on the same index space as a training set.
#[derive(Debug, Clone)]
pub struct EvalSplit<T> {
    set: ObservationSet<T>,
}

impl<T: Scalar> EvalSplit<T> {
    pub fn new(set: ObservationSet<T>) -> Self {
        Self { set }
    }

    pub fn entries(&self) -> &ObservationSet<T> {
        &self.set
    }

    pub fn len(&self) -> usize {
        self.set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.set.is_empty()
    }
}

/// Residual values `r_ij = X_ij - A_ij` on the training pattern, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseResidual<T> {
    values: Vec<T>,
}

/// Gradient `∇f(X) = 2 P_Ω(X - A)` of the quadratic loss, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGradient<T> {
    values: Vec<T>,
}

impl<T: Scalar> SparseResidual<T> {
    pub fn from_values(values: Vec<T>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The loss gradient on `Ω`.
    pub fn gradient(&self) -> SparseGradient<T> {
        let two = T::of(2.0);
        SparseGradient { values: self.values.iter().map(|&r| two * r).collect() }
    }
}

impl<T: Scalar> SparseGradient<T> {
    pub fn from_values(values: Vec<T>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `‖∇f‖_F`.
    pub fn norm(&self) -> T {
        det_sum(&self.values, |v| v * v).sqrt()
    }
}

/// Evaluates `(L Rᵀ)_ij - A_ij` on the pattern of `obs`.
pub(crate) fn residual_from_factors<T: Scalar>(
    obs: &ObservationSet<T>,
    left: &DMatrix<T>,
    right: &DMatrix<T>,
) -> Result<SparseResidual<T>> {
    if left.nrows() != obs.nrows() || right.nrows() != obs.ncols() || left.ncols() != right.ncols() {
        return Err(dim_err(format!(
            "factors {}x{} and {}x{} do not match a {}x{} observation set",
            left.nrows(),
            left.ncols(),
            right.nrows(),
            right.ncols(),
            obs.nrows(),
            obs.ncols()
        )));
    }
    let k = left.ncols();
    if k == 0 {
        return Ok(SparseResidual { values: obs.values().iter().map(|&a| -a).collect() });
    }
    let lt = left.transpose();
    let rt = right.transpose();
    let (ls, rs) = (lt.as_slice(), rt.as_slice());
    let values = (0..obs.nrows())
        .into_par_iter()
        .flat_map_iter(|i| {
            let li = &ls[i * k..(i + 1) * k];
            obs.row_range(i).map(move |q| {
                let j = obs.col_idx[q];
                let rj = &rs[j * k..(j + 1) * k];
                let dot = li.iter().zip(rj).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
                dot - obs.values[q]
            })
        })
        .collect();
    Ok(SparseResidual { values })
}

/// Residual of the factored iterate `X = W Hᵀ` on `Ω`.
pub fn residual_on_omega<T: Scalar>(obs: &ObservationSet<T>, wf: &FactorPair<T>) -> Result<SparseResidual<T>> {
    residual_from_factors(obs, wf.w(), wf.h())
}

/// Residual of `X = U diag(σ) Vᵀ` on `Ω`.
pub fn residual_on_omega_svd<T: Scalar>(obs: &ObservationSet<T>, x: &SvdTriplet<T>) -> Result<SparseResidual<T>> {
    if x.nrows() != obs.nrows() || x.ncols() != obs.ncols() {
        return Err(dim_err(format!(
            "triplet {}x{} does not match a {}x{} observation set",
            x.nrows(),
            x.ncols(),
            obs.nrows(),
            obs.ncols()
        )));
    }
    residual_from_factors(obs, &x.left_scaled(), x.v())
}

/// Quadratic loss `Σ r_ij²` (no ½ factor, so the gradient is 2-Lipschitz).
pub fn loss_quad<T: Scalar>(res: &SparseResidual<T>) -> T {
    det_sum(&res.values, |r| r * r)
}

/// `Σ_Ω (a_ij - b_ij)²` for two residuals on the same pattern.
pub(crate) fn residual_gap_sq<T: Scalar>(a: &SparseResidual<T>, b: &SparseResidual<T>) -> T {
    det_sum2(&a.values, &b.values, |x, y| (x - y) * (x - y))
}

/// Root mean squared error of `x` on the held-out entries.
pub fn rmse<T: Scalar>(split: &EvalSplit<T>, x: &SvdTriplet<T>) -> Result<T> {
    if split.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let res = residual_on_omega_svd(&split.set, x)?;
    Ok((loss_quad(&res) / T::of_usize(split.len())).sqrt())
}

/// Root mean squared error of `W Hᵀ` on the held-out entries.
pub fn rmse_factors<T: Scalar>(split: &EvalSplit<T>, wf: &FactorPair<T>) -> Result<T> {
    if split.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let res = residual_on_omega(&split.set, wf)?;
    Ok((loss_quad(&res) / T::of_usize(split.len())).sqrt())
}

/// Supported text layouts for rating files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RatingFormat {
    /// `user item rating [timestamp]`, whitespace separated, 1-based ids.
    #[default]
    MovielensTsv,
}

/// Maps compact matrix indices back to the ids used in the source files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdMap {
    /// Source id of every matrix row.
    pub rows: Vec<u64>,
    /// Source id of every matrix column.
    pub cols: Vec<u64>,
    /// True when rows are items and columns are users.
    pub transposed: bool,
}

impl IdMap {
    /// Writes `axis<TAB>index<TAB>id` lines, `axis` being `row` or `col`.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# transposed={}", self.transposed)?;
        writeln!(w, "axis\tindex\tid")?;
        for (i, id) in self.rows.iter().enumerate() {
            writeln!(w, "row\t{i}\t{id}")?;
        }
        for (j, id) in self.cols.iter().enumerate() {
            writeln!(w, "col\t{j}\t{id}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::io::BufWriter::new(File::create(path)?);
        self.write_to(f)?;
        Ok(())
    }
}

/// A loaded dataset: training entries, optional test entries and the id map.
#[derive(Debug, Clone)]
pub struct Dataset<T> {
    pub train: ObservationSet<T>,
    pub test: Option<EvalSplit<T>>,
    pub ids: IdMap,
}

struct RawRating {
    user: u64,
    item: u64,
    value: f64,
}

fn parse_ratings<R: BufRead>(source: R, format: RatingFormat) -> Result<Vec<RawRating>> {
    let RatingFormat::MovielensTsv = format;
    let mut out = Vec::new();
    let mut seen = HashMap::new();
    for (lineno, line) in source.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() < 3 || fields.len() > 4 {
            return Err(Error::Parse { line: lineno, msg: format!("expected 3 or 4 fields, found {}", fields.len()) });
        }
        let id = |s: &str, what: &str| -> Result<u64> {
            match s.parse::<u64>() {
                Ok(v) if v > 0 => Ok(v),
                _ => Err(Error::Parse { line: lineno, msg: format!("invalid {what} id {s:?}") }),
            }
        };
        let user = id(fields[0], "user")?;
        let item = id(fields[1], "item")?;
        let value: f64 = fields[2]
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| Error::Parse { line: lineno, msg: format!("invalid rating {:?}", fields[2]) })?;
        if let Some(_first) = seen.insert((user, item), lineno) {
            return Err(Error::Duplicate { row: user, col: item, line: Some(lineno) });
        }
        out.push(RawRating { user, item, value });
    }
    Ok(out)
}

/// Loads training ratings and optional test ratings.
///
/// User and item ids are compacted to dense 0-based indices over the union of
/// both sources (sorted by id), and the matrix is transposed when there are
/// more users than items so that `m ≤ n`.
pub fn load_ratings<T: Scalar, R1: BufRead, R2: BufRead>(
    train: R1,
    test: Option<R2>,
    format: RatingFormat,
) -> Result<Dataset<T>> {
    let train_raw = parse_ratings(train, format)?;
    if train_raw.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let test_raw = match test {
        Some(r) => {
            let raw = parse_ratings(r, format)?;
            if raw.is_empty() {
                return Err(Error::EmptyTestSet);
            }
            Some(raw)
        }
        None => None,
    };

    let all = train_raw.iter().chain(test_raw.iter().flatten());
    let users: BTreeSet<u64> = all.clone().map(|r| r.user).collect();
    let items: BTreeSet<u64> = all.map(|r| r.item).collect();
    let users: Vec<u64> = users.into_iter().collect();
    let items: Vec<u64> = items.into_iter().collect();
    let user_idx: HashMap<u64, usize> = users.iter().enumerate().map(|(i, &u)| (u, i)).collect();
    let item_idx: HashMap<u64, usize> = items.iter().enumerate().map(|(j, &v)| (v, j)).collect();
    let (m, n) = (users.len(), items.len());

    let build = |raw: &[RawRating]| -> Result<ObservationSet<T>> {
        let trip = raw.iter().map(|r| (user_idx[&r.user], item_idx[&r.item], T::of(r.value))).collect();
        ObservationSet::from_triplets(m, n, trip)
    };
    let mut train = build(&train_raw)?;
    let mut test = test_raw.as_deref().map(build).transpose()?;
    let mut ids = IdMap { rows: users, cols: items, transposed: false };
    if m > n {
        train = train.transpose();
        test = test.map(|t| t.transpose());
        ids = IdMap { rows: ids.cols, cols: ids.rows, transposed: true };
    }
    Ok(Dataset { train, test: test.map(EvalSplit::new), ids })
}

/// File-based convenience wrapper around [`load_ratings`].
pub fn load_ratings_files<T: Scalar>(train: impl AsRef<Path>, test: Option<&Path>) -> Result<Dataset<T>> {
    let tr = BufReader::new(File::open(train)?);
    let te = match test {
        Some(p) => Some(BufReader::new(File::open(p)?)),
        None => None,
    };
    load_ratings(tr, te, RatingFormat::MovielensTsv)
}

/// A synthetic low-rank instance with noisy observations.
#[derive(Debug, Clone)]
pub struct Planted<T: Scalar> {
    pub train: ObservationSet<T>,
    /// Noise-free held-out entries, about a tenth of the matrix.
    pub test: EvalSplit<T>,
    pub truth: DMatrix<T>,
}

/// Draws `truth = G₁G₂ᵀ` with standard normal `m × rank` and `n × rank`
/// factors, observes each entry with probability `observed` plus
/// `N(0, noise²)` noise, and holds out roughly 10% of the remaining entries.
pub fn planted<T: Scalar>(m: usize, n: usize, rank: usize, observed: f64, noise: f64, seed: u64) -> Result<Planted<T>> {
    if !(0.0..=0.9).contains(&observed) || !(noise >= 0.0) {
        return Err(Error::InvalidParameter(format!("planted: observed fraction {observed} or noise {noise} out of range")));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let truth = gaussian_block::<T, _>(m, rank, &mut rng) * gaussian_block::<T, _>(n, rank, &mut rng).transpose();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for i in 0..m {
        for j in 0..n {
            let u: f64 = rng.random();
            let e: f64 = StandardNormal.sample(&mut rng);
            if u < observed {
                train.push((i, j, truth[(i, j)] + T::of(noise * e)));
            } else if u < observed + 0.1 {
                test.push((i, j, truth[(i, j)]));
            }
        }
    }
    Ok(Planted {
        train: ObservationSet::from_triplets(m, n, train)?,
        test: EvalSplit::new(ObservationSet::from_triplets(m, n, test)?),
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn load_str(train: &str, test: Option<&str>) -> Result<Dataset<f64>> {
        load_ratings(train.as_bytes(), test.map(|t| t.as_bytes()), RatingFormat::MovielensTsv)
    }

    fn random_obs(m: usize, n: usize, density: f64, seed: u64) -> ObservationSet<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Vec::new();
        for i in 0..m {
            for j in 0..n {
                if rng.random::<f64>() < density {
                    t.push((i, j, rng.random_range(1.0..5.0)));
                }
            }
        }
        ObservationSet::from_triplets(m, n, t).unwrap()
    }

    #[test]
    fn single_line() {
        let d = load_str("1 1 5\n", None).unwrap();
        assert_eq!((d.train.nrows(), d.train.ncols(), d.train.len()), (1, 1, 1));
        assert_eq!(d.train.get(0, 0), Some(5.0));
        assert!(d.test.is_none());
    }

    #[test]
    fn parse_error_reports_line() {
        match load_str("1 1 5\n2 3 4\n1 x 5\n", None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_and_duplicate_inputs() {
        assert!(matches!(load_str("\n\n", None), Err(Error::EmptyDataset)));
        assert!(matches!(load_str("1 2 3\n1 2 4 99\n", None), Err(Error::Duplicate { line: Some(2), .. })));
    }

    #[test]
    fn compaction_and_transpose() {
        // three users, two items: must be transposed to 2x3
        let d = load_str("10 7 1\n20 7 2\n30 9 3 12345\n", Some("20 9 4\n")).unwrap();
        assert!(d.train.is_transposed());
        assert_eq!((d.train.nrows(), d.train.ncols()), (2, 3));
        assert_eq!(d.ids.rows, vec![7, 9]);
        assert_eq!(d.ids.cols, vec![10, 20, 30]);
        assert_eq!(d.train.get(1, 2), Some(3.0));
        let test = d.test.unwrap();
        assert_eq!(test.entries().get(1, 1), Some(4.0));
        assert!(test.entries().is_transposed());
    }

    #[test]
    fn column_index_matches_rows() {
        let obs = random_obs(13, 17, 0.3, 3);
        let mut seen = 0;
        for j in 0..obs.ncols() {
            let (rows, pos) = obs.col(j);
            for (&i, &q) in rows.iter().zip(pos) {
                assert_eq!(obs.col_idx[q], j);
                assert!(obs.row_range(i).contains(&q));
                seen += 1;
            }
        }
        assert_eq!(seen, obs.len());
        let tt = obs.transpose().transpose();
        assert_eq!(tt.to_dense(), obs.to_dense());
    }

    #[test]
    fn residual_trivial_cases() {
        let obs = ObservationSet::from_triplets(1, 1, vec![(0, 0, 3.0)]).unwrap();
        let wf = FactorPair::new(DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let r = residual_on_omega(&obs, &wf).unwrap();
        assert_eq!(r.values(), &[-2.0]);
        assert_eq!(loss_quad(&r), 4.0);

        let obs = random_obs(6, 8, 0.5, 1);
        let zero = FactorPair::new(DMatrix::zeros(6, 2), DMatrix::zeros(8, 2)).unwrap();
        let r = residual_on_omega(&obs, &zero).unwrap();
        let neg: Vec<f64> = obs.values().iter().map(|v| -v).collect();
        assert_eq!(r.values(), neg.as_slice());
        assert_eq!(loss_quad(&SparseResidual::<f64>::from_values(vec![])), 0.0);
    }

    #[test]
    fn residual_matches_dense_evaluation() {
        let obs = random_obs(10, 12, 0.4, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = DMatrix::from_fn(10, 3, |_, _| rng.random_range(-1.0..1.0));
        let h = DMatrix::from_fn(12, 3, |_, _| rng.random_range(-1.0..1.0));
        let dense = &w * h.transpose();
        let wf = FactorPair::new(w, h).unwrap();
        let r = residual_on_omega(&obs, &wf).unwrap();
        let mut dense_loss = 0.0;
        for ((i, j, a), &rv) in obs.iter().zip(r.values()) {
            assert!((rv - (dense[(i, j)] - a)).abs() < 1e-12);
            dense_loss += (dense[(i, j)] - a).powi(2);
        }
        assert!((loss_quad(&r) - dense_loss).abs() < 1e-12 * dense_loss.max(1.0));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let obs = random_obs(4, 5, 0.5, 2);
        let wf = FactorPair::new(DMatrix::zeros(5, 1), DMatrix::zeros(5, 1)).unwrap();
        assert!(matches!(residual_on_omega(&obs, &wf), Err(Error::Dimension(_))));
    }

    #[test]
    fn rmse_cases() {
        let test = EvalSplit::new(ObservationSet::from_triplets(2, 3, vec![(1, 2, 4.0)]).unwrap());
        let zero = SvdTriplet::<f64>::empty(2, 3);
        assert_eq!(rmse(&test, &zero).unwrap(), 4.0);
        let empty = EvalSplit::new(ObservationSet::<f64>::from_triplets(2, 3, vec![]).unwrap());
        assert!(matches!(rmse(&empty, &zero), Err(Error::EmptyTestSet)));
    }

    #[test]
    fn sparse_products_match_dense() {
        let obs = random_obs(9, 11, 0.35, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vals: Vec<f64> = (0..obs.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut s = DMatrix::zeros(9, 11);
        for ((i, j, _), &v) in obs.iter().zip(&vals) {
            s[(i, j)] = v;
        }
        let b = DMatrix::from_fn(11, 4, |_, _| rng.random_range(-1.0..1.0));
        let c = DMatrix::from_fn(9, 3, |_, _| rng.random_range(-1.0..1.0));
        let sb = obs.spmm(&vals, -0.5, &b).unwrap();
        let stc = obs.spmm_t(&vals, 2.0, &c).unwrap();
        assert!((sb - (&s * &b) * -0.5).norm() < 1e-12);
        assert!((stc - s.transpose() * &c * 2.0).norm() < 1e-12);
    }
}

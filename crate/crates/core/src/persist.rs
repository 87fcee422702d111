//! Binary containers for triplets and reference solutions.
//!
//! Layout, all integers `u64` and all reals `f64`, little-endian:
//! magic (8 bytes), `m`, `n`, `k`, then `σ` (k values), `U` (m·k values,
//! column-major), `V` (n·k values, column-major). A reference file carries
//! its own magic followed by `F*`, `RMSE*`, `RMSE(0)` and `λ` before the
//! triplet; absent RMSE values are stored as NaN.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::SvdTriplet;
use crate::scalar::Scalar;

pub const TRIPLET_MAGIC: &[u8; 8] = b"MFGTRIP1";
pub const REFERENCE_MAGIC: &[u8; 8] = b"MFGREF01";

/// Reference solution used for relative metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference<T: Scalar> {
    pub f_star: T,
    pub rmse_star: Option<T>,
    pub rmse_zero: Option<T>,
    pub lambda: T,
    pub x: SvdTriplet<T>,
}

fn put_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(f64::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("file is truncated".into())
    } else {
        Error::Io(e)
    }
}

fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 8]) -> Result<()> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    if &b != magic {
        return Err(Error::Format(format!("bad magic header, expected {}", String::from_utf8_lossy(magic))));
    }
    Ok(())
}

/// Writes a triplet in the binary container format.
pub fn write_triplet<T: Scalar, W: Write>(mut w: W, x: &SvdTriplet<T>) -> Result<()> {
    w.write_all(TRIPLET_MAGIC)?;
    write_triplet_body(&mut w, x)?;
    w.flush()?;
    Ok(())
}

fn write_triplet_body<T: Scalar, W: Write>(w: &mut W, x: &SvdTriplet<T>) -> Result<()> {
    put_u64(w, x.nrows() as u64)?;
    put_u64(w, x.ncols() as u64)?;
    put_u64(w, x.rank() as u64)?;
    for &s in x.sigma().iter() {
        put_f64(w, s.as_f64())?;
    }
    for &v in x.u().as_slice() {
        put_f64(w, v.as_f64())?;
    }
    for &v in x.v().as_slice() {
        put_f64(w, v.as_f64())?;
    }
    Ok(())
}

/// Reads a triplet written by [`write_triplet`].
pub fn read_triplet<T: Scalar, R: Read>(mut r: R) -> Result<SvdTriplet<T>> {
    expect_magic(&mut r, TRIPLET_MAGIC)?;
    read_triplet_body(&mut r)
}

fn read_triplet_body<T: Scalar, R: Read>(r: &mut R) -> Result<SvdTriplet<T>> {
    let dims = [get_u64(r)?, get_u64(r)?, get_u64(r)?];
    let [m, n, k] = dims.map(|d| usize::try_from(d).unwrap_or(usize::MAX));
    if k > m.min(n) {
        return Err(Error::Format(format!("rank {k} exceeds the {m}x{n} shape")));
    }
    let mut read_vec = |len: usize| -> Result<Vec<T>> { (0..len).map(|_| get_f64(r).map(T::of)).collect() };
    let sigma = read_vec(k)?;
    let u = read_vec(m.checked_mul(k).ok_or_else(|| Error::Format("dimensions overflow".into()))?)?;
    let v = read_vec(n.checked_mul(k).ok_or_else(|| Error::Format("dimensions overflow".into()))?)?;
    SvdTriplet::new(DMatrix::from_vec(m, k, u), DVector::from_vec(sigma), DMatrix::from_vec(n, k, v))
        .map_err(|e| Error::Format(format!("invalid triplet: {e}")))
}

pub fn save_triplet<T: Scalar>(path: impl AsRef<Path>, x: &SvdTriplet<T>) -> Result<()> {
    write_triplet(BufWriter::new(File::create(path)?), x)
}

pub fn load_triplet<T: Scalar>(path: impl AsRef<Path>) -> Result<SvdTriplet<T>> {
    read_triplet(BufReader::new(File::open(path)?))
}

pub fn write_reference<T: Scalar, W: Write>(mut w: W, r: &Reference<T>) -> Result<()> {
    w.write_all(REFERENCE_MAGIC)?;
    put_f64(&mut w, r.f_star.as_f64())?;
    put_f64(&mut w, r.rmse_star.map_or(f64::NAN, |v| v.as_f64()))?;
    put_f64(&mut w, r.rmse_zero.map_or(f64::NAN, |v| v.as_f64()))?;
    put_f64(&mut w, r.lambda.as_f64())?;
    write_triplet_body(&mut w, &r.x)?;
    w.flush()?;
    Ok(())
}

pub fn read_reference<T: Scalar, R: Read>(mut r: R) -> Result<Reference<T>> {
    expect_magic(&mut r, REFERENCE_MAGIC)?;
    let f_star = get_f64(&mut r)?;
    let opt = |v: f64| (!v.is_nan()).then(|| T::of(v));
    let rmse_star = opt(get_f64(&mut r)?);
    let rmse_zero = opt(get_f64(&mut r)?);
    let lambda = get_f64(&mut r)?;
    let x = read_triplet_body(&mut r)?;
    Ok(Reference { f_star: T::of(f_star), rmse_star, rmse_zero, lambda: T::of(lambda), x })
}

pub fn save_reference<T: Scalar>(path: impl AsRef<Path>, r: &Reference<T>) -> Result<()> {
    write_reference(BufWriter::new(File::create(path)?), r)
}

pub fn load_reference<T: Scalar>(path: impl AsRef<Path>) -> Result<Reference<T>> {
    read_reference(BufReader::new(File::open(path)?))
}

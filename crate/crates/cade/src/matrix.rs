//! Dense row-major f64 matrices and the on-disk matrix format.
//!
//! All in-memory numerics run in f64; the binary file format stores f32
//! (magic `CADEMAT1`, two little-endian u64 dims, then row-major f32 values).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const MAT_MAGIC: &[u8; 8] = b"CADEMAT1";

#[derive(Error, Debug)]
pub enum MatIoError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic (expected CADEMAT1)")]
    BadMagic { path: String },
    #[error("{path}: truncated matrix file")]
    Truncated { path: String },
    #[error("{path}: dims {rows}x{cols} overflow")]
    DimOverflow { path: String, rows: u64, cols: u64 },
}

/// Dense matrix of f64, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Mat {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "from_vec: {} values for {rows}x{cols}",
            data.len()
        );
        Mat { rows, cols, data }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in &rows {
            assert_eq!(row.len(), c, "from_rows: ragged input");
            data.extend_from_slice(row);
        }
        Mat { rows: r, cols: c, data }
    }

    /// 1 x n row vector.
    pub fn row_vec(values: Vec<f64>) -> Self {
        let cols = values.len();
        Mat { rows: 1, cols, data: values }
    }

    /// n x 1 column vector.
    pub fn col_vec(values: Vec<f64>) -> Self {
        let rows = values.len();
        Mat { rows, cols: 1, data: values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &x| m.max(x.abs()))
    }

    /// Largest absolute elementwise difference; panics on shape mismatch.
    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff: shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn save(&self, path: &Path) -> Result<(), MatIoError> {
        let err = |source| MatIoError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(err)?);
        w.write_all(MAT_MAGIC).map_err(err)?;
        w.write_all(&(self.rows as u64).to_le_bytes()).map_err(err)?;
        w.write_all(&(self.cols as u64).to_le_bytes()).map_err(err)?;
        for &v in &self.data {
            w.write_all(&(v as f32).to_le_bytes()).map_err(err)?;
        }
        w.flush().map_err(err)
    }

    pub fn load(path: &Path) -> Result<Mat, MatIoError> {
        let p = || path.display().to_string();
        let err = |source| MatIoError::Io { path: p(), source };
        let mut r = BufReader::new(File::open(path).map_err(err)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| MatIoError::Truncated { path: p() })?;
        if &magic != MAT_MAGIC {
            return Err(MatIoError::BadMagic { path: p() });
        }
        let mut dim = [0u8; 8];
        r.read_exact(&mut dim)
            .map_err(|_| MatIoError::Truncated { path: p() })?;
        let rows = u64::from_le_bytes(dim);
        r.read_exact(&mut dim)
            .map_err(|_| MatIoError::Truncated { path: p() })?;
        let cols = u64::from_le_bytes(dim);
        let n = rows
            .checked_mul(cols)
            .and_then(|n| usize::try_from(n).ok())
            .ok_or(MatIoError::DimOverflow { path: p(), rows, cols })?;
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 4];
        for _ in 0..n {
            r.read_exact(&mut buf)
                .map_err(|_| MatIoError::Truncated { path: p() })?;
            data.push(f32::from_le_bytes(buf) as f64);
        }
        Ok(Mat {
            rows: rows as usize,
            cols: cols as usize,
            data,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_binary_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mat");
        let m = Mat::from_rows(vec![vec![1.0, -2.5, 0.0], vec![3.25, 0.0009765625, -7.0]]);
        m.save(&path).unwrap();
        let back = Mat::load(&path).unwrap();
        // values chosen f32-representable, so the f32 disk format is lossless here
        assert_eq!(m, back);
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.mat");
        std::fs::write(&path, b"NOTAMAT!xxxxxxxxxxxxxxxx").unwrap();
        match Mat::load(&path) {
            Err(MatIoError::BadMagic { .. }) => {}
            other => panic!("expected BadMagic, got {other:?}"),
        }
    }

    #[test]
    fn rejects_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.mat");
        let m = Mat::filled(4, 4, 1.0);
        m.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(
            Mat::load(&path),
            Err(MatIoError::Truncated { .. })
        ));
    }

    #[test]
    #[should_panic(expected = "from_vec")]
    fn from_vec_checks_length() {
        let _ = Mat::from_vec(2, 2, vec![1.0, 2.0, 3.0]);
    }
}

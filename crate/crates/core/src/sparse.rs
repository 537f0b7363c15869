//! Row-major sparse matrix and its versioned binary cache format.
//!
//! Cache layout (little endian):
//!
//! ```text
//! magic      8 bytes  "ICFMTX\0\0"
//! version    u32      1
//! rows       u64
//! cols       u64
//! hash_len   u32, then hash_len bytes of UTF-8 vocabulary hash
//! per row:   nnz u32, then nnz × (col u32, value f64)
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ICFMTX\0\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn new(cols: usize) -> Self {
        Self {
            cols,
            indptr: vec![0],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Appends a row from (column, value) pairs. Pairs are sorted, zeros dropped.
    pub fn push_row(&mut self, mut entries: Vec<(u32, f64)>) {
        entries.sort_by_key(|&(c, _)| c);
        for w in entries.windows(2) {
            assert!(w[0].0 != w[1].0, "duplicate column {} in row", w[0].0);
        }
        for (c, v) in entries {
            assert!((c as usize) < self.cols, "column {c} out of range {}", self.cols);
            if v != 0.0 {
                self.indices.push(c);
                self.values.push(v);
            }
        }
        self.indptr.push(self.indices.len());
    }

    pub fn from_dense(rows: &[Vec<f64>], cols: usize) -> Self {
        let mut m = Self::new(cols);
        for r in rows {
            assert_eq!(r.len(), cols);
            m.push_row(r.iter().enumerate().map(|(c, &v)| (c as u32, v)).collect());
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (idx, val) = self.row(i);
        idx.binary_search(&(j as u32)).map_or(0.0, |k| val[k])
    }

    pub fn select_rows(&self, rows: &[usize]) -> SparseMatrix {
        let mut out = SparseMatrix::new(self.cols);
        for &r in rows {
            let (idx, val) = self.row(r);
            out.indices.extend_from_slice(idx);
            out.values.extend_from_slice(val);
            out.indptr.push(out.indices.len());
        }
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.rows())
            .map(|i| {
                let mut row = vec![0.0; self.cols];
                let (idx, val) = self.row(i);
                for (&c, &v) in idx.iter().zip(val) {
                    row[c as usize] = v;
                }
                row
            })
            .collect()
    }

    pub fn to_bytes(&self, vocab_hash: &str) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.rows() * 4 + self.nnz() * 12);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(self.cols as u64).to_le_bytes());
        out.extend_from_slice(&(vocab_hash.len() as u32).to_le_bytes());
        out.extend_from_slice(vocab_hash.as_bytes());
        for i in 0..self.rows() {
            let (idx, val) = self.row(i);
            out.extend_from_slice(&(idx.len() as u32).to_le_bytes());
            for (&c, &v) in idx.iter().zip(val) {
                out.extend_from_slice(&c.to_le_bytes());
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses a cache blob, returning the matrix and the vocabulary hash it carries.
    pub fn from_bytes(bytes: &[u8]) -> Result<(SparseMatrix, String)> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a matrix cache (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported matrix cache version {version}")));
        }
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let hash_len = r.u32()? as usize;
        let hash = String::from_utf8(r.take(hash_len)?.to_vec())
            .map_err(|_| Error::Format("vocabulary hash is not UTF-8".into()))?;
        let mut m = SparseMatrix::new(cols);
        for _ in 0..rows {
            let nnz = r.u32()? as usize;
            let mut last: Option<u32> = None;
            for _ in 0..nnz {
                let c = r.u32()?;
                let v = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
                if c as usize >= cols || last.is_some_and(|l| l >= c) || !v.is_finite() {
                    return Err(Error::Format("corrupt matrix row".into()));
                }
                last = Some(c);
                m.indices.push(c);
                m.values.push(v);
            }
            m.indptr.push(m.indices.len());
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after matrix".into()));
        }
        Ok((m, hash))
    }

    pub fn save(&self, path: &Path, vocab_hash: &str) -> Result<()> {
        fs::write(path, self.to_bytes(vocab_hash)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(SparseMatrix, String)> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("truncated matrix cache".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

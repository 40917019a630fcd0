use std::fmt::Write as _;

use crate::error::Result;

/// Square matrix in coordinate form.
#[derive(Debug, Clone, PartialEq)]
pub struct CooMatrix {
    pub n: usize,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CooMatrix {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            rows: Vec::new(),
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, val: f64) {
        self.rows.push(row);
        self.cols.push(col);
        self.vals.push(val);
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .zip(&self.cols)
            .zip(&self.vals)
            .map(|((&r, &c), &v)| (r, c, v))
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for (r, c, v) in self.triplets() {
            y[r] += v * x[c];
        }
        y
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n * self.n];
        for (r, c, v) in self.triplets() {
            d[r * self.n + c] += v;
        }
        d
    }

    /// Largest `|row - col|` over the stored entries.
    pub fn bandwidth(&self) -> (usize, usize) {
        self.triplets().fold((0, 0), |(kl, ku), (r, c, _)| {
            if r > c {
                (kl.max(r - c), ku)
            } else {
                (kl, ku.max(c - r))
            }
        })
    }

    pub fn trace(&self) -> f64 {
        self.triplets().filter(|(r, c, _)| r == c).map(|t| t.2).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.vals.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `row,col,value` CSV with shortest round-trip number formatting.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("row,col,value\n");
        for (r, c, v) in self.triplets() {
            let _ = writeln!(s, "{r},{c},{v}");
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| crate::Error::io(path, e))
    }
}

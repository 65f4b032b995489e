//! Joint spectral intensity over a (signal sideband × idler sideband) grid.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JsiNormalization {
    Counts,
    UnitTrace,
}

/// Square matrix indexed by sideband numbers `k_first..=k_last` on both axes.
/// Rows are signal sidebands, columns idler sidebands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsiMatrix {
    k_first: i32,
    n: usize,
    values: Vec<f64>,
    pub normalization: JsiNormalization,
}

impl JsiMatrix {
    pub fn zeros(k_first: i32, n: usize, normalization: JsiNormalization) -> Self {
        JsiMatrix {
            k_first,
            n,
            values: vec![0.0; n * n],
            normalization,
        }
    }

    /// Builds a matrix from row-major rows; every entry must be non-negative.
    pub fn from_rows(
        k_first: i32,
        rows: &[Vec<f64>],
        normalization: JsiNormalization,
    ) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(invalid("jsi", "matrix has no rows"));
        }
        let mut values = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(invalid("jsi", "matrix must be square"));
            }
            if row.iter().any(|v| !(*v >= 0.0)) {
                return Err(invalid("jsi", "entries must be non-negative"));
            }
            values.extend_from_slice(row);
        }
        Ok(JsiMatrix {
            k_first,
            n,
            values,
            normalization,
        })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn k_range(&self) -> (i32, i32) {
        (self.k_first, self.k_first + self.n as i32 - 1)
    }

    pub fn ks(&self) -> impl Iterator<Item = i32> + '_ {
        self.k_first..self.k_first + self.n as i32
    }

    /// Entry at matrix position (row, col).
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n + col]
    }

    /// Entry for signal sideband `ks` and idler sideband `ki`.
    pub fn get(&self, ks: i32, ki: i32) -> f64 {
        self.at((ks - self.k_first) as usize, (ki - self.k_first) as usize)
    }

    pub(crate) fn set(&mut self, ks: i32, ki: i32, v: f64) {
        let (r, c) = ((ks - self.k_first) as usize, (ki - self.k_first) as usize);
        self.values[r * self.n + c] = v.max(0.0);
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.values.chunks(self.n).map(<[f64]>::to_vec).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.at(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        self.diagonal().iter().sum()
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Σ(off-diagonal²) / Σ(diagonal²).
    pub fn off_diagonal_energy_ratio(&self) -> f64 {
        let mut diag = 0.0;
        let mut off = 0.0;
        for r in 0..self.n {
            for c in 0..self.n {
                let v = self.at(r, c);
                if r == c {
                    diag += v * v;
                } else {
                    off += v * v;
                }
            }
        }
        off / diag
    }

    pub fn to_unit_trace(&self) -> Result<Self> {
        let t = self.trace();
        if !(t > 0.0) {
            return Err(invalid("jsi", "trace is zero"));
        }
        Ok(JsiMatrix {
            values: self.values.iter().map(|v| v / t).collect(),
            normalization: JsiNormalization::UnitTrace,
            ..self.clone()
        })
    }

    /// Copy with every off-diagonal entry set to zero.
    pub fn diagonal_only(&self) -> Self {
        let mut out = JsiMatrix::zeros(self.k_first, self.n, self.normalization);
        for i in 0..self.n {
            out.values[i * self.n + i] = self.at(i, i);
        }
        out
    }

    /// CSV with a header row and a header column of sideband indices.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k_signal\\k_idler");
        for k in self.ks() {
            let _ = write!(out, ",{k}");
        }
        out.push('\n');
        for (r, ks) in self.ks().enumerate() {
            let _ = write!(out, "{ks}");
            for c in 0..self.n {
                let _ = write!(out, ",{}", self.at(r, c));
            }
            out.push('\n');
        }
        out
    }
}

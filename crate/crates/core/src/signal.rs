use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of signal dimensions.
pub const DIMS: usize = 2;

/// A 2×T real matrix: dimension index first, time index second.
///
/// Used both for temporal signals and for anything shaped like one
/// (attribution maps, ideal gradients). Serialized as two JSON arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Signal {
    len: usize,
    values: Vec<f64>,
}

impl Signal {
    pub fn zeros(len: usize) -> Self {
        Signal {
            len,
            values: vec![0.0; DIMS * len],
        }
    }

    /// Builds a signal from row-major data (`DIMS * len` values).
    pub fn from_flat(len: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != DIMS * len {
            return Err(Error::shape("signal", format!("{} values", DIMS * len), values.len()));
        }
        Ok(Signal { len, values })
    }

    pub fn from_rows(row0: &[f64], row1: &[f64]) -> Result<Self> {
        if row0.len() != row1.len() {
            return Err(Error::shape("signal rows", row0.len(), row1.len()));
        }
        let mut values = Vec::with_capacity(2 * row0.len());
        values.extend_from_slice(row0);
        values.extend_from_slice(row1);
        Ok(Signal {
            len: row0.len(),
            values,
        })
    }

    /// Number of time steps T.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn row(&self, dim: usize) -> &[f64] {
        &self.values[dim * self.len..(dim + 1) * self.len]
    }

    pub fn row_mut(&mut self, dim: usize) -> &mut [f64] {
        &mut self.values[dim * self.len..(dim + 1) * self.len]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn check_same_shape(&self, other: &Signal, context: &'static str) -> Result<()> {
        if self.len != other.len {
            return Err(Error::shape(context, format!("2x{}", self.len), format!("2x{}", other.len)));
        }
        Ok(())
    }

    pub fn zip_map(&self, other: &Signal, f: impl Fn(f64, f64) -> f64) -> Result<Signal> {
        self.check_same_shape(other, "elementwise op")?;
        Ok(Signal {
            len: self.len,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn sub(&self, other: &Signal) -> Result<Signal> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Signal) -> Result<Signal> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn mul(&self, other: &Signal) -> Result<Signal> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, k: f64) -> Signal {
        Signal {
            len: self.len,
            values: self.values.iter().map(|v| v * k).collect(),
        }
    }

    /// Mean of `(self - other)^2` over all entries.
    pub fn mse(&self, other: &Signal) -> Result<f64> {
        self.check_same_shape(other, "mse")?;
        let n = self.values.len();
        if n == 0 {
            return Ok(0.0);
        }
        let sum: f64 = self.values.iter().zip(&other.values).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(sum / n as f64)
    }

    /// Largest absolute entry difference.
    pub fn max_abs_diff(&self, other: &Signal) -> Result<f64> {
        self.check_same_shape(other, "max_abs_diff")?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

impl Index<(usize, usize)> for Signal {
    type Output = f64;
    fn index(&self, (dim, t): (usize, usize)) -> &f64 {
        &self.values[dim * self.len + t]
    }
}

impl IndexMut<(usize, usize)> for Signal {
    fn index_mut(&mut self, (dim, t): (usize, usize)) -> &mut f64 {
        &mut self.values[dim * self.len + t]
    }
}

impl TryFrom<Vec<Vec<f64>>> for Signal {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.len() != DIMS {
            return Err(Error::shape("signal", format!("{DIMS} rows"), rows.len()));
        }
        let s = Signal::from_rows(&rows[0], &rows[1])?;
        if !s.is_finite() {
            return Err(Error::NonFinite("signal entry".into()));
        }
        Ok(s)
    }
}

impl From<Signal> for Vec<Vec<f64>> {
    fn from(s: Signal) -> Self {
        (0..DIMS).map(|d| s.row(d).to_vec()).collect()
    }
}

/// Accumulates signals and divides by the count, in insertion order.
#[derive(Clone, Debug)]
pub struct SignalMean {
    sum: Signal,
    count: usize,
}

impl SignalMean {
    pub fn new(len: usize) -> Self {
        SignalMean {
            sum: Signal::zeros(len),
            count: 0,
        }
    }

    pub fn push(&mut self, s: &Signal) -> Result<()> {
        self.sum.check_same_shape(s, "mean accumulation")?;
        for (acc, v) in self.sum.values.iter_mut().zip(&s.values) {
            *acc += v;
        }
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(self) -> Signal {
        let n = self.count.max(1) as f64;
        Signal {
            len: self.sum.len,
            values: self.sum.values.into_iter().map(|v| v / n).collect(),
        }
    }
}

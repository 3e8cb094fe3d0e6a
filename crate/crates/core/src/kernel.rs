//! Polynomial spectral kernels and the constraint constants that bound them.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coefficients of `S` polynomial kernels of degree `K`; row `s` holds
/// `alpha_{s,0} ... alpha_{s,K}` (ascending powers).
#[derive(Debug, Clone, PartialEq)]
pub struct KernelCoefficients {
    alpha: DMatrix<f64>,
}

impl KernelCoefficients {
    pub fn new(alpha: DMatrix<f64>) -> Result<Self> {
        if alpha.nrows() == 0 || alpha.ncols() == 0 {
            return Err(Error::InvalidParameter("need S >= 1 and K >= 0".into()));
        }
        if alpha.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidParameter("kernel coefficients must be finite".into()));
        }
        Ok(Self { alpha })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let s = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Parse("kernel rows have unequal lengths".into()));
        }
        Self::new(DMatrix::from_fn(s, width, |i, k| rows[i][k]))
    }

    /// Reshapes the stacked vector `[alpha_1; ...; alpha_S]`.
    pub fn from_flat(flat: &[f64], s: usize, k: usize) -> Result<Self> {
        if flat.len() != s * (k + 1) {
            return Err(Error::DimensionMismatch { expected: s * (k + 1), got: flat.len() });
        }
        Self::new(DMatrix::from_fn(s, k + 1, |i, j| flat[i * (k + 1) + j]))
    }

    /// Every kernel equal to the constant `value`.
    pub fn constant(s: usize, k: usize, value: f64) -> Self {
        let mut alpha = DMatrix::zeros(s, k + 1);
        alpha.column_mut(0).fill(value);
        Self { alpha }
    }

    pub fn n_kernels(&self) -> usize {
        self.alpha.nrows()
    }

    pub fn degree(&self) -> usize {
        self.alpha.ncols() - 1
    }

    pub fn alpha(&self) -> &DMatrix<f64> {
        &self.alpha
    }

    pub fn row(&self, s: usize) -> Vec<f64> {
        self.alpha.row(s).iter().copied().collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_kernels()).map(|s| self.row(s)).collect()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.rows().concat()
    }

    /// `g_s(lambda)` by Horner's rule.
    pub fn eval(&self, s: usize, lambda: f64) -> f64 {
        self.alpha.row(s).iter().rev().fold(0.0, |acc, &a| acc * lambda + a)
    }

    /// `S x len(lambdas)` matrix of kernel values.
    pub fn values_at(&self, lambdas: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_kernels(), lambdas.len(), |s, l| self.eval(s, lambdas[l]))
    }

    /// Kernel values on a spectrum, as a matrix indexed `(s, l)`.
    pub fn values_on(&self, eigenvalues: &DVector<f64>) -> DMatrix<f64> {
        self.values_at(eigenvalues.as_slice())
    }

    /// Largest violation of the spectral constraints over the given eigenvalues;
    /// zero when feasible.
    pub fn constraint_violation(&self, eigenvalues: &DVector<f64>, bounds: &SpectralBounds) -> f64 {
        let vals = self.values_on(eigenvalues);
        let mut worst: f64 = 0.0;
        for col in vals.column_iter() {
            for &g in col.iter() {
                worst = worst.max(-g).max(g - bounds.c);
            }
            let sum = col.sum();
            worst = worst.max(bounds.c - bounds.eps1 - sum).max(sum - bounds.c - bounds.eps2);
        }
        worst
    }
}

/// Constants `(c, eps1, eps2)`: `0 <= g_s <= c`, `c - eps1 <= sum_s g_s <= c + eps2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralBounds {
    pub c: f64,
    pub eps1: f64,
    pub eps2: f64,
}

impl Default for SpectralBounds {
    fn default() -> Self {
        Self { c: 1.0, eps1: 0.01, eps2: 0.01 }
    }
}

impl SpectralBounds {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) {
            return Err(Error::InvalidParameter(format!("c must be positive, got {}", self.c)));
        }
        if !(0.0..=self.c).contains(&self.eps1) {
            return Err(Error::InvalidParameter(format!("eps1 must lie in [0, c], got {}", self.eps1)));
        }
        if !(self.eps2 >= 0.0) {
            return Err(Error::InvalidParameter(format!("eps2 must be nonnegative, got {}", self.eps2)));
        }
        Ok(())
    }
}

/// On-disk kernel parameter file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelFile {
    #[serde(rename = "S")]
    pub s: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub c: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub alpha: Vec<Vec<f64>>,
}

impl KernelFile {
    pub fn new(kernels: &KernelCoefficients, bounds: SpectralBounds) -> Self {
        Self {
            s: kernels.n_kernels(),
            k: kernels.degree(),
            c: bounds.c,
            eps1: bounds.eps1,
            eps2: bounds.eps2,
            alpha: kernels.rows(),
        }
    }

    pub fn kernels(&self) -> Result<KernelCoefficients> {
        if self.alpha.len() != self.s || self.alpha.iter().any(|r| r.len() != self.k + 1) {
            return Err(Error::Parse(format!(
                "alpha must be {} rows of {} coefficients",
                self.s,
                self.k + 1
            )));
        }
        KernelCoefficients::from_rows(&self.alpha)
    }

    pub fn bounds(&self) -> SpectralBounds {
        SpectralBounds { c: self.c, eps1: self.eps1, eps2: self.eps2 }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

//! Normalized graph Laplacian: sparse operator and full eigendecomposition.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::graph::WeightedGraph;

/// `I - D^{-1/2} W D^{-1/2}` in compressed sparse row form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseLaplacian {
    n: usize,
    n_edges: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseLaplacian {
    pub fn from_graph(g: &WeightedGraph) -> Result<Self> {
        let n = g.n_vertices();
        let deg = g.degrees();
        if let Some(v) = deg.iter().position(|&d| d <= 0.0) {
            return Err(Error::IsolatedVertex(v));
        }
        let inv_sqrt: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();

        let mut rows: Vec<Vec<(usize, f64)>> = (0..n).map(|i| vec![(i, 1.0)]).collect();
        for &(i, j, w) in g.edges() {
            let v = -w * inv_sqrt[i] * inv_sqrt[j];
            rows[i].push((j, v));
            rows[j].push((i, v));
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::with_capacity(n + 2 * g.n_edges());
        let mut values = Vec::with_capacity(n + 2 * g.n_edges());
        row_ptr.push(0);
        for mut row in rows {
            row.sort_unstable_by_key(|e| e.0);
            for (c, v) in row {
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self { n, n_edges: g.n_edges(), row_ptr, col_idx, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `out = L x`.
    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(out.len(), self.n);
        for (i, o) in out.iter_mut().enumerate() {
            let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
            *o = self.col_idx[lo..hi]
                .iter()
                .zip(&self.values[lo..hi])
                .map(|(&c, &v)| v * x[c])
                .sum();
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.mul_vec_into(x, &mut out);
        out
    }

    /// `L Z` for a dense column-major `N x M` matrix.
    pub fn mul_mat(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n, z.ncols());
        for (zc, mut oc) in z.column_iter().zip(out.column_iter_mut()) {
            self.mul_vec_into(zc.as_slice(), oc.as_mut_slice());
        }
        out
    }

    /// Applies `L^k` to `y` through `k` successive sparse products.
    pub fn power_apply(&self, k: usize, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: y.len() });
        }
        let mut cur = y.to_vec();
        let mut next = vec![0.0; self.n];
        for _ in 0..k {
            self.mul_vec_into(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// `[y, L y, ..., L^k y]`.
    pub fn krylov(&self, k: usize, y: &[f64]) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(k + 1);
        out.push(y.to_vec());
        for p in 1..=k {
            out.push(self.mul_vec(&out[p - 1]));
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.col_idx[p])] = self.values[p];
            }
        }
        m
    }
}

/// Eigenvalues (ascending) and orthonormal eigenvectors of the normalized Laplacian.
#[derive(Debug, Clone)]
pub struct LaplacianSpectrum {
    laplacian: Arc<SparseLaplacian>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
}

impl LaplacianSpectrum {
    /// Dense symmetric eigendecomposition of `lap`.
    ///
    /// Each eigenvector is signed so that its largest-magnitude entry (first
    /// one on ties) is positive.
    pub fn from_laplacian(lap: SparseLaplacian) -> Result<Self> {
        let dense = lap.to_dense();
        let n = lap.n();
        let eig = SymmetricEigen::try_new(dense, f64::EPSILON, 0)
            .ok_or_else(|| Error::Eigen("symmetric QR iteration did not converge".into()))?;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

        let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
        let mut eigenvectors = DMatrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            let col = eig.eigenvectors.column(src);
            let mut pivot = 0;
            for r in 1..n {
                if col[r].abs() > col[pivot].abs() {
                    pivot = r;
                }
            }
            let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
            eigenvectors.set_column(dst, &(col * sign));
        }
        Ok(Self { laplacian: Arc::new(lap), eigenvalues, eigenvectors })
    }

    pub fn laplacian(&self) -> &SparseLaplacian {
        &self.laplacian
    }

    pub fn shared_laplacian(&self) -> Arc<SparseLaplacian> {
        Arc::clone(&self.laplacian)
    }

    pub fn n(&self) -> usize {
        self.laplacian.n()
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues[self.n() - 1]
    }

    /// Graph Fourier transform `chi^T y`.
    pub fn gft(&self, y: &[f64]) -> DVector<f64> {
        self.eigenvectors.tr_mul(&DVector::from_column_slice(y))
    }

    /// `chi diag(h) chi^T` for a vector of spectral multipliers.
    pub fn spectral_matrix(&self, multipliers: &DVector<f64>) -> DMatrix<f64> {
        let mut scaled = self.eigenvectors.clone();
        for (mut col, &h) in scaled.column_iter_mut().zip(multipliers.iter()) {
            col *= h;
        }
        scaled * self.eigenvectors.transpose()
    }
}

/// Builds the normalized Laplacian of `g` and its eigendecomposition.
pub fn normalized_laplacian(g: &WeightedGraph) -> Result<LaplacianSpectrum> {
    LaplacianSpectrum::from_laplacian(SparseLaplacian::from_graph(g)?)
}

/// `L^k y` by repeated sparse mat-vecs.
pub fn laplacian_power_apply(spec: &LaplacianSpectrum, k: usize, y: &[f64]) -> Result<Vec<f64>> {
    spec.laplacian().power_apply(k, y)
}

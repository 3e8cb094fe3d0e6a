//! The structured dictionary `D = [D_1 ... D_S]` with `D_s = g_s(L)`.
//!
//! Every production path here works through sparse Laplacian products:
//! Horner recurrences for forward application and atoms, a shared Krylov
//! sequence `{L^k y}` for the adjoint, and a single degree-`2K` polynomial for
//! `D D^T`. The dense eigendecomposition route is kept for oracles and for the
//! spectral quantities (feasibility, frame bounds) that need it.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernel::{KernelCoefficients, SpectralBounds};
use crate::laplacian::{LaplacianSpectrum, SparseLaplacian};

/// Atoms whose 2-norm falls below this are treated as zero.
pub const ZERO_ATOM_NORM: f64 = 1e-12;

/// Kernel coefficients bound to a graph Laplacian.
#[derive(Debug, Clone)]
pub struct PolynomialDictionary {
    kernels: KernelCoefficients,
    laplacian: Arc<SparseLaplacian>,
    spectrum: Option<Arc<LaplacianSpectrum>>,
    bounds: SpectralBounds,
}

/// Frame bounds measured on the spectrum alongside the ones implied by the
/// constraint constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameCertificate {
    pub lower: f64,
    pub upper: f64,
    pub analytic_lower: f64,
    pub analytic_upper: f64,
}

impl FrameCertificate {
    pub fn analytic(bounds: &SpectralBounds, s: usize) -> (f64, f64) {
        let lo = bounds.c - bounds.eps1;
        let hi = bounds.c + bounds.eps2;
        (lo * lo / s as f64, hi * hi)
    }
}

/// Column-normalized dense dictionary plus the original column norms.
/// A zero entry in `norms` flags an atom that vanished and was left as a zero
/// column.
#[derive(Debug, Clone)]
pub struct NormalizedAtoms {
    pub matrix: DMatrix<f64>,
    pub norms: DVector<f64>,
}

impl PolynomialDictionary {
    pub fn new(kernels: KernelCoefficients, spectrum: Arc<LaplacianSpectrum>, bounds: SpectralBounds) -> Self {
        Self { kernels, laplacian: spectrum.shared_laplacian(), spectrum: Some(spectrum), bounds }
    }

    /// Dictionary over a bare sparse Laplacian. Fast operators work; anything
    /// needing eigenvalues returns [`Error::MissingSpectrum`].
    pub fn from_laplacian(kernels: KernelCoefficients, laplacian: Arc<SparseLaplacian>, bounds: SpectralBounds) -> Self {
        Self { kernels, laplacian, spectrum: None, bounds }
    }

    /// Same graph and bounds, different kernels.
    pub fn with_kernels(&self, kernels: KernelCoefficients) -> Self {
        Self { kernels, ..self.clone() }
    }

    pub fn kernels(&self) -> &KernelCoefficients {
        &self.kernels
    }

    pub fn bounds(&self) -> SpectralBounds {
        self.bounds
    }

    pub fn laplacian(&self) -> &SparseLaplacian {
        &self.laplacian
    }

    pub fn spectrum(&self) -> Result<&LaplacianSpectrum> {
        self.spectrum.as_deref().ok_or(Error::MissingSpectrum)
    }

    pub fn shared_spectrum(&self) -> Option<Arc<LaplacianSpectrum>> {
        self.spectrum.clone()
    }

    pub fn n(&self) -> usize {
        self.laplacian.n()
    }

    pub fn n_kernels(&self) -> usize {
        self.kernels.n_kernels()
    }

    pub fn degree(&self) -> usize {
        self.kernels.degree()
    }

    pub fn n_atoms(&self) -> usize {
        self.n() * self.n_kernels()
    }

    fn check_len(&self, got: usize, expected: usize) -> Result<()> {
        if got == expected {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected, got })
        }
    }

    /// Horner evaluation of `sum_k coeffs[k] L^k x`.
    fn horner(&self, coeffs: &[f64], x: &[f64]) -> Vec<f64> {
        let n = self.n();
        let Some((&top, rest)) = coeffs.split_last() else {
            return vec![0.0; n];
        };
        let mut acc: Vec<f64> = x.iter().map(|v| top * v).collect();
        let mut tmp = vec![0.0; n];
        for &a in rest.iter().rev() {
            self.laplacian.mul_vec_into(&acc, &mut tmp);
            for ((t, &xi), out) in tmp.iter().zip(x).zip(acc.iter_mut()) {
                *out = t + a * xi;
            }
        }
        acc
    }

    /// Column `n` of `D_s`, i.e. `g_s(L) delta_n`, via `K` sparse mat-vecs.
    pub fn atom(&self, s: usize, n: usize) -> Vec<f64> {
        let mut delta = vec![0.0; self.n()];
        delta[n] = 1.0;
        self.horner(&self.kernels.row(s), &delta)
    }

    /// `D x` for `x` of length `S N`, block `s` at `s N .. (s + 1) N`.
    pub fn apply_dictionary(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        self.check_len(x.len(), self.n_atoms())?;
        let alpha = self.kernels.alpha();
        let k_deg = self.degree();
        let combine = |k: usize, out: &mut [f64]| {
            for (s, block) in x.chunks_exact(n).enumerate() {
                let a = alpha[(s, k)];
                if a != 0.0 {
                    for (o, &v) in out.iter_mut().zip(block) {
                        *o += a * v;
                    }
                }
            }
        };
        let mut acc = vec![0.0; n];
        combine(k_deg, &mut acc);
        let mut tmp = vec![0.0; n];
        for k in (0..k_deg).rev() {
            self.laplacian.mul_vec_into(&acc, &mut tmp);
            combine(k, &mut tmp);
            std::mem::swap(&mut acc, &mut tmp);
        }
        Ok(acc)
    }

    /// `D^T y`; the powers `L^k y` are computed once and shared by every block.
    pub fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        self.check_len(y.len(), n)?;
        let powers = self.laplacian.krylov(self.degree(), y);
        let alpha = self.kernels.alpha();
        let mut out = vec![0.0; self.n_atoms()];
        for (s, block) in out.chunks_exact_mut(n).enumerate() {
            for (k, pk) in powers.iter().enumerate() {
                let a = alpha[(s, k)];
                for (o, &v) in block.iter_mut().zip(pk) {
                    *o += a * v;
                }
            }
        }
        Ok(out)
    }

    /// Coefficients of `sum_s g_s(x)^2`, degree `2K`.
    pub fn gram_polynomial(&self) -> Vec<f64> {
        let k = self.degree();
        let mut h = vec![0.0; 2 * k + 1];
        for s in 0..self.n_kernels() {
            let row = self.kernels.row(s);
            for (i, &a) in row.iter().enumerate() {
                for (j, &b) in row.iter().enumerate() {
                    h[i + j] += a * b;
                }
            }
        }
        h
    }

    /// `D D^T y = sum_s g_s(L)^2 y` as one Horner pass of the squared polynomial.
    pub fn apply_gram(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_len(y.len(), self.n())?;
        Ok(self.horner(&self.gram_polynomial(), y))
    }

    /// `N x SN` dictionary built column block by column block with sparse
    /// Horner recurrences.
    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let k_deg = self.degree();
        let alpha = self.kernels.alpha();
        let mut out = DMatrix::zeros(n, self.n_atoms());
        for s in 0..self.n_kernels() {
            let mut acc = DMatrix::<f64>::identity(n, n) * alpha[(s, k_deg)];
            for k in (0..k_deg).rev() {
                acc = self.laplacian.mul_mat(&acc);
                for i in 0..n {
                    acc[(i, i)] += alpha[(s, k)];
                }
            }
            out.columns_mut(s * n, n).copy_from(&acc);
        }
        out
    }

    /// `D_s = chi g_s(Lambda) chi^T` through the eigendecomposition.
    pub fn subdictionary_dense(&self, s: usize) -> Result<DMatrix<f64>> {
        let spec = self.spectrum()?;
        let g = self.kernels.values_on(spec.eigenvalues()).row(s).transpose();
        let m = spec.spectral_matrix(&g);
        Ok((&m + m.transpose()) * 0.5)
    }

    /// Largest violation of the spectral constraints on `sigma(L)`.
    pub fn constraint_violation(&self) -> Result<f64> {
        Ok(self.kernels.constraint_violation(self.spectrum()?.eigenvalues(), &self.bounds))
    }

    /// Extremes of `sum_s g_s(lambda)^2` over the spectrum.
    pub fn frame_bounds(&self) -> Result<FrameCertificate> {
        let vals = self.kernels.values_on(self.spectrum()?.eigenvalues());
        let energy: Vec<f64> = vals.column_iter().map(|c| c.norm_squared()).collect();
        let (analytic_lower, analytic_upper) = FrameCertificate::analytic(&self.bounds, self.n_kernels());
        Ok(FrameCertificate {
            lower: energy.iter().copied().fold(f64::INFINITY, f64::min),
            upper: energy.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            analytic_lower,
            analytic_upper,
        })
    }

    /// Scales every atom to unit norm; vanishing atoms become zero columns
    /// with a zero norm entry.
    pub fn normalize_atoms(&self) -> NormalizedAtoms {
        let mut matrix = self.dense();
        let mut norms = DVector::zeros(matrix.ncols());
        for (j, mut col) in matrix.column_iter_mut().enumerate() {
            let nrm = col.norm();
            if nrm < ZERO_ATOM_NORM {
                col.fill(0.0);
            } else {
                col /= nrm;
                norms[j] = nrm;
            }
        }
        NormalizedAtoms { matrix, norms }
    }
}

pub fn eval_kernel(kc: &KernelCoefficients, s: usize, lambda: f64) -> f64 {
    kc.eval(s, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{random_geometric_graph, WeightedGraph};
    use crate::laplacian::normalized_laplacian;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spectrum(n: usize, seed: u64) -> Arc<LaplacianSpectrum> {
        let g = random_geometric_graph(n, 0.9, 0.5, seed).unwrap();
        Arc::new(normalized_laplacian(&g).unwrap())
    }

    fn random_kernels(rng: &mut ChaCha8Rng, s: usize, k: usize) -> KernelCoefficients {
        KernelCoefficients::new(DMatrix::from_fn(s, k + 1, |_, _| rng.random_range(-1.0..1.0))).unwrap()
    }

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Dense oracle: `sum_k alpha_k L^k` by explicit matrix powers.
    fn power_sum(dense_l: &DMatrix<f64>, coeffs: &[f64]) -> DMatrix<f64> {
        let n = dense_l.nrows();
        let mut pow = DMatrix::identity(n, n);
        let mut out = DMatrix::zeros(n, n);
        for &a in coeffs {
            out += &pow * a;
            pow = &pow * dense_l;
        }
        out
    }

    fn dense_oracle(d: &PolynomialDictionary) -> DMatrix<f64> {
        let l = d.laplacian().to_dense();
        let n = d.n();
        let mut out = DMatrix::zeros(n, d.n_atoms());
        for s in 0..d.n_kernels() {
            out.columns_mut(s * n, n).copy_from(&power_sum(&l, &d.kernels().row(s)));
        }
        out
    }

    #[test]
    fn identity_and_laplacian_kernels() {
        let spec = spectrum(12, 1);
        let kc = KernelCoefficients::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
        let d = PolynomialDictionary::new(kc, spec.clone(), SpectralBounds::default());
        let eye = DMatrix::<f64>::identity(12, 12);
        assert!((d.subdictionary_dense(0).unwrap() - &eye).norm() < 1e-8);
        assert!((d.subdictionary_dense(1).unwrap() - spec.laplacian().to_dense()).norm() < 1e-8);
        let mut delta = vec![0.0; 12];
        delta[4] = 1.0;
        assert_eq!(d.atom(0, 4), delta);
    }

    #[test]
    fn subdictionary_matches_power_sum() {
        let spec = spectrum(8, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = PolynomialDictionary::new(random_kernels(&mut rng, 2, 4), spec.clone(), SpectralBounds::default());
        let l = spec.laplacian().to_dense();
        for s in 0..2 {
            let dense = d.subdictionary_dense(s).unwrap();
            assert!((&dense - dense.transpose()).norm() < 1e-10);
            assert!((dense - power_sum(&l, &d.kernels().row(s))).norm() < 1e-8);
        }
    }

    #[test]
    fn atoms_match_dense_columns() {
        let spec = spectrum(12, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = PolynomialDictionary::new(random_kernels(&mut rng, 3, 5), spec, SpectralBounds::default());
        let fast = d.dense();
        for s in 0..3 {
            let sub = d.subdictionary_dense(s).unwrap();
            for n in 0..12 {
                let atom = DVector::from_vec(d.atom(s, n));
                assert!((&atom - sub.column(n)).norm() < 1e-8);
                assert!((&atom - fast.column(s * 12 + n)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn atoms_are_k_hop_localized() {
        // path graph: hop distance is |i - n|
        let n = 15;
        let edges = (0..n - 1).map(|i| (i, i + 1, 1.0 + i as f64 * 0.1)).collect();
        let g = WeightedGraph::new(n, edges, None).unwrap();
        let spec = Arc::new(normalized_laplacian(&g).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let k = 3;
        let d = PolynomialDictionary::new(random_kernels(&mut rng, 1, k), spec, SpectralBounds::default());
        let atom = d.atom(0, 7);
        for (i, v) in atom.iter().enumerate() {
            if i.abs_diff(7) > k {
                assert!(v.abs() <= 1e-12, "vertex {i}: {v}");
            }
        }
    }

    #[test]
    fn forward_adjoint_gram_match_oracles() {
        let spec = spectrum(10, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = PolynomialDictionary::new(random_kernels(&mut rng, 2, 4), spec.clone(), SpectralBounds::default());
        let dense = dense_oracle(&d);

        assert_eq!(d.apply_dictionary(&[0.0; 20]).unwrap(), vec![0.0; 10]);
        let mut unit = vec![0.0; 20];
        unit[10 + 3] = 1.0;
        let col = d.apply_dictionary(&unit).unwrap();
        for (a, b) in col.iter().zip(d.atom(1, 3)) {
            assert!((a - b).abs() < 1e-14);
        }

        let x = rand_vec(&mut rng, 20);
        let fwd = DVector::from_vec(d.apply_dictionary(&x).unwrap());
        assert!((fwd - &dense * DVector::from_vec(x)).norm() < 1e-8);

        let y = rand_vec(&mut rng, 10);
        let yv = DVector::from_vec(y.clone());
        let adj = DVector::from_vec(d.apply_adjoint(&y).unwrap());
        assert!((&adj - dense.transpose() * &yv).norm() < 1e-8);

        let gram = DVector::from_vec(d.apply_gram(&y).unwrap());
        let composed = DVector::from_vec(d.apply_dictionary(adj.as_slice()).unwrap());
        assert!((&gram - composed).norm() < 1e-8);

        for l in [0, 4, 9] {
            let chi = spec.eigenvectors().column(l).clone_owned();
            let lam = spec.eigenvalues()[l];
            let adj = d.apply_adjoint(chi.as_slice()).unwrap();
            for s in 0..2 {
                let block = DVector::from_column_slice(&adj[s * 10..(s + 1) * 10]);
                assert!((block - &chi * d.kernels().eval(s, lam)).norm() < 1e-8);
            }
            let energy: f64 = (0..2).map(|s| d.kernels().eval(s, lam).powi(2)).sum();
            let gram = DVector::from_vec(d.apply_gram(chi.as_slice()).unwrap());
            assert!((gram - &chi * energy).norm() < 1e-8);
        }
        assert!(d.apply_adjoint(&[1.0]).is_err());
        assert!(d.apply_dictionary(&[1.0]).is_err());
    }

    #[test]
    fn identity_kernels_pass_through() {
        let spec = spectrum(9, 6);
        let d = PolynomialDictionary::new(KernelCoefficients::constant(3, 2, 1.0), spec, SpectralBounds::default());
        let y: Vec<f64> = (0..9).map(|i| i as f64 - 4.0).collect();
        let adj = d.apply_adjoint(&y).unwrap();
        for block in adj.chunks(9) {
            assert_eq!(block, &y[..]);
        }
        let single = d.with_kernels(KernelCoefficients::constant(1, 2, 1.0));
        assert_eq!(single.apply_gram(&y).unwrap(), y);
    }

    #[test]
    fn frame_certificate_examples() {
        let spec = spectrum(10, 7);
        let bounds = SpectralBounds { c: 1.0, eps1: 0.01, eps2: 0.01 };
        let d = PolynomialDictionary::new(KernelCoefficients::constant(4, 1, 0.25), spec.clone(), bounds);
        let cert = d.frame_bounds().unwrap();
        assert!((cert.analytic_lower - 0.245025).abs() < 1e-15);
        assert!((cert.analytic_upper - 1.0201).abs() < 1e-15);
        assert!((cert.lower - 0.25).abs() < 1e-15 && (cert.upper - 0.25).abs() < 1e-15);

        let tight = d.with_kernels(KernelCoefficients::constant(1, 0, 1.0));
        let cert = tight.frame_bounds().unwrap();
        assert_eq!((cert.lower, cert.upper), (1.0, 1.0));
    }

    #[test]
    fn normalization_examples() {
        let spec = spectrum(10, 8);
        let d = PolynomialDictionary::new(KernelCoefficients::constant(2, 2, 1.0), spec.clone(), SpectralBounds::default());
        let na = d.normalize_atoms();
        assert!(na.norms.iter().all(|&v| (v - 1.0).abs() < 1e-14));
        assert!((&na.matrix - d.dense()).norm() < 1e-14);

        let zero = d.with_kernels(KernelCoefficients::constant(2, 2, 0.0));
        let na = zero.normalize_atoms();
        assert!(na.norms.iter().all(|&v| v == 0.0));
        assert!(na.matrix.iter().all(|&v| v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = d.with_kernels(random_kernels(&mut rng, 2, 3));
        let na = d.normalize_atoms();
        for col in na.matrix.column_iter() {
            assert!((col.norm() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn missing_spectrum_is_reported() {
        let g = random_geometric_graph(6, 0.9, 0.5, 9).unwrap();
        let lap = Arc::new(SparseLaplacian::from_graph(&g).unwrap());
        let d = PolynomialDictionary::from_laplacian(KernelCoefficients::constant(1, 1, 1.0), lap, SpectralBounds::default());
        assert!(matches!(d.frame_bounds(), Err(Error::MissingSpectrum)));
        assert!(d.apply_adjoint(&[1.0; 6]).is_ok());
    }
}

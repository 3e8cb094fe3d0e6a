//! Assembly of the dictionary-update quadratic program.
//!
//! With `X` fixed, `||Y - D X||_F^2 + mu ||alpha||^2` is quadratic in the
//! stacked coefficient vector `alpha = [alpha_1; ...; alpha_S]`:
//!
//! ```text
//! Q[(s,k),(s',k')] = 2 <X_s, L^{k+k'} X_s'> + 2 mu [s = s', k = k']
//! q[(s,k)]         = -2 <L^k Y, X_s>
//! const            = ||Y||_F^2
//! ```
//!
//! and the objective is `1/2 a^T Q a + q^T a + const`. The spectral
//! constraints become affine through the Vandermonde matrix `B[l,k] = lambda_l^k`:
//! `0 <= (I_S (x) B) a <= c` and `c - eps1 <= (1^T (x) B) a <= c + eps2`.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::SpectralBounds;
use crate::laplacian::{LaplacianSpectrum, SparseLaplacian};
use crate::omp::SparseCode;

/// Largest QP (in `Q` entries plus constraint entries) that [`QuadraticProgram::dump_json`] will write.
pub const QP_DUMP_CAP: usize = 1 << 20;

/// `min 1/2 a^T Q a + q^T a + const` subject to `lower <= C a <= upper`.
#[derive(Debug, Clone)]
pub struct QuadraticProgram {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub constant: f64,
    pub constraints: DMatrix<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub n_kernels: usize,
    pub degree: usize,
    /// Set when repeated eigenvalues leave the Vandermonde matrix with fewer
    /// than `K + 1` distinct rows. The constraints remain valid.
    pub degenerate_spectrum: bool,
}

impl QuadraticProgram {
    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, a: &DVector<f64>) -> f64 {
        0.5 * a.dot(&(&self.hessian * a)) + self.linear.dot(a) + self.constant
    }

    /// Largest amount by which `C a` leaves `[lower, upper]`.
    pub fn max_violation(&self, a: &DVector<f64>) -> f64 {
        let ca = &self.constraints * a;
        ca.iter()
            .zip(self.lower.iter().zip(self.upper.iter()))
            .map(|(&v, (&l, &u))| (l - v).max(v - u).max(0.0))
            .fold(0.0, f64::max)
    }

    /// One-sided form `A_ineq a <= b_ineq` with `A_ineq = [C; -C]`, `b_ineq = [upper; -lower]`.
    pub fn inequality_form(&self) -> (DMatrix<f64>, DVector<f64>) {
        let (m, n) = self.constraints.shape();
        let mut a = DMatrix::zeros(2 * m, n);
        a.rows_mut(0, m).copy_from(&self.constraints);
        a.rows_mut(m, m).copy_from(&(-&self.constraints));
        let mut b = DVector::zeros(2 * m);
        b.rows_mut(0, m).copy_from(&self.upper);
        b.rows_mut(m, m).copy_from(&(-&self.lower));
        (a, b)
    }

    /// Debug dump with dense `Q`, `q`, `A_ineq`, `b_ineq`; refuses large instances.
    pub fn dump_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let (m, n) = self.constraints.shape();
        let size = n * n + 2 * m * n;
        if size > QP_DUMP_CAP {
            return Err(Error::InvalidParameter(format!(
                "QP has {size} dense entries, above the dump cap of {QP_DUMP_CAP}"
            )));
        }
        let rows = |mat: &DMatrix<f64>| -> Vec<Vec<f64>> {
            mat.row_iter().map(|r| r.iter().copied().collect()).collect()
        };
        let (a_ineq, b_ineq) = self.inequality_form();
        let dump = QpDump {
            q_matrix: rows(&self.hessian),
            q_vector: self.linear.iter().copied().collect(),
            constant: self.constant,
            a_ineq: rows(&a_ineq),
            b_ineq: b_ineq.iter().copied().collect(),
        };
        fs::write(path, serde_json::to_string(&dump)?)?;
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QpDump {
    #[serde(rename = "Q")]
    pub q_matrix: Vec<Vec<f64>>,
    #[serde(rename = "q")]
    pub q_vector: Vec<f64>,
    #[serde(rename = "const")]
    pub constant: f64,
    #[serde(rename = "A_ineq")]
    pub a_ineq: Vec<Vec<f64>>,
    #[serde(rename = "b_ineq")]
    pub b_ineq: Vec<f64>,
}

/// `B[l, k] = lambda_l^k`, `N x (K + 1)`.
pub fn vandermonde(eigenvalues: &DVector<f64>, degree: usize) -> DMatrix<f64> {
    DMatrix::from_fn(eigenvalues.len(), degree + 1, |l, k| eigenvalues[l].powi(k as i32))
}

/// Spectral constraint block `[I_S (x) B; 1^T (x) B]` with its bounds.
pub fn spectral_constraints(
    eigenvalues: &DVector<f64>,
    n_kernels: usize,
    degree: usize,
    bounds: &SpectralBounds,
) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
    let b = vandermonde(eigenvalues, degree);
    let (n, w) = b.shape();
    let rows = (n_kernels + 1) * n;
    let mut c = DMatrix::zeros(rows, n_kernels * w);
    let mut lower = DVector::zeros(rows);
    let mut upper = DVector::zeros(rows);
    for s in 0..n_kernels {
        c.view_mut((s * n, s * w), (n, w)).copy_from(&b);
        c.view_mut((n_kernels * n, s * w), (n, w)).copy_from(&b);
        upper.rows_mut(s * n, n).fill(bounds.c);
    }
    lower.rows_mut(n_kernels * n, n).fill(bounds.c - bounds.eps1);
    upper.rows_mut(n_kernels * n, n).fill(bounds.c + bounds.eps2);
    (c, lower, upper)
}

fn count_distinct(eigenvalues: &DVector<f64>) -> usize {
    let mut count = 0;
    let mut last = f64::NEG_INFINITY;
    for &v in eigenvalues.iter() {
        if v - last > 1e-10 {
            count += 1;
            last = v;
        }
    }
    count
}

/// `<X_s, Z>` for every block `s` at once, using only the nonzeros of `X`.
fn block_inner(code: &SparseCode, n: usize, z: &DMatrix<f64>, out: &mut [f64]) {
    out.fill(0.0);
    for (m, col) in code.columns().iter().enumerate() {
        for &(a, v) in col {
            out[a / n] += v * z[(a % n, m)];
        }
    }
}

/// How the Gram traces `<X_s, L^j X_s'>` and `<L^k Y, X_s>` are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TraceRoute {
    /// In the eigenbasis: `sum_l lambda_l^j <(chi^T X_s)_l, (chi^T X_s')_l>`.
    #[default]
    Spectral,
    /// `2K` sparse Laplacian products against each dense block `X_s'`; no
    /// power of `L` is ever formed.
    SparsePowers,
}

/// Builds the dictionary-update QP from the training data and a fixed code.
#[allow(clippy::too_many_arguments)]
pub fn assemble_qp(
    spectrum: &LaplacianSpectrum,
    y: &DMatrix<f64>,
    code: &SparseCode,
    mu: f64,
    bounds: &SpectralBounds,
    degree: usize,
    n_kernels: usize,
) -> Result<QuadraticProgram> {
    assemble_qp_with(spectrum, y, code, mu, bounds, degree, n_kernels, TraceRoute::default())
}

/// `traces[j][(s, s')] = <X_s, L^j X_s'>` for `j <= 2K` and
/// `lin[k][s] = <L^k Y, X_s>` for `k <= K`.
type Traces = (Vec<DMatrix<f64>>, Vec<Vec<f64>>);

fn traces_sparse(lap: &SparseLaplacian, y: &DMatrix<f64>, code: &SparseCode, degree: usize, n_kernels: usize) -> Traces {
    let n = lap.n();
    // per_block[s'][j][s] = <X_s, L^j X_s'>
    let per_block: Vec<Vec<Vec<f64>>> = (0..n_kernels)
        .into_par_iter()
        .map(|sp| {
            let mut z = code.block(sp, n);
            let mut per_power = Vec::with_capacity(2 * degree + 1);
            for j in 0..=2 * degree {
                if j > 0 {
                    z = lap.mul_mat(&z);
                }
                let mut row = vec![0.0; n_kernels];
                block_inner(code, n, &z, &mut row);
                per_power.push(row);
            }
            per_power
        })
        .collect();
    let traces = (0..=2 * degree)
        .map(|j| DMatrix::from_fn(n_kernels, n_kernels, |s, sp| 0.5 * (per_block[sp][j][s] + per_block[s][j][sp])))
        .collect();

    let mut lin = Vec::with_capacity(degree + 1);
    let mut ly = y.clone();
    for k in 0..=degree {
        if k > 0 {
            ly = lap.mul_mat(&ly);
        }
        let mut row = vec![0.0; n_kernels];
        block_inner(code, n, &ly, &mut row);
        lin.push(row);
    }
    (traces, lin)
}

fn traces_spectral(spectrum: &LaplacianSpectrum, y: &DMatrix<f64>, code: &SparseCode, degree: usize, n_kernels: usize) -> Traces {
    let n = spectrum.n();
    let m = y.ncols();
    let chi = spectrum.eigenvectors();
    let lambdas = spectrum.eigenvalues();
    // hat[s] = chi^T X_s, built from the nonzeros only
    let mut hat = vec![DMatrix::<f64>::zeros(n, m); n_kernels];
    for (col, entries) in code.columns().iter().enumerate() {
        for &(a, v) in entries {
            let (s, node) = (a / n, a % n);
            let mut target = hat[s].column_mut(col);
            target.axpy(v, &chi.row(node).transpose(), 1.0);
        }
    }
    let y_hat = chi.tr_mul(y);
    // gram[l][(s, s')] = <hat_s[l, :], hat_s'[l, :]>, cross[l][s] = <y_hat[l, :], hat_s[l, :]>
    let mut gram = vec![DMatrix::<f64>::zeros(n_kernels, n_kernels); n];
    let mut cross = vec![vec![0.0; n_kernels]; n];
    for l in 0..n {
        for s in 0..n_kernels {
            let row_s = hat[s].row(l);
            cross[l][s] = row_s.dot(&y_hat.row(l));
            for sp in s..n_kernels {
                let v = row_s.dot(&hat[sp].row(l));
                gram[l][(s, sp)] = v;
                gram[l][(sp, s)] = v;
            }
        }
    }
    let mut traces = vec![DMatrix::<f64>::zeros(n_kernels, n_kernels); 2 * degree + 1];
    let mut lin = vec![vec![0.0; n_kernels]; degree + 1];
    for l in 0..n {
        let mut pw = 1.0;
        for j in 0..=2 * degree {
            traces[j] += &gram[l] * pw;
            if j <= degree {
                for s in 0..n_kernels {
                    lin[j][s] += pw * cross[l][s];
                }
            }
            pw *= lambdas[l];
        }
    }
    (traces, lin)
}

#[allow(clippy::too_many_arguments)]
pub fn assemble_qp_with(
    spectrum: &LaplacianSpectrum,
    y: &DMatrix<f64>,
    code: &SparseCode,
    mu: f64,
    bounds: &SpectralBounds,
    degree: usize,
    n_kernels: usize,
    route: TraceRoute,
) -> Result<QuadraticProgram> {
    let n = spectrum.n();
    if !(mu >= 0.0) {
        return Err(Error::InvalidParameter(format!("mu must be nonnegative, got {mu}")));
    }
    bounds.validate()?;
    if y.nrows() != n {
        return Err(Error::DimensionMismatch { expected: n, got: y.nrows() });
    }
    if code.n_signals() != y.ncols() {
        return Err(Error::DimensionMismatch { expected: y.ncols(), got: code.n_signals() });
    }
    if code.n_atoms() != n * n_kernels {
        return Err(Error::DimensionMismatch { expected: n * n_kernels, got: code.n_atoms() });
    }
    let w = degree + 1;
    let dim = n_kernels * w;
    let (traces, lin) = match route {
        TraceRoute::Spectral => traces_spectral(spectrum, y, code, degree, n_kernels),
        TraceRoute::SparsePowers => traces_sparse(spectrum.laplacian(), y, code, degree, n_kernels),
    };

    let mut hessian = DMatrix::zeros(dim, dim);
    for s in 0..n_kernels {
        for sp in 0..n_kernels {
            for k in 0..w {
                for kp in 0..w {
                    hessian[(s * w + k, sp * w + kp)] = 2.0 * traces[k + kp][(s, sp)];
                }
            }
        }
    }
    for i in 0..dim {
        hessian[(i, i)] += 2.0 * mu;
    }
    let mut linear = DVector::zeros(dim);
    for s in 0..n_kernels {
        for k in 0..w {
            linear[s * w + k] = -2.0 * lin[k][s];
        }
    }

    let eigenvalues = spectrum.eigenvalues();
    let degenerate_spectrum = count_distinct(eigenvalues) < w;
    if degenerate_spectrum {
        log::warn!("repeated eigenvalues leave the Vandermonde matrix rank-deficient for K = {degree}");
    }
    let (constraints, lower, upper) = spectral_constraints(eigenvalues, n_kernels, degree, bounds);
    Ok(QuadraticProgram {
        hessian,
        linear,
        constant: y.norm_squared(),
        constraints,
        lower,
        upper,
        n_kernels,
        degree,
        degenerate_spectrum,
    })
}

/// `Q` and `q` for the feasibility projection `min ||a - target||^2`.
pub fn projection_qp(
    target: &DVector<f64>,
    eigenvalues: &DVector<f64>,
    n_kernels: usize,
    degree: usize,
    bounds: &SpectralBounds,
) -> QuadraticProgram {
    let dim = target.len();
    let (constraints, lower, upper) = spectral_constraints(eigenvalues, n_kernels, degree, bounds);
    QuadraticProgram {
        hessian: DMatrix::identity(dim, dim) * 2.0,
        linear: target * -2.0,
        constant: target.norm_squared(),
        constraints,
        lower,
        upper,
        n_kernels,
        degree,
        degenerate_spectrum: count_distinct(eigenvalues) < degree + 1,
    }
}

/// Applies the sparse Laplacian to a dense matrix `k` times.
pub fn laplacian_power_mat(lap: &SparseLaplacian, k: usize, z: &DMatrix<f64>) -> DMatrix<f64> {
    (0..k).fold(z.clone(), |acc, _| lap.mul_mat(&acc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::random_geometric_graph;
    use crate::laplacian::normalized_laplacian;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// The literal P_nm construction: P_nm^s[k] = (L^k)_{n,:} X_s[:, m],
    /// Q = 2 (sum P P^T + mu I), q = -2 sum Y_nm P_nm.
    fn pnm_oracle(
        spec: &LaplacianSpectrum,
        y: &DMatrix<f64>,
        code: &SparseCode,
        mu: f64,
        degree: usize,
        n_kernels: usize,
    ) -> (DMatrix<f64>, DVector<f64>) {
        let n = spec.n();
        let dense = spec.laplacian().to_dense();
        let mut powers = vec![DMatrix::<f64>::identity(n, n)];
        for k in 1..=degree {
            powers.push(&powers[k - 1] * &dense);
        }
        let dim = n_kernels * (degree + 1);
        let mut q_mat = DMatrix::zeros(dim, dim);
        let mut q_vec = DVector::zeros(dim);
        let blocks: Vec<DMatrix<f64>> = (0..n_kernels).map(|s| code.block(s, n)).collect();
        for row in 0..n {
            for m in 0..y.ncols() {
                let p = DVector::from_iterator(
                    dim,
                    (0..n_kernels).flat_map(|s| {
                        let blocks = &blocks;
                        let powers = &powers;
                        (0..=degree).map(move |k| powers[k].row(row).dot(&blocks[s].column(m).transpose()))
                    }),
                );
                q_mat += &p * p.transpose();
                q_vec += &p * y[(row, m)];
            }
        }
        (
            (q_mat + DMatrix::identity(dim, dim) * mu) * 2.0,
            q_vec * -2.0,
        )
    }

    fn random_code(rng: &mut ChaCha8Rng, n_atoms: usize, m: usize, t0: usize) -> SparseCode {
        let columns = (0..m)
            .map(|_| {
                let mut col: Vec<(usize, f64)> = Vec::new();
                while col.len() < t0 {
                    let a = rng.random_range(0..n_atoms);
                    if col.iter().all(|e| e.0 != a) {
                        col.push((a, rng.random_range(-1.0..1.0)));
                    }
                }
                col
            })
            .collect();
        SparseCode::new(n_atoms, columns).unwrap()
    }

    #[test]
    fn zero_code_gives_regularizer_only() {
        let g = random_geometric_graph(6, 0.9, 0.6, 1).unwrap();
        let spec = normalized_laplacian(&g).unwrap();
        let y = DMatrix::from_fn(6, 3, |i, j| (i + 2 * j) as f64 * 0.1);
        let code = SparseCode::zeros(12, 3);
        let qp = assemble_qp(&spec, &y, &code, 1.0, &SpectralBounds::default(), 2, 2).unwrap();
        assert_eq!(qp.hessian, DMatrix::identity(6, 6) * 2.0);
        assert_eq!(qp.linear, DVector::zeros(6));
        assert!((qp.constant - y.norm_squared()).abs() < 1e-15);
    }

    #[test]
    fn trace_form_matches_pnm_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_geometric_graph(4, 0.9, 0.8, 3).unwrap();
        let spec = normalized_laplacian(&g).unwrap();
        let y = DMatrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0));
        let code = random_code(&mut rng, 4, 3, 2);
        let (q_mat, q_vec) = pnm_oracle(&spec, &y, &code, 0.3, 2, 1);
        for route in [TraceRoute::Spectral, TraceRoute::SparsePowers] {
            let qp = assemble_qp_with(&spec, &y, &code, 0.3, &SpectralBounds::default(), 2, 1, route).unwrap();
            assert!((&qp.hessian - &q_mat).amax() < 1e-8);
            assert!((&qp.linear - &q_vec).amax() < 1e-8);
            assert_eq!(qp.hessian, qp.hessian.transpose());
        }
    }

    #[test]
    fn trace_routes_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = random_geometric_graph(30, 0.9, 0.5, 11).unwrap();
        let spec = normalized_laplacian(&g).unwrap();
        let y = DMatrix::from_fn(30, 20, |_, _| rng.random_range(-1.0..1.0));
        let code = random_code(&mut rng, 90, 20, 3);
        let bounds = SpectralBounds::default();
        let a = assemble_qp_with(&spec, &y, &code, 0.01, &bounds, 6, 3, TraceRoute::Spectral).unwrap();
        let b = assemble_qp_with(&spec, &y, &code, 0.01, &bounds, 6, 3, TraceRoute::SparsePowers).unwrap();
        let scale = b.hessian.amax();
        assert!((&a.hessian - &b.hessian).amax() < 1e-10 * scale);
        assert!((&a.linear - &b.linear).amax() < 1e-10 * b.linear.amax());
    }

    #[test]
    fn objective_equals_direct_fit() {
        use crate::dictionary::PolynomialDictionary;
        use crate::kernel::KernelCoefficients;
        use std::sync::Arc;

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = random_geometric_graph(12, 0.9, 0.5, 5).unwrap();
        let spec = Arc::new(normalized_laplacian(&g).unwrap());
        let y = DMatrix::from_fn(12, 7, |_, _| rng.random_range(-1.0..1.0));
        let code = random_code(&mut rng, 36, 7, 3);
        let mu = 0.05;
        let qp = assemble_qp(&spec, &y, &code, mu, &SpectralBounds::default(), 4, 3).unwrap();
        let alpha = DVector::from_fn(15, |_, _| rng.random_range(-1.0..1.0));
        let kc = KernelCoefficients::from_flat(alpha.as_slice(), 3, 4).unwrap();
        let d = PolynomialDictionary::new(kc, spec, SpectralBounds::default());
        let direct = (&y - code.reconstruct(&d).unwrap()).norm_squared() + mu * alpha.norm_squared();
        assert!((qp.objective(&alpha) - direct).abs() < 1e-9 * direct.max(1.0));

        let min_eig = qp.hessian.clone().symmetric_eigenvalues().min();
        assert!(min_eig >= 2.0 * mu * (1.0 - 1e-6));
    }

    #[test]
    fn vandermonde_row_at_zero() {
        let ev = DVector::from_vec(vec![0.0, 0.5, 1.5]);
        let b = vandermonde(&ev, 3);
        assert_eq!(b.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(b[(2, 2)], 2.25);

        let (c, lower, upper) = spectral_constraints(&ev, 2, 1, &SpectralBounds::default());
        assert_eq!(c.shape(), (9, 4));
        // kernel 0 at lambda 0 bounds alpha_{0,0} alone
        assert_eq!(c.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!((lower[0], upper[0]), (0.0, 1.0));
        // sum constraint at lambda = 0.5
        assert_eq!(c.row(7).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.5, 1.0, 0.5]);
        assert_eq!((lower[7], upper[7]), (0.99, 1.01));
    }

    #[test]
    fn inequality_form_is_equivalent() {
        let ev = DVector::from_vec(vec![0.0, 1.0]);
        let qp = projection_qp(&DVector::from_vec(vec![0.3, 0.1]), &ev, 1, 1, &SpectralBounds::default());
        let (a, b) = qp.inequality_form();
        let x = DVector::from_vec(vec![0.995, 0.0]);
        assert!((&a * &x - &b).max() <= 0.0);
        assert_eq!(qp.max_violation(&x), 0.0);
        let bad = DVector::from_vec(vec![0.5, 0.0]);
        assert!((qp.max_violation(&bad) - 0.49).abs() < 1e-12);
    }

    #[test]
    fn degenerate_spectrum_is_flagged() {
        let ev = DVector::from_vec(vec![0.0, 1.5, 1.5]);
        let qp = projection_qp(&DVector::zeros(3), &ev, 1, 2, &SpectralBounds::default());
        assert!(qp.degenerate_spectrum);
    }

    #[test]
    fn dump_respects_cap() {
        let dir = tempfile::tempdir().unwrap();
        let ev = DVector::from_vec(vec![0.0, 1.0]);
        let qp = projection_qp(&DVector::zeros(2), &ev, 1, 1, &SpectralBounds::default());
        let path = dir.path().join("qp.json");
        qp.dump_json(&path).unwrap();
        let dump: QpDump = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(dump.a_ineq.len(), 8);
        assert_eq!(dump.b_ineq.len(), 8);

        let big = projection_qp(&DVector::zeros(400), &DVector::from_fn(2000, |i, _| i as f64 / 1000.0), 4, 99, &SpectralBounds::default());
        assert!(big.dump_json(dir.path().join("big.json")).is_err());
    }
}

//! Sparse coding with orthogonal matching pursuit.
//!
//! OMP runs against unit-norm atoms. [`encode_batch`] normalizes the
//! polynomial dictionary, codes each signal, then divides every coefficient by
//! its atom's norm so that the unnormalized dictionary reproduces the same
//! approximation.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dictionary::{NormalizedAtoms, PolynomialDictionary, ZERO_ATOM_NORM};
use crate::error::{Error, Result};

/// Default residual tolerance; small enough that OMP runs to `t0` atoms.
pub const DEFAULT_OMP_TOL: f64 = 1e-12;

/// Correlations at or below this fraction of `||y||` end the pursuit.
const NEGLIGIBLE_CORRELATION: f64 = 1e-13;

/// A newly selected atom whose component orthogonal to the support is below
/// this norm is considered dependent, and the pursuit stops.
const DEPENDENT_ATOM: f64 = 1e-10;

/// Read access to a set of unit-norm atoms.
pub trait AtomSource: Sync {
    fn dim(&self) -> usize;
    fn n_atoms(&self) -> usize;
    /// `false` for zero-flagged atoms, which are never selected.
    fn is_active(&self, j: usize) -> bool;
    /// Inner products of every unit-norm atom with `r` (zero for inactive atoms).
    fn correlations(&self, r: &[f64]) -> Vec<f64>;
    /// Unit-norm atom `j`.
    fn atom(&self, j: usize) -> Vec<f64>;
}

/// Dense, column-normalized atoms.
pub struct DenseAtoms<'a> {
    atoms: &'a NormalizedAtoms,
}

impl<'a> DenseAtoms<'a> {
    pub fn new(atoms: &'a NormalizedAtoms) -> Self {
        Self { atoms }
    }
}

impl AtomSource for DenseAtoms<'_> {
    fn dim(&self) -> usize {
        self.atoms.matrix.nrows()
    }

    fn n_atoms(&self) -> usize {
        self.atoms.matrix.ncols()
    }

    fn is_active(&self, j: usize) -> bool {
        self.atoms.norms[j] > 0.0
    }

    fn correlations(&self, r: &[f64]) -> Vec<f64> {
        let r = DVector::from_column_slice(r);
        self.atoms.matrix.tr_mul(&r).data.into()
    }

    fn atom(&self, j: usize) -> Vec<f64> {
        self.atoms.matrix.column(j).iter().copied().collect()
    }
}

/// Atoms applied through the fast polynomial operators, never materialized.
pub struct FastAtoms<'a> {
    dict: &'a PolynomialDictionary,
    norms: Vec<f64>,
}

impl<'a> FastAtoms<'a> {
    pub fn new(dict: &'a PolynomialDictionary) -> Self {
        let n = dict.n();
        let norms = (0..dict.n_atoms())
            .into_par_iter()
            .map(|j| {
                let nrm = dict.atom(j / n, j % n).iter().map(|v| v * v).sum::<f64>().sqrt();
                if nrm < ZERO_ATOM_NORM { 0.0 } else { nrm }
            })
            .collect();
        Self { dict, norms }
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }
}

impl AtomSource for FastAtoms<'_> {
    fn dim(&self) -> usize {
        self.dict.n()
    }

    fn n_atoms(&self) -> usize {
        self.dict.n_atoms()
    }

    fn is_active(&self, j: usize) -> bool {
        self.norms[j] > 0.0
    }

    fn correlations(&self, r: &[f64]) -> Vec<f64> {
        let mut c = self.dict.apply_adjoint(r).expect("residual length matches dictionary");
        for (v, &nrm) in c.iter_mut().zip(&self.norms) {
            *v = if nrm > 0.0 { *v / nrm } else { 0.0 };
        }
        c
    }

    fn atom(&self, j: usize) -> Vec<f64> {
        let n = self.dict.n();
        let nrm = self.norms[j];
        let mut a = self.dict.atom(j / n, j % n);
        for v in &mut a {
            *v = if nrm > 0.0 { *v / nrm } else { 0.0 };
        }
        a
    }
}

/// Output of a single OMP run.
#[derive(Debug, Clone, PartialEq)]
pub struct OmpResult {
    /// Selected atom indices in selection order.
    pub support: Vec<usize>,
    /// Least-squares coefficients aligned with `support`.
    pub coeffs: Vec<f64>,
    pub residual: Vec<f64>,
    /// Residual norm before any selection, then after each one.
    pub residual_norms: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Greedy OMP of `y` over `atoms`, with least-squares refit on the support after
/// every selection (incremental QR by Gram-Schmidt with reorthogonalization).
///
/// Stops after `t0` atoms, when the residual norm drops to `tol`, or when no
/// remaining atom correlates with the residual. Ties in `|correlation|` go to
/// the lowest atom index.
pub fn omp_encode<A: AtomSource + ?Sized>(atoms: &A, y: &[f64], t0: usize, tol: f64) -> Result<OmpResult> {
    if t0 == 0 {
        return Err(Error::InvalidParameter("t0 must be at least 1".into()));
    }
    if y.len() != atoms.dim() {
        return Err(Error::DimensionMismatch { expected: atoms.dim(), got: y.len() });
    }
    if !(0..atoms.n_atoms()).any(|j| atoms.is_active(j)) {
        return Err(Error::EmptyCandidateSet);
    }
    let y_norm = norm(y);
    let mut residual = y.to_vec();
    let mut support: Vec<usize> = Vec::with_capacity(t0);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(t0);
    // r_cols[j] holds column j of the upper-triangular R, length j + 1.
    let mut r_cols: Vec<Vec<f64>> = Vec::with_capacity(t0);
    let mut projections: Vec<f64> = Vec::with_capacity(t0);
    let mut residual_norms = vec![y_norm];

    while support.len() < t0 && *residual_norms.last().unwrap() > tol {
        let corr = atoms.correlations(&residual);
        let mut best: Option<(usize, f64)> = None;
        for (j, c) in corr.iter().enumerate() {
            if !atoms.is_active(j) || support.contains(&j) {
                continue;
            }
            if best.is_none_or(|(_, b)| c.abs() > b) {
                best = Some((j, c.abs()));
            }
        }
        let Some((j, c)) = best else { break };
        if c <= NEGLIGIBLE_CORRELATION * y_norm {
            break;
        }

        let mut v = atoms.atom(j);
        let mut r_col = vec![0.0; basis.len() + 1];
        for _ in 0..2 {
            for (i, q) in basis.iter().enumerate() {
                let h = dot(q, &v);
                r_col[i] += h;
                for (vk, qk) in v.iter_mut().zip(q) {
                    *vk -= h * qk;
                }
            }
        }
        let v_norm = norm(&v);
        if v_norm < DEPENDENT_ATOM {
            break;
        }
        for vk in &mut v {
            *vk /= v_norm;
        }
        *r_col.last_mut().unwrap() = v_norm;

        let z = dot(&v, &residual);
        for (rk, vk) in residual.iter_mut().zip(&v) {
            *rk -= z * vk;
        }
        projections.push(z);
        basis.push(v);
        r_cols.push(r_col);
        support.push(j);
        residual_norms.push(norm(&residual));
    }

    // Back substitution R c = z.
    let t = support.len();
    let mut coeffs = vec![0.0; t];
    for i in (0..t).rev() {
        let mut acc = projections[i];
        for (j, coef) in coeffs.iter().enumerate().skip(i + 1) {
            acc -= r_cols[j][i] * coef;
        }
        coeffs[i] = acc / r_cols[i][i];
    }
    Ok(OmpResult { support, coeffs, residual, residual_norms })
}

/// Sparse coefficient matrix `X` (`S N x M`), stored column by column.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    n_atoms: usize,
    columns: Vec<Vec<(usize, f64)>>,
}

impl SparseCode {
    /// Builds a code, rejecting out-of-range or repeated atoms within a column.
    pub fn new(n_atoms: usize, columns: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        for col in &columns {
            for (i, &(a, _)) in col.iter().enumerate() {
                if a >= n_atoms {
                    return Err(Error::DimensionMismatch { expected: n_atoms, got: a + 1 });
                }
                if col[..i].iter().any(|&(b, _)| b == a) {
                    return Err(Error::InvalidParameter(format!("atom {a} repeated within one signal")));
                }
            }
        }
        Ok(Self { n_atoms, columns })
    }

    pub fn zeros(n_atoms: usize, n_signals: usize) -> Self {
        Self { n_atoms, columns: vec![Vec::new(); n_signals] }
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn n_signals(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, m: usize) -> &[(usize, f64)] {
        &self.columns[m]
    }

    pub fn columns(&self) -> &[Vec<(usize, f64)>] {
        &self.columns
    }

    pub fn max_sparsity(&self) -> usize {
        self.columns.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn mean_sparsity(&self) -> f64 {
        if self.columns.is_empty() {
            return 0.0;
        }
        self.columns.iter().map(Vec::len).sum::<usize>() as f64 / self.columns.len() as f64
    }

    /// Dense `S N x M` view.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut x = DMatrix::zeros(self.n_atoms, self.columns.len());
        for (m, col) in self.columns.iter().enumerate() {
            for &(a, v) in col {
                x[(a, m)] = v;
            }
        }
        x
    }

    /// Rows of `X` belonging to subdictionary `s` (`n` atoms per block), dense `n x M`.
    pub fn block(&self, s: usize, n: usize) -> DMatrix<f64> {
        let mut x = DMatrix::zeros(n, self.columns.len());
        for (m, col) in self.columns.iter().enumerate() {
            for &(a, v) in col {
                if a / n == s {
                    x[(a % n, m)] = v;
                }
            }
        }
        x
    }

    /// Column `m` expanded to a dense vector of length `S N`.
    pub fn dense_column(&self, m: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.n_atoms];
        for &(a, v) in &self.columns[m] {
            x[a] = v;
        }
        x
    }

    /// `D X` through the fast forward operator.
    pub fn reconstruct(&self, dict: &PolynomialDictionary) -> Result<DMatrix<f64>> {
        if dict.n_atoms() != self.n_atoms {
            return Err(Error::DimensionMismatch { expected: dict.n_atoms(), got: self.n_atoms });
        }
        let cols: Vec<Vec<f64>> = (0..self.n_signals())
            .into_par_iter()
            .map(|m| dict.apply_dictionary(&self.dense_column(m)))
            .collect::<Result<_>>()?;
        let n = dict.n();
        Ok(DMatrix::from_fn(n, cols.len(), |i, m| cols[m][i]))
    }

    /// `(signal, atom_flat_index, coeff)` triples in column order.
    pub fn triples(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.columns
            .iter()
            .enumerate()
            .flat_map(|(m, col)| col.iter().map(move |&(a, v)| (m, a, v)))
    }
}

/// Options for [`encode_batch`].
#[derive(Debug, Clone, Copy)]
pub struct EncodeOptions {
    pub tol: f64,
    /// Upper bound on `N * S N` entries for the dense normalized dictionary;
    /// larger dictionaries are coded through the fast operators instead.
    pub dense_budget: usize,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_OMP_TOL, dense_budget: 1 << 24 }
    }
}

fn encode_with<A: AtomSource>(atoms: &A, norms: &[f64], y: &DMatrix<f64>, t0: usize, tol: f64) -> Result<SparseCode> {
    let columns = (0..y.ncols())
        .into_par_iter()
        .map(|m| {
            let res = omp_encode(atoms, y.column(m).as_slice(), t0, tol)?;
            Ok(res.support.into_iter().zip(res.coeffs).map(|(a, c)| (a, c / norms[a])).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SparseCode { n_atoms: atoms.n_atoms(), columns })
}

/// Codes every column of `y` with OMP over the normalized dictionary and
/// rescales coefficients back to the polynomial (unnormalized) atoms.
pub fn encode_batch(
    dict: &PolynomialDictionary,
    y: &DMatrix<f64>,
    t0: usize,
    opts: EncodeOptions,
) -> Result<SparseCode> {
    if y.nrows() != dict.n() {
        return Err(Error::DimensionMismatch { expected: dict.n(), got: y.nrows() });
    }
    if dict.n() * dict.n_atoms() <= opts.dense_budget {
        let normalized = dict.normalize_atoms();
        let norms: Vec<f64> = normalized.norms.iter().copied().collect();
        encode_with(&DenseAtoms::new(&normalized), &norms, y, t0, opts.tol)
    } else {
        let fast = FastAtoms::new(dict);
        let norms = fast.norms().to_vec();
        encode_with(&fast, &norms, y, t0, opts.tol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::random_geometric_graph;
    use crate::kernel::{KernelCoefficients, SpectralBounds};
    use crate::laplacian::normalized_laplacian;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn unit_dictionary(rng: &mut ChaCha8Rng, n: usize, k: usize) -> NormalizedAtoms {
        let mut m = DMatrix::from_fn(n, k, |_, _| rng.random_range(-1.0..1.0));
        for mut c in m.column_iter_mut() {
            let nrm = c.norm();
            c /= nrm;
        }
        NormalizedAtoms { matrix: m, norms: DVector::from_element(k, 1.0) }
    }

    fn test_dictionary(seed: u64) -> PolynomialDictionary {
        let g = random_geometric_graph(20, 0.9, 0.5, seed).unwrap();
        let spec = Arc::new(normalized_laplacian(&g).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kc = KernelCoefficients::new(DMatrix::from_fn(2, 4, |_, _| rng.random_range(0.0..1.0))).unwrap();
        PolynomialDictionary::new(kc, spec, SpectralBounds::default())
    }

    /// Exhaustive best-2-atom least squares residual.
    fn best_pair_residual(d: &DMatrix<f64>, y: &DVector<f64>) -> (f64, (usize, usize)) {
        let mut best = (f64::INFINITY, (0, 0));
        for a in 0..d.ncols() {
            for b in (a + 1)..d.ncols() {
                let sub = DMatrix::from_columns(&[d.column(a), d.column(b)]);
                let coef = sub.clone().svd(true, true).solve(y, 1e-14).unwrap();
                let r = (y - sub * coef).norm();
                if r < best.0 {
                    best = (r, (a, b));
                }
            }
        }
        best
    }

    #[test]
    fn single_atom_recovery() {
        let d = test_dictionary(1);
        let na = d.normalize_atoms();
        let atoms = DenseAtoms::new(&na);
        let j = 27;
        let y = d.atom(j / 20, j % 20);
        let res = omp_encode(&atoms, &y, 1, DEFAULT_OMP_TOL).unwrap();
        assert_eq!(res.support, vec![j]);
        assert!((res.coeffs[0] - na.norms[j]).abs() < 1e-10);
        assert!(norm(&res.residual) < 1e-10);
    }

    #[test]
    fn orthogonal_signal_keeps_residual() {
        // atoms span only the first two coordinates
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let na = NormalizedAtoms { matrix: m, norms: DVector::from_element(2, 1.0) };
        let res = omp_encode(&DenseAtoms::new(&na), &[0.0, 0.0, 2.0], 2, DEFAULT_OMP_TOL).unwrap();
        assert!(res.support.is_empty());
        assert_eq!(res.residual, vec![0.0, 0.0, 2.0]);

        let res = omp_encode(&DenseAtoms::new(&na), &[1.0, 0.0, 2.0], 2, DEFAULT_OMP_TOL).unwrap();
        assert_eq!(res.support, vec![0]);
        assert!((norm(&res.residual) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn two_atom_combination_vs_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut matched = 0;
        for _ in 0..20 {
            let na = unit_dictionary(&mut rng, 8, 12);
            let (a, b) = (rng.random_range(0..12), rng.random_range(0..12));
            if a == b {
                continue;
            }
            let y = na.matrix.column(a) * rng.random_range(0.5..2.0) - na.matrix.column(b) * rng.random_range(0.5..2.0);
            let res = omp_encode(&DenseAtoms::new(&na), y.as_slice(), 2, DEFAULT_OMP_TOL).unwrap();
            let (opt, pair) = best_pair_residual(&na.matrix, &y);
            let omp_res = norm(&res.residual);
            assert!(omp_res >= opt - 1e-12);
            if (omp_res - opt).abs() < 1e-10 {
                let mut got = res.support.clone();
                got.sort();
                assert_eq!((got[0], got[1]), pair);
                matched += 1;
            }
        }
        assert!(matched > 0);
    }

    #[test]
    fn residuals_monotone_and_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let na = unit_dictionary(&mut rng, 15, 40);
        let atoms = DenseAtoms::new(&na);
        for _ in 0..10 {
            let y: Vec<f64> = (0..15).map(|_| rng.random_range(-1.0..1.0)).collect();
            let res = omp_encode(&atoms, &y, 6, DEFAULT_OMP_TOL).unwrap();
            assert_eq!(res.support.len(), 6);
            for w in res.residual_norms.windows(2) {
                assert!(w[1] <= w[0] + 1e-12);
            }
            for &j in &res.support {
                assert!(dot(&atoms.atom(j), &res.residual).abs() < 1e-8);
            }
            let again = omp_encode(&atoms, &y, 6, DEFAULT_OMP_TOL).unwrap();
            assert_eq!(again, res);
        }
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let na = NormalizedAtoms { matrix: m, norms: DVector::from_element(3, 1.0) };
        let res = omp_encode(&DenseAtoms::new(&na), &[3.0, 0.0], 1, DEFAULT_OMP_TOL).unwrap();
        assert_eq!(res.support, vec![0]);
    }

    #[test]
    fn zero_flagged_atoms_are_excluded() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        let na = NormalizedAtoms { matrix: m, norms: DVector::from_vec(vec![0.0, 1.0]) };
        let res = omp_encode(&DenseAtoms::new(&na), &[1.0, 1.0], 2, DEFAULT_OMP_TOL).unwrap();
        assert_eq!(res.support, vec![1]);

        let empty = NormalizedAtoms { matrix: DMatrix::zeros(2, 2), norms: DVector::zeros(2) };
        assert!(matches!(
            omp_encode(&DenseAtoms::new(&empty), &[1.0, 1.0], 1, DEFAULT_OMP_TOL),
            Err(Error::EmptyCandidateSet)
        ));
    }

    #[test]
    fn batch_examples() {
        let d = test_dictionary(3);
        let zeros = DMatrix::zeros(20, 5);
        let code = encode_batch(&d, &zeros, 3, EncodeOptions::default()).unwrap();
        assert!(code.columns().iter().all(Vec::is_empty));

        let mut y = DMatrix::zeros(20, 3);
        for (m, j) in [5usize, 22, 39].into_iter().enumerate() {
            y.set_column(m, &DVector::from_vec(d.atom(j / 20, j % 20)));
        }
        let code = encode_batch(&d, &y, 1, EncodeOptions::default()).unwrap();
        for (m, j) in [5usize, 22, 39].into_iter().enumerate() {
            assert_eq!(code.column(m).len(), 1);
            assert_eq!(code.column(m)[0].0, j);
            assert!((code.column(m)[0].1 - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn rescaling_preserves_the_product() {
        let d = test_dictionary(4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = DMatrix::from_fn(20, 50, |_, _| rng.random_range(-1.0..1.0));
        let na = d.normalize_atoms();
        let code = encode_batch(&d, &y, 3, EncodeOptions::default()).unwrap();

        let mut raw = DMatrix::zeros(d.n_atoms(), 50);
        for (m, col) in code.columns().iter().enumerate() {
            for &(a, v) in col {
                raw[(a, m)] = v * na.norms[a];
            }
        }
        let err_rescaled = (&y - code.reconstruct(&d).unwrap()).norm_squared();
        let err_normalized = (&y - &na.matrix * raw).norm_squared();
        assert!((err_rescaled - err_normalized).abs() < 1e-10);
        assert!(code.max_sparsity() <= 3);
    }

    #[test]
    fn fast_path_agrees_with_dense() {
        let d = test_dictionary(5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = DMatrix::from_fn(20, 10, |_, _| rng.random_range(-1.0..1.0));
        let dense = encode_batch(&d, &y, 4, EncodeOptions::default()).unwrap();
        let fast = encode_batch(&d, &y, 4, EncodeOptions { dense_budget: 0, ..Default::default() }).unwrap();
        for (a, b) in dense.columns().iter().zip(fast.columns()) {
            assert_eq!(a.len(), b.len());
            for (x, z) in a.iter().zip(b) {
                assert_eq!(x.0, z.0);
                assert!((x.1 - z.1).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn sparse_code_validation_and_views() {
        assert!(SparseCode::new(4, vec![vec![(1, 1.0), (1, 2.0)]]).is_err());
        assert!(SparseCode::new(4, vec![vec![(4, 1.0)]]).is_err());
        let code = SparseCode::new(4, vec![vec![(1, 1.0), (3, 2.0)], vec![]]).unwrap();
        assert_eq!(code.mean_sparsity(), 1.0);
        let b1 = code.block(1, 2);
        assert_eq!(b1[(1, 0)], 2.0);
        assert_eq!(code.to_dense()[(1, 0)], 1.0);
        assert_eq!(code.triples().collect::<Vec<_>>(), vec![(0, 1, 1.0), (0, 3, 2.0)]);
    }
}

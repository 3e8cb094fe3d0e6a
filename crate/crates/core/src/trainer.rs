//! Alternating training loop: OMP sparse coding, then a QP over the kernel
//! coefficients with the code held fixed.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dictionary::PolynomialDictionary;
use crate::error::{Error, Result};
use crate::graph::WeightedGraph;
use crate::kernel::{KernelCoefficients, KernelFile, SpectralBounds};
use crate::laplacian::{normalized_laplacian, LaplacianSpectrum};
use crate::omp::{encode_batch, EncodeOptions, SparseCode};
use crate::qp::{assemble_qp, projection_qp, solve_qp_with, QpSettings, QpStatus};

/// Violation allowed when accepting kernels as feasible.
pub const FEASIBILITY_TOL: f64 = 1e-6;

/// SNR reported for a kernel that matches exactly.
pub const SNR_CAP_DB: f64 = 300.0;

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// Every kernel constant at `c / S`.
    Uniform,
    /// Random smooth kernels projected onto the feasible set.
    RandomFeasible,
    FromFile(PathBuf),
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub n_kernels: usize,
    pub degree: usize,
    pub t0: usize,
    pub iter: usize,
    pub bounds: SpectralBounds,
    /// Ridge weight on the coefficients; `None` uses [`default_mu`].
    pub mu: Option<f64>,
    pub seed: u64,
    pub init: Init,
    pub qp_tol: f64,
    pub qp_max_iter: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_kernels: 4,
            degree: 20,
            t0: 4,
            iter: 25,
            bounds: SpectralBounds::default(),
            mu: None,
            seed: 0,
            init: Init::Uniform,
            qp_tol: 1e-7,
            qp_max_iter: 40_000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iter == 0 {
            return Err(Error::InvalidParameter("iter must be at least 1".into()));
        }
        if self.n_kernels == 0 {
            return Err(Error::InvalidParameter("S must be at least 1".into()));
        }
        if self.t0 == 0 {
            return Err(Error::InvalidParameter("T0 must be at least 1".into()));
        }
        if let Some(mu) = self.mu {
            if !(mu >= 0.0 && mu.is_finite()) {
                return Err(Error::InvalidParameter(format!("mu must be finite and nonnegative, got {mu}")));
            }
        }
        self.bounds.validate()
    }

    pub fn mu_for(&self, n: usize) -> f64 {
        self.mu.unwrap_or_else(|| default_mu(n, self.degree))
    }
}

/// `1e-4 * N / (K + 1)`.
pub fn default_mu(n: usize, degree: usize) -> f64 {
    1e-4 * n as f64 / (degree + 1) as f64
}

/// One outer iteration.
#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub iter: usize,
    /// `||Y - D X||_F^2` after the dictionary update.
    pub fit_error: f64,
    /// Regularized objective after the dictionary update.
    pub objective: f64,
    /// Regularized objective of the previous kernels against the new code.
    pub objective_before: f64,
    pub kkt: f64,
    pub mean_sparsity: f64,
    pub secs: f64,
    pub qp_status: QpStatus,
    pub qp_iterations: usize,
}

#[derive(Debug, Clone, Default)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
    /// Fit error of the initial dictionary with its own code.
    pub initial_fit_error: Option<f64>,
}

impl TrainTrace {
    /// Largest relative increase of the objective over any dictionary update.
    pub fn max_update_increase(&self) -> f64 {
        self.records
            .iter()
            .map(|r| (r.objective - r.objective_before) / r.objective_before.abs().max(1.0))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Output of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub dictionary: PolynomialDictionary,
    pub code: SparseCode,
    pub trace: TrainTrace,
}

/// Least-squares monomial fit of `values` sampled at `lambdas`, truncated SVD.
fn fit_monomials(lambdas: &[f64], values: &[f64], degree: usize) -> DVector<f64> {
    let b = DMatrix::from_fn(lambdas.len(), degree + 1, |i, k| lambdas[i].powi(k as i32));
    let svd = b.svd(true, true);
    let eps = svd.singular_values.max() * 1e-12;
    svd.solve(&DVector::from_column_slice(values), eps).expect("SVD with U and V")
}

/// Draws smooth random kernels summing to `c` and projects their
/// degree-`degree` least-squares fits onto the feasible set.
///
/// The bumps live in eigenvalue-rank coordinates: each is centered at a
/// random quantile of the spectrum.
pub fn draw_feasible_kernels(
    spectrum: &LaplacianSpectrum,
    n_kernels: usize,
    degree: usize,
    bounds: &SpectralBounds,
    rng: &mut impl Rng,
) -> Result<KernelCoefficients> {
    bounds.validate()?;
    let eigs = spectrum.eigenvalues();
    let n = eigs.len();
    let width = 1.0 / n_kernels as f64;
    let bumps: Vec<(f64, f64, f64)> = (0..n_kernels)
        .map(|s| {
            let center = width * (s as f64 + rng.random_range(0.2..0.8));
            let w = width * rng.random_range(0.5..1.0);
            let amp = rng.random_range(0.5..1.5);
            (center, w, amp)
        })
        .collect();
    let ranks: Vec<f64> = (0..n).map(|l| if n > 1 { l as f64 / (n - 1) as f64 } else { 0.5 }).collect();
    let shapes: Vec<Vec<f64>> = ranks
        .iter()
        .map(|&r| {
            let raw: Vec<f64> = bumps
                .iter()
                .map(|&(c0, w, a)| a * (-(r - c0).powi(2) / (2.0 * w * w)).exp() + 1e-3)
                .collect();
            let total: f64 = raw.iter().sum();
            raw.into_iter().map(|v| bounds.c * v / total).collect()
        })
        .collect();
    let lambdas: Vec<f64> = eigs.iter().copied().collect();
    let mut target = DVector::zeros(n_kernels * (degree + 1));
    for s in 0..n_kernels {
        let vals: Vec<f64> = shapes.iter().map(|row| row[s]).collect();
        let coef = fit_monomials(&lambdas, &vals, degree);
        target.rows_mut(s * (degree + 1), degree + 1).copy_from(&coef);
    }
    project_feasible(spectrum, &target, n_kernels, degree, bounds)
}

/// Closest feasible coefficients to `target` in the Euclidean norm.
pub fn project_feasible(
    spectrum: &LaplacianSpectrum,
    target: &DVector<f64>,
    n_kernels: usize,
    degree: usize,
    bounds: &SpectralBounds,
) -> Result<KernelCoefficients> {
    let qp = projection_qp(target, spectrum.eigenvalues(), n_kernels, degree, bounds);
    let sol = solve_qp_with(&qp, &QpSettings { tol: 1e-10, max_iter: 100_000, ..QpSettings::default() })?;
    let violation = sol.alpha.constraint_violation(spectrum.eigenvalues(), bounds);
    if violation > FEASIBILITY_TOL {
        return Err(Error::InfeasibleInit { violation });
    }
    Ok(sol.alpha)
}

/// Builds the initial dictionary.
pub fn initialize(cfg: &TrainConfig, spectrum: Arc<LaplacianSpectrum>) -> Result<PolynomialDictionary> {
    cfg.validate()?;
    let (s, k) = (cfg.n_kernels, cfg.degree);
    let kernels = match &cfg.init {
        Init::Uniform => {
            let mut alpha = DMatrix::zeros(s, k + 1);
            alpha.column_mut(0).fill(cfg.bounds.c / s as f64);
            KernelCoefficients::new(alpha)?
        }
        Init::RandomFeasible => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            draw_feasible_kernels(&spectrum, s, k, &cfg.bounds, &mut rng)?
        }
        Init::FromFile(path) => {
            let kernels = KernelFile::read(path)?.kernels()?;
            if kernels.n_kernels() != s || kernels.degree() != k {
                return Err(Error::InvalidParameter(format!(
                    "kernel file has S={}, K={} but the run expects S={s}, K={k}",
                    kernels.n_kernels(),
                    kernels.degree()
                )));
            }
            let violation = kernels.constraint_violation(spectrum.eigenvalues(), &cfg.bounds);
            if violation > FEASIBILITY_TOL {
                return Err(Error::InfeasibleInit { violation });
            }
            kernels
        }
    };
    Ok(PolynomialDictionary::new(kernels, spectrum, cfg.bounds))
}

fn fit_error(dict: &PolynomialDictionary, code: &SparseCode, y: &DMatrix<f64>) -> Result<f64> {
    Ok((y - code.reconstruct(dict)?).norm_squared())
}

/// Trains on signals living on `graph`.
pub fn train(cfg: &TrainConfig, graph: &WeightedGraph, y: &DMatrix<f64>) -> Result<TrainOutput> {
    let spectrum = Arc::new(normalized_laplacian(graph)?);
    train_on_spectrum(cfg, spectrum, y)
}

/// Trains with a precomputed spectrum.
pub fn train_on_spectrum(cfg: &TrainConfig, spectrum: Arc<LaplacianSpectrum>, y: &DMatrix<f64>) -> Result<TrainOutput> {
    cfg.validate()?;
    let n = spectrum.n();
    if y.nrows() != n {
        return Err(Error::DimensionMismatch { expected: n, got: y.nrows() });
    }
    if y.ncols() == 0 {
        return Err(Error::InvalidParameter("at least one training signal is required".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("training signals must be finite".into()));
    }
    let mu = cfg.mu_for(n);
    let mut dict = initialize(cfg, spectrum.clone())?;
    let mut trace = TrainTrace::default();
    let mut code = SparseCode::zeros(dict.n_atoms(), y.ncols());
    let opts = EncodeOptions::default();

    for it in 1..=cfg.iter {
        let start = Instant::now();
        code = encode_batch(&dict, y, cfg.t0, opts)?;
        if it == 1 {
            trace.initial_fit_error = Some(fit_error(&dict, &code, y)?);
        }
        let qp = assemble_qp(&spectrum, y, &code, mu, &cfg.bounds, cfg.degree, cfg.n_kernels)?;
        let previous = DVector::from_vec(dict.kernels().to_flat());
        let objective_before = qp.objective(&previous);
        let settings = QpSettings {
            tol: cfg.qp_tol,
            max_iter: cfg.qp_max_iter,
            warm_start: Some(previous),
            ..QpSettings::default()
        };
        let sol = solve_qp_with(&qp, &settings)?;
        if sol.status == QpStatus::NotConverged {
            log::warn!("iteration {it}: QP stopped at KKT residual {:.3e}", sol.kkt_residual);
        }
        dict = dict.with_kernels(sol.alpha.clone());
        let fit = fit_error(&dict, &code, y)?;
        let record = TraceRecord {
            iter: it,
            fit_error: fit,
            objective: sol.objective,
            objective_before,
            kkt: sol.kkt_residual,
            mean_sparsity: code.mean_sparsity(),
            secs: start.elapsed().as_secs_f64(),
            qp_status: sol.status,
            qp_iterations: sol.iterations,
        };
        log::info!(
            "iter {it}: fit {:.6e} objective {:.6e} kkt {:.2e} ({:.2}s)",
            record.fit_error,
            record.objective,
            record.kkt,
            record.secs
        );
        trace.records.push(record);
    }
    Ok(TrainOutput { dictionary: dict, code, trace })
}

fn snr_term(diff_norm: f64) -> f64 {
    if diff_norm == 0.0 {
        SNR_CAP_DB
    } else {
        (-20.0 * diff_norm.log10()).min(SNR_CAP_DB)
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(n), &mut vec![false; n], &mut out);
    out
}

/// Mean kernel SNR in dB over the spectrum, maximized over matchings of
/// learned to true kernels.
pub fn kernel_snr(learned: &KernelCoefficients, truth: &KernelCoefficients, spectrum: &LaplacianSpectrum) -> Result<f64> {
    let s = truth.n_kernels();
    if learned.n_kernels() != s {
        return Err(Error::DimensionMismatch { expected: s, got: learned.n_kernels() });
    }
    if s > 8 {
        return Err(Error::InvalidParameter(format!("permutation search supports S <= 8, got {s}")));
    }
    let a = learned.values_on(spectrum.eigenvalues());
    let b = truth.values_on(spectrum.eigenvalues());
    let terms = DMatrix::from_fn(s, s, |i, j| snr_term((a.row(j) - b.row(i)).norm()));
    let best = permutations(s)
        .into_iter()
        .map(|p| p.iter().enumerate().map(|(i, &j)| terms[(i, j)]).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(best / s as f64)
}

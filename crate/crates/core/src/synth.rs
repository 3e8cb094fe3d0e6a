//! Synthetic corpora: generating dictionaries, sparse signal draws, noise and
//! the average approximation error used for evaluation.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dictionary::PolynomialDictionary;
use crate::error::{Error, Result};
use crate::kernel::{KernelCoefficients, SpectralBounds};
use crate::laplacian::LaplacianSpectrum;
use crate::omp::{encode_batch, EncodeOptions};
use crate::trainer::draw_feasible_kernels;

/// A set of eigen-indices (possibly a union of ranges).
pub type Band = Vec<usize>;

pub const GENERATOR_KERNELS: usize = 4;
pub const GENERATOR_DEGREE: usize = 5;

/// One banded atom `h_j(L) delta_n`.
#[derive(Debug, Clone)]
pub struct BandedAtom {
    pub vertex: usize,
    pub band: usize,
    /// Spectral multipliers, zero outside the band.
    pub mask: DVector<f64>,
}

#[derive(Debug, Clone)]
pub enum GeneratingDictionary {
    Polynomial(PolynomialDictionary),
    Banded {
        bands: Vec<Band>,
        atoms: Vec<BandedAtom>,
        /// Columns are the atoms.
        matrix: DMatrix<f64>,
    },
}

impl GeneratingDictionary {
    pub fn n(&self) -> usize {
        match self {
            Self::Polynomial(d) => d.n(),
            Self::Banded { matrix, .. } => matrix.nrows(),
        }
    }

    pub fn n_atoms(&self) -> usize {
        match self {
            Self::Polynomial(d) => d.n_atoms(),
            Self::Banded { atoms, .. } => atoms.len(),
        }
    }

    pub fn atom(&self, j: usize) -> Vec<f64> {
        match self {
            Self::Polynomial(d) => d.atom(j / d.n(), j % d.n()),
            Self::Banded { matrix, .. } => matrix.column(j).iter().copied().collect(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Polynomial(_) => "polynomial",
            Self::Banded { .. } => "banded-random",
        }
    }

    pub fn kernels(&self) -> Option<&KernelCoefficients> {
        match self {
            Self::Polynomial(d) => Some(d.kernels()),
            Self::Banded { .. } => None,
        }
    }
}

/// Seeded feasible ground truth with `S = 4`, `K = 5`.
///
/// Feasibility is defined on the spectrum, so the spectrum is an input.
pub fn make_polynomial_generator(
    spectrum: Arc<LaplacianSpectrum>,
    bounds: SpectralBounds,
    seed: u64,
) -> Result<GeneratingDictionary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kernels = draw_feasible_kernels(&spectrum, GENERATOR_KERNELS, GENERATOR_DEGREE, &bounds, &mut rng)?;
    Ok(GeneratingDictionary::Polynomial(PolynomialDictionary::new(kernels, spectrum, bounds)))
}

fn scaled_range(lo: usize, hi: usize, n: usize) -> std::ops::RangeInclusive<usize> {
    if n == 100 {
        return lo..=hi;
    }
    let f = |i: usize| ((i as f64) * (n as f64) / 100.0).round() as usize;
    let a = f(lo).min(n - 1);
    let b = (f(hi + 1).max(a + 1) - 1).min(n - 1);
    a..=b
}

/// Four bands used for the multi-band experiment: `[0..24]`,
/// `[25..39] U [90..99]`, `[40..64]`, `[65..89]` for `N = 100`, scaled
/// proportionally for other sizes.
pub fn four_band_default(n: usize) -> Vec<Band> {
    let r = |lo, hi| scaled_range(lo, hi, n).collect::<Vec<_>>();
    let mut second = r(25, 39);
    second.extend(r(90, 99));
    vec![r(0, 24), second, r(40, 64), r(65, 89)]
}

/// `[0..9]` and `[89..99]` for `N = 100`, scaled for other sizes.
pub fn two_band_default(n: usize) -> Vec<Band> {
    vec![scaled_range(0, 9, n).collect(), scaled_range(89, 99, n).collect()]
}

/// `J` atoms, each with a random band, uniform[0,1] multipliers on it and a
/// random center vertex.
pub fn make_banded_generator(
    spectrum: &LaplacianSpectrum,
    bands: &[Band],
    n_atoms: usize,
    seed: u64,
) -> Result<GeneratingDictionary> {
    let n = spectrum.n();
    if n_atoms == 0 {
        return Err(Error::InvalidParameter("J must be at least 1".into()));
    }
    if bands.is_empty() {
        return Err(Error::InvalidParameter("at least one band is required".into()));
    }
    for (b, band) in bands.iter().enumerate() {
        if band.is_empty() {
            return Err(Error::InvalidParameter(format!("band {b} is empty")));
        }
        if let Some(&index) = band.iter().find(|&&i| i >= n) {
            return Err(Error::BandOutOfRange { band: b, index, n });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chi = spectrum.eigenvectors();
    let mut atoms = Vec::with_capacity(n_atoms);
    let mut matrix = DMatrix::zeros(n, n_atoms);
    for j in 0..n_atoms {
        let band = rng.random_range(0..bands.len());
        let mut mask = DVector::zeros(n);
        for &i in &bands[band] {
            mask[i] = rng.random_range(0.0..=1.0);
        }
        let vertex = rng.random_range(0..n);
        // chi * diag(mask) * chi^T * delta_vertex
        let coeffs = DVector::from_fn(n, |l, _| mask[l] * chi[(vertex, l)]);
        matrix.set_column(j, &(chi * coeffs));
        atoms.push(BandedAtom { vertex, band, mask });
    }
    Ok(GeneratingDictionary::Banded { bands: bands.to_vec(), atoms, matrix })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoeffDist {
    StandardNormal,
    /// Uniform on `[-1, 1]`.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseScale {
    /// `noise_sigma` is the standard deviation.
    StdDev,
    /// `noise_sigma` is the variance.
    Variance,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignalSpec {
    pub m: usize,
    pub t0_max: usize,
    pub coeff_dist: CoeffDist,
    pub noise_sigma: f64,
    pub noise_scale: NoiseScale,
    pub seed: u64,
}

impl SignalSpec {
    pub fn new(m: usize, t0_max: usize, seed: u64) -> Self {
        Self { m, t0_max, coeff_dist: CoeffDist::StandardNormal, noise_sigma: 0.0, noise_scale: NoiseScale::StdDev, seed }
    }

    pub fn noise_std(&self) -> f64 {
        match self.noise_scale {
            NoiseScale::StdDev => self.noise_sigma,
            NoiseScale::Variance => self.noise_sigma.sqrt(),
        }
    }
}

/// Noisy signals together with their clean parts.
#[derive(Debug, Clone)]
pub struct SignalSet {
    pub signals: DMatrix<f64>,
    pub clean: DMatrix<f64>,
    /// Generating atoms and coefficients per signal.
    pub supports: Vec<Vec<(usize, f64)>>,
}

/// Draws the signal set; see [`synth_signals`].
pub fn synth_signal_set(gen: &GeneratingDictionary, spec: &SignalSpec) -> Result<SignalSet> {
    let (n, j) = (gen.n(), gen.n_atoms());
    if spec.t0_max == 0 {
        return Err(Error::InvalidParameter("T0 must be at least 1".into()));
    }
    if spec.t0_max > j {
        return Err(Error::InvalidParameter(format!("T0 = {} exceeds the {j} available atoms", spec.t0_max)));
    }
    if !(spec.noise_sigma >= 0.0 && spec.noise_sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise level must be finite and nonnegative, got {}", spec.noise_sigma)));
    }
    let std = spec.noise_std();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut clean = DMatrix::zeros(n, spec.m);
    let mut signals = DMatrix::zeros(n, spec.m);
    let mut supports = Vec::with_capacity(spec.m);
    for col in 0..spec.m {
        let t = rng.random_range(1..=spec.t0_max);
        let chosen = sample(&mut rng, j, t).into_vec();
        let mut support = Vec::with_capacity(t);
        for a in chosen {
            let c: f64 = match spec.coeff_dist {
                CoeffDist::StandardNormal => StandardNormal.sample(&mut rng),
                CoeffDist::Uniform => rng.random_range(-1.0..=1.0),
            };
            let atom = gen.atom(a);
            for i in 0..n {
                clean[(i, col)] += c * atom[i];
            }
            support.push((a, c));
        }
        for i in 0..n {
            let e: f64 = if std > 0.0 { std * Distribution::<f64>::sample(&StandardNormal, &mut rng) } else { 0.0 };
            signals[(i, col)] = clean[(i, col)] + e;
        }
        supports.push(support);
    }
    Ok(SignalSet { signals, clean, supports })
}

/// `M` signals, each a combination of `t ~ U{1..T0_max}` distinct random
/// atoms with random coefficients, plus white Gaussian noise.
pub fn synth_signals(gen: &GeneratingDictionary, spec: &SignalSpec) -> Result<DMatrix<f64>> {
    Ok(synth_signal_set(gen, spec)?.signals)
}

/// `||Y - D X||_F^2 / M` after OMP at each sparsity level.
pub fn approximation_error(d: &PolynomialDictionary, y: &DMatrix<f64>, sparsity_grid: &[usize]) -> Result<Vec<f64>> {
    if y.ncols() == 0 {
        return Err(Error::InvalidParameter("empty test set".into()));
    }
    sparsity_grid
        .iter()
        .map(|&t0| {
            let code = encode_batch(d, y, t0, EncodeOptions::default())?;
            Ok((y - code.reconstruct(d)?).norm_squared() / y.ncols() as f64)
        })
        .collect()
}

/// Divides every column by the largest column norm.
pub fn normalize_signals(y: &DMatrix<f64>) -> DMatrix<f64> {
    let max = y.column_iter().map(|c| c.norm()).fold(0.0f64, f64::max);
    if max > 0.0 {
        y / max
    } else {
        y.clone()
    }
}

/// `10 log10(||clean||^2 / ||noisy - clean||^2)`.
pub fn empirical_snr_db(clean: &DMatrix<f64>, noisy: &DMatrix<f64>) -> f64 {
    10.0 * (clean.norm_squared() / (noisy - clean).norm_squared()).log10()
}

/// Sidecar describing how a corpus was generated.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub generator: String,
    pub graph_seed: u64,
    pub generator_seed: u64,
    pub n: usize,
    pub theta: f64,
    pub kappa: f64,
    pub spec: SignalSpec,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bands: Option<Vec<Band>>,
    pub n_atoms: usize,
}

impl CorpusManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }
}

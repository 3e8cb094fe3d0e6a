use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;

use graphdict::graph::random_geometric_graph;
use graphdict::io::{self, fmt_real};
use graphdict::laplacian::normalized_laplacian;
use graphdict::synth::{
    approximation_error, four_band_default, make_banded_generator, make_polynomial_generator, synth_signal_set,
    two_band_default, CoeffDist, CorpusManifest, GeneratingDictionary, NoiseScale, SignalSpec,
};
use graphdict::trainer::{kernel_snr, train_on_spectrum, Init, TrainConfig};
use graphdict::{Error, KernelFile, PolynomialDictionary, SpectralBounds};

const KERNEL_GRID: usize = 512;

#[derive(Parser)]
#[command(name = "graphdict", version, about = "Polynomial dictionary learning for graph signals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random geometric graph and a synthetic signal corpus.
    Generate(GenerateArgs),
    /// Learn polynomial kernels from a corpus.
    Learn(LearnArgs),
    /// Average approximation error of a kernel file on a corpus.
    Eval(EvalArgs),
    /// Sample kernels on the spectrum and on a uniform grid.
    Kernels(KernelsArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum GeneratorKind {
    Poly,
    Banded,
    Banded2,
}

#[derive(Clone, Copy, ValueEnum)]
enum Coeffs {
    Normal,
    Uniform,
}

#[derive(clap::Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 0)]
    graph_seed: u64,
    /// Seed for the generating dictionary.
    #[arg(long, default_value_t = 1)]
    generator_seed: u64,
    #[arg(long, default_value_t = 2)]
    signal_seed: u64,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 0.9)]
    theta: f64,
    #[arg(long, default_value_t = 0.5)]
    kappa: f64,
    #[arg(long, value_enum, default_value_t = GeneratorKind::Poly)]
    generator: GeneratorKind,
    /// Number of banded atoms.
    #[arg(long, default_value_t = 400)]
    atoms: usize,
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = 4)]
    t0: usize,
    #[arg(long, value_enum, default_value_t = Coeffs::Normal)]
    coeffs: Coeffs,
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    /// Interpret --noise-sigma as a variance instead of a standard deviation.
    #[arg(long)]
    noise_variance: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitKind {
    Uniform,
    RandomFeasible,
}

#[derive(clap::Args)]
struct LearnArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 4)]
    s: usize,
    #[arg(long, default_value_t = 20)]
    k: usize,
    #[arg(long, default_value_t = 4)]
    t0: usize,
    #[arg(long, default_value_t = 25)]
    iter: usize,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long, default_value_t = 0.01)]
    eps1: f64,
    #[arg(long, default_value_t = 0.01)]
    eps2: f64,
    /// Coefficient ridge weight [default: 1e-4 N / (K + 1)].
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long, value_enum, default_value_t = InitKind::Uniform)]
    init: InitKind,
    /// Start from a kernel file instead (overrides --init).
    #[arg(long)]
    init_file: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    kernels: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Sparsity levels, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = vec![2, 4, 6, 8, 10])]
    sparsity: Vec<usize>,
    /// Ground-truth kernel file; adds the mean kernel SNR.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Output CSV [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct KernelsArgs {
    #[arg(long)]
    kernels: PathBuf,
    /// Corpus or graph directory holding edges.csv.
    #[arg(long)]
    data: PathBuf,
    /// Output CSV [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Learn(a) => learn(a),
        Command::Eval(a) => eval(a),
        Command::Kernels(a) => kernels(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("GRAPHDICT_THREADS") {
        let n: usize = v.trim().parse().with_context(|| format!("GRAPHDICT_THREADS={v:?} is not a count"))?;
        if n > 0 {
            rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
        }
    }
    Ok(())
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain()
        .any(|c| c.downcast_ref::<std::io::Error>().is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe))
}

/// 1 for I/O failures, 2 for invalid input and domain errors.
fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 1;
        }
        if let Some(err) = cause.downcast_ref::<Error>() {
            return match err {
                Error::Io(_) => 1,
                Error::Csv(c) if c.is_io_error() => 1,
                Error::Json(j) if j.is_io() => 1,
                _ => 2,
            };
        }
    }
    2
}

fn generate(a: GenerateArgs) -> anyhow::Result<()> {
    let graph = random_geometric_graph(a.n, a.theta, a.kappa, a.graph_seed).context("building the graph")?;
    let spectrum = Arc::new(normalized_laplacian(&graph).context("computing the Laplacian spectrum")?);
    let bounds = SpectralBounds::default();
    let (gen, bands) = match a.generator {
        GeneratorKind::Poly => (make_polynomial_generator(spectrum.clone(), bounds, a.generator_seed), None),
        GeneratorKind::Banded | GeneratorKind::Banded2 => {
            let bands = match a.generator {
                GeneratorKind::Banded => four_band_default(a.n),
                _ => two_band_default(a.n),
            };
            (make_banded_generator(&spectrum, &bands, a.atoms, a.generator_seed), Some(bands))
        }
    };
    let gen = gen.context("building the generating dictionary")?;
    let spec = SignalSpec {
        m: a.m,
        t0_max: a.t0,
        coeff_dist: match a.coeffs {
            Coeffs::Normal => CoeffDist::StandardNormal,
            Coeffs::Uniform => CoeffDist::Uniform,
        },
        noise_sigma: a.noise_sigma,
        noise_scale: if a.noise_variance { NoiseScale::Variance } else { NoiseScale::StdDev },
        seed: a.signal_seed,
    };
    let set = synth_signal_set(&gen, &spec).context("drawing signals")?;

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    io::write_graph(&a.out, &graph).context("writing the graph")?;
    io::write_signals(a.out.join(io::SIGNALS_FILE), &set.signals).context("writing signals")?;
    if spec.noise_sigma > 0.0 {
        io::write_signals(a.out.join("clean_signals.csv"), &set.clean).context("writing clean signals")?;
    }
    if let GeneratingDictionary::Polynomial(d) = &gen {
        KernelFile::new(d.kernels(), bounds).write(a.out.join(io::TRUTH_FILE)).context("writing truth kernels")?;
    }
    CorpusManifest {
        generator: gen.kind().into(),
        graph_seed: a.graph_seed,
        generator_seed: a.generator_seed,
        n: a.n,
        theta: a.theta,
        kappa: a.kappa,
        spec,
        bands,
        n_atoms: gen.n_atoms(),
    }
    .write(a.out.join(io::MANIFEST_FILE))
    .context("writing the manifest")?;
    Ok(())
}

fn load_corpus(dir: &Path) -> anyhow::Result<(Arc<graphdict::LaplacianSpectrum>, Option<DMatrix<f64>>)> {
    let graph = io::read_graph(dir).with_context(|| format!("reading the graph in {}", dir.display()))?;
    let spectrum = Arc::new(normalized_laplacian(&graph).context("computing the Laplacian spectrum")?);
    let path = dir.join(io::SIGNALS_FILE);
    let signals = if path.exists() {
        Some(io::read_signals(&path).with_context(|| format!("reading {}", path.display()))?)
    } else {
        None
    };
    Ok((spectrum, signals))
}

fn learn(a: LearnArgs) -> anyhow::Result<()> {
    let (spectrum, signals) = load_corpus(&a.data)?;
    let Some(y) = signals else { bail!("{} has no {}", a.data.display(), io::SIGNALS_FILE) };
    let init = match (&a.init_file, a.init) {
        (Some(p), _) => Init::FromFile(p.clone()),
        (None, InitKind::Uniform) => Init::Uniform,
        (None, InitKind::RandomFeasible) => Init::RandomFeasible,
    };
    let cfg = TrainConfig {
        n_kernels: a.s,
        degree: a.k,
        t0: a.t0,
        iter: a.iter,
        bounds: SpectralBounds { c: a.c, eps1: a.eps1, eps2: a.eps2 },
        mu: a.mu,
        seed: a.seed,
        init,
        ..TrainConfig::default()
    };
    let out = train_on_spectrum(&cfg, spectrum, &y).context("training")?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    KernelFile::new(out.dictionary.kernels(), cfg.bounds).write(a.out.join("kernels.json")).context("writing kernels")?;
    io::write_trace(a.out.join("trace.csv"), &out.trace).context("writing the trace")?;
    io::write_code(a.out.join("code.csv"), &out.code).context("writing the sparse code")?;
    Ok(())
}

fn output(path: &Option<PathBuf>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn check_shape(file: &KernelFile, spectrum: &graphdict::LaplacianSpectrum) -> anyhow::Result<graphdict::KernelCoefficients> {
    let kernels = file.kernels().context("reading kernel coefficients")?;
    if spectrum.n() == 0 {
        bail!("graph has no vertices");
    }
    Ok(kernels)
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let (spectrum, signals) = load_corpus(&a.data)?;
    let Some(y) = signals else { bail!("{} has no {}", a.data.display(), io::SIGNALS_FILE) };
    let file = KernelFile::read(&a.kernels).with_context(|| format!("reading {}", a.kernels.display()))?;
    let kernels = check_shape(&file, &spectrum)?;
    if y.nrows() != spectrum.n() {
        return Err(Error::DimensionMismatch { expected: spectrum.n(), got: y.nrows() })
            .context("signals do not match the graph");
    }
    let dict = PolynomialDictionary::new(kernels.clone(), spectrum.clone(), file.bounds());
    let errors = approximation_error(&dict, &y, &a.sparsity).context("sparse coding the test set")?;

    let mut w = output(&a.out)?;
    writeln!(w, "metric,sparsity,value")?;
    for (t, e) in a.sparsity.iter().zip(&errors) {
        writeln!(w, "error,{t},{}", fmt_real(*e))?;
    }
    if let Some(p) = &a.truth {
        let truth = KernelFile::read(p).with_context(|| format!("reading {}", p.display()))?.kernels()?;
        let snr = kernel_snr(&kernels, &truth, &spectrum).context("comparing kernels")?;
        writeln!(w, "kernel_snr_db,,{}", fmt_real(snr))?;
    }
    w.flush()?;
    Ok(())
}

fn kernels(a: KernelsArgs) -> anyhow::Result<()> {
    let (spectrum, _) = load_corpus(&a.data)?;
    let file = KernelFile::read(&a.kernels).with_context(|| format!("reading {}", a.kernels.display()))?;
    let kernels = check_shape(&file, &spectrum)?;
    let lmax = spectrum.lambda_max();
    let mut lambdas: Vec<f64> = spectrum.eigenvalues().iter().copied().collect();
    lambdas.extend((0..KERNEL_GRID).map(|i| lmax * i as f64 / (KERNEL_GRID - 1) as f64));
    let values = kernels.values_at(&lambdas);

    let mut w = output(&a.out)?;
    let header: Vec<String> =
        std::iter::once("lambda".to_string()).chain((1..=kernels.n_kernels()).map(|s| format!("g_{s}"))).collect();
    writeln!(w, "{}", header.join(","))?;
    for (i, l) in lambdas.iter().enumerate() {
        let row: Vec<String> = std::iter::once(fmt_real(*l)).chain(values.column(i).iter().map(|v| fmt_real(*v))).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

//! Learning structured dictionaries for signals on weighted graphs.
//!
//! Each dictionary is a concatenation of polynomial matrix functions of the
//! normalized graph Laplacian. Training alternates OMP sparse coding with a
//! constrained quadratic program over the polynomial coefficients.

pub mod dictionary;
pub mod error;
pub mod graph;
pub mod io;
pub mod kernel;
pub mod laplacian;
pub mod omp;
pub mod qp;
pub mod synth;
pub mod trainer;

pub use dictionary::{FrameCertificate, NormalizedAtoms, PolynomialDictionary};
pub use error::{Error, Result};
pub use graph::WeightedGraph;
pub use kernel::{KernelCoefficients, KernelFile, SpectralBounds};
pub use laplacian::{LaplacianSpectrum, SparseLaplacian};
pub use omp::{encode_batch, omp_encode, EncodeOptions, SparseCode};

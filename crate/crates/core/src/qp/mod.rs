//! Quadratic program for the kernel update and its solver.

mod assemble;
mod solver;

pub use assemble::{
    assemble_qp, assemble_qp_with, laplacian_power_mat, projection_qp, spectral_constraints, vandermonde, QpDump,
    QuadraticProgram, TraceRoute, QP_DUMP_CAP,
};
pub use solver::{kkt_residual, solve_qp, solve_qp_with, KktResidual, QpMethod, QpSettings, QpSolution, QpStatus};

//! Composite nonconvex optimization toolkit: a hybrid proximal-gradient /
//! semismooth-Newton solver on the forward-backward envelope residual, with
//! exact proximal operators for lq quasi-norms, zero-norm-plus-box and fused
//! zero-norm regularizers (changepoint dynamic programming with functional
//! pruning), an exact trust-region subproblem solver, and the data plumbing
//! for sparse-regression and image-deblurring benchmarks.

pub mod data_io;
pub mod envelope;
pub mod fused_dp;
pub mod linalg;
pub mod oracles;
pub mod problem;
pub mod regularizers;
pub mod rng;
pub mod solver;
pub mod subproblem;

pub use linalg::Matrix;
pub use problem::{LeastSquaresObjective, LogisticObjective, ProblemInstance, SmoothObjective};
pub use regularizers::{
    BoxConstraint, Certificate, ClarkeElement, FusedLqRegularizer, FusedZeroNormRegularizer,
    LqExponent, LqRegularizer, ProxResult, Regularizer, ZeroBoxRegularizer,
};
pub use solver::{run, run_with_sink, SolveReport, SolveStatus, SolverConfig};

//! The smooth part of the composite objective: value, gradient, Hessian
//! (dense or operator form) and a certified Lipschitz constant for the
//! gradient, with the least-squares and logistic instances used by the
//! benchmarks.

use crate::data_io::estimate_spectral_norm;
use crate::linalg::Matrix;
use crate::regularizers::Regularizer;
use nalgebra::{DMatrix, DVector};
use std::sync::{Arc, OnceLock};
use thiserror::Error;

const SPECTRAL_ITERS: usize = 200;
const SPECTRAL_SEED: u64 = 0x5eed_0001;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("matrix must have at least one row and column")]
    EmptyMatrix,
    #[error("dimension mismatch: A has {rows} rows but b has {len} entries")]
    DimensionMismatch { rows: usize, len: usize },
    #[error("label at row {row} is {value}, expected -1 or +1")]
    InvalidLabel { row: usize, value: f64 },
}

/// Smooth objective oracle. `lipschitz` must upper-bound the true gradient
/// Lipschitz modulus; the step-size bounds of the solver rely on it.
pub trait SmoothObjective: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &DVector<f64>) -> f64;
    fn grad(&self, x: &DVector<f64>) -> DVector<f64>;
    fn hess_dense(&self, x: &DVector<f64>) -> DMatrix<f64>;
    fn hess_apply(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64>;
    fn lipschitz(&self) -> f64;
}

/// f(x) = ||Ax - b||^2 (no 1/2 factor).
#[derive(Debug)]
pub struct LeastSquaresObjective {
    a: Matrix,
    b: DVector<f64>,
    lip: f64,
    gram: OnceLock<DMatrix<f64>>,
}

impl LeastSquaresObjective {
    pub fn new(a: Matrix, b: DVector<f64>) -> Result<Self, ProblemError> {
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(ProblemError::EmptyMatrix);
        }
        if a.nrows() != b.len() {
            return Err(ProblemError::DimensionMismatch { rows: a.nrows(), len: b.len() });
        }
        let sigma = estimate_spectral_norm(&a, SPECTRAL_ITERS, SPECTRAL_SEED);
        let lip = 2.0 * sigma * sigma;
        Ok(LeastSquaresObjective { a, b, lip, gram: OnceLock::new() })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.a
    }

    pub fn rhs(&self) -> &DVector<f64> {
        &self.b
    }
}

impl SmoothObjective for LeastSquaresObjective {
    fn dim(&self) -> usize {
        self.a.ncols()
    }

    fn eval(&self, x: &DVector<f64>) -> f64 {
        (self.a.matvec(x) - &self.b).norm_squared()
    }

    fn grad(&self, x: &DVector<f64>) -> DVector<f64> {
        let r = self.a.matvec(x) - &self.b;
        self.a.t_matvec(&r) * 2.0
    }

    fn hess_dense(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.gram.get_or_init(|| self.a.gram_dense() * 2.0).clone()
    }

    fn hess_apply(&self, _x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        self.a.t_matvec(&self.a.matvec(v)) * 2.0
    }

    fn lipschitz(&self) -> f64 {
        self.lip
    }
}

fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// f(x) = sum_i log(1 + exp(-b_i a_i' x)) with labels in {-1, +1}.
#[derive(Debug)]
pub struct LogisticObjective {
    a: Matrix,
    b: DVector<f64>,
    lip: f64,
}

impl LogisticObjective {
    pub fn new(a: Matrix, b: DVector<f64>) -> Result<Self, ProblemError> {
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(ProblemError::EmptyMatrix);
        }
        if a.nrows() != b.len() {
            return Err(ProblemError::DimensionMismatch { rows: a.nrows(), len: b.len() });
        }
        for (row, &v) in b.iter().enumerate() {
            if v != 1.0 && v != -1.0 {
                return Err(ProblemError::InvalidLabel { row, value: v });
            }
        }
        let sigma = estimate_spectral_norm(&a, SPECTRAL_ITERS, SPECTRAL_SEED);
        let lip = 0.25 * sigma * sigma;
        Ok(LogisticObjective { a, b, lip })
    }

    fn margins(&self, x: &DVector<f64>) -> DVector<f64> {
        self.a.matvec(x)
    }
}

impl SmoothObjective for LogisticObjective {
    fn dim(&self) -> usize {
        self.a.ncols()
    }

    fn eval(&self, x: &DVector<f64>) -> f64 {
        let m = self.margins(x);
        (0..m.len()).map(|i| softplus(-self.b[i] * m[i])).sum()
    }

    fn grad(&self, x: &DVector<f64>) -> DVector<f64> {
        let m = self.margins(x);
        let weighted = DVector::from_fn(m.len(), |i, _| -self.b[i] * sigmoid(-self.b[i] * m[i]));
        self.a.t_matvec(&weighted)
    }

    fn hess_dense(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let m = self.margins(x);
        let d = DVector::from_fn(m.len(), |i, _| {
            let s = sigmoid(-self.b[i] * m[i]);
            s * (1.0 - s)
        });
        let dense = self.a.to_dense();
        let mut scaled = dense.clone();
        for i in 0..scaled.nrows() {
            scaled.row_mut(i).scale_mut(d[i]);
        }
        dense.transpose() * scaled
    }

    fn hess_apply(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let m = self.margins(x);
        let mut av = self.a.matvec(v);
        for i in 0..av.len() {
            let s = sigmoid(-self.b[i] * m[i]);
            av[i] *= s * (1.0 - s);
        }
        self.a.t_matvec(&av)
    }

    fn lipschitz(&self) -> f64 {
        self.lip
    }
}

/// A smooth oracle paired with a regularizer.
#[derive(Clone)]
pub struct ProblemInstance {
    pub smooth: Arc<dyn SmoothObjective>,
    pub reg: Arc<dyn Regularizer>,
}

impl ProblemInstance {
    pub fn new(smooth: Arc<dyn SmoothObjective>, reg: Arc<dyn Regularizer>) -> Self {
        ProblemInstance { smooth, reg }
    }

    pub fn dim(&self) -> usize {
        self.smooth.dim()
    }

    /// F(x) = f(x) + g(x); +inf outside dom g.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        self.smooth.eval(x) + self.reg.eval(x)
    }
}

//! The nonsmooth part of the composite objective: evaluation, proximal
//! mappings with single-valuedness certificates, and Clarke-Jacobian
//! elements of the prox used by the Newton step.

mod fused;
mod lq;
mod zero_box;

pub use fused::{FusedLqRegularizer, FusedZeroNormRegularizer};
pub use lq::{lq_clarke_weight, lq_scalar_prox, lq_tie_point, LqExponent, LqRegularizer};
pub use zero_box::{zero_box_scalar_prox, ZeroBoxRegularizer};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Default relative tie tolerance: a prox is certified single-valued only
/// when the best and second-best structurally distinct candidates differ by
/// more than `TIE_REL * (1 + |objective|)`.
pub const TIE_REL: f64 = 1e-10;

pub fn tie_threshold(tie_rel: f64, scale: f64) -> f64 {
    tie_rel * (1.0 + scale.abs())
}

#[derive(Debug, Error)]
pub enum RegError {
    #[error("clarke element requested at a possibly multivalued prox (gap {gap:.3e})")]
    MultivaluedProx { gap: f64 },
    #[error("prox point touches a box face at coordinate {index}; the subspace projector is invalid here")]
    BoxFaceDegenerate { index: usize },
    #[error("box constraint must satisfy l < 0 < u componentwise (violated at {index})")]
    InvalidBox { index: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("box is infeasible")]
    InfeasibleBox,
}

/// Outcome of the numeric single-valuedness test attached to a prox call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Certificate {
    SingleValued,
    /// `gap` is the objective difference between the best and second-best
    /// structurally distinct candidates that triggered the flag.
    PossiblyMultivalued { gap: f64 },
}

impl Certificate {
    pub fn is_single_valued(&self) -> bool {
        matches!(self, Certificate::SingleValued)
    }

    /// Combines per-coordinate (or per-stage) certificates: single-valued
    /// only when every part is.
    pub fn combine(self, other: Certificate) -> Certificate {
        match (self, other) {
            (Certificate::SingleValued, c) => c,
            (c @ Certificate::PossiblyMultivalued { .. }, Certificate::SingleValued) => c,
            (
                Certificate::PossiblyMultivalued { gap: a },
                Certificate::PossiblyMultivalued { gap: b },
            ) => Certificate::PossiblyMultivalued { gap: a.min(b) },
        }
    }

    pub fn from_gap(gap: f64, threshold: f64) -> Certificate {
        if gap > threshold {
            Certificate::SingleValued
        } else {
            Certificate::PossiblyMultivalued { gap }
        }
    }
}

/// A prox point together with its Moreau-envelope value and certificate.
#[derive(Debug, Clone)]
pub struct ProxResult {
    pub point: DVector<f64>,
    /// e_gamma g(z) = (2 gamma)^-1 ||p - z||^2 + g(p).
    pub moreau: f64,
    pub certificate: Certificate,
}

/// Clarke-Jacobian element W of the prox at the query point. The supported
/// regularizers produce either a diagonal or a block-averaging operator, so
/// products stay O(n).
#[derive(Debug, Clone)]
pub enum ClarkeElement {
    Diagonal(DVector<f64>),
    /// Constant-segment averaging: each block spans `start..start+len` and
    /// contributes (coeff/len) * ones(len, len). Coordinates not covered by
    /// any block are zero rows/columns.
    Blocks { dim: usize, blocks: Vec<AverageBlock> },
}

#[derive(Debug, Clone, Copy)]
pub struct AverageBlock {
    pub start: usize,
    pub len: usize,
    pub coeff: f64,
}

impl ClarkeElement {
    pub fn dim(&self) -> usize {
        match self {
            ClarkeElement::Diagonal(d) => d.len(),
            ClarkeElement::Blocks { dim, .. } => *dim,
        }
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            ClarkeElement::Diagonal(d) => v.component_mul(d),
            ClarkeElement::Blocks { dim, blocks } => {
                let mut out = DVector::zeros(*dim);
                for b in blocks {
                    let mut sum = 0.0;
                    for i in b.start..b.start + b.len {
                        sum += v[i];
                    }
                    let val = b.coeff * sum / b.len as f64;
                    for i in b.start..b.start + b.len {
                        out[i] = val;
                    }
                }
                out
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            ClarkeElement::Diagonal(d) => DMatrix::from_diagonal(d),
            ClarkeElement::Blocks { dim, blocks } => {
                let mut m = DMatrix::zeros(*dim, *dim);
                for b in blocks {
                    let val = b.coeff / b.len as f64;
                    for i in b.start..b.start + b.len {
                        for j in b.start..b.start + b.len {
                            m[(i, j)] = val;
                        }
                    }
                }
                m
            }
        }
    }
}

/// Componentwise box [l, u] with 0 strictly interior.
#[derive(Debug, Clone)]
pub struct BoxConstraint {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl BoxConstraint {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self, RegError> {
        if lower.len() != upper.len() {
            return Err(RegError::DimensionMismatch { expected: lower.len(), got: upper.len() });
        }
        for i in 0..lower.len() {
            if !(lower[i] < 0.0 && 0.0 < upper[i]) {
                return Err(RegError::InvalidBox { index: i });
            }
        }
        Ok(BoxConstraint { lower, upper })
    }

    pub fn uniform(n: usize, lo: f64, hi: f64) -> Result<Self, RegError> {
        Self::new(DVector::from_element(n, lo), DVector::from_element(n, hi))
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self, i: usize) -> f64 {
        self.lower[i]
    }

    pub fn upper(&self, i: usize) -> f64 {
        self.upper[i]
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        (0..x.len()).all(|i| self.lower[i] <= x[i] && x[i] <= self.upper[i])
    }
}

/// Nonsmooth regularizer capability: evaluation, prox, certificate, and the
/// Clarke element of the prox at a certified point. Implementations are
/// immutable and shareable across threads.
pub trait Regularizer: Send + Sync {
    /// g(x), possibly +inf.
    fn eval(&self, x: &DVector<f64>) -> f64;

    /// Prox of g at z with parameter gamma.
    fn prox(&self, gamma: f64, z: &DVector<f64>) -> ProxResult;

    /// Clarke element W of P_gamma g at z, given the prox result at (gamma, z).
    /// Calling this with a `PossiblyMultivalued` certificate is a contract
    /// violation and returns an error; the fused projectors additionally
    /// report box-face degeneracy.
    fn clarke_element(
        &self,
        gamma: f64,
        z: &DVector<f64>,
        prox: &ProxResult,
    ) -> Result<ClarkeElement, RegError>;

    /// Prox-boundedness threshold gamma_g (+inf for nonnegative g).
    fn prox_bound(&self) -> f64 {
        f64::INFINITY
    }
}

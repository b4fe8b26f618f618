//! Forward-backward machinery: the prox-gradient map, its residual, the
//! forward-backward envelope and its gradient, and assembly of generalized
//! second-order elements from Clarke elements of the prox.

use crate::problem::{ProblemInstance, SmoothObjective};
use crate::regularizers::{Certificate, ClarkeElement, ProxResult, RegError};
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvelopeError {
    #[error("operation requires a single-valued prox (certificate gap {gap:.3e})")]
    Multivalued { gap: f64 },
    #[error(transparent)]
    Regularizer(#[from] RegError),
}

/// One forward-backward evaluation at a point: everything downstream reuses
/// these pieces, so the forward point and prox are computed exactly once per
/// call site (no cross-call caching).
#[derive(Debug, Clone)]
pub struct ForwardStep {
    pub x: DVector<f64>,
    pub f: f64,
    pub grad: DVector<f64>,
    /// x - gamma * grad f(x)
    pub forward: DVector<f64>,
    pub prox: ProxResult,
}

impl ForwardStep {
    pub fn certificate(&self) -> Certificate {
        self.prox.certificate
    }
}

/// A problem viewed through a fixed prox step-size gamma.
pub struct EnvelopeContext<'a> {
    problem: &'a ProblemInstance,
    gamma: f64,
}

impl<'a> EnvelopeContext<'a> {
    pub fn new(problem: &'a ProblemInstance, gamma: f64) -> Self {
        assert!(gamma > 0.0, "step-size must be positive");
        let bound = problem.reg.prox_bound();
        assert!(gamma < bound, "step-size {gamma} must stay below the prox bound {bound}");
        EnvelopeContext { problem, gamma }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn step(&self, x: &DVector<f64>) -> ForwardStep {
        let f = self.problem.smooth.eval(x);
        let grad = self.problem.smooth.grad(x);
        let forward = x - &grad * self.gamma;
        let prox = self.problem.reg.prox(self.gamma, &forward);
        ForwardStep { x: x.clone(), f, grad, forward, prox }
    }

    /// T_gamma(x): prox of g at the forward point.
    pub fn t_map(&self, x: &DVector<f64>) -> ProxResult {
        self.step(x).prox
    }

    /// R_gamma(x) = (x - T_gamma(x)) / gamma.
    pub fn residual(&self, x: &DVector<f64>) -> (DVector<f64>, Certificate) {
        let step = self.step(x);
        (self.residual_of(&step), step.certificate())
    }

    pub fn residual_of(&self, step: &ForwardStep) -> DVector<f64> {
        (&step.x - &step.prox.point) / self.gamma
    }

    /// The forward-backward envelope value at x.
    pub fn fbe(&self, x: &DVector<f64>) -> f64 {
        self.fbe_of(&self.step(x))
    }

    pub fn fbe_of(&self, step: &ForwardStep) -> f64 {
        step.prox.moreau + step.f - 0.5 * self.gamma * step.grad.norm_squared()
    }

    /// Q_gamma(x) = I - gamma * hess f(x), materialized densely.
    pub fn q_dense(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = x.len();
        let mut q = self.problem.smooth.hess_dense(x) * (-self.gamma);
        for i in 0..n {
            q[(i, i)] += 1.0;
        }
        q
    }

    pub fn q_apply(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        v - self.problem.smooth.hess_apply(x, v) * self.gamma
    }

    /// grad F_gamma(x) = Q_gamma(x) R_gamma(x); defined only where the prox
    /// is certified single-valued.
    pub fn fbe_gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>, EnvelopeError> {
        let step = self.step(x);
        self.fbe_gradient_of(&step)
    }

    pub fn fbe_gradient_of(&self, step: &ForwardStep) -> Result<DVector<f64>, EnvelopeError> {
        if let Certificate::PossiblyMultivalued { gap } = step.certificate() {
            return Err(EnvelopeError::Multivalued { gap });
        }
        let r = self.residual_of(step);
        Ok(self.q_apply(&step.x, &r))
    }

    /// An element of the generalized second-order set
    /// { gamma^-1 Q (I - W Q) : W Clarke element of the prox }.
    pub fn second_order_element(
        &self,
        step: &ForwardStep,
        dense_limit: usize,
    ) -> Result<SecondOrderElement, EnvelopeError> {
        let w = self.problem.reg.clarke_element(self.gamma, &step.forward, &step.prox)?;
        let n = step.x.len();
        let rep = if n <= dense_limit {
            let q = self.q_dense(&step.x);
            let h = build_dense_h(&q, &w, self.gamma);
            SecondOrderRep::Dense { h, q }
        } else {
            SecondOrderRep::Operator { smooth: Arc::clone(&self.problem.smooth), x: step.x.clone() }
        };
        Ok(SecondOrderElement { gamma: self.gamma, w, rep })
    }
}

fn build_dense_h(q: &DMatrix<f64>, w: &ClarkeElement, gamma: f64) -> DMatrix<f64> {
    let n = q.nrows();
    // H = (Q - Q W Q) / gamma, with Q W Q assembled from the low-rank or
    // diagonal structure of W
    let qwq = match w {
        ClarkeElement::Diagonal(d) => {
            let support: Vec<usize> = (0..n).filter(|&i| d[i] != 0.0).collect();
            if support.is_empty() {
                DMatrix::zeros(n, n)
            } else {
                let mut u = DMatrix::zeros(n, support.len());
                let mut v = DMatrix::zeros(n, support.len());
                for (k, &i) in support.iter().enumerate() {
                    let col = q.column(i);
                    u.set_column(k, &(col * d[i]));
                    v.set_column(k, &col.clone_owned());
                }
                u * v.transpose()
            }
        }
        ClarkeElement::Blocks { blocks, .. } => {
            if blocks.is_empty() {
                DMatrix::zeros(n, n)
            } else {
                let mut u = DMatrix::zeros(n, blocks.len());
                let mut v = DMatrix::zeros(n, blocks.len());
                for (k, b) in blocks.iter().enumerate() {
                    let mut col = DVector::zeros(n);
                    for i in b.start..b.start + b.len {
                        col += q.column(i);
                    }
                    u.set_column(k, &(&col * (b.coeff / b.len as f64)));
                    v.set_column(k, &col);
                }
                u * v.transpose()
            }
        }
    };
    let mut h = (q - qwq) / gamma;
    let scale = h.norm().max(1.0);
    let asym = (&h - h.transpose()).norm() / scale;
    debug_assert!(asym <= 1e-10, "second-order element asymmetry {asym}");
    let ht = h.transpose();
    h += ht;
    h *= 0.5;
    h
}

enum SecondOrderRep {
    Dense { h: DMatrix<f64>, q: DMatrix<f64> },
    Operator { smooth: Arc<dyn SmoothObjective>, x: DVector<f64> },
}

/// H = gamma^-1 Q (I - W Q) together with the parts it was built from.
pub struct SecondOrderElement {
    gamma: f64,
    w: ClarkeElement,
    rep: SecondOrderRep,
}

impl SecondOrderElement {
    pub fn dim(&self) -> usize {
        self.w.dim()
    }

    pub fn clarke(&self) -> &ClarkeElement {
        &self.w
    }

    /// Dense H when materialized (n within the dense limit).
    pub fn dense(&self) -> Option<&DMatrix<f64>> {
        match &self.rep {
            SecondOrderRep::Dense { h, .. } => Some(h),
            SecondOrderRep::Operator { .. } => None,
        }
    }

    pub fn q_snapshot(&self) -> Option<&DMatrix<f64>> {
        match &self.rep {
            SecondOrderRep::Dense { q, .. } => Some(q),
            SecondOrderRep::Operator { .. } => None,
        }
    }

    /// H v, using the dense materialization or the operator form
    /// v -> gamma^-1 Q (v - W (Q v)).
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.rep {
            SecondOrderRep::Dense { h, .. } => h * v,
            SecondOrderRep::Operator { smooth, x } => {
                let qv = v - smooth.hess_apply(x, v) * self.gamma;
                let inner = &qv - self.w.apply(&qv);
                (&inner - smooth.hess_apply(x, &inner) * self.gamma) / self.gamma
            }
        }
    }
}

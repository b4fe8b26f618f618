//! Zero-norm penalty restricted to a box: lambda ||x||_0 + indicator([l, u]),
//! separable with a two-candidate scalar prox.

use super::{tie_threshold, BoxConstraint, Certificate, ClarkeElement, ProxResult, RegError, Regularizer, TIE_REL};
use nalgebra::DVector;

/// Minimizes (2 gamma)^-1 (t - z)^2 + lambda [t != 0] over [l, u].
/// Candidates are t = 0 and the box projection of z; returns the minimizer
/// and the objective gap between them. With lambda = 0 this is the plain
/// (strictly convex, unique) projection and the gap is +inf.
pub fn zero_box_scalar_prox(lambda: f64, gamma: f64, l: f64, u: f64, z: f64) -> (f64, f64) {
    assert!(gamma > 0.0 && l < 0.0 && 0.0 < u);
    let clamped = z.clamp(l, u);
    if lambda == 0.0 {
        return (clamped, f64::INFINITY);
    }
    if clamped == 0.0 {
        // z = 0: the best nonzero level approaches the same quadratic cost
        // plus the lambda charge
        return (0.0, lambda);
    }
    let obj_zero = z * z / (2.0 * gamma);
    let obj_nonzero = (clamped - z) * (clamped - z) / (2.0 * gamma) + lambda;
    let gap = (obj_zero - obj_nonzero).abs();
    if obj_nonzero < obj_zero {
        (clamped, gap)
    } else {
        (0.0, gap)
    }
}

/// g(x) = lambda ||x||_0 + indicator of the box.
#[derive(Debug, Clone)]
pub struct ZeroBoxRegularizer {
    lambda: f64,
    bounds: BoxConstraint,
    tie_rel: f64,
}

impl ZeroBoxRegularizer {
    pub fn new(lambda: f64, bounds: BoxConstraint) -> Self {
        assert!(lambda >= 0.0);
        ZeroBoxRegularizer { lambda, bounds, tie_rel: TIE_REL }
    }

    pub fn with_tie_rel(mut self, tie_rel: f64) -> Self {
        self.tie_rel = tie_rel;
        self
    }

    pub fn bounds(&self) -> &BoxConstraint {
        &self.bounds
    }
}

impl Regularizer for ZeroBoxRegularizer {
    fn eval(&self, x: &DVector<f64>) -> f64 {
        if !self.bounds.contains(x) {
            return f64::INFINITY;
        }
        self.lambda * x.iter().filter(|v| **v != 0.0).count() as f64
    }

    fn prox(&self, gamma: f64, z: &DVector<f64>) -> ProxResult {
        assert!(gamma > 0.0);
        assert_eq!(z.len(), self.bounds.dim());
        let mut point = DVector::zeros(z.len());
        let mut moreau = 0.0;
        let mut certificate = Certificate::SingleValued;
        for i in 0..z.len() {
            let (p, gap) =
                zero_box_scalar_prox(self.lambda, gamma, self.bounds.lower(i), self.bounds.upper(i), z[i]);
            point[i] = p;
            let obj = (p - z[i]) * (p - z[i]) / (2.0 * gamma)
                + if p != 0.0 { self.lambda } else { 0.0 };
            moreau += obj;
            certificate =
                certificate.combine(Certificate::from_gap(gap, tie_threshold(self.tie_rel, obj)));
        }
        ProxResult { point, moreau, certificate }
    }

    fn clarke_element(
        &self,
        _gamma: f64,
        z: &DVector<f64>,
        prox: &ProxResult,
    ) -> Result<ClarkeElement, RegError> {
        if let Certificate::PossiblyMultivalued { gap } = prox.certificate {
            return Err(RegError::MultivaluedProx { gap });
        }
        // the prox is the identity where the unclamped nonzero candidate
        // won, and locally constant where the coordinate was clamped to a
        // face or thresholded to zero
        let d = DVector::from_fn(prox.point.len(), |i, _| {
            if prox.point[i] != 0.0 && prox.point[i] == z[i] {
                1.0
            } else {
                0.0
            }
        });
        Ok(ClarkeElement::Diagonal(d))
    }
}

//! Scalar and separable prox for the |.|^q quasi-norm penalties with
//! q in {1/2, 2/3}, plus the implicit-differentiation Clarke weights.

use super::{tie_threshold, Certificate, ClarkeElement, ProxResult, RegError, Regularizer, TIE_REL};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LqExponent {
    Half,
    TwoThirds,
}

impl LqExponent {
    pub fn value(self) -> f64 {
        match self {
            LqExponent::Half => 0.5,
            LqExponent::TwoThirds => 2.0 / 3.0,
        }
    }

    pub fn from_value(q: f64) -> Option<Self> {
        if (q - 0.5).abs() < 1e-12 {
            Some(LqExponent::Half)
        } else if (q - 2.0 / 3.0).abs() < 1e-12 {
            Some(LqExponent::TwoThirds)
        } else {
            None
        }
    }
}

/// Largest positive stationary point of 0.5 (t - z)^2 + w t^q for z > 0,
/// i.e. the local minimum of the nonzero branch, or None when no nonzero
/// stationary point exists.
fn nonzero_stationary(q: LqExponent, w: f64, z: f64) -> Option<f64> {
    debug_assert!(z > 0.0 && w > 0.0);
    match q {
        LqExponent::Half => {
            // substitute s = sqrt(t): s^3 - z s + w/2 = 0
            let disc_ok = 4.0 * z * z * z > 27.0 * (0.5 * w) * (0.5 * w);
            if !disc_ok {
                return None;
            }
            // trigonometric solution of the depressed cubic, largest root
            let arg = (-3.0 * w / (4.0 * z)) * (3.0 / z).sqrt();
            let theta = arg.clamp(-1.0, 1.0).acos();
            let s = 2.0 * (z / 3.0).sqrt() * (theta / 3.0).cos();
            if s <= 0.0 {
                return None;
            }
            let mut t = s * s;
            // one safeguarded Newton polish on t - z + (w/2) t^{-1/2}
            let psi = t - z + 0.5 * w / t.sqrt();
            let dpsi = 1.0 - 0.25 * w / (t * t.sqrt());
            if dpsi > 0.0 {
                let t_new = t - psi / dpsi;
                if t_new > 0.0 {
                    t = t_new;
                }
            }
            let curv = 1.0 - 0.25 * w / (t * t.sqrt());
            (curv > 0.0).then_some(t)
        }
        LqExponent::TwoThirds => {
            // substitute s = t^{1/3}: s^4 - z s + 2w/3 = 0, companion matrix
            let c = 2.0 * w / 3.0;
            let mut comp = DMatrix::zeros(4, 4);
            comp[(0, 3)] = -c;
            comp[(1, 0)] = 1.0;
            comp[(1, 3)] = z;
            comp[(2, 1)] = 1.0;
            comp[(3, 2)] = 1.0;
            let eigs = comp.complex_eigenvalues();
            let mut best: Option<f64> = None;
            for e in eigs.iter() {
                if e.im.abs() <= 1e-8 * (1.0 + e.re.abs()) && e.re > 0.0 {
                    best = Some(best.map_or(e.re, |b: f64| b.max(e.re)));
                }
            }
            let s = best?;
            let mut t = s * s * s;
            // one safeguarded Newton polish on t - z + (2w/3) t^{-1/3}
            let psi = t - z + (2.0 * w / 3.0) / t.powf(1.0 / 3.0);
            let dpsi = 1.0 - (2.0 * w / 9.0) / t.powf(4.0 / 3.0);
            if dpsi > 0.0 {
                let t_new = t - psi / dpsi;
                if t_new > 0.0 {
                    t = t_new;
                }
            }
            let curv = 1.0 - (2.0 * w / 9.0) / t.powf(4.0 / 3.0);
            (curv > 0.0).then_some(t)
        }
    }
}

/// Minimizes 0.5 (t - z)^2 + w |t|^q over the real line. Returns the
/// minimizer and the objective gap between the zero and nonzero candidates
/// (+inf when no nonzero stationary point exists). Ties go to zero.
pub fn lq_scalar_prox(q: LqExponent, w: f64, z: f64) -> (f64, f64) {
    assert!(w > 0.0, "weight must be positive");
    if z == 0.0 {
        return (0.0, f64::INFINITY);
    }
    let sign = z.signum();
    let za = z.abs();
    match nonzero_stationary(q, w, za) {
        None => (0.0, f64::INFINITY),
        Some(t) => {
            let obj_zero = 0.5 * za * za;
            let obj_root = 0.5 * (t - za) * (t - za) + w * t.powf(q.value());
            let gap = (obj_zero - obj_root).abs();
            if obj_root < obj_zero {
                (sign * t, gap)
            } else {
                (0.0, gap)
            }
        }
    }
}

/// Derivative of the scalar prox on its support, from implicit
/// differentiation of the stationarity condition:
/// (1 + w q (q - 1) |p|^{q-2})^{-1}.
pub fn lq_clarke_weight(q: LqExponent, w: f64, p: f64) -> f64 {
    debug_assert!(p != 0.0);
    let pa = p.abs();
    match q {
        LqExponent::Half => 1.0 / (1.0 - 0.25 * w / (pa * pa.sqrt())),
        LqExponent::TwoThirds => 1.0 / (1.0 - (2.0 * w / 9.0) / pa.powf(4.0 / 3.0)),
    }
}

/// The exact tie location for the scalar lq prox: at z = tie_z(q, w) the
/// zero and nonzero candidates have equal objective. Used by tests and the
/// step-size search diagnostics.
pub fn lq_tie_point(q: LqExponent, w: f64) -> f64 {
    match q {
        // tie at z = 1.5 w^{2/3} with nonzero branch t = w^{2/3}
        LqExponent::Half => 1.5 * w.powf(2.0 / 3.0),
        // tie where stationarity and value equality coincide:
        // t = (2w/3)^{3/4} ... solved numerically below for robustness
        LqExponent::TwoThirds => {
            // bisect on the candidate gap sign
            let mut lo = 0.0;
            let mut hi = 10.0 * (1.0 + w);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let (p, _) = lq_scalar_prox(LqExponent::TwoThirds, w, mid);
                if p == 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        }
    }
}

/// g(x) = lambda * sum_i |x_i|^q, prox applied coordinatewise.
#[derive(Debug, Clone)]
pub struct LqRegularizer {
    lambda: f64,
    q: LqExponent,
    tie_rel: f64,
}

impl LqRegularizer {
    pub fn new(lambda: f64, q: LqExponent) -> Self {
        assert!(lambda > 0.0, "lambda must be positive");
        LqRegularizer { lambda, q, tie_rel: TIE_REL }
    }

    pub fn with_tie_rel(mut self, tie_rel: f64) -> Self {
        self.tie_rel = tie_rel;
        self
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn exponent(&self) -> LqExponent {
        self.q
    }
}

impl Regularizer for LqRegularizer {
    fn eval(&self, x: &DVector<f64>) -> f64 {
        self.lambda * x.iter().map(|v| v.abs().powf(self.q.value())).sum::<f64>()
    }

    fn prox(&self, gamma: f64, z: &DVector<f64>) -> ProxResult {
        assert!(gamma > 0.0);
        let w = gamma * self.lambda;
        let mut point = DVector::zeros(z.len());
        let mut scaled_obj = 0.0;
        let mut certificate = Certificate::SingleValued;
        for i in 0..z.len() {
            let (p, gap) = lq_scalar_prox(self.q, w, z[i]);
            point[i] = p;
            let obj = 0.5 * (p - z[i]) * (p - z[i]) + w * p.abs().powf(self.q.value());
            scaled_obj += obj;
            certificate =
                certificate.combine(Certificate::from_gap(gap, tie_threshold(self.tie_rel, obj)));
        }
        ProxResult { point, moreau: scaled_obj / gamma, certificate }
    }

    fn clarke_element(
        &self,
        gamma: f64,
        _z: &DVector<f64>,
        prox: &ProxResult,
    ) -> Result<ClarkeElement, RegError> {
        if let Certificate::PossiblyMultivalued { gap } = prox.certificate {
            return Err(RegError::MultivaluedProx { gap });
        }
        let w = gamma * self.lambda;
        let d = DVector::from_fn(prox.point.len(), |i, _| {
            let p = prox.point[i];
            if p == 0.0 {
                0.0
            } else {
                lq_clarke_weight(self.q, w, p)
            }
        });
        Ok(ClarkeElement::Diagonal(d))
    }
}

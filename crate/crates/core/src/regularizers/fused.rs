//! Fused regularizers: first-difference zero-norm penalties combined with a
//! coordinate zero-norm plus box, or with an lq quasi-norm. Prox evaluation
//! delegates to the changepoint dynamic programs; the Clarke elements are
//! the segment-averaging projectors of the locally active subspace.

use super::{
    lq_clarke_weight, AverageBlock, BoxConstraint, Certificate, ClarkeElement, LqExponent,
    ProxResult, RegError, Regularizer, TIE_REL,
};
use crate::fused_dp::{prox_pruned, prox_segment_dp, LqSegmentSolver};
use nalgebra::DVector;

fn count_jumps(x: &DVector<f64>) -> usize {
    (1..x.len()).filter(|&i| x[i - 1] != x[i]).count()
}

/// Maximal runs of equal consecutive values, as (start, len, value).
fn constant_runs(x: &DVector<f64>) -> Vec<(usize, usize, f64)> {
    let mut runs = Vec::new();
    let mut start = 0usize;
    for i in 1..=x.len() {
        if i == x.len() || x[i] != x[start] {
            runs.push((start, i - start, x[start]));
            start = i;
        }
    }
    runs
}

/// g(x) = lambda0 ||Bx||_0 + lambda ||x||_0 + indicator of the box, with B
/// the first-difference operator.
#[derive(Debug, Clone)]
pub struct FusedZeroNormRegularizer {
    lambda0: f64,
    lambda: f64,
    bounds: BoxConstraint,
    tie_rel: f64,
}

impl FusedZeroNormRegularizer {
    pub fn new(lambda0: f64, lambda: f64, bounds: BoxConstraint) -> Self {
        assert!(lambda0 >= 0.0 && lambda >= 0.0);
        FusedZeroNormRegularizer { lambda0, lambda, bounds, tie_rel: TIE_REL }
    }

    pub fn with_tie_rel(mut self, tie_rel: f64) -> Self {
        self.tie_rel = tie_rel;
        self
    }

    pub fn bounds(&self) -> &BoxConstraint {
        &self.bounds
    }
}

impl Regularizer for FusedZeroNormRegularizer {
    fn eval(&self, x: &DVector<f64>) -> f64 {
        if !self.bounds.contains(x) {
            return f64::INFINITY;
        }
        let nnz = x.iter().filter(|v| **v != 0.0).count();
        self.lambda0 * count_jumps(x) as f64 + self.lambda * nnz as f64
    }

    fn prox(&self, gamma: f64, z: &DVector<f64>) -> ProxResult {
        let r = prox_pruned(z, self.lambda0, self.lambda, &self.bounds, gamma, self.tie_rel)
            .expect("fused prox: validated box cannot be infeasible");
        ProxResult { point: r.point, moreau: r.value / gamma, certificate: r.certificate }
    }

    fn clarke_element(
        &self,
        _gamma: f64,
        _z: &DVector<f64>,
        prox: &ProxResult,
    ) -> Result<ClarkeElement, RegError> {
        if let Certificate::PossiblyMultivalued { gap } = prox.certificate {
            return Err(RegError::MultivaluedProx { gap });
        }
        let p = &prox.point;
        let mut blocks = Vec::new();
        for (start, len, value) in constant_runs(p) {
            if value == 0.0 {
                continue;
            }
            for i in start..start + len {
                if p[i] == self.bounds.lower(i) || p[i] == self.bounds.upper(i) {
                    return Err(RegError::BoxFaceDegenerate { index: i });
                }
            }
            blocks.push(AverageBlock { start, len, coeff: 1.0 });
        }
        Ok(ClarkeElement::Blocks { dim: p.len(), blocks })
    }
}

/// g(x) = lambda0 ||Bx||_0 + lambda ||x||_q^q with q in {1/2, 2/3}.
#[derive(Debug, Clone)]
pub struct FusedLqRegularizer {
    lambda0: f64,
    lambda: f64,
    q: LqExponent,
    tie_rel: f64,
}

impl FusedLqRegularizer {
    pub fn new(lambda0: f64, lambda: f64, q: LqExponent) -> Self {
        assert!(lambda0 >= 0.0 && lambda > 0.0);
        FusedLqRegularizer { lambda0, lambda, q, tie_rel: TIE_REL }
    }

    pub fn with_tie_rel(mut self, tie_rel: f64) -> Self {
        self.tie_rel = tie_rel;
        self
    }
}

impl Regularizer for FusedLqRegularizer {
    fn eval(&self, x: &DVector<f64>) -> f64 {
        let power: f64 = x.iter().map(|v| v.abs().powf(self.q.value())).sum();
        self.lambda0 * count_jumps(x) as f64 + self.lambda * power
    }

    fn prox(&self, gamma: f64, z: &DVector<f64>) -> ProxResult {
        let solver = LqSegmentSolver::new(z, self.q, gamma * self.lambda);
        let r = prox_segment_dp(z.len(), gamma * self.lambda0, &solver, self.tie_rel);
        ProxResult { point: r.point, moreau: r.value / gamma, certificate: r.certificate }
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
        let p = &prox.point;
        let w = gamma * self.lambda;
        let mut blocks = Vec::new();
        for (start, len, value) in constant_runs(p) {
            if value == 0.0 {
                continue;
            }
            blocks.push(AverageBlock { start, len, coeff: lq_clarke_weight(self.q, w, value) });
        }
        Ok(ClarkeElement::Blocks { dim: p.len(), blocks })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::{enumerate_fused, GridPowerSegmentOracle};
    use crate::regularizers::{lq_scalar_prox, LqRegularizer};
    use crate::rng::SplitMix64;
    use nalgebra::DMatrix;

    fn wide_box(n: usize) -> BoxConstraint {
        BoxConstraint::uniform(n, -10.0, 10.0).unwrap()
    }

    #[test]
    fn fused_zero_eval_counts_jumps_and_nonzeros() {
        let reg = FusedZeroNormRegularizer::new(0.5, 0.2, wide_box(3));
        assert_eq!(reg.eval(&DVector::zeros(3)), 0.0);
        let x = DVector::from_row_slice(&[1.0, 1.0, 5.0]);
        assert!((reg.eval(&x) - (0.5 + 0.2 * 3.0)).abs() < 1e-15);
        let out = DVector::from_row_slice(&[11.0, 0.0, 0.0]);
        assert!(reg.eval(&out).is_infinite());
    }

    #[test]
    fn fused_zero_prox_moreau_scaling() {
        let reg = FusedZeroNormRegularizer::new(0.5, 0.0, wide_box(3));
        let z = DVector::from_row_slice(&[1.0, 1.0, 5.0]);
        let r = reg.prox(1.0, &z);
        assert!((r.moreau - 0.5).abs() < 1e-12);
        // moreau definition holds after folding out gamma
        let gamma = 0.25;
        let r2 = reg.prox(gamma, &z);
        let direct = (&r2.point - &z).norm_squared() / (2.0 * gamma) + reg.eval(&r2.point);
        assert!((r2.moreau - direct).abs() < 1e-9);
    }

    #[test]
    fn fused_zero_projector_shapes() {
        let reg = FusedZeroNormRegularizer::new(0.5, 0.1, wide_box(3));
        let p = DVector::from_row_slice(&[2.0, 2.0, 0.0]);
        let prox = ProxResult { point: p, moreau: 0.0, certificate: Certificate::SingleValued };
        let w = reg.clarke_element(1.0, &DVector::zeros(3), &prox).unwrap().to_dense();
        let expect = DMatrix::from_row_slice(3, 3, &[0.5, 0.5, 0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0]);
        assert!((w - expect).norm() < 1e-15);
    }

    #[test]
    fn fused_zero_projector_identities() {
        // all-distinct nonzeros -> identity; random p -> idempotent symmetric
        let reg = FusedZeroNormRegularizer::new(0.5, 0.1, wide_box(4));
        let p = DVector::from_row_slice(&[1.0, 2.0, -1.0, 3.0]);
        let prox = ProxResult { point: p, moreau: 0.0, certificate: Certificate::SingleValued };
        let w = reg.clarke_element(1.0, &DVector::zeros(4), &prox).unwrap().to_dense();
        assert!((w.clone() - DMatrix::identity(4, 4)).norm() < 1e-15);

        let p2 = DVector::from_row_slice(&[1.5, 1.5, 0.0, -2.0]);
        let prox2 = ProxResult { point: p2, moreau: 0.0, certificate: Certificate::SingleValued };
        let w2 = reg.clarke_element(1.0, &DVector::zeros(4), &prox2).unwrap().to_dense();
        assert!((w2.clone() - w2.transpose()).norm() < 1e-14);
        assert!((w2.clone() * w2.clone() - w2).norm() < 1e-14);
    }

    #[test]
    fn fused_zero_projector_box_face_degeneracy() {
        let bounds = BoxConstraint::uniform(2, -1.0, 1.0).unwrap();
        let reg = FusedZeroNormRegularizer::new(0.5, 0.0, bounds);
        let z = DVector::from_row_slice(&[5.0, 5.0]);
        let r = reg.prox(1.0, &z);
        // both coordinates clamp to the box face
        assert!(matches!(
            reg.clarke_element(1.0, &z, &r),
            Err(RegError::BoxFaceDegenerate { .. })
        ));
    }

    #[test]
    fn fused_lq_zero_jump_charge_matches_separable_prox() {
        let mut rng = SplitMix64::new(31);
        let lambda = 0.7;
        for q in [LqExponent::Half, LqExponent::TwoThirds] {
            let fused = FusedLqRegularizer::new(0.0, lambda, q);
            let separable = LqRegularizer::new(lambda, q);
            for _ in 0..100 {
                let n = 2 + rng.below(6);
                let z = DVector::from_fn(n, |_, _| rng.uniform_in(-4.0, 4.0));
                let gamma = 0.2 + rng.uniform();
                let a = fused.prox(gamma, &z);
                let b = separable.prox(gamma, &z);
                assert!(
                    (a.moreau - b.moreau).abs() <= 1e-9 * (1.0 + b.moreau.abs()),
                    "q {q:?}: fused {} separable {}",
                    a.moreau,
                    b.moreau
                );
            }
        }
    }

    #[test]
    fn fused_lq_two_point_merge_under_large_jump_charge() {
        let q = LqExponent::Half;
        let reg = FusedLqRegularizer::new(100.0, 1.0, q);
        let z = DVector::from_row_slice(&[1.0, 1.2]);
        let r = reg.prox(1.0, &z);
        let (alpha, _) = lq_scalar_prox(q, 1.0, 1.1);
        assert!((r.point[0] - alpha).abs() < 1e-12);
        assert!((r.point[1] - alpha).abs() < 1e-12);
    }

    #[test]
    fn fused_lq_matches_enumeration_with_grid_segments() {
        let mut rng = SplitMix64::new(404);
        let q = LqExponent::Half;
        for _ in 0..25 {
            let n = 2 + rng.below(5);
            let z = DVector::from_fn(n, |_, _| rng.uniform_in(-3.0, 3.0));
            let lambda0 = rng.uniform();
            let lambda = 0.2 + 0.8 * rng.uniform();
            let reg = FusedLqRegularizer::new(lambda0, lambda, q);
            let r = reg.prox(1.0, &z);
            let zs: Vec<f64> = z.iter().copied().collect();
            let oracle = GridPowerSegmentOracle { z: &zs, q: q.value(), weight: lambda, points: 4000 };
            let e = enumerate_fused(n, lambda0, &oracle, 1e-10);
            assert!(
                r.moreau <= e.value + 1e-6,
                "fused-lq prox {} worse than enumeration {}",
                r.moreau,
                e.value
            );
        }
    }

    #[test]
    fn fused_lq_clarke_blocks_match_finite_differences() {
        let q = LqExponent::Half;
        let reg = FusedLqRegularizer::new(0.4, 0.6, q);
        let z = DVector::from_row_slice(&[5.0, 5.2, -6.0]);
        let gamma = 0.8;
        let r = reg.prox(gamma, &z);
        assert!(r.certificate.is_single_valued());
        let w = reg.clarke_element(gamma, &z, &r).unwrap();
        let dense = w.to_dense();
        // finite-difference Jacobian of the prox map
        let h = 1e-6;
        let mut fd = DMatrix::zeros(3, 3);
        for j in 0..3 {
            let mut zp = z.clone();
            zp[j] += h;
            let pp = reg.prox(gamma, &zp).point;
            zp[j] = z[j] - h;
            let pm = reg.prox(gamma, &zp).point;
            for i in 0..3 {
                fd[(i, j)] = (pp[i] - pm[i]) / (2.0 * h);
            }
        }
        let rel = (&dense - &fd).norm() / dense.norm();
        assert!(rel < 1e-5, "rel {rel}\nW {dense}\nFD {fd}");
    }
}

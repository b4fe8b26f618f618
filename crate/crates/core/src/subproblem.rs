//! Exact trust-region subproblem solver for the Newton direction:
//! min 0.5 d'Gd + g'd subject to ||d|| <= radius, via a positive-definite
//! fast path, a More-Sorensen secular iteration, and an eigen-decomposition
//! fallback that also resolves the hard case. An operator-only Steihaug
//! truncated-CG path covers dimensions too large to factorize densely (at
//! the cost of exactness).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrsError {
    #[error("non-finite entries in the subproblem")]
    NonFinite,
    #[error("trust-region radius must be positive, got {0}")]
    BadRadius(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrsStatus {
    Interior,
    Boundary,
    HardCase,
}

#[derive(Debug, Clone)]
pub struct TrsProblem {
    pub g_mat: DMatrix<f64>,
    pub grad: DVector<f64>,
    pub radius: f64,
}

impl TrsProblem {
    pub fn new(g_mat: DMatrix<f64>, grad: DVector<f64>, radius: f64) -> Result<Self, TrsError> {
        if radius <= 0.0 || !radius.is_finite() {
            return Err(TrsError::BadRadius(radius));
        }
        if grad.iter().any(|v| !v.is_finite()) || g_mat.iter().any(|v| !v.is_finite()) {
            return Err(TrsError::NonFinite);
        }
        Ok(TrsProblem { g_mat, grad, radius })
    }
}

#[derive(Debug, Clone)]
pub struct TrsSolution {
    pub d: DVector<f64>,
    pub nu: f64,
    pub status: TrsStatus,
}

/// The quadratic model 0.5 d'Gd + g'd.
pub fn trs_objective(p: &TrsProblem, d: &DVector<f64>) -> f64 {
    0.5 * d.dot(&(&p.g_mat * d)) + p.grad.dot(d)
}

const MAX_FACTORIZATIONS: usize = 50;
const SECULAR_REL_TOL: f64 = 1e-10;

fn shifted_cholesky(g: &DMatrix<f64>, nu: f64) -> Option<Cholesky<f64, Dyn>> {
    let mut m = g.clone();
    for i in 0..m.nrows() {
        m[(i, i)] += nu;
    }
    m.cholesky()
}

fn refine_solve(g: &DMatrix<f64>, nu: f64, chol: &Cholesky<f64, Dyn>, rhs: &DVector<f64>) -> DVector<f64> {
    let mut d = chol.solve(rhs);
    // one iterative-refinement pass keeps the KKT residual at roundoff even
    // for ill-conditioned shifts
    let mut r = g * &d;
    r.axpy(nu, &d, 1.0);
    r -= rhs;
    d -= chol.solve(&r);
    d
}

fn converged(nd: f64, nu: f64, radius: f64) -> bool {
    if nd > radius * (1.0 + SECULAR_REL_TOL) {
        return false;
    }
    (nd - radius).abs() <= SECULAR_REL_TOL * radius || nu * (radius - nd) <= 1e-9 * radius
}

/// Exact trust-region solve. Interior solutions satisfy G d = -g to
/// roundoff; boundary solutions carry the multiplier nu with
/// (G + nu I) d = -g, ||d|| = radius and G + nu I positive semidefinite.
pub fn solve_trs(p: &TrsProblem) -> Result<TrsSolution, TrsError> {
    if p.radius <= 0.0 {
        return Err(TrsError::BadRadius(p.radius));
    }
    if p.grad.iter().any(|v| !v.is_finite()) || p.g_mat.iter().any(|v| !v.is_finite()) {
        return Err(TrsError::NonFinite);
    }
    let n = p.grad.len();
    let neg_grad = -&p.grad;

    // newton update for the secular equation 1/radius - 1/||d(nu)||
    let secular_newton = |chol: &Cholesky<f64, Dyn>, d: &DVector<f64>, nd: f64, nu: f64| -> Option<f64> {
        let w = chol.l().solve_lower_triangular(d)?;
        let wn = w.norm();
        if wn == 0.0 {
            return None;
        }
        Some(nu + (nd / wn).powi(2) * (nd - p.radius) / p.radius)
    };

    // bracket: nu_lo under-approximates the multiplier (raised on
    // factorization failures and long steps), nu_hi over-approximates it
    // (||d(nu_hi)|| <= ||g|| / nu_hi <= radius)
    let mut row_norm = 0.0f64;
    let mut gersh_lo = f64::INFINITY;
    for i in 0..n {
        let mut off = 0.0;
        for j in 0..n {
            if j != i {
                off += p.g_mat[(i, j)].abs();
            }
        }
        row_norm = row_norm.max(p.g_mat[(i, i)].abs() + off);
        gersh_lo = gersh_lo.min(p.g_mat[(i, i)] - off);
    }
    let mut nu_lo = 0.0f64;
    let mut nu_hi = (p.grad.norm() / p.radius + row_norm).max(1.0);
    let mut nu;

    // fast path: G positive definite; inside the ball means interior,
    // otherwise its solve seeds the secular iteration
    match shifted_cholesky(&p.g_mat, 0.0) {
        Some(chol) => {
            let d = refine_solve(&p.g_mat, 0.0, &chol, &neg_grad);
            let nd = d.norm();
            if nd <= p.radius * (1.0 + 1e-12) {
                return Ok(TrsSolution { d, nu: 0.0, status: TrsStatus::Interior });
            }
            nu = match secular_newton(&chol, &d, nd, 0.0) {
                Some(next) if next > 0.0 && next < nu_hi => next,
                _ => 0.5 * nu_hi,
            };
        }
        None => {
            // indefinite: the PD boundary is within [max(0,-gersh), nu_hi]
            nu = (-gersh_lo).max(1e-12).min(0.5 * nu_hi);
        }
    }

    for _ in 0..MAX_FACTORIZATIONS {
        match shifted_cholesky(&p.g_mat, nu) {
            None => {
                nu_lo = nu_lo.max(nu);
                nu = 0.5 * (nu_lo + nu_hi);
            }
            Some(chol) => {
                let d = refine_solve(&p.g_mat, nu, &chol, &neg_grad);
                let nd = d.norm();
                if converged(nd, nu, p.radius) {
                    return Ok(TrsSolution { d, nu, status: TrsStatus::Boundary });
                }
                if nd > p.radius {
                    nu_lo = nu_lo.max(nu);
                } else {
                    nu_hi = nu_hi.min(nu);
                }
                // hard case: the step stays short all the way down to the
                // positive-definiteness boundary
                if nu_hi - nu_lo <= 1e-12 * (1.0 + nu_hi) {
                    break;
                }
                nu = match secular_newton(&chol, &d, nd, nu) {
                    Some(next) if next > nu_lo && next < nu_hi && next.is_finite() => next,
                    _ => 0.5 * (nu_lo + nu_hi),
                };
            }
        }
    }

    Ok(eigen_path(p))
}

/// Exact solve through a full symmetric eigendecomposition; handles the
/// hard case (gradient orthogonal to the leading eigenspace).
fn eigen_path(p: &TrsProblem) -> TrsSolution {
    let n = p.grad.len();
    let sym = (&p.g_mat + p.g_mat.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let ghat = eig.eigenvectors.transpose() * &p.grad;
    let lam_min = eig.eigenvalues.min();
    let nu_bar = (-lam_min).max(0.0);
    let scale = eig.eigenvalues.abs().max().max(1.0);
    let null_tol = 1e-12 * scale;

    let step_norm = |nu: f64| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            let denom = eig.eigenvalues[i] + nu;
            if denom > null_tol {
                s += (ghat[i] / denom).powi(2);
            } else if ghat[i].abs() > null_tol {
                return f64::INFINITY;
            }
        }
        s.sqrt()
    };

    let build = |nu: f64| -> DVector<f64> {
        let mut coeff = DVector::zeros(n);
        for i in 0..n {
            let denom = eig.eigenvalues[i] + nu;
            if denom > null_tol {
                coeff[i] = -ghat[i] / denom;
            }
        }
        &eig.eigenvectors * coeff
    };

    if step_norm(nu_bar) <= p.radius {
        if nu_bar == 0.0 {
            let d = build(0.0);
            let status =
                if d.norm() < p.radius * (1.0 - 1e-12) { TrsStatus::Interior } else { TrsStatus::Boundary };
            return TrsSolution { d, nu: 0.0, status };
        }
        // hard case: fill the remaining length along the leading eigenvector
        let mut d = build(nu_bar);
        let idx = (0..n)
            .min_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap())
            .unwrap();
        let t = (p.radius * p.radius - d.norm_squared()).max(0.0).sqrt();
        let v = eig.eigenvectors.column(idx).clone_owned();
        d += v * t;
        return TrsSolution { d, nu: nu_bar, status: TrsStatus::HardCase };
    }

    // safeguarded bisection + Newton on the secular equation
    let mut lo = nu_bar;
    let mut hi = nu_bar.max(1.0);
    while step_norm(hi) > p.radius {
        hi = hi * 2.0 + 1.0;
    }
    let mut nu = 0.5 * (lo + hi);
    for _ in 0..200 {
        let nd = step_norm(nu);
        if converged(nd, nu, p.radius) {
            break;
        }
        if nd > p.radius {
            lo = nu;
        } else {
            hi = nu;
        }
        // Newton on 1/radius - 1/||d||
        let mut dn_dnu = 0.0;
        for i in 0..n {
            let denom = eig.eigenvalues[i] + nu;
            if denom > null_tol {
                dn_dnu += ghat[i].powi(2) / denom.powi(3);
            }
        }
        let deriv = -dn_dnu / nd.max(1e-300);
        let newton = nu - (nd - p.radius) / deriv.min(-1e-300) * (1.0 / nd.max(1e-300));
        nu = if newton.is_finite() && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
    }
    let mut d = build(nu);
    let nd = d.norm();
    if nd > p.radius {
        d *= p.radius / nd;
    }
    TrsSolution { d, nu, status: TrsStatus::Boundary }
}

/// Steihaug truncated conjugate gradients for operator-only problems
/// (n above the dense limit). Returns an approximate minimizer: exact
/// interior solves when CG converges, otherwise a boundary point; the
/// multiplier is not computed in this mode.
pub fn solve_trs_operator(
    apply: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    grad: &DVector<f64>,
    radius: f64,
    max_iter: usize,
    rel_tol: f64,
) -> TrsSolution {
    let n = grad.len();
    let mut d = DVector::zeros(n);
    let mut r = -grad;
    let mut p = r.clone();
    let g0 = grad.norm();
    if g0 == 0.0 {
        return TrsSolution { d, nu: 0.0, status: TrsStatus::Interior };
    }
    let boundary = |d: &DVector<f64>, p: &DVector<f64>| -> DVector<f64> {
        // tau >= 0 with ||d + tau p|| = radius
        let dd = d.norm_squared();
        let dp = d.dot(p);
        let pp = p.norm_squared();
        let disc = (dp * dp + pp * (radius * radius - dd)).max(0.0);
        let tau = (-dp + disc.sqrt()) / pp;
        d + p * tau
    };
    for _ in 0..max_iter {
        let ap = apply(&p);
        let kappa = p.dot(&ap);
        if kappa <= 0.0 {
            return TrsSolution { d: boundary(&d, &p), nu: 0.0, status: TrsStatus::Boundary };
        }
        let rr = r.norm_squared();
        let alpha = rr / kappa;
        let d_next = &d + &p * alpha;
        if d_next.norm() >= radius {
            return TrsSolution { d: boundary(&d, &p), nu: 0.0, status: TrsStatus::Boundary };
        }
        d = d_next;
        r -= ap * alpha;
        if r.norm() <= rel_tol * g0 {
            break;
        }
        let beta = r.norm_squared() / rr;
        p = &r + &p * beta;
    }
    TrsSolution { d, nu: 0.0, status: TrsStatus::Interior }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::{trs_random_feasible, trs_reference_min};
    use crate::rng::SplitMix64;

    fn kkt_checks(p: &TrsProblem, s: &TrsSolution) {
        assert!(s.d.norm() <= p.radius * (1.0 + 1e-10), "step outside ball");
        assert!(s.nu >= 0.0);
        let mut res = &p.g_mat * &s.d + &p.grad;
        res.axpy(s.nu, &s.d, 1.0);
        assert!(
            res.norm() <= 1e-8 * (1.0 + p.grad.norm()),
            "stationarity residual {}",
            res.norm()
        );
        assert!(s.nu * (p.radius - s.d.norm()) <= 1e-8 * p.radius, "complementarity");
    }

    #[test]
    fn identity_boundary_case() {
        let p = TrsProblem::new(
            DMatrix::identity(2, 2),
            DVector::from_row_slice(&[2.0, 0.0]),
            1.0,
        )
        .unwrap();
        let s = solve_trs(&p).unwrap();
        assert_eq!(s.status, TrsStatus::Boundary);
        assert!((s.d[0] + 1.0).abs() < 1e-9);
        assert!(s.d[1].abs() < 1e-12);
        assert!((s.nu - 1.0).abs() < 1e-8);
        kkt_checks(&p, &s);
    }

    #[test]
    fn identity_interior_case() {
        let p = TrsProblem::new(
            DMatrix::identity(2, 2),
            DVector::from_row_slice(&[0.5, 0.0]),
            1.0,
        )
        .unwrap();
        let s = solve_trs(&p).unwrap();
        assert_eq!(s.status, TrsStatus::Interior);
        assert!((s.d[0] + 0.5).abs() < 1e-12);
        assert_eq!(s.nu, 0.0);
        // interior stationarity at the tight tolerance
        let res = &p.g_mat * &s.d + &p.grad;
        assert!(res.norm() <= 1e-10 * (1.0 + p.grad.norm()));
    }

    #[test]
    fn hard_case_matches_grid_oracle() {
        let p = TrsProblem::new(
            DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 2.0]),
            DVector::from_row_slice(&[0.0, 1.0]),
            1.0,
        )
        .unwrap();
        let s = solve_trs(&p).unwrap();
        assert_eq!(s.status, TrsStatus::HardCase);
        kkt_checks(&p, &s);
        let obj = trs_objective(&p, &s.d);
        let reference = trs_reference_min(&p.g_mat, &p.grad, p.radius, 5);
        assert!(obj <= reference + 1e-6, "obj {obj} vs grid {reference}");
        // global-optimality certificate: G + nu I is (near) psd
        let mut shifted = p.g_mat.clone();
        for i in 0..2 {
            shifted[(i, i)] += s.nu;
        }
        assert!(shifted.symmetric_eigen().eigenvalues.min() >= -1e-8);
    }

    #[test]
    fn objective_evaluation_identities() {
        let p = TrsProblem::new(
            DMatrix::from_row_slice(2, 2, &[3.0, 0.5, 0.5, 1.0]),
            DVector::from_row_slice(&[1.0, -2.0]),
            0.8,
        )
        .unwrap();
        assert_eq!(trs_objective(&p, &DVector::zeros(2)), 0.0);
        let s = solve_trs(&p).unwrap();
        if s.status == TrsStatus::Interior {
            // at an interior optimum, value = 0.5 g'd = -0.5 d'Gd
            let v = trs_objective(&p, &s.d);
            assert!((v - 0.5 * p.grad.dot(&s.d)).abs() < 1e-10);
        }
        // dominance over random feasible points
        let obj_star = trs_objective(&p, &s.d);
        for d in trs_random_feasible(2, p.radius, 1000, 9) {
            assert!(obj_star <= trs_objective(&p, &d) + 1e-9);
        }
    }

    #[test]
    fn random_small_problems_beat_the_grid() {
        let mut rng = SplitMix64::new(1234);
        for trial in 0..40 {
            let n = 2 + (trial % 2); // 2-D and 3-D
            let a = DMatrix::from_fn(n, n, |_, _| rng.normal());
            let g_mat = (&a + a.transpose()) * 0.5;
            let grad = DVector::from_fn(n, |_, _| rng.normal());
            let radius = 0.2 + 2.0 * rng.uniform();
            let p = TrsProblem::new(g_mat, grad, radius).unwrap();
            let s = solve_trs(&p).unwrap();
            kkt_checks(&p, &s);
            let obj = trs_objective(&p, &s.d);
            let reference = trs_reference_min(&p.g_mat, &p.grad, p.radius, trial as u64);
            assert!(obj <= reference + 1e-6, "trial {trial}: {obj} vs {reference}");
        }
    }

    #[test]
    fn objective_monotone_in_radius() {
        let mut rng = SplitMix64::new(4321);
        let a = DMatrix::from_fn(3, 3, |_, _| rng.normal());
        let g_mat = (&a + a.transpose()) * 0.5;
        let grad = DVector::from_fn(3, |_, _| rng.normal());
        let mut last = f64::INFINITY;
        for k in 1..=8 {
            let radius = 0.25 * k as f64;
            let p = TrsProblem::new(g_mat.clone(), grad.clone(), radius).unwrap();
            let s = solve_trs(&p).unwrap();
            let obj = trs_objective(&p, &s.d);
            assert!(obj <= last + 1e-9, "radius {radius}: {obj} > {last}");
            last = obj;
        }
    }

    #[test]
    fn zero_gradient_negative_curvature_fills_the_ball() {
        let p = TrsProblem::new(
            DMatrix::from_row_slice(2, 2, &[-2.0, 0.0, 0.0, 1.0]),
            DVector::zeros(2),
            0.5,
        )
        .unwrap();
        let s = solve_trs(&p).unwrap();
        assert!((s.d.norm() - 0.5).abs() < 1e-9);
        assert!(trs_objective(&p, &s.d) < 0.0);
        kkt_checks(&p, &s);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            TrsProblem::new(DMatrix::identity(2, 2), DVector::zeros(2), 0.0),
            Err(TrsError::BadRadius(_))
        ));
        assert!(matches!(
            TrsProblem::new(
                DMatrix::from_row_slice(1, 1, &[f64::NAN]),
                DVector::zeros(1),
                1.0
            ),
            Err(TrsError::NonFinite)
        ));
    }

    #[test]
    fn steihaug_agrees_with_dense_on_easy_problems() {
        let mut rng = SplitMix64::new(77);
        for _ in 0..10 {
            let n = 6;
            let a = DMatrix::from_fn(n, n, |_, _| rng.normal());
            let g_mat = &a * a.transpose() + DMatrix::identity(n, n); // pd
            let grad = DVector::from_fn(n, |_, _| rng.normal());
            let radius = 5.0;
            let p = TrsProblem::new(g_mat.clone(), grad.clone(), radius).unwrap();
            let dense = solve_trs(&p).unwrap();
            let apply = |v: &DVector<f64>| &g_mat * v;
            let cg = solve_trs_operator(&apply, &grad, radius, 200, 1e-12);
            let d_obj = trs_objective(&p, &dense.d);
            let c_obj = trs_objective(&p, &cg.d);
            assert!((d_obj - c_obj).abs() <= 1e-6 * (1.0 + d_obj.abs()));
        }
    }
}

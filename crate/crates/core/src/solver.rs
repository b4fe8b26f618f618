//! The hybrid solver: a proximal-gradient safeguard step with BB
//! initialization and two-sided step-size search, a step-size search for a
//! certified single-valued prox, a regularized Newton direction from a
//! trust-region subproblem, and a segment line search on the
//! forward-backward envelope.

use crate::envelope::{EnvelopeContext, EnvelopeError, ForwardStep};
use crate::problem::ProblemInstance;
use crate::subproblem::{solve_trs, solve_trs_operator, TrsError, TrsProblem, TrsSolution};
use nalgebra::{DMatrix, DVector};
use std::fmt::Write as _;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("config: {0}")]
    BadConfig(String),
    #[error("descent condition failed at the step-size floor; the Lipschitz constant is likely underestimated (gamma {gamma:.3e})")]
    LipschitzTooSmall { gamma: f64 },
    #[error("no certified single-valued prox step-size after {tried} shrinks")]
    GammaTildeSearchExhausted { tried: usize },
    #[error("envelope line search exhausted after {tried} backtracks")]
    LineSearchExhausted { tried: usize },
    #[error("non-finite objective value encountered")]
    NonFinite,
    #[error(transparent)]
    Subproblem(#[from] TrsError),
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
}

/// Which decrease factor the PG acceptance test uses. The analyzed variant
/// uses alpha/2; the plain-alpha variant is the implementation-oriented one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgDecrease {
    HalfAlpha,
    Alpha,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Termination tolerance on the prox-gradient residual.
    pub eps: f64,
    /// Shrink factor shared by the step-size search and the line search.
    pub beta: f64,
    /// PG decrease modulus; the step-size floor is 1/(L + alpha).
    pub alpha: f64,
    /// Upper cap on the PG step-size (also caps the enlarging search).
    pub gamma_bar: f64,
    /// Exponent of the Newton regularization mu = ||R||^tau.
    pub tau: f64,
    /// Exponent of the trust-region radius ||R||^varrho, in (0, 1 - tau).
    pub radius_exponent: f64,
    /// Range for the regularization scale; the constant upper value is used.
    pub sigma_range: (f64, f64),
    /// Range for the radius scale; the constant upper value is used.
    pub radius_range: (f64, f64),
    /// PG backtracking factor.
    pub eta: f64,
    /// Clamp applied to the BB initial step-size.
    pub bb_clamp: (f64, f64),
    pub max_iter: usize,
    pub max_linesearch: usize,
    pub pg_decrease: PgDecrease,
    /// Cap on shrink steps when searching for a certified step-size.
    pub gamma_tilde_search_cap: usize,
    /// Dimension threshold for dense second-order algebra.
    pub dense_limit: usize,
}

impl SolverConfig {
    /// Defaults for a problem with gradient Lipschitz constant `l`.
    pub fn for_lipschitz(l: f64) -> Self {
        SolverConfig {
            eps: 1e-5,
            beta: 0.5,
            alpha: 1e-3 * l,
            gamma_bar: 1e20,
            tau: 0.4,
            radius_exponent: 0.5,
            sigma_range: (1.0, 1.0),
            radius_range: (1.0, 10.0),
            eta: 0.5,
            bb_clamp: (1e-20, 1e20),
            max_iter: 500,
            max_linesearch: 60,
            pg_decrease: PgDecrease::HalfAlpha,
            gamma_tilde_search_cap: 60,
            dense_limit: 2000,
        }
    }

    /// L + 2 alpha, the modulus anchoring the Newton step-sizes.
    pub fn l_tilde(&self, l: f64) -> f64 {
        l + 2.0 * self.alpha
    }

    // negated comparisons so NaN inputs fail validation too
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self, l: f64) -> Result<(), SolverError> {
        let fail = |m: String| Err(SolverError::BadConfig(m));
        if !(self.eps >= 0.0) {
            return fail(format!("eps must be nonnegative, got {}", self.eps));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return fail(format!("beta must lie in (0,1), got {}", self.beta));
        }
        if !(self.alpha > 0.0) {
            return fail(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(l > 0.0) {
            return fail(format!("Lipschitz constant must be positive, got {l}"));
        }
        if !(self.gamma_bar >= 1.0 / (l + self.alpha)) {
            return fail(format!("gamma_bar {} below the floor 1/(L+alpha)", self.gamma_bar));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return fail(format!("tau must lie in (0,1), got {}", self.tau));
        }
        if !(self.radius_exponent > 0.0 && self.radius_exponent < 1.0 - self.tau) {
            return fail(format!(
                "radius exponent must lie in (0, 1 - tau), got {}",
                self.radius_exponent
            ));
        }
        if !(self.sigma_range.0 > 0.0 && self.sigma_range.0 <= self.sigma_range.1) {
            return fail("sigma range must satisfy 0 < lo <= hi".into());
        }
        if !(self.radius_range.0 > 0.0 && self.radius_range.0 <= self.radius_range.1) {
            return fail("radius range must satisfy 0 < lo <= hi".into());
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return fail(format!("eta must lie in (0,1), got {}", self.eta));
        }
        if !(self.bb_clamp.0 > 0.0 && self.bb_clamp.0 <= self.bb_clamp.1) {
            return fail("bb clamp must satisfy 0 < lo <= hi".into());
        }
        if self.max_linesearch == 0 {
            return fail("max_linesearch must be at least 1".into());
        }
        Ok(())
    }
}

/// BB spectral initial step-size from the last two primal points; the
/// non-positive-curvature branch maps to the upper clamp so backtracking
/// can correct it.
pub fn bb_initial_gamma(s: &DVector<f64>, yg: &DVector<f64>, clamp: (f64, f64)) -> f64 {
    let den = yg.dot(s);
    if den <= 0.0 {
        return clamp.1;
    }
    (s.dot(s) / den).clamp(clamp.0, clamp.1)
}

#[derive(Debug, Clone, Default)]
pub struct Counters {
    pub prox_calls: u64,
    pub hessian_builds: u64,
    pub trs_solves: u64,
}

#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub k: usize,
    /// F(x^k)
    pub f_x: f64,
    /// Envelope value at x^k under the certified step-size.
    pub fbe_x: f64,
    /// Residual norm at x^k under the certified step-size.
    pub resid_norm: f64,
    pub gamma: f64,
    pub gamma_tilde: f64,
    pub d_norm: f64,
    pub pg_backtracks: usize,
    pub newton_backtracks: usize,
    pub unit_step: bool,
    /// ||x^k - y^k|| from the PG step (not serialized).
    pub pg_dist: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIter,
    Stalled,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Converged => "Converged",
            SolveStatus::MaxIter => "MaxIter",
            SolveStatus::Stalled => "Stalled",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    /// Final iterate y*.
    pub point: DVector<f64>,
    /// Fresh prox-gradient residual at y* (post-hoc recheck).
    pub final_resid: f64,
    /// Step-size the final residual was measured at.
    pub final_gamma: f64,
    pub status: SolveStatus,
    pub iterations: Vec<IterationRecord>,
    pub counts: Counters,
    pub diagnostic: Option<String>,
}

impl SolveReport {
    pub fn iters(&self) -> usize {
        self.iterations.len()
    }

    /// Re-checks the two descent inequalities over the recorded log:
    /// F(x^{k+1}) <= F(x^k) - (alpha/2) ||x^{k+1} - y^{k+1}||^2 and the
    /// envelope decrease with the realized minimal step-size.
    pub fn verify_descent_ledger(&self, l: f64, alpha: f64) -> Result<(), String> {
        let recs = &self.iterations;
        if recs.len() < 2 {
            return Ok(());
        }
        let l_tilde = l + 2.0 * alpha;
        let gamma_min =
            recs.iter().map(|r| r.gamma_tilde).fold(f64::INFINITY, f64::min);
        let c1 = 0.25
            * (gamma_min - l * gamma_min * gamma_min)
                .min(1.0 / l_tilde - l / (l_tilde * l_tilde));
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must also fail
        if !(c1 > 0.0) {
            return Err(format!("non-positive envelope decrease constant {c1}"));
        }
        for w in recs.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            let slack = 1e-12 * (1.0 + a.f_x.abs());
            if b.f_x > a.f_x - 0.5 * alpha * b.pg_dist * b.pg_dist + slack {
                return Err(format!(
                    "objective descent violated at iteration {}: {} -> {} (dist {})",
                    b.k, a.f_x, b.f_x, b.pg_dist
                ));
            }
            let fbe_slack = 1e-12 * (1.0 + a.fbe_x.abs());
            if b.fbe_x > a.fbe_x - c1 * a.resid_norm * a.resid_norm + fbe_slack {
                return Err(format!(
                    "envelope decrease violated at iteration {}: {} -> {} (resid {})",
                    b.k, a.fbe_x, b.fbe_x, a.resid_norm
                ));
            }
        }
        Ok(())
    }
}

/// Serializes the iteration log in the benchmark CSV schema. The `ms`
/// column is pinned to zero in files so repeated runs are byte-identical;
/// wall-clock timing is reported in the run summary instead.
pub fn iterations_to_csv(records: &[IterationRecord]) -> String {
    let mut out = String::from("# schema: 1\nk,F,FBE,resid,gamma,gamma_tilde,d_norm,pg_bt,newton_bt,unit_step,ms\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},0",
            r.k,
            r.f_x,
            r.fbe_x,
            r.resid_norm,
            r.gamma,
            r.gamma_tilde,
            r.d_norm,
            r.pg_backtracks,
            r.newton_backtracks,
            if r.unit_step { 1 } else { 0 },
        );
    }
    out
}

#[derive(Debug, Clone)]
pub struct PgStepResult {
    pub x: DVector<f64>,
    pub gamma: f64,
    pub backtracks: usize,
    /// F(x) = f(x) + g(x).
    pub f_x: f64,
    /// ||x - y|| / gamma, the residual the termination test uses.
    pub resid: f64,
}

fn pg_decrease_factor(cfg: &SolverConfig) -> f64 {
    match cfg.pg_decrease {
        PgDecrease::HalfAlpha => 0.5 * cfg.alpha,
        PgDecrease::Alpha => cfg.alpha,
    }
}

/// The safeguarded PG step: backtracks from the BB initial step-size until
/// the sufficient-decrease test holds, flooring at 1/(L + alpha); when the
/// initial step-size passes untouched, a doubling search enlarges it.
pub fn pg_step(
    problem: &ProblemInstance,
    cfg: &SolverConfig,
    l: f64,
    y: &DVector<f64>,
    gamma0: f64,
    counters: &mut Counters,
) -> Result<PgStepResult, SolverError> {
    let floor = 1.0 / (l + cfg.alpha);
    let cap = cfg.gamma_bar.min(1e20);
    let factor = pg_decrease_factor(cfg);

    let f_y = problem.smooth.eval(y);
    if !f_y.is_finite() {
        return Err(SolverError::NonFinite);
    }
    let grad_y = problem.smooth.grad(y);
    let grad_sq = grad_y.norm_squared();

    // one prox per trial step-size
    let mut try_gamma = |gamma: f64, slack: f64| -> Result<Option<PgStepResult>, SolverError> {
        counters.prox_calls += 1;
        let forward = y - &grad_y * gamma;
        let prox = problem.reg.prox(gamma, &forward);
        let fbe_y = prox.moreau + f_y - 0.5 * gamma * grad_sq;
        let x = prox.point;
        let f_x = problem.smooth.eval(&x) + problem.reg.eval(&x);
        if !f_x.is_finite() || !fbe_y.is_finite() {
            return Err(SolverError::NonFinite);
        }
        let dist_sq = (&x - y).norm_squared();
        if f_x <= fbe_y - factor * dist_sq + slack {
            let resid = dist_sq.sqrt() / gamma;
            Ok(Some(PgStepResult { x, gamma, backtracks: 0, f_x, resid }))
        } else {
            Ok(None)
        }
    };

    let gamma0 = gamma0.clamp(cfg.bb_clamp.0, cfg.bb_clamp.1).min(cap);
    let mut backtracks = 0usize;
    let mut gamma = gamma0.max(floor);
    loop {
        if let Some(mut hit) = try_gamma(gamma, 0.0)? {
            hit.backtracks = backtracks;
            // enlarging search, only when the BB step-size passed untouched
            if backtracks == 0 && gamma == gamma0 {
                let mut t = 1u32;
                loop {
                    let next = gamma0 * f64::powi(2.0, t as i32);
                    if next > cap || !next.is_finite() {
                        break;
                    }
                    match try_gamma(next, 0.0)? {
                        Some(better) => {
                            hit = PgStepResult { backtracks: 0, ..better };
                            t += 1;
                        }
                        None => break,
                    }
                }
            }
            return Ok(hit);
        }
        if gamma <= floor {
            // numerical-margin retry before declaring the modulus wrong
            let slack = 1e-12 * (1.0 + f_y.abs());
            if let Some(mut hit) = try_gamma(floor, slack)? {
                hit.backtracks = backtracks;
                return Ok(hit);
            }
            return Err(SolverError::LipschitzTooSmall { gamma: floor });
        }
        backtracks += 1;
        gamma = (gamma * cfg.eta).max(floor);
    }
}

#[derive(Debug)]
pub struct GammaTildeResult {
    pub gamma_tilde: f64,
    pub shrinks: usize,
    pub step: ForwardStep,
}

/// Shrinks gamma from 1/(L + 2 alpha) by beta until the prox at the forward
/// point of x is certified single-valued and its Clarke element is
/// non-degenerate.
pub fn search_gamma_tilde(
    problem: &ProblemInstance,
    cfg: &SolverConfig,
    l: f64,
    x: &DVector<f64>,
    counters: &mut Counters,
) -> Result<GammaTildeResult, SolverError> {
    let l_tilde = cfg.l_tilde(l);
    for m in 0..=cfg.gamma_tilde_search_cap {
        let gamma = f64::powi(cfg.beta, m as i32) / l_tilde;
        let ctx = EnvelopeContext::new(problem, gamma);
        counters.prox_calls += 1;
        let step = ctx.step(x);
        if step.certificate().is_single_valued()
            && problem.reg.clarke_element(gamma, &step.forward, &step.prox).is_ok()
        {
            return Ok(GammaTildeResult { gamma_tilde: gamma, shrinks: m, step });
        }
    }
    Err(SolverError::GammaTildeSearchExhausted { tried: cfg.gamma_tilde_search_cap })
}

#[derive(Debug)]
pub struct NewtonDirection {
    pub d: DVector<f64>,
    pub mu: f64,
    pub trs: Option<TrsSolution>,
}

/// Builds the regularized trust-region subproblem from the certified step
/// and solves it exactly; a zero residual short-circuits to d = 0.
pub fn newton_direction(
    cfg: &SolverConfig,
    ctx: &EnvelopeContext,
    step: &ForwardStep,
    counters: &mut Counters,
) -> Result<NewtonDirection, SolverError> {
    let r = ctx.residual_of(step);
    let rn = r.norm();
    if rn == 0.0 {
        return Ok(NewtonDirection { d: DVector::zeros(step.x.len()), mu: 0.0, trs: None });
    }
    let mu = rn.powf(cfg.tau);
    let sigma = cfg.sigma_range.1;
    let varsigma = cfg.radius_range.1;
    let radius = varsigma * rn.powf(cfg.radius_exponent);
    let grad = ctx.q_apply(&step.x, &r);
    counters.hessian_builds += 1;
    let element = ctx.second_order_element(step, cfg.dense_limit)?;
    counters.trs_solves += 1;
    let solution = match element.dense() {
        Some(h) => {
            let n = h.nrows();
            let mut g_mat = h.clone();
            for i in 0..n {
                g_mat[(i, i)] += mu * sigma;
            }
            solve_trs(&TrsProblem::new(g_mat, grad, radius)?)?
        }
        None => {
            let apply = |v: &DVector<f64>| element.apply(v) + v * (mu * sigma);
            solve_trs_operator(&apply, &grad, radius, 4 * step.x.len(), 1e-10)
        }
    };
    debug_assert!(solution.d.norm() <= radius * (1.0 + 1e-8));
    Ok(NewtonDirection { d: solution.d.clone(), mu, trs: Some(solution) })
}

/// Line search on the segment between x + d and the prox point: accepts the
/// first coefficient beta^l whose envelope value drops by the theoretical
/// margin.
pub fn newton_linesearch(
    cfg: &SolverConfig,
    l: f64,
    ctx: &EnvelopeContext,
    step: &ForwardStep,
    d: &DVector<f64>,
    resid_norm: f64,
    counters: &mut Counters,
) -> Result<(DVector<f64>, usize), SolverError> {
    let gamma = ctx.gamma();
    let fbe_x = ctx.fbe_of(step);
    let margin = 0.25 * (gamma - gamma * gamma * l) * resid_norm * resid_norm;
    let target = fbe_x - margin;
    let slack = 1e-12 * (1.0 + target.abs());
    let newton_point = &step.x + d;
    let prox_point = &step.prox.point;
    let mut coeff = 1.0;
    for lvl in 0..=cfg.max_linesearch {
        let trial = &newton_point * coeff + prox_point * (1.0 - coeff);
        counters.prox_calls += 1;
        let fbe_trial = ctx.fbe(&trial);
        if fbe_trial <= target + slack {
            return Ok((trial, lvl));
        }
        coeff *= cfg.beta;
    }
    Err(SolverError::LineSearchExhausted { tried: cfg.max_linesearch })
}

/// Runs the solver from `y0` until the PG residual test passes or the
/// iteration budget is exhausted.
pub fn run(problem: &ProblemInstance, cfg: &SolverConfig, y0: &DVector<f64>) -> SolveReport {
    run_with_sink(problem, cfg, y0, &mut |_| {})
}

/// As [`run`], streaming each completed iteration record into `sink`.
pub fn run_with_sink(
    problem: &ProblemInstance,
    cfg: &SolverConfig,
    y0: &DVector<f64>,
    sink: &mut dyn FnMut(&IterationRecord),
) -> SolveReport {
    let l = problem.smooth.lipschitz();
    if let Err(e) = cfg.validate(l) {
        return stalled_report(problem, cfg, y0.clone(), Vec::new(), Counters::default(), e.to_string());
    }
    let mut counters = Counters::default();
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut y = y0.clone();
    // (x, grad f(x)) for the two most recent primal points
    let mut hist_last: Option<(DVector<f64>, DVector<f64>)> = None;
    let mut hist_prev: Option<(DVector<f64>, DVector<f64>)> = None;
    let mut prev_f: Option<f64> = None;

    for k in 0..cfg.max_iter {
        let tick = Instant::now();
        let gamma0 = match (&hist_last, &hist_prev) {
            (Some((x1, g1)), Some((x0, g0))) => {
                let s = x1 - x0;
                let yg = g1 - g0;
                bb_initial_gamma(&s, &yg, cfg.bb_clamp)
            }
            _ => 1.0,
        };
        let pg = match pg_step(problem, cfg, l, &y, gamma0, &mut counters) {
            Ok(p) => p,
            Err(e) => {
                return stalled_report(problem, cfg, y, records, counters, e.to_string());
            }
        };

        // objective descent ledger against the previous iteration
        if let Some(pf) = prev_f {
            let dist_sq = pg.resid * pg.gamma * pg.resid * pg.gamma;
            let slack = 1e-12 * (1.0 + pf.abs());
            if pg.f_x > pf - 0.5 * cfg.alpha * dist_sq + slack {
                let msg = format!(
                    "descent ledger violated at iteration {k}: F {} -> {} (dist^2 {dist_sq:.3e})",
                    pf, pg.f_x
                );
                return stalled_report(problem, cfg, y, records, counters, msg);
            }
        }
        prev_f = Some(pg.f_x);

        if pg.resid <= cfg.eps {
            // converged: output the current y with a fresh residual recheck
            let ctx = EnvelopeContext::new(problem, pg.gamma);
            counters.prox_calls += 1;
            let (r, _) = ctx.residual(&y);
            let report = SolveReport {
                point: y,
                final_resid: r.norm(),
                final_gamma: pg.gamma,
                status: SolveStatus::Converged,
                iterations: records,
                counts: counters,
                diagnostic: None,
            };
            return audit_or_degrade(report, l, cfg.alpha);
        }

        let grad_x = problem.smooth.grad(&pg.x);
        hist_prev = hist_last.take();
        hist_last = Some((pg.x.clone(), grad_x));

        let gt = match search_gamma_tilde(problem, cfg, l, &pg.x, &mut counters) {
            Ok(g) => g,
            Err(e) => return stalled_report(problem, cfg, y, records, counters, e.to_string()),
        };
        let ctx = EnvelopeContext::new(problem, gt.gamma_tilde);
        let r = ctx.residual_of(&gt.step);
        let rn = r.norm();
        let fbe_x = ctx.fbe_of(&gt.step);

        let nd = match newton_direction(cfg, &ctx, &gt.step, &mut counters) {
            Ok(d) => d,
            Err(e) => return stalled_report(problem, cfg, y, records, counters, e.to_string()),
        };
        let (y_next, lvl) = match newton_linesearch(
            cfg,
            l,
            &ctx,
            &gt.step,
            &nd.d,
            rn,
            &mut counters,
        ) {
            Ok(v) => v,
            Err(e) => return stalled_report(problem, cfg, y, records, counters, e.to_string()),
        };

        let record = IterationRecord {
            k,
            f_x: pg.f_x,
            fbe_x,
            resid_norm: rn,
            gamma: pg.gamma,
            gamma_tilde: gt.gamma_tilde,
            d_norm: nd.d.norm(),
            pg_backtracks: pg.backtracks,
            newton_backtracks: lvl,
            unit_step: lvl == 0 && nd.d.norm() > 0.0,
            pg_dist: pg.resid * pg.gamma,
            wall_ms: tick.elapsed().as_secs_f64() * 1e3,
        };
        sink(&record);
        records.push(record);
        y = y_next;
    }

    // iteration budget exhausted: report a fresh residual at the floor
    let ctx = EnvelopeContext::new(problem, 1.0 / (l + cfg.alpha));
    counters.prox_calls += 1;
    let (r, _) = ctx.residual(&y);
    let report = SolveReport {
        point: y,
        final_resid: r.norm(),
        final_gamma: ctx.gamma(),
        status: SolveStatus::MaxIter,
        iterations: records,
        counts: counters,
        diagnostic: None,
    };
    audit_or_degrade(report, l, cfg.alpha)
}

fn audit_or_degrade(mut report: SolveReport, l: f64, alpha: f64) -> SolveReport {
    if let Err(msg) = report.verify_descent_ledger(l, alpha) {
        report.status = SolveStatus::Stalled;
        report.diagnostic = Some(msg);
    }
    report
}

fn stalled_report(
    problem: &ProblemInstance,
    cfg: &SolverConfig,
    y: DVector<f64>,
    records: Vec<IterationRecord>,
    mut counters: Counters,
    diagnostic: String,
) -> SolveReport {
    let l = problem.smooth.lipschitz();
    let gamma = 1.0 / (l + cfg.alpha.max(1e-12 * l.max(1.0)));
    let final_resid = if gamma.is_finite() && gamma > 0.0 {
        let ctx = EnvelopeContext::new(problem, gamma);
        counters.prox_calls += 1;
        ctx.residual(&y).0.norm()
    } else {
        f64::NAN
    };
    SolveReport {
        point: y,
        final_resid,
        final_gamma: gamma,
        status: SolveStatus::Stalled,
        iterations: records,
        counts: counters,
        diagnostic: Some(diagnostic),
    }
}

/// Convenience: dense G = H + mu sigma I for inspection in tests.
pub fn regularized_hessian(h: &DMatrix<f64>, mu_sigma: f64) -> DMatrix<f64> {
    let mut g = h.clone();
    for i in 0..g.nrows() {
        g[(i, i)] += mu_sigma;
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::gen_sparse_regression;
    use crate::linalg::Matrix;
    use crate::problem::{LeastSquaresObjective, SmoothObjective};
    use crate::regularizers::{
        lq_tie_point, BoxConstraint, LqExponent, LqRegularizer, Regularizer, ZeroBoxRegularizer,
    };
    use crate::rng::SplitMix64;
    use std::sync::Arc;

    fn small_lq_problem(seed: u64, lambda: f64) -> ProblemInstance {
        let ds = gen_sparse_regression(12, 6, 2, 0.1, seed);
        let smooth = LeastSquaresObjective::new(ds.a, ds.b).unwrap();
        ProblemInstance::new(Arc::new(smooth), Arc::new(LqRegularizer::new(lambda, LqExponent::Half)))
    }

    #[test]
    fn config_defaults_validate() {
        let cfg = SolverConfig::for_lipschitz(10.0);
        assert!(cfg.validate(10.0).is_ok());
        assert!((cfg.l_tilde(10.0) - 10.02).abs() < 1e-12);
        let mut bad = cfg.clone();
        bad.beta = 1.0;
        assert!(bad.validate(10.0).is_err());
        let mut bad2 = SolverConfig::for_lipschitz(10.0);
        bad2.radius_exponent = 0.7; // >= 1 - tau
        assert!(bad2.validate(10.0).is_err());
    }

    #[test]
    fn bb_formula_and_clamps() {
        let s = DVector::from_row_slice(&[1.0, 0.0]);
        let yg = DVector::from_row_slice(&[2.0, 0.0]);
        assert_eq!(bb_initial_gamma(&s, &yg, (1e-20, 1e20)), 0.5);
        // negative curvature maps to the upper clamp
        let yg_neg = DVector::from_row_slice(&[-2.0, 0.0]);
        assert_eq!(bb_initial_gamma(&s, &yg_neg, (1e-20, 1e20)), 1e20);
        // clamping
        let tiny = DVector::from_row_slice(&[1e-30, 0.0]);
        let huge = DVector::from_row_slice(&[1.0, 0.0]);
        assert_eq!(bb_initial_gamma(&tiny, &huge, (1e-20, 1e20)), 1e-20);
    }

    #[test]
    fn pg_step_fixed_point_accepts_immediately() {
        // quadratic with minimum at x0, pure box regularizer
        let a = nalgebra::DMatrix::identity(3, 3);
        let x0 = DVector::from_row_slice(&[0.3, -0.2, 0.0]);
        let smooth = LeastSquaresObjective::new(Matrix::Dense(a.clone()), &a * &x0).unwrap();
        let reg = ZeroBoxRegularizer::new(0.0, BoxConstraint::uniform(3, -1.0, 1.0).unwrap());
        let problem = ProblemInstance::new(Arc::new(smooth), Arc::new(reg));
        let cfg = SolverConfig::for_lipschitz(problem.smooth.lipschitz());
        let mut c = Counters::default();
        let pg = pg_step(&problem, &cfg, problem.smooth.lipschitz(), &x0, 1.0, &mut c).unwrap();
        assert!((pg.x - &x0).norm() < 1e-12);
        assert_eq!(pg.backtracks, 0);
        assert!(pg.resid < 1e-12);
    }

    #[test]
    fn pg_step_huge_bb_backtracks_to_acceptance() {
        let problem = small_lq_problem(3, 0.05);
        let l = problem.smooth.lipschitz();
        let cfg = SolverConfig::for_lipschitz(l);
        let mut c = Counters::default();
        let y = DVector::from_element(6, 0.5);
        let pg = pg_step(&problem, &cfg, l, &y, 1e20, &mut c).unwrap();
        assert!(pg.backtracks > 0);
        assert!(pg.gamma >= 1.0 / (l + cfg.alpha) - 1e-18);
        assert!(pg.f_x.is_finite());
    }

    #[test]
    fn pg_step_wrong_lipschitz_is_a_hard_error() {
        let problem = small_lq_problem(5, 0.05);
        let cfg = SolverConfig::for_lipschitz(1e-6);
        let y = DVector::from_element(6, 1.0);
        let mut c = Counters::default();
        // lie about the modulus: the floor step-size is far too long
        let err = pg_step(&problem, &cfg, 1e-6, &y, 1.0, &mut c).unwrap_err();
        assert!(matches!(err, SolverError::LipschitzTooSmall { .. }));
    }

    #[test]
    fn gamma_tilde_generic_point_needs_no_shrink() {
        let problem = small_lq_problem(7, 0.05);
        let l = problem.smooth.lipschitz();
        let cfg = SolverConfig::for_lipschitz(l);
        let mut c = Counters::default();
        let x = DVector::from_element(6, 0.37);
        let gt = search_gamma_tilde(&problem, &cfg, l, &x, &mut c).unwrap();
        assert_eq!(gt.shrinks, 0);
        assert!((gt.gamma_tilde - 1.0 / cfg.l_tilde(l)).abs() < 1e-15);
    }

    #[test]
    fn gamma_tilde_shrinks_at_engineered_tie() {
        // identity design with b = x so the gradient vanishes at the test
        // point: the forward point equals x for every step-size, and the
        // first coordinate sits exactly at the scalar prox tie for the
        // initial step-size
        let n = 2;
        let lambda = 1.0;
        let reg = LqRegularizer::new(lambda, LqExponent::Half);
        // build the tie point against the initial step-size of the search
        let l_probe = {
            let a = nalgebra::DMatrix::identity(n, n);
            LeastSquaresObjective::new(Matrix::Dense(a), DVector::zeros(n)).unwrap().lipschitz()
        };
        let cfg_probe = SolverConfig::for_lipschitz(l_probe);
        let w0 = lambda / cfg_probe.l_tilde(l_probe);
        let tie = lq_tie_point(LqExponent::Half, w0);
        let x = DVector::from_row_slice(&[tie, 0.01]);
        let a = nalgebra::DMatrix::identity(n, n);
        let smooth = LeastSquaresObjective::new(Matrix::Dense(a.clone()), &a * &x).unwrap();
        let problem = ProblemInstance::new(Arc::new(smooth), Arc::new(reg));
        let l = problem.smooth.lipschitz();
        let cfg = SolverConfig::for_lipschitz(l);
        let mut c = Counters::default();
        let gt = search_gamma_tilde(&problem, &cfg, l, &x, &mut c).unwrap();
        assert!(gt.shrinks >= 1, "expected at least one shrink, got {}", gt.shrinks);
        assert!(gt.step.certificate().is_single_valued());
    }

    #[test]
    fn newton_direction_zero_residual_short_circuits() {
        let a = nalgebra::DMatrix::identity(2, 2);
        let x0 = DVector::from_row_slice(&[0.2, -0.1]);
        let smooth = LeastSquaresObjective::new(Matrix::Dense(a.clone()), &a * &x0).unwrap();
        let reg = ZeroBoxRegularizer::new(0.0, BoxConstraint::uniform(2, -1.0, 1.0).unwrap());
        let problem = ProblemInstance::new(Arc::new(smooth), Arc::new(reg));
        let l = problem.smooth.lipschitz();
        let cfg = SolverConfig::for_lipschitz(l);
        let ctx = EnvelopeContext::new(&problem, 1.0 / cfg.l_tilde(l));
        let step = ctx.step(&x0);
        let mut c = Counters::default();
        let nd = newton_direction(&cfg, &ctx, &step, &mut c).unwrap();
        assert_eq!(nd.d.norm(), 0.0);
        assert!(nd.trs.is_none());
        assert_eq!(c.trs_solves, 0);
    }

    #[test]
    fn newton_direction_interior_satisfies_regularized_equation() {
        let problem = small_lq_problem(11, 0.02);
        let l = problem.smooth.lipschitz();
        let cfg = SolverConfig::for_lipschitz(l);
        let ctx = EnvelopeContext::new(&problem, 1.0 / cfg.l_tilde(l));
        let mut rng = SplitMix64::new(5);
        let mut c = Counters::default();
        let mut tested = 0;
        while tested < 5 {
            let x = DVector::from_fn(6, |_, _| rng.normal());
            let step = ctx.step(&x);
            if !step.certificate().is_single_valued() {
                continue;
            }
            let nd = newton_direction(&cfg, &ctx, &step, &mut c).unwrap();
            let r = ctx.residual_of(&step);
            let rn = r.norm();
            // feasibility: ||d|| <= radius
            assert!(nd.d.norm() <= cfg.radius_range.1 * rn.powf(cfg.radius_exponent) * (1.0 + 1e-10));
            if let Some(trs) = &nd.trs {
                if trs.status == crate::subproblem::TrsStatus::Interior {
                    let el = ctx.second_order_element(&step, cfg.dense_limit).unwrap();
                    let g_mat = regularized_hessian(el.dense().unwrap(), nd.mu);
                    let grad = ctx.q_apply(&step.x, &r);
                    let res = &g_mat * &nd.d + &grad;
                    assert!(res.norm() <= 1e-10 * (1.0 + grad.norm()), "interior eq residual {}", res.norm());
                }
            }
            tested += 1;
        }
    }

    #[test]
    fn linesearch_accepts_and_decrease_holds() {
        let problem = small_lq_problem(13, 0.02);
        let l = problem.smooth.lipschitz();
        let cfg = SolverConfig::for_lipschitz(l);
        let ctx = EnvelopeContext::new(&problem, 1.0 / cfg.l_tilde(l));
        let mut rng = SplitMix64::new(15);
        let mut c = Counters::default();
        let x = DVector::from_fn(6, |_, _| rng.normal());
        let step = ctx.step(&x);
        assert!(step.certificate().is_single_valued());
        let nd = newton_direction(&cfg, &ctx, &step, &mut c).unwrap();
        let rn = ctx.residual_of(&step).norm();
        let (y_next, lvl) =
            newton_linesearch(&cfg, l, &ctx, &step, &nd.d, rn, &mut c).unwrap();
        // re-verify the acceptance inequality independently
        let gamma = ctx.gamma();
        let lhs = ctx.fbe(&y_next);
        let rhs = ctx.fbe_of(&step) - 0.25 * (gamma - gamma * gamma * l) * rn * rn;
        assert!(lhs <= rhs + 1e-10 * (1.0 + rhs.abs()), "lvl {lvl}: {lhs} vs {rhs}");
    }

    #[test]
    fn linesearch_with_zero_direction_accepts_near_prox_point() {
        let problem = small_lq_problem(17, 0.02);
        let l = problem.smooth.lipschitz();
        let cfg = SolverConfig::for_lipschitz(l);
        let ctx = EnvelopeContext::new(&problem, 1.0 / cfg.l_tilde(l));
        let x = DVector::from_element(6, 0.4);
        let step = ctx.step(&x);
        let rn = ctx.residual_of(&step).norm();
        let d = DVector::zeros(6);
        let mut c = Counters::default();
        let (_, lvl) = newton_linesearch(&cfg, l, &ctx, &step, &d, rn, &mut c).unwrap();
        assert!(lvl <= cfg.max_linesearch);
    }

    #[test]
    fn run_converges_on_small_planted_instance() {
        // identity design, one strong coordinate, light penalty
        let n = 10;
        let a = nalgebra::DMatrix::identity(n, n);
        let mut b = DVector::zeros(n);
        b[0] = 10.0;
        let smooth = LeastSquaresObjective::new(Matrix::Dense(a), b).unwrap();
        let reg = LqRegularizer::new(0.05, LqExponent::Half);
        let problem = ProblemInstance::new(Arc::new(smooth), Arc::new(reg));
        let cfg = SolverConfig::for_lipschitz(problem.smooth.lipschitz());
        let report = run(&problem, &cfg, &DVector::zeros(n));
        assert_eq!(report.status, SolveStatus::Converged, "{:?}", report.diagnostic);
        // L-stationarity recheck: fresh fixed-point residual at the output
        assert!(report.final_resid <= 2.0 * cfg.eps, "final resid {}", report.final_resid);
        let ctx = EnvelopeContext::new(&problem, report.final_gamma);
        let t = ctx.t_map(&report.point);
        assert!((&t.point - &report.point).norm() <= 1e-4, "fixed-point distance");
    }

    #[test]
    fn run_reduces_to_damped_newton_without_penalty() {
        // lambda = 0 with a huge box: smooth problem, expect gradient ~ 0
        let ds = gen_sparse_regression(20, 8, 3, 0.05, 23);
        let smooth = LeastSquaresObjective::new(ds.a, ds.b).unwrap();
        let reg = ZeroBoxRegularizer::new(0.0, BoxConstraint::uniform(8, -1e6, 1e6).unwrap());
        let problem = ProblemInstance::new(Arc::new(smooth), Arc::new(reg));
        let cfg = SolverConfig::for_lipschitz(problem.smooth.lipschitz());
        let report = run(&problem, &cfg, &DVector::zeros(8));
        assert_eq!(report.status, SolveStatus::Converged, "{:?}", report.diagnostic);
        let g = problem.smooth.grad(&report.point).norm();
        assert!(g <= 1e-3, "gradient norm {g}");
    }

    #[test]
    fn run_is_deterministic() {
        let problem = small_lq_problem(29, 0.03);
        let cfg = SolverConfig::for_lipschitz(problem.smooth.lipschitz());
        let y0 = DVector::from_element(6, 0.2);
        let r1 = run(&problem, &cfg, &y0);
        let r2 = run(&problem, &cfg, &y0);
        assert_eq!(iterations_to_csv(&r1.iterations), iterations_to_csv(&r2.iterations));
        assert_eq!(r1.point, r2.point);
    }

    #[test]
    fn run_ledger_holds_on_record() {
        let problem = small_lq_problem(31, 0.05);
        let cfg = SolverConfig::for_lipschitz(problem.smooth.lipschitz());
        let report = run(&problem, &cfg, &DVector::from_element(6, 0.5));
        assert_ne!(report.status, SolveStatus::Stalled, "{:?}", report.diagnostic);
        report
            .verify_descent_ledger(problem.smooth.lipschitz(), cfg.alpha)
            .expect("descent ledger");
        // step-size ranges from the log
        let l = problem.smooth.lipschitz();
        for r in &report.iterations {
            assert!(r.gamma >= 1.0 / (l + cfg.alpha) - 1e-18);
            assert!(r.gamma_tilde <= 1.0 / cfg.l_tilde(l) + 1e-18);
        }
    }

    #[test]
    fn gamma_tilde_box_projection_never_shrinks() {
        // lambda = 0 with a box only: the prox is a projection, certified
        // single-valued everywhere, so the search always returns m = 0
        let ds = gen_sparse_regression(10, 4, 2, 0.2, 77);
        let smooth = LeastSquaresObjective::new(ds.a, ds.b).unwrap();
        let reg = ZeroBoxRegularizer::new(0.0, BoxConstraint::uniform(4, -2.0, 2.0).unwrap());
        let problem = ProblemInstance::new(Arc::new(smooth), Arc::new(reg));
        let l = problem.smooth.lipschitz();
        let cfg = SolverConfig::for_lipschitz(l);
        let mut rng = SplitMix64::new(9);
        let mut c = Counters::default();
        for _ in 0..20 {
            let x = DVector::from_fn(4, |_, _| rng.normal() * 3.0);
            let gt = search_gamma_tilde(&problem, &cfg, l, &x, &mut c).unwrap();
            assert_eq!(gt.shrinks, 0);
        }
    }

    #[test]
    fn plain_alpha_decrease_variant_also_converges() {
        let problem = small_lq_problem(37, 0.05);
        let mut cfg = SolverConfig::for_lipschitz(problem.smooth.lipschitz());
        cfg.pg_decrease = PgDecrease::Alpha;
        let report = run(&problem, &cfg, &DVector::zeros(6));
        assert_eq!(report.status, SolveStatus::Converged, "{:?}", report.diagnostic);
    }

    #[test]
    fn shared_problem_supports_concurrent_solves() {
        let problem = small_lq_problem(41, 0.05);
        let cfg = SolverConfig::for_lipschitz(problem.smooth.lipschitz());
        let y0 = DVector::from_element(6, 0.3);
        let baseline = run(&problem, &cfg, &y0);
        let reports: Vec<SolveReport> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..3)
                .map(|_| {
                    let problem = &problem;
                    let cfg = &cfg;
                    let y0 = &y0;
                    scope.spawn(move || run(problem, cfg, y0))
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        for r in reports {
            assert_eq!(r.point, baseline.point);
            assert_eq!(
                iterations_to_csv(&r.iterations),
                iterations_to_csv(&baseline.iterations)
            );
        }
    }

    #[test]
    fn residual_and_direction_vanish_along_converging_runs() {
        let problem = small_lq_problem(43, 0.05);
        let cfg = SolverConfig::for_lipschitz(problem.smooth.lipschitz());
        let report = run(&problem, &cfg, &DVector::from_element(6, 0.7));
        assert_eq!(report.status, SolveStatus::Converged, "{:?}", report.diagnostic);
        let rn: Vec<f64> = report.iterations.iter().map(|r| r.resid_norm).collect();
        let dn: Vec<f64> = report.iterations.iter().map(|r| r.d_norm).collect();
        let rn_max = rn.iter().cloned().fold(0.0, f64::max);
        let dn_max = dn.iter().cloned().fold(0.0, f64::max);
        let rn_last = *rn.last().unwrap();
        let dn_last = *dn.last().unwrap();
        assert!(rn_last <= 1e3 * cfg.eps, "final residual {rn_last}");
        assert!(rn_last <= 1e-3 * rn_max.max(1.0), "residual did not vanish: {rn_last} vs max {rn_max}");
        assert!(dn_last <= 1e-3 * dn_max.max(1.0), "direction did not vanish: {dn_last} vs max {dn_max}");
    }

    #[test]
    fn csv_schema_is_pinned() {
        let rec = IterationRecord {
            k: 0,
            f_x: 1.5,
            fbe_x: 1.25,
            resid_norm: 0.5,
            gamma: 0.1,
            gamma_tilde: 0.05,
            d_norm: 0.01,
            pg_backtracks: 2,
            newton_backtracks: 1,
            unit_step: false,
            pg_dist: 0.05,
            wall_ms: 12.5,
        };
        let csv = iterations_to_csv(&[rec]);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "# schema: 1");
        assert_eq!(
            lines.next().unwrap(),
            "k,F,FBE,resid,gamma,gamma_tilde,d_norm,pg_bt,newton_bt,unit_step,ms"
        );
        assert_eq!(lines.next().unwrap(), "0,1.5,1.25,0.5,0.1,0.05,0.01,2,1,0,0");
    }
}

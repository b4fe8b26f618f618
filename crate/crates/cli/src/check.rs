//! The `check` subcommand: runs the oracle validation suites and prints a
//! pass/fail table. A named fault can be injected to verify the harness
//! actually catches regressions.

use nalgebra::{DMatrix, DVector};
use pgssn::envelope::EnvelopeContext;
use pgssn::fused_dp::prox_pruned;
use pgssn::oracles::{
    enumerate_fused, fd_gradient, grid_scalar_prox, trs_reference_min, GridSpec,
    ZeroBoxSegmentOracle,
};
use pgssn::problem::{LeastSquaresObjective, ProblemInstance};
use pgssn::regularizers::{
    lq_scalar_prox, zero_box_scalar_prox, BoxConstraint, LqExponent, LqRegularizer, TIE_REL,
};
use pgssn::rng::SplitMix64;
use pgssn::subproblem::{solve_trs, trs_objective, TrsProblem, TrsStatus};
use pgssn::Matrix;
use std::sync::Arc;

pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome { name, passed, detail }
}

fn check_lq_prox_vs_grid(seed: u64, fault: Option<&str>) -> CheckOutcome {
    let mut rng = SplitMix64::new(seed);
    let corrupt = fault == Some("lq-threshold");
    for q in [LqExponent::Half, LqExponent::TwoThirds] {
        for _ in 0..100 {
            let w = 0.1 + 2.0 * rng.uniform();
            let z = rng.uniform_in(-6.0, 6.0);
            let (mut p, _) = lq_scalar_prox(q, w, z);
            if corrupt && p == 0.0 && z.abs() > 1.0 {
                // simulate a broken threshold: keep a nonzero stationary
                // point that the objective comparison should have discarded
                p = z * 0.8;
            }
            let obj = |t: f64| 0.5 * (t - z) * (t - z) + w * t.abs().powf(q.value());
            let spec = GridSpec::new(-8.0, 8.0).with_points(20_000);
            let gm = grid_scalar_prox(obj, &spec);
            if obj(p) > gm.value + 1e-8 {
                return outcome(
                    "lq-prox-vs-grid",
                    false,
                    format!("q={:?} z={z:.4} w={w:.4}: impl {} > oracle {}", q, obj(p), gm.value),
                );
            }
        }
    }
    outcome("lq-prox-vs-grid", true, "200 scalar instances within 1e-8 of the grid".into())
}

fn check_zero_box_enumeration(seed: u64) -> CheckOutcome {
    let mut rng = SplitMix64::new(seed ^ 0x2);
    for _ in 0..200 {
        let lo = rng.uniform_in(-2.0, -0.1);
        let hi = rng.uniform_in(0.1, 2.0);
        let lambda = rng.uniform();
        let gamma = 0.1 + rng.uniform();
        let z = rng.uniform_in(-3.0, 3.0);
        let (p, _) = zero_box_scalar_prox(lambda, gamma, lo, hi, z);
        let obj = |t: f64| {
            (t - z) * (t - z) / (2.0 * gamma) + if t != 0.0 { lambda } else { 0.0 }
        };
        let best = obj(0.0).min(obj(z.clamp(lo, hi)));
        if obj(p) > best + 1e-12 {
            return outcome(
                "zero-box-prox-enumeration",
                false,
                format!("z={z:.4}: impl {} > candidates {}", obj(p), best),
            );
        }
    }
    outcome("zero-box-prox-enumeration", true, "200 two-candidate enumerations matched".into())
}

fn check_fused_dp_enumeration(seed: u64) -> CheckOutcome {
    let mut rng = SplitMix64::new(seed ^ 0x3);
    for trial in 0..100 {
        let n = 2 + rng.below(9);
        let z = DVector::from_fn(n, |_, _| rng.uniform_in(-3.0, 3.0));
        let l0 = rng.uniform();
        let lam = rng.uniform();
        let bounds = BoxConstraint::uniform(n, -10.0, 10.0).unwrap();
        let dp = prox_pruned(&z, l0, lam, &bounds, 1.0, TIE_REL).unwrap();
        let zs: Vec<f64> = z.iter().copied().collect();
        let lower = vec![-10.0; n];
        let upper = vec![10.0; n];
        let oracle = ZeroBoxSegmentOracle { z: &zs, lambda: lam, lower: &lower, upper: &upper };
        let e = enumerate_fused(n, l0, &oracle, TIE_REL);
        if (dp.value - e.value).abs() > 1e-9 * (1.0 + e.value.abs()) {
            return outcome(
                "fused-dp-vs-enumeration",
                false,
                format!("trial {trial}: dp {} enumeration {}", dp.value, e.value),
            );
        }
    }
    outcome("fused-dp-vs-enumeration", true, "100 exhaustive segmentations matched".into())
}

fn sample_problem(seed: u64) -> ProblemInstance {
    let ds = pgssn::data_io::gen_sparse_regression(15, 6, 2, 0.3, seed);
    let smooth = LeastSquaresObjective::new(ds.a, ds.b).unwrap();
    ProblemInstance::new(Arc::new(smooth), Arc::new(LqRegularizer::new(0.3, LqExponent::Half)))
}

fn check_fbe_identity(seed: u64) -> CheckOutcome {
    let problem = sample_problem(seed ^ 0x4);
    let l = problem.smooth.lipschitz();
    let mut rng = SplitMix64::new(seed ^ 0x5);
    for _ in 0..50 {
        let gamma = rng.uniform_in(0.05, 0.9) / l;
        let ctx = EnvelopeContext::new(&problem, gamma);
        let x = DVector::from_fn(6, |_, _| rng.normal());
        let step = ctx.step(&x);
        let closed = ctx.fbe_of(&step);
        let z = &step.prox.point;
        let inf_form = step.f
            + step.grad.dot(&(z - &x))
            + (z - &x).norm_squared() / (2.0 * gamma)
            + problem.reg.eval(z);
        if (closed - inf_form).abs() > 1e-10 * (1.0 + closed.abs()) {
            return outcome(
                "fbe-identity",
                false,
                format!("two envelope forms disagree: {closed} vs {inf_form}"),
            );
        }
        let full = problem.objective(&x);
        if closed > full + 1e-10 * (1.0 + full.abs()) {
            return outcome("fbe-identity", false, "envelope exceeds the objective".into());
        }
    }
    outcome("fbe-identity", true, "50 samples: both forms agree, envelope below F".into())
}

fn check_fbe_gradient_fd(seed: u64) -> CheckOutcome {
    let problem = sample_problem(seed ^ 0x6);
    let l = problem.smooth.lipschitz();
    let ctx = EnvelopeContext::new(&problem, 0.5 / l);
    let mut rng = SplitMix64::new(seed ^ 0x7);
    let mut checked = 0;
    let mut attempts = 0;
    while checked < 20 && attempts < 400 {
        attempts += 1;
        let x = DVector::from_fn(6, |_, _| rng.normal() * 2.0);
        let step = ctx.step(&x);
        if !step.certificate().is_single_valued() {
            continue;
        }
        let support: Vec<bool> = step.prox.point.iter().map(|v| *v != 0.0).collect();
        let h = 1e-6 * (1.0 + x.norm());
        let mut clean = true;
        'stencil: for i in 0..x.len() {
            for s in [-1.0, 1.0] {
                let mut xp = x.clone();
                xp[i] += s * h;
                let sp = ctx.step(&xp);
                let sup: Vec<bool> = sp.prox.point.iter().map(|v| *v != 0.0).collect();
                if sup != support {
                    clean = false;
                    break 'stencil;
                }
            }
        }
        if !clean {
            continue;
        }
        let g = ctx.fbe_gradient(&x).unwrap();
        let fd = fd_gradient(|v| ctx.fbe(v), &x, None);
        let rel = (&g - &fd).norm() / g.norm().max(1e-12);
        if rel > 1e-5 {
            return outcome("fbe-gradient-fd", false, format!("relative error {rel}"));
        }
        checked += 1;
    }
    outcome("fbe-gradient-fd", checked >= 20, format!("{checked} certified points matched"))
}

fn check_trs_optimality(seed: u64) -> CheckOutcome {
    let mut rng = SplitMix64::new(seed ^ 0x8);
    for trial in 0..10 {
        let n = 2 + (trial % 2);
        let a = DMatrix::from_fn(n, n, |_, _| rng.normal());
        let g_mat = (&a + a.transpose()) * 0.5;
        let grad = DVector::from_fn(n, |_, _| rng.normal());
        let radius = 0.3 + 2.0 * rng.uniform();
        let p = TrsProblem::new(g_mat, grad, radius).unwrap();
        let s = solve_trs(&p).unwrap();
        let obj = trs_objective(&p, &s.d);
        let reference = trs_reference_min(&p.g_mat, &p.grad, p.radius, seed + trial as u64);
        if obj > reference + 1e-6 {
            return outcome(
                "trs-optimality",
                false,
                format!("trial {trial}: {obj} above sampled reference {reference}"),
            );
        }
        if s.status == TrsStatus::Interior {
            let res = &p.g_mat * &s.d + &p.grad;
            if res.norm() > 1e-10 * (1.0 + p.grad.norm()) {
                return outcome(
                    "trs-optimality",
                    false,
                    format!("interior residual {}", res.norm()),
                );
            }
        }
    }
    outcome("trs-optimality", true, "10 sampled subproblems at or below the reference".into())
}

fn check_blur_symmetry() -> CheckOutcome {
    let blur = pgssn::data_io::gaussian_blur_operator(8, 4.0, 9);
    let m = blur.to_dense();
    let asym = (&m - m.transpose()).norm();
    let rows_ok = (0..m.nrows()).all(|r| {
        let s: f64 = m.row(r).iter().sum();
        (s - 1.0).abs() < 1e-12
    });
    let const_ok = {
        let x = DVector::from_element(64, 0.5);
        (Matrix::Dense(m.clone()).matvec(&x) - &x).amax() < 1e-12
    };
    outcome(
        "blur-operator-symmetry",
        asym < 1e-12 && rows_ok && const_ok,
        format!("asymmetry {asym:.2e}, unit row sums: {rows_ok}"),
    )
}

/// Runs every check; `fault` optionally names a deliberate corruption used
/// to validate the harness itself.
pub fn run_checks(seed: u64, fault: Option<&str>) -> Vec<CheckOutcome> {
    vec![
        check_lq_prox_vs_grid(seed, fault),
        check_zero_box_enumeration(seed),
        check_fused_dp_enumeration(seed),
        check_fbe_identity(seed),
        check_fbe_gradient_fd(seed),
        check_trs_optimality(seed),
        check_blur_symmetry(),
    ]
}

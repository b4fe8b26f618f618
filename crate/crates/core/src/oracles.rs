//! Independent brute-force references used by tests and the `check` command:
//! grid/golden-section scalar minimization, exhaustive segmentation
//! enumeration, central finite differences, and a sampled trust-region
//! reference. Nothing here calls into the solver-side implementations; the
//! value of these oracles is that they share no code path with what they
//! check.

use crate::rng::SplitMix64;
use nalgebra::{DMatrix, DVector};

const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Search window and resolution for [`grid_scalar_prox`].
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    /// Coarse scan points.
    pub points: usize,
    /// Golden-section rounds inside each locally minimal cell.
    pub refine_rounds: usize,
}

impl GridSpec {
    pub fn new(lo: f64, hi: f64) -> Self {
        assert!(lo < hi, "grid window must be nonempty");
        GridSpec { lo, hi, points: 100_000, refine_rounds: 40 }
    }

    pub fn with_points(mut self, points: usize) -> Self {
        self.points = points;
        self
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GridMinimum {
    pub t: f64,
    pub value: f64,
    /// Objective distance to the best structurally distinct basin
    /// (+inf when the scan finds a single basin).
    pub second_best_gap: f64,
}

fn golden_section(objective: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64, rounds: usize) -> (f64, f64) {
    let mut x1 = b - GOLDEN * (b - a);
    let mut x2 = a + GOLDEN * (b - a);
    let mut f1 = objective(x1);
    let mut f2 = objective(x2);
    for _ in 0..rounds {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - GOLDEN * (b - a);
            f1 = objective(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + GOLDEN * (b - a);
            f2 = objective(x2);
        }
    }
    let mid = 0.5 * (a + b);
    (mid, objective(mid))
}

/// Grid scan plus golden-section refinement of every locally minimal cell.
/// The point 0 (when inside the window) and both endpoints are evaluated
/// exactly, so penalty discounts sitting exactly at the origin are seen.
pub fn grid_scalar_prox(objective: impl Fn(f64) -> f64, spec: &GridSpec) -> GridMinimum {
    let obj = &objective as &dyn Fn(f64) -> f64;
    let m = spec.points;
    let step = (spec.hi - spec.lo) / m as f64;
    let ts: Vec<f64> = (0..=m).map(|i| spec.lo + i as f64 * step).collect();
    let vs: Vec<f64> = ts.iter().map(|&t| obj(t)).collect();

    // candidate basins: locally minimal grid cells, refined
    let mut basins: Vec<(f64, f64)> = Vec::new();
    for i in 0..=m {
        let left_ok = i == 0 || vs[i] <= vs[i - 1];
        let right_ok = i == m || vs[i] <= vs[i + 1];
        if left_ok && right_ok {
            let a = if i == 0 { ts[0] } else { ts[i - 1] };
            let b = if i == m { ts[m] } else { ts[i + 1] };
            let (t, v) = golden_section(obj, a, b, spec.refine_rounds);
            // keep whichever of the refined point / grid point is lower
            if v <= vs[i] {
                basins.push((t, v));
            } else {
                basins.push((ts[i], vs[i]));
            }
        }
    }
    if spec.lo < 0.0 && 0.0 < spec.hi {
        basins.push((0.0, obj(0.0)));
    }
    basins.push((spec.lo, vs[0]));
    basins.push((spec.hi, vs[m]));

    basins.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    let best = basins[0];
    let sep = 2.0 * step.max(1e-12);
    let second = basins
        .iter()
        .skip(1)
        .find(|(t, _)| (t - best.0).abs() > sep)
        .map(|&(_, v)| v - best.1)
        .unwrap_or(f64::INFINITY);
    GridMinimum { t: best.0, value: best.1, second_best_gap: second }
}

/// One solved constant segment: the level and its total cost (data term plus
/// every per-coordinate penalty attached to the segment).
#[derive(Debug, Clone, Copy)]
pub struct SegmentChoice {
    pub alpha: f64,
    pub cost: f64,
}

/// Per-segment solver the enumeration delegates to. Indices are 0-based,
/// the segment covers `start..end` (half-open).
pub trait SegmentOracle {
    fn solve(&self, start: usize, end: usize) -> SegmentChoice;
}

#[derive(Debug, Clone)]
pub struct FusedEnumeration {
    pub x: DVector<f64>,
    pub value: f64,
    /// True when every segmentation whose output differs from the best one
    /// costs more than `tie` above the optimum.
    pub unique: bool,
    pub second_best_gap: f64,
}

/// Exhausts all 2^(n-1) segmentations of `n` positions. `lambda0` is the
/// per-jump charge (step-size already folded in); each extra segment beyond
/// the first pays it once, matching the recursion anchored at H(0) = -lambda0.
pub fn enumerate_fused(
    n: usize,
    lambda0: f64,
    solver: &dyn SegmentOracle,
    tie: f64,
) -> FusedEnumeration {
    assert!((1..=12).contains(&n), "enumeration oracle is capped at n = 12");
    // memoize all segment solves
    let mut table = vec![vec![SegmentChoice { alpha: 0.0, cost: 0.0 }; n + 1]; n];
    #[allow(clippy::needless_range_loop)]
    for s in 0..n {
        for e in (s + 1)..=n {
            table[s][e] = solver.solve(s, e);
        }
    }

    let masks = 1usize << (n - 1);
    let mut best_value = f64::INFINITY;
    let mut best_x = DVector::zeros(n);
    let mut outputs: Vec<(f64, DVector<f64>)> = Vec::with_capacity(masks);
    for mask in 0..masks {
        let mut x = DVector::zeros(n);
        let mut value = 0.0;
        let mut segments = 0usize;
        let mut start = 0usize;
        for cut in 0..n {
            let is_boundary = cut == n - 1 || (mask >> cut) & 1 == 1;
            if is_boundary {
                let choice = table[start][cut + 1];
                for i in start..=cut {
                    x[i] = choice.alpha;
                }
                value += choice.cost;
                segments += 1;
                start = cut + 1;
            }
        }
        value += lambda0 * (segments as f64 - 1.0);
        if value < best_value {
            best_value = value;
            best_x = x.clone();
        }
        outputs.push((value, x));
    }

    let mut second_best_gap = f64::INFINITY;
    for (value, x) in &outputs {
        let differs = x.iter().zip(best_x.iter()).any(|(a, b)| (a - b).abs() > 1e-9);
        if differs {
            second_best_gap = second_best_gap.min(value - best_value);
        }
    }
    FusedEnumeration {
        x: best_x,
        value: best_value,
        unique: second_best_gap > tie,
        second_best_gap,
    }
}

/// Independent segment solver for zero-norm-plus-box penalties: compares the
/// zero level against the clamped segment mean.
pub struct ZeroBoxSegmentOracle<'a> {
    pub z: &'a [f64],
    /// per-coordinate charge for a nonzero level (step-size folded in)
    pub lambda: f64,
    pub lower: &'a [f64],
    pub upper: &'a [f64],
}

impl SegmentOracle for ZeroBoxSegmentOracle<'_> {
    fn solve(&self, start: usize, end: usize) -> SegmentChoice {
        let m = (end - start) as f64;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for i in start..end {
            sum += self.z[i];
            sumsq += self.z[i] * self.z[i];
            lo = lo.max(self.lower[i]);
            hi = hi.min(self.upper[i]);
        }
        let mean = sum / m;
        let zero_cost = 0.5 * sumsq;
        let clamped = mean.clamp(lo, hi);
        if clamped == 0.0 {
            return SegmentChoice { alpha: 0.0, cost: zero_cost };
        }
        let nonzero_cost =
            0.5 * m * (clamped - mean) * (clamped - mean) + 0.5 * sumsq - 0.5 * m * mean * mean
                + self.lambda * m;
        if nonzero_cost < zero_cost {
            SegmentChoice { alpha: clamped, cost: nonzero_cost }
        } else {
            SegmentChoice { alpha: 0.0, cost: zero_cost }
        }
    }
}

/// Independent segment solver for power penalties |.|^q solved on a grid.
pub struct GridPowerSegmentOracle<'a> {
    pub z: &'a [f64],
    pub q: f64,
    /// weight on |alpha|^q per coordinate (step-size folded in)
    pub weight: f64,
    pub points: usize,
}

impl SegmentOracle for GridPowerSegmentOracle<'_> {
    fn solve(&self, start: usize, end: usize) -> SegmentChoice {
        let m = (end - start) as f64;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for i in start..end {
            sum += self.z[i];
            sumsq += self.z[i] * self.z[i];
        }
        let mean = sum / m;
        let fixed = 0.5 * sumsq - 0.5 * m * mean * mean;
        let (q, w) = (self.q, self.weight);
        let scalar = move |t: f64| 0.5 * (t - mean) * (t - mean) + w * t.abs().powf(q);
        let radius = mean.abs() + 1.0;
        let spec = GridSpec::new(-radius, radius).with_points(self.points);
        let gm = grid_scalar_prox(scalar, &spec);
        SegmentChoice { alpha: gm.t, cost: fixed + m * gm.value }
    }
}

/// Central-difference gradient with uniform step `h`
/// (default 1e-6 * (1 + |x|)).
pub fn fd_gradient(fun: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, h: Option<f64>) -> DVector<f64> {
    let h = h.unwrap_or_else(|| 1e-6 * (1.0 + x.norm()));
    let n = x.len();
    let mut g = DVector::zeros(n);
    let mut xp = x.clone();
    for i in 0..n {
        xp[i] = x[i] + h;
        let fp = fun(&xp);
        xp[i] = x[i] - h;
        let fm = fun(&xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Central-difference Jacobian of a vector map.
pub fn fd_jacobian(
    map: impl Fn(&DVector<f64>) -> DVector<f64>,
    x: &DVector<f64>,
    h: Option<f64>,
) -> DMatrix<f64> {
    let h = h.unwrap_or_else(|| 1e-6 * (1.0 + x.norm()));
    let n = x.len();
    let m = map(x).len();
    let mut j = DMatrix::zeros(m, n);
    let mut xp = x.clone();
    for col in 0..n {
        xp[col] = x[col] + h;
        let fp = map(&xp);
        xp[col] = x[col] - h;
        let fm = map(&xp);
        xp[col] = x[col];
        for row in 0..m {
            j[(row, col)] = (fp[row] - fm[row]) / (2.0 * h);
        }
    }
    j
}

fn quad_model(g: &DMatrix<f64>, grad: &DVector<f64>, d: &DVector<f64>) -> f64 {
    0.5 * d.dot(&(g * d)) + grad.dot(d)
}

/// Sampled reference minimum of a trust-region model over the ball of radius
/// `delta`. Dense polar/spherical grids in 2-D and 3-D, seeded random
/// directions above that.
pub fn trs_reference_min(g: &DMatrix<f64>, grad: &DVector<f64>, delta: f64, seed: u64) -> f64 {
    let n = grad.len();
    let mut best = 0.0f64; // d = 0 is always feasible
    let mut consider = |d: &DVector<f64>| {
        let v = quad_model(g, grad, d);
        if v < best {
            best = v;
        }
    };
    match n {
        1 => {
            let steps = 1_000_000;
            for i in 0..=steps {
                let t = -delta + 2.0 * delta * i as f64 / steps as f64;
                consider(&DVector::from_row_slice(&[t]));
            }
        }
        2 => {
            let (nr, na) = (1000, 1000);
            for ir in 1..=nr {
                let r = delta * ir as f64 / nr as f64;
                for ia in 0..na {
                    let th = 2.0 * std::f64::consts::PI * ia as f64 / na as f64;
                    consider(&DVector::from_row_slice(&[r * th.cos(), r * th.sin()]));
                }
            }
        }
        3 => {
            let (nr, na, nb) = (100, 100, 100);
            for ir in 1..=nr {
                let r = delta * ir as f64 / nr as f64;
                for ia in 0..na {
                    let th = 2.0 * std::f64::consts::PI * ia as f64 / na as f64;
                    for ib in 0..=nb {
                        let ph = std::f64::consts::PI * ib as f64 / nb as f64;
                        consider(&DVector::from_row_slice(&[
                            r * ph.sin() * th.cos(),
                            r * ph.sin() * th.sin(),
                            r * ph.cos(),
                        ]));
                    }
                }
            }
        }
        _ => {
            let mut rng = SplitMix64::new(seed);
            for _ in 0..200_000 {
                let mut d = DVector::from_fn(n, |_, _| rng.normal());
                let norm = d.norm();
                if norm > 0.0 {
                    let r = delta * rng.uniform().powf(1.0 / n as f64);
                    d *= r / norm;
                    consider(&d);
                }
            }
        }
    }
    best
}

/// Random feasible points in the ball, for dominance-style checks.
pub fn trs_random_feasible(n: usize, delta: f64, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = SplitMix64::new(seed);
    (0..count)
        .map(|_| {
            let mut d = DVector::from_fn(n, |_, _| rng.normal());
            let norm = d.norm();
            if norm > 0.0 {
                let r = delta * rng.uniform().powf(1.0 / n as f64);
                d *= r / norm;
            }
            d
        })
        .collect()
}

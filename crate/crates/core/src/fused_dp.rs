//! Dynamic programs for the prox of fused regularizers: a changepoint
//! forward pass with functional pruning over piecewise quadratics, the
//! generic O(n^2) segment DP for separable per-coordinate penalties, and the
//! backtracking / single-valuedness test shared by both.

use crate::regularizers::{tie_threshold, BoxConstraint, Certificate};
use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DpError {
    #[error("piecewise quadratic is empty")]
    EmptyFunction,
    #[error("dimension mismatch: z has {z} entries, box has {bounds}")]
    DimensionMismatch { z: usize, bounds: usize },
}

/// Tolerance for treating two crossing roots as equal (absolute).
const ROOT_TOL: f64 = 1e-12;
/// Two candidate levels count as the same minimizer when closer than this.
fn alpha_tol(alpha: f64) -> f64 {
    1e-9 * (1.0 + alpha.abs())
}

/// One quadratic piece c0 + c1 a + 0.5 c2 a^2 on the closed interval
/// [lo, hi], remembering which changepoint created it.
#[derive(Debug, Clone, Copy)]
pub struct QuadPiece {
    pub lo: f64,
    pub hi: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    /// Changepoint index whose constant-clip spawned this piece.
    pub origin: usize,
    /// Whether the interval contains the origin of the level axis.
    pub zero_allowed: bool,
}

impl QuadPiece {
    pub fn new(lo: f64, hi: f64, c0: f64, c1: f64, c2: f64, origin: usize) -> Self {
        debug_assert!(lo <= hi);
        QuadPiece { lo, hi, c0, c1, c2, origin, zero_allowed: lo <= 0.0 && 0.0 <= hi }
    }

    pub fn eval(&self, a: f64) -> f64 {
        self.c0 + a * (self.c1 + 0.5 * self.c2 * a)
    }

    /// (argmin, value) over the piece interval.
    pub fn min_on_interval(&self) -> (f64, f64) {
        if self.c2 > 0.0 {
            let v = (-self.c1 / self.c2).clamp(self.lo, self.hi);
            (v, self.eval(v))
        } else if self.c1 > 0.0 {
            (self.lo, self.eval(self.lo))
        } else if self.c1 < 0.0 {
            (self.hi, self.eval(self.hi))
        } else {
            (self.lo, self.c0)
        }
    }
}

/// The value and provenance of the level-zero point, carried separately
/// because the zero-norm charge is waived exactly at 0, which puts a
/// removable point discount into the cost-to-come.
#[derive(Debug, Clone, Copy)]
pub struct ZeroChannel {
    pub value: f64,
    pub origin: usize,
}

/// Cost-to-come of the changepoint DP: ordered non-overlapping quadratic
/// pieces plus the separate zero channel.
#[derive(Debug, Clone, Default)]
pub struct PiecewiseQuadratic {
    pub pieces: Vec<QuadPiece>,
    pub zero: Option<ZeroChannel>,
}

impl PiecewiseQuadratic {
    pub fn new(pieces: Vec<QuadPiece>, zero: Option<ZeroChannel>) -> Self {
        for w in pieces.windows(2) {
            debug_assert!(w[0].hi <= w[1].lo + 1e-15, "pieces must be sorted and non-overlapping");
        }
        PiecewiseQuadratic { pieces, zero }
    }

    pub fn piece_count(&self) -> usize {
        self.pieces.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GlobalMin {
    pub alpha: f64,
    pub value: f64,
    pub origin: usize,
    /// Objective distance to the best candidate at a different level or
    /// with a different origin (+inf when none exists).
    pub gap: f64,
}

/// Global minimum over pieces and zero channel. Ties break toward the
/// smaller origin, then the smaller level.
pub fn pw_global_min(p: &PiecewiseQuadratic) -> Result<GlobalMin, DpError> {
    let mut candidates: Vec<(f64, f64, usize)> = Vec::with_capacity(p.pieces.len() + 1);
    for piece in &p.pieces {
        let (a, v) = piece.min_on_interval();
        candidates.push((a, v, piece.origin));
    }
    if let Some(z) = p.zero {
        candidates.push((0.0, z.value, z.origin));
    }
    if candidates.is_empty() {
        return Err(DpError::EmptyFunction);
    }
    let mut best = candidates[0];
    for c in &candidates[1..] {
        let better = c.1 < best.1
            || (c.1 == best.1 && (c.2 < best.2 || (c.2 == best.2 && c.0 < best.0)));
        if better {
            best = *c;
        }
    }
    let mut gap = f64::INFINITY;
    for c in &candidates {
        let distinct = (c.0 - best.0).abs() > alpha_tol(best.0) || c.2 != best.2;
        if distinct {
            gap = gap.min(c.1 - best.1);
        }
    }
    Ok(GlobalMin { alpha: best.0, value: best.1, origin: best.2, gap })
}

fn push_merged(pieces: &mut Vec<QuadPiece>, piece: QuadPiece) {
    if piece.hi - piece.lo <= 0.0 {
        return;
    }
    if let Some(last) = pieces.last_mut() {
        if last.origin == piece.origin
            && last.c0 == piece.c0
            && last.c1 == piece.c1
            && last.c2 == piece.c2
            && last.hi >= piece.lo - 1e-15
        {
            last.hi = last.hi.max(piece.hi);
            last.zero_allowed = last.lo <= 0.0 && 0.0 <= last.hi;
            return;
        }
    }
    pieces.push(piece);
}

/// Pointwise min of `p` and the constant `c` over the domain hull of `p`
/// (interior gaps between pieces are filled with the constant). Regions
/// where the constant wins carry the supplied origin. Crossing abscissae
/// are computed in coordinates shifted to the vertex.
pub fn pw_min_with_constant(p: &PiecewiseQuadratic, c: f64, origin: usize) -> PiecewiseQuadratic {
    assert!(c.is_finite());
    let mut out: Vec<QuadPiece> = Vec::with_capacity(p.pieces.len() + 2);
    let mut cursor: Option<f64> = None;
    for piece in &p.pieces {
        if let Some(prev_hi) = cursor {
            if piece.lo > prev_hi {
                push_merged(&mut out, QuadPiece::new(prev_hi, piece.lo, c, 0.0, 0.0, origin));
            }
        }
        cursor = Some(piece.hi);
        if piece.c2 > 0.0 {
            let vertex = -piece.c1 / piece.c2;
            let vmin = piece.eval(vertex);
            let excess = c - vmin;
            if excess <= ROOT_TOL {
                // constant at or below the vertex value: it wins everywhere
                push_merged(&mut out, QuadPiece::new(piece.lo, piece.hi, c, 0.0, 0.0, origin));
                continue;
            }
            let r = (2.0 * excess / piece.c2).sqrt();
            let cross_lo = vertex - r;
            let cross_hi = vertex + r;
            let quad_lo = piece.lo.max(cross_lo);
            let quad_hi = piece.hi.min(cross_hi);
            if quad_hi <= quad_lo {
                // parabola above c on the whole interval
                push_merged(&mut out, QuadPiece::new(piece.lo, piece.hi, c, 0.0, 0.0, origin));
                continue;
            }
            if quad_lo > piece.lo {
                push_merged(&mut out, QuadPiece::new(piece.lo, quad_lo, c, 0.0, 0.0, origin));
            }
            push_merged(
                &mut out,
                QuadPiece::new(quad_lo, quad_hi, piece.c0, piece.c1, piece.c2, piece.origin),
            );
            if quad_hi < piece.hi {
                push_merged(&mut out, QuadPiece::new(quad_hi, piece.hi, c, 0.0, 0.0, origin));
            }
        } else if piece.c1 == 0.0 {
            if piece.c0 <= c {
                push_merged(&mut out, *piece);
            } else {
                push_merged(&mut out, QuadPiece::new(piece.lo, piece.hi, c, 0.0, 0.0, origin));
            }
        } else {
            // linear piece: single crossing
            let cross = (c - piece.c0) / piece.c1;
            let (keep_left, keep_right) = if piece.c1 > 0.0 {
                (piece.lo, cross.clamp(piece.lo, piece.hi))
            } else {
                (cross.clamp(piece.lo, piece.hi), piece.hi)
            };
            if piece.c1 > 0.0 {
                if keep_right > keep_left {
                    push_merged(&mut out, QuadPiece::new(keep_left, keep_right, piece.c0, piece.c1, 0.0, piece.origin));
                }
                if keep_right < piece.hi {
                    push_merged(&mut out, QuadPiece::new(keep_right, piece.hi, c, 0.0, 0.0, origin));
                }
            } else {
                if keep_left > piece.lo {
                    push_merged(&mut out, QuadPiece::new(piece.lo, keep_left, c, 0.0, 0.0, origin));
                }
                if piece.hi > keep_left {
                    push_merged(&mut out, QuadPiece::new(keep_left, piece.hi, piece.c0, piece.c1, 0.0, piece.origin));
                }
            }
        }
    }
    let zero = p.zero.map(|z| {
        if c < z.value {
            ZeroChannel { value: c, origin }
        } else {
            z
        }
    });
    PiecewiseQuadratic { pieces: out, zero }
}

/// Per-changepoint data kept for backtracking: piece boundaries and origins
/// only; coefficients are re-derived from prefix sums.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub pieces: Vec<(f64, f64, usize)>,
    pub zero_value: f64,
    pub zero_origin: usize,
}

/// Forward-pass record of the changepoint DP: the optimal values H(s) with
/// H(0) = -lambda0 (step-size folded), and per-s snapshots.
#[derive(Debug, Clone)]
pub struct DpTrace {
    pub h: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
    pub total_pieces: usize,
}

#[derive(Debug, Clone)]
pub struct PrunedProx {
    pub point: DVector<f64>,
    /// Optimal value of 0.5||x-z||^2 + l0 ||Bx||_0 + lam ||x||_0 (+ box),
    /// with the step-size already folded into the charges.
    pub value: f64,
    pub certificate: Certificate,
    pub trace: DpTrace,
}

struct MembershipScan {
    best_i: usize,
    best_value: f64,
    gap: f64,
}

/// Evaluates P_s(i, alpha) for every admissible origin i and reports the
/// best origin and the distance to the second-best distinct origin. This is
/// the lazy realization of the origin-membership test: alpha belongs to the
/// i-th region exactly when P_s(i, alpha) attains the pointwise minimum.
#[allow(clippy::too_many_arguments)]
fn membership_scan(
    s: usize,
    alpha: f64,
    h: &[f64],
    pz: &[f64],
    pz2: &[f64],
    bounds: &BoxConstraint,
    l0: f64,
    lam: f64,
) -> MembershipScan {
    let mut best_i = usize::MAX;
    let mut best_value = f64::INFINITY;
    let mut second = f64::INFINITY;
    let mut lo_run = f64::NEG_INFINITY;
    let mut hi_run = f64::INFINITY;
    let charge = if alpha != 0.0 { lam } else { 0.0 };
    for i in (0..s).rev() {
        lo_run = lo_run.max(bounds.lower(i));
        hi_run = hi_run.min(bounds.upper(i));
        if alpha < lo_run || alpha > hi_run {
            continue;
        }
        let m = (s - i) as f64;
        let value = h[i]
            + l0
            + 0.5 * (pz2[s] - pz2[i])
            - (pz[s] - pz[i]) * alpha
            + m * (0.5 * alpha * alpha + charge);
        if value < best_value || (value == best_value && i < best_i) {
            if best_i != usize::MAX {
                second = second.min(best_value);
            }
            best_value = value;
            best_i = i;
        } else {
            second = second.min(value);
        }
    }
    MembershipScan { best_i, best_value, gap: second - best_value }
}

/// Prox of the fused zero-norm regularizer by functional pruning: forward
/// pass maintaining the cost-to-come as a piecewise quadratic in the segment
/// level, backward pass recovering the changepoints, with a per-stage
/// uniqueness test feeding the certificate.
pub fn prox_pruned(
    z: &DVector<f64>,
    lambda0: f64,
    lambda: f64,
    bounds: &BoxConstraint,
    gamma: f64,
    tie_rel: f64,
) -> Result<PrunedProx, DpError> {
    let n = z.len();
    if bounds.dim() != n {
        return Err(DpError::DimensionMismatch { z: n, bounds: bounds.dim() });
    }
    assert!(gamma > 0.0 && lambda0 >= 0.0 && lambda >= 0.0);
    let l0 = gamma * lambda0;
    let lam = gamma * lambda;

    // prefix sums for coefficient re-derivation
    let mut pz = vec![0.0; n + 1];
    let mut pz2 = vec![0.0; n + 1];
    for i in 0..n {
        pz[i + 1] = pz[i] + z[i];
        pz2[i + 1] = pz2[i] + z[i] * z[i];
    }

    let mut h = vec![0.0; n + 1];
    h[0] = -l0;
    let mut snapshots: Vec<Snapshot> = Vec::with_capacity(n);
    let mut total_pieces = 0usize;

    // s = 1
    let mut cur = PiecewiseQuadratic::new(
        vec![QuadPiece::new(
            bounds.lower(0),
            bounds.upper(0),
            0.5 * z[0] * z[0] + lam,
            -z[0],
            1.0,
            0,
        )],
        Some(ZeroChannel { value: 0.5 * z[0] * z[0], origin: 0 }),
    );
    let snap = |p: &PiecewiseQuadratic| Snapshot {
        pieces: p.pieces.iter().map(|q| (q.lo, q.hi, q.origin)).collect(),
        zero_value: p.zero.unwrap().value,
        zero_origin: p.zero.unwrap().origin,
    };
    snapshots.push(snap(&cur));
    total_pieces += cur.piece_count();
    h[1] = pw_global_min(&cur)?.value;

    for s in 2..=n {
        let clip = h[s - 1] + l0;
        let mut clipped = pw_min_with_constant(&cur, clip, s - 1);
        // pruning safety: clipping at min + l0 never lowers the global min
        debug_assert!(pw_global_min(&clipped)?.value >= h[s - 1] - 1e-9 * (1.0 + h[s - 1].abs()));
        // extend with the constant onto the new box where the hull ends
        let (blo, bhi) = (bounds.lower(s - 1), bounds.upper(s - 1));
        let hull_lo = clipped.pieces.first().map_or(bhi, |p| p.lo);
        let hull_hi = clipped.pieces.last().map_or(blo, |p| p.hi);
        let mut pieces: Vec<QuadPiece> = Vec::with_capacity(clipped.pieces.len() + 2);
        if blo < hull_lo {
            push_merged(&mut pieces, QuadPiece::new(blo, hull_lo.min(bhi), clip, 0.0, 0.0, s - 1));
        }
        for piece in clipped.pieces.drain(..) {
            let lo = piece.lo.max(blo);
            let hi = piece.hi.min(bhi);
            if hi > lo {
                push_merged(&mut pieces, QuadPiece::new(lo, hi, piece.c0, piece.c1, piece.c2, piece.origin));
            }
        }
        if bhi > hull_hi {
            push_merged(&mut pieces, QuadPiece::new(hull_hi.max(blo), bhi, clip, 0.0, 0.0, s - 1));
        }
        // add the data term and the nonzero charge
        let zs = z[s - 1];
        for piece in &mut pieces {
            piece.c0 += 0.5 * zs * zs + lam;
            piece.c1 -= zs;
            piece.c2 += 1.0;
        }
        let zero_prev = clipped.zero.unwrap();
        let zero = ZeroChannel { value: zero_prev.value + 0.5 * zs * zs, origin: zero_prev.origin };
        cur = PiecewiseQuadratic { pieces, zero: Some(zero) };
        snapshots.push(snap(&cur));
        total_pieces += cur.piece_count();
        h[s] = pw_global_min(&cur)?.value;
    }

    // backward pass
    let mut x = DVector::zeros(n);
    let mut certificate = Certificate::SingleValued;
    let mut s = n;
    while s > 0 {
        let snapshot = &snapshots[s - 1];
        // candidates: per-piece minima (coefficients re-derived) + zero channel
        let mut best: Option<(f64, f64, usize)> = None;
        let mut candidates: Vec<(f64, f64, usize)> = Vec::with_capacity(snapshot.pieces.len() + 1);
        for &(lo, hi, origin) in &snapshot.pieces {
            let m = (s - origin) as f64;
            let c2 = m;
            let c1 = -(pz[s] - pz[origin]);
            let c0 = h[origin] + l0 + 0.5 * (pz2[s] - pz2[origin]) + m * lam;
            let piece = QuadPiece::new(lo, hi, c0, c1, c2, origin);
            let (a, v) = piece.min_on_interval();
            candidates.push((a, v, origin));
        }
        candidates.push((0.0, snapshot.zero_value, snapshot.zero_origin));
        for c in &candidates {
            let better = match best {
                None => true,
                Some(b) => c.1 < b.1 || (c.1 == b.1 && (c.2 < b.2 || (c.2 == b.2 && c.0 < b.0))),
            };
            if better {
                best = Some(*c);
            }
        }
        let (alpha, value, _) = best.unwrap();
        let mut level_gap = f64::INFINITY;
        for c in &candidates {
            if (c.0 - alpha).abs() > alpha_tol(alpha) {
                level_gap = level_gap.min(c.1 - value);
            }
        }
        let scan = membership_scan(s, alpha, &h, &pz, &pz2, bounds, l0, lam);
        debug_assert!(
            (scan.best_value - value).abs() <= 1e-6 * (1.0 + value.abs()),
            "membership scan disagrees with snapshot candidates: {} vs {value}",
            scan.best_value
        );
        let threshold = tie_threshold(tie_rel, value);
        certificate = certificate
            .combine(Certificate::from_gap(level_gap, threshold))
            .combine(Certificate::from_gap(scan.gap, threshold));
        let i_star = scan.best_i;
        for idx in i_star..s {
            x[idx] = alpha;
        }
        s = i_star;
    }

    Ok(PrunedProx {
        point: x,
        value: h[n],
        certificate,
        trace: DpTrace { h, snapshots, total_pieces },
    })
}

/// One solved segment for the generic DP: the constant level, its total cost
/// (data term plus per-coordinate penalties) and the objective gap to the
/// best structurally distinct level (+inf when unique by construction).
#[derive(Debug, Clone, Copy)]
pub struct SegmentFit {
    pub alpha: f64,
    pub cost: f64,
    pub gap: f64,
}

/// Per-segment solver contract: `solve(start, end)` minimizes
/// sum_{i in start..end} [ 0.5 (a - z_i)^2 + theta_i(a) ] over the level a
/// (0-based half-open range).
pub trait SegmentSolver: Sync {
    fn solve(&self, start: usize, end: usize) -> SegmentFit;
}

#[derive(Debug, Clone)]
pub struct SegmentProx {
    pub point: DVector<f64>,
    pub value: f64,
    pub certificate: Certificate,
}

/// Generic O(n^2) changepoint DP over accessible segment solvers:
/// H(s) = min_i { H(i) + Q(i+1, s) + lambda0 } with H(0) = -lambda0.
pub fn prox_segment_dp(
    n: usize,
    lambda0: f64,
    solver: &dyn SegmentSolver,
    tie_rel: f64,
) -> SegmentProx {
    assert!(n >= 1);
    let mut h = vec![0.0; n + 1];
    h[0] = -lambda0;
    let mut parent = vec![0usize; n + 1];
    let mut level = vec![0.0f64; n + 1];
    let mut level_gap = vec![f64::INFINITY; n + 1];
    let mut origin_gap = vec![f64::INFINITY; n + 1];

    for s in 1..=n {
        let mut best = f64::INFINITY;
        let mut best_i = usize::MAX;
        let mut best_fit = SegmentFit { alpha: 0.0, cost: 0.0, gap: f64::INFINITY };
        let mut second = f64::INFINITY;
        for i in (0..s).rev() {
            let fit = solver.solve(i, s);
            let value = h[i] + fit.cost + lambda0;
            if value < best || (value == best && i < best_i) {
                if best_i != usize::MAX {
                    second = second.min(best);
                }
                best = value;
                best_i = i;
                best_fit = fit;
            } else {
                second = second.min(value);
            }
        }
        h[s] = best;
        parent[s] = best_i;
        level[s] = best_fit.alpha;
        level_gap[s] = best_fit.gap;
        origin_gap[s] = second - best;
    }

    let mut x = DVector::zeros(n);
    let mut certificate = Certificate::SingleValued;
    let mut s = n;
    while s > 0 {
        let threshold = tie_threshold(tie_rel, h[s]);
        certificate = certificate
            .combine(Certificate::from_gap(origin_gap[s], threshold))
            .combine(Certificate::from_gap(level_gap[s], threshold));
        let i = parent[s];
        for idx in i..s {
            x[idx] = level[s];
        }
        s = i;
    }
    SegmentProx { point: x, value: h[n], certificate }
}

/// Segment solver for zero-norm-plus-box coordinates (theta_i(a) =
/// lam [a != 0] + indicator [l_i, u_i]).
pub struct ZeroBoxSegmentSolver<'a> {
    lam: f64,
    bounds: &'a BoxConstraint,
    pz: Vec<f64>,
    pz2: Vec<f64>,
}

impl<'a> ZeroBoxSegmentSolver<'a> {
    pub fn new(z: &'a DVector<f64>, lam: f64, bounds: &'a BoxConstraint) -> Self {
        assert_eq!(z.len(), bounds.dim());
        let n = z.len();
        let mut pz = vec![0.0; n + 1];
        let mut pz2 = vec![0.0; n + 1];
        for i in 0..n {
            pz[i + 1] = pz[i] + z[i];
            pz2[i + 1] = pz2[i] + z[i] * z[i];
        }
        ZeroBoxSegmentSolver { lam, bounds, pz, pz2 }
    }
}

impl SegmentSolver for ZeroBoxSegmentSolver<'_> {
    fn solve(&self, start: usize, end: usize) -> SegmentFit {
        let m = (end - start) as f64;
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for i in start..end {
            lo = lo.max(self.bounds.lower(i));
            hi = hi.min(self.bounds.upper(i));
        }
        let sum = self.pz[end] - self.pz[start];
        let sumsq = self.pz2[end] - self.pz2[start];
        let mean = sum / m;
        let zero_cost = 0.5 * sumsq;
        let clamped = mean.clamp(lo, hi);
        if self.lam == 0.0 {
            let cost = 0.5 * m * (clamped - mean) * (clamped - mean) + zero_cost - 0.5 * m * mean * mean;
            return SegmentFit { alpha: clamped, cost, gap: f64::INFINITY };
        }
        if clamped == 0.0 {
            return SegmentFit { alpha: 0.0, cost: zero_cost, gap: self.lam * m };
        }
        let nonzero_cost =
            0.5 * m * (clamped - mean) * (clamped - mean) + zero_cost - 0.5 * m * mean * mean + self.lam * m;
        let gap = (zero_cost - nonzero_cost).abs();
        if nonzero_cost < zero_cost {
            SegmentFit { alpha: clamped, cost: nonzero_cost, gap }
        } else {
            SegmentFit { alpha: 0.0, cost: zero_cost, gap }
        }
    }
}

/// Segment solver for power penalties (theta_i(a) = w |a|^q): the segment
/// objective collapses to a scalar prox at the segment mean.
pub struct LqSegmentSolver {
    q: crate::regularizers::LqExponent,
    w: f64,
    pz: Vec<f64>,
    pz2: Vec<f64>,
}

impl LqSegmentSolver {
    pub fn new(z: &DVector<f64>, q: crate::regularizers::LqExponent, w: f64) -> Self {
        let n = z.len();
        let mut pz = vec![0.0; n + 1];
        let mut pz2 = vec![0.0; n + 1];
        for i in 0..n {
            pz[i + 1] = pz[i] + z[i];
            pz2[i + 1] = pz2[i] + z[i] * z[i];
        }
        LqSegmentSolver { q, w, pz, pz2 }
    }
}

impl SegmentSolver for LqSegmentSolver {
    fn solve(&self, start: usize, end: usize) -> SegmentFit {
        let m = (end - start) as f64;
        let sum = self.pz[end] - self.pz[start];
        let sumsq = self.pz2[end] - self.pz2[start];
        let mean = sum / m;
        let fixed = 0.5 * sumsq - 0.5 * m * mean * mean;
        let (alpha, scalar_gap) = crate::regularizers::lq_scalar_prox(self.q, self.w, mean);
        let cost = fixed
            + m * (0.5 * (alpha - mean) * (alpha - mean) + self.w * alpha.abs().powf(self.q.value()));
        SegmentFit { alpha, cost, gap: m * scalar_gap }
    }
}

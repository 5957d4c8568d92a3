//! Brute-force references for the closed forms: adaptive quadrature of the
//! collision integrals, golden-section solvers for tiny instances, and
//! enumeration of interval placements. Slow by design; used by tests and
//! the `validate` command.

use std::f64::consts::LN_2;

use crate::allocator::DualPoint;
use crate::channel::{ChannelGains, NetworkStateInfo};
use crate::config::Scenario;
use crate::error::{Error, Result};
use crate::traffic::{phi_collision, transition_matrix, Phase, TrafficParams, TrafficState};

/// Adaptive Simpson quadrature of `f` over `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (fa, fb, m) = (f(a), f(b), 0.5 * (a + b));
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 60)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Expected collision time of a placement `[start, start + theta]` (fractions
/// of the frame, relative to the phase start) given the state sensed at the
/// phase start, by quadrature of the transition probability.
pub fn quad_collision(
    params: &TrafficParams,
    sensed: TrafficState,
    start: f64,
    theta: f64,
) -> f64 {
    let tf = params.frame_duration;
    let f = |s: f64| transition_matrix(params, s)[sensed.index()][TrafficState::Active.index()];
    adaptive_simpson(&f, start * tf, (start + theta) * tf, 1e-11 * tf.max(1e-300))
}

/// Quadrature counterpart of [`crate::traffic::phi_collision`] on the edge-aligned interval.
pub fn quad_phi(
    params: &TrafficParams,
    phase: Phase,
    sensed: TrafficState,
    theta: f64,
) -> Result<f64> {
    let len = phase.length(params.alpha);
    if !(0.0..=len).contains(&theta) {
        return Err(Error::domain("theta", format!("{theta} outside [0, {len}]")));
    }
    let start = match sensed {
        TrafficState::Idle => 0.0,
        TrafficState::Active => len - theta,
    };
    Ok(quad_collision(params, sensed, start, theta))
}

/// Golden-section minimization of a unimodal `f` on `[lo, hi]`.
pub fn golden_section<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol * (1.0 + a.abs().max(b.abs())) {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    // the end points are candidates too (optimum on the boundary)
    let mut best = if fc <= fd { (c, fc) } else { (d, fd) };
    for x in [lo, hi] {
        let fx = f(x);
        if fx < best.1 {
            best = (x, fx);
        }
    }
    best
}

/// A tiny deterministic instance: one band, one or two sub-channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyInstance {
    pub scenario: Scenario,
    pub nsi: NetworkStateInfo,
}

impl ToyInstance {
    pub fn new(scenario: Scenario, gains: ChannelGains, x: TrafficState, y: TrafficState) -> Result<Self> {
        if scenario.n_bands() != 1 || !(1..=2).contains(&scenario.n_subchannels()) {
            return Err(Error::Dimension(format!(
                "toy instances have one band and 1-2 sub-channels, got {} / {}",
                scenario.n_bands(),
                scenario.n_subchannels()
            )));
        }
        let nsi = NetworkStateInfo::new(gains, vec![x], vec![y])?;
        crate::allocator::check_dimensions(&nsi, &scenario)?;
        Ok(ToyInstance { scenario, nsi })
    }
}

/// Numerical minimizer of the per-realization Lagrangian.
#[derive(Debug, Clone, PartialEq)]
pub struct GridOptimum {
    pub ratio_s1: Vec<f64>,
    pub ratio_s2: Vec<f64>,
    pub ratio_r: Vec<f64>,
    pub theta1: f64,
    pub theta2: f64,
    pub value: f64,
}

const GOLDEN_TOL: f64 = 1e-12;

/// Largest useful ratio: beyond it the marginal rate credit is below the price.
fn ratio_bound(weight: f64, price: f64) -> f64 {
    if price <= 0.0 {
        1e12
    } else {
        weight / (price * LN_2) + 1.0
    }
}

/// Minimizes the per-realization Lagrangian of a toy instance numerically.
///
/// For a fixed time fraction the Lagrangian is that fraction times a
/// per-unit function of the power ratios, so the ratios are found first by
/// golden-section search (nested for the phase-2 source/relay pair), then each
/// time fraction by golden-section search on its own convex scalar problem.
pub fn grid_search_lagrangian(inst: &ToyInstance, nu: &DualPoint) -> Result<GridOptimum> {
    if nu.epsilon <= 0.0 || nu.eta <= 0.0 {
        return Err(Error::infeasible("grid search needs positive power prices"));
    }
    let g = &inst.nsi.gains;
    let params = &inst.scenario.traffic;
    let (z, s, e, h) = (nu.zeta, nu.sigma, nu.epsilon, nu.eta);
    let n = g.len();
    let mut ratio_s1 = Vec::with_capacity(n);
    let mut ratio_s2 = Vec::with_capacity(n);
    let mut ratio_r = Vec::with_capacity(n);
    // per-unit-theta values (negated credits), summed over sub-channels
    let (mut unit1, mut unit2) = (0.0, 0.0);
    for i in 0..n {
        let big = g.sr[i].max(g.sd[i]);
        let f1 = |r: f64| -z * (r * big).ln_1p() / LN_2 - s * (r * g.sd[i]).ln_1p() / LN_2 + e * r;
        let (r1, v1) = golden_section(f1, 0.0, ratio_bound(z + s, e), GOLDEN_TOL);
        let f2 = |rs: f64, rr: f64| {
            -z * (rs * g.sd[i]).ln_1p() / LN_2 - s * (rs * g.sd[i] + rr * g.rd[i]).ln_1p() / LN_2
                + e * rs
                + h * rr
        };
        let inner = |rs: f64| golden_section(|rr| f2(rs, rr), 0.0, ratio_bound(s, h), GOLDEN_TOL);
        let (rs, _) = golden_section(|rs| inner(rs).1, 0.0, ratio_bound(z + s, e), GOLDEN_TOL);
        let (rr, v2) = inner(rs);
        ratio_s1.push(r1);
        ratio_s2.push(rs);
        ratio_r.push(rr);
        unit1 += v1;
        unit2 += v2;
    }
    let x = inst.nsi.x[0];
    let y = inst.nsi.y[0];
    let tf = params.frame_duration;
    let a = params.alpha;
    let phi = |phase: Phase, sensed: TrafficState, t: f64| {
        phi_collision(params, phase, sensed, t).expect("theta within range") / tf
    };
    let (theta1, v1) = golden_section(|t| phi(Phase::One, x, t) + t * unit1, 0.0, a, GOLDEN_TOL);
    let (theta2, v2) = golden_section(|t| phi(Phase::Two, y, t) + t * unit2, 0.0, 1.0 - a, GOLDEN_TOL);
    Ok(GridOptimum {
        ratio_s1,
        ratio_s2,
        ratio_r,
        theta1,
        theta2,
        value: v1 + v2,
    })
}

/// Optimum of the deterministic primal of a one-sub-channel toy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrimalOptimum {
    pub theta1: f64,
    pub theta2: f64,
    /// Phase-1 source power (frame average), phase-2 source and relay power.
    pub p_s1: f64,
    pub p_s2: f64,
    pub p_r: f64,
    /// Collision time per second.
    pub collision: f64,
}

/// Largest `min(R1, R2) / W` for fixed fractions of a one-sub-channel toy: the
/// relay spends its whole budget and the source splits its budget between
/// the phases by golden-section search.
fn toy_max_min(inst: &ToyInstance, theta1: f64, theta2: f64) -> (f64, f64) {
    let g = &inst.nsi.gains;
    let (big, gsd, grd) = (g.sr[0].max(g.sd[0]), g.sd[0], g.rd[0]);
    let (ps, pr) = (inst.scenario.p_s_max, inst.scenario.p_r_max);
    let term = |theta: f64, snr: f64| {
        if theta > 0.0 {
            theta * (snr / theta).ln_1p() / LN_2
        } else {
            0.0
        }
    };
    let rate = |p1: f64| {
        let p2 = ps - p1;
        let relay = if theta2 > 0.0 { pr } else { 0.0 };
        let r1 = term(theta1, p1 * big) + term(theta2, p2 * gsd);
        let r2 = term(theta1, p1 * gsd) + term(theta2, p2 * gsd + relay * grd);
        r1.min(r2)
    };
    let hi = if theta1 > 0.0 { ps } else { 0.0 };
    let lo = if theta2 > 0.0 { 0.0 } else { hi };
    let (p1, neg) = golden_section(|p| -rate(p), lo, hi, GOLDEN_TOL);
    (-neg, p1)
}

/// Minimizes expected collision subject to both rate constraints and the
/// power budgets for a one-sub-channel toy with fixed sensing outcomes.
///
/// For each phase-1 fraction the smallest feasible phase-2 fraction is found
/// by bisection (feasibility is monotone in it); the outer fraction is then
/// chosen by golden-section search. Returns `None` when the target is out of
/// reach even with full phases.
pub fn grid_search_primal(inst: &ToyInstance) -> Result<Option<PrimalOptimum>> {
    if inst.scenario.n_subchannels() != 1 {
        return Err(Error::Dimension("the primal search handles one sub-channel".into()));
    }
    let params = &inst.scenario.traffic;
    let a = params.alpha;
    let target = inst.scenario.r_min_normalized();
    let tf = params.frame_duration;
    let (x, y) = (inst.nsi.x[0], inst.nsi.y[0]);
    if target == 0.0 {
        return Ok(Some(PrimalOptimum {
            theta1: 0.0,
            theta2: 0.0,
            p_s1: 0.0,
            p_s2: 0.0,
            p_r: 0.0,
            collision: 0.0,
        }));
    }
    if toy_max_min(inst, a, 1.0 - a).0 < target {
        return Ok(None);
    }
    let min_theta2 = |t1: f64| -> Option<f64> {
        if toy_max_min(inst, t1, 1.0 - a).0 < target {
            return None;
        }
        let (mut lo, mut hi) = (0.0, 1.0 - a);
        if toy_max_min(inst, t1, 0.0).0 >= target {
            return Some(0.0);
        }
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if toy_max_min(inst, t1, mid).0 >= target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Some(hi)
    };
    let objective = |t1: f64| -> f64 {
        match min_theta2(t1) {
            Some(t2) => {
                (phi_collision(params, Phase::One, x, t1).unwrap()
                    + phi_collision(params, Phase::Two, y, t2).unwrap())
                    / tf
            }
            None => f64::INFINITY,
        }
    };
    // locate a feasible phase-1 fraction, then search above the feasibility edge
    let (mut lo, mut hi) = (0.0, a);
    if min_theta2(0.0).is_none() {
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if min_theta2(mid).is_some() {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo = hi;
        hi = a;
    }
    let (t1, collision) = golden_section(objective, lo, hi, 1e-10);
    let t2 = min_theta2(t1).expect("feasible");
    let (_, p1) = toy_max_min(inst, t1, t2);
    Ok(Some(PrimalOptimum {
        theta1: t1,
        theta2: t2,
        p_s1: p1,
        p_s2: inst.scenario.p_s_max - p1,
        p_r: if t2 > 0.0 { inst.scenario.p_r_max } else { 0.0 },
        collision,
    }))
}

/// Expected collision of every contiguous placement on an offset grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacementScan {
    /// Start offsets relative to the phase start (fractions of the frame).
    pub offsets: Vec<f64>,
    /// Expected collision time of each placement.
    pub collisions: Vec<f64>,
    pub best_index: usize,
    /// Expected collision of the edge placement.
    pub edge: f64,
}

/// Enumerates `n_offsets + 1` evenly spaced placements of `theta` inside a phase.
pub fn placement_enumerate(
    params: &TrafficParams,
    theta: f64,
    phase: Phase,
    sensed: TrafficState,
    n_offsets: usize,
) -> Result<PlacementScan> {
    if n_offsets < 1 {
        return Err(Error::domain("n_offsets", "must be >= 1"));
    }
    let len = phase.length(params.alpha);
    let edge = quad_phi(params, phase, sensed, theta)?;
    let offsets: Vec<f64> = (0..=n_offsets)
        .map(|k| k as f64 / n_offsets as f64 * (len - theta))
        .collect();
    let collisions: Vec<f64> = offsets
        .iter()
        .map(|&o| quad_collision(params, sensed, o, theta))
        .collect();
    let best_index = collisions
        .iter()
        .enumerate()
        .fold(0, |b, (i, c)| if *c < collisions[b] { i } else { b });
    Ok(PlacementScan {
        offsets,
        collisions,
        best_index,
        edge,
    })
}

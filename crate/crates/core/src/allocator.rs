//! Closed-form primal solution of the per-realization Lagrangian.
//!
//! For a fixed dual point the Lagrangian decouples over network states. The
//! power-to-time ratios do not depend on the time fractions, so they are
//! computed first, per sub-channel; each band's time fraction then follows in
//! closed form from the sum of marginal rate gains `f(.)` over its
//! sub-channels, and the powers are ratio times fraction.
//!
//! The Lagrangian that is minimized per realization is
//!
//! ```text
//! sum_m [phi1(theta1_m; x_m) + phi2(theta2_m; y_m)] / T_f
//!   - zeta * R1(omega) / W - sigma * R2(omega) / W
//!   + epsilon * sum_n (P_s1 + P_s2) + eta * sum_n P_r
//! ```
//!
//! with collision time expressed as a fraction of the frame.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::channel::NetworkStateInfo;
use crate::config::Scenario;
use crate::error::{Error, Result};
use crate::traffic::{phi_unchecked, IntervalSet, Phase, TrafficParams, TrafficState};

/// Lagrange multipliers: `zeta`, `sigma` price the two rate constraints,
/// `epsilon`, `eta` the source and relay power budgets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualPoint {
    pub zeta: f64,
    pub sigma: f64,
    pub epsilon: f64,
    pub eta: f64,
}

impl DualPoint {
    pub fn new(zeta: f64, sigma: f64, epsilon: f64, eta: f64) -> Result<Self> {
        let nu = DualPoint {
            zeta,
            sigma,
            epsilon,
            eta,
        };
        if nu.as_array().iter().all(|v| v.is_finite() && *v >= 0.0) {
            Ok(nu)
        } else {
            Err(Error::domain("dual point", format!("{nu:?} must be finite and >= 0")))
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.zeta, self.sigma, self.epsilon, self.eta]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        DualPoint {
            zeta: a[0],
            sigma: a[1],
            epsilon: a[2],
            eta: a[3],
        }
    }
}

/// `f(x) = log2(1 + x) - x / ((1 + x) ln 2)`: the marginal gain in
/// `theta log2(1 + P g / theta)` per unit of time at fixed power.
pub fn marginal_f(x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::domain("snr", format!("{x} is negative")));
    }
    Ok(f_unchecked(x))
}

fn f_unchecked(x: f64) -> f64 {
    if x < 1e-4 {
        // ln(1+x) - x/(1+x) = x^2/2 - 2x^3/3 + 3x^4/4 - ...
        x * x * (0.5 - x * (2.0 / 3.0 - 0.75 * x)) / LN_2
    } else {
        (x.ln_1p() - x / (1.0 + x)) / LN_2
    }
}

fn check_gain(name: &'static str, g: f64) -> Result<()> {
    if g >= 0.0 && g.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(name, format!("{g} must be finite and >= 0")))
    }
}

/// Phase-1 source power per unit time fraction.
///
/// The positive root `x` of `zeta G / (1 + x G) + sigma g / (1 + x g) = epsilon ln 2`
/// with `G = max(g_sr, g_sd)`, `g = g_sd`; zero when no positive root exists.
pub fn ratio_phase1(nu: &DualPoint, g_sr: f64, g_sd: f64) -> Result<f64> {
    check_gain("g_sr", g_sr)?;
    check_gain("g_sd", g_sd)?;
    let big = g_sr.max(g_sd);
    let g = g_sd;
    let c = nu.epsilon * LN_2;
    let lhs_at_zero = nu.zeta * big + nu.sigma * g;
    if lhs_at_zero <= c {
        return Ok(0.0);
    }
    if c == 0.0 {
        return Err(Error::infeasible(
            "epsilon = 0 with positive rate weight: phase-1 source power is unbounded",
        ));
    }
    // Clearing denominators: a x^2 + b x + c0 = 0 with c0 < 0, so exactly one root is positive.
    let a = c * big * g;
    let b = c * (big + g) - (nu.zeta + nu.sigma) * big * g;
    let c0 = c - lhs_at_zero;
    let mut x = if a == 0.0 {
        -c0 / b
    } else {
        let disc = (b * b - 4.0 * a * c0).sqrt();
        if b >= 0.0 {
            -2.0 * c0 / (b + disc)
        } else {
            (disc - b) / (2.0 * a)
        }
    };
    // Newton polish on the rational form; the LHS is convex and decreasing in x
    for _ in 0..3 {
        let (d1, d2) = (1.0 + x * big, 1.0 + x * g);
        let r = nu.zeta * big / d1 + nu.sigma * g / d2 - c;
        let dr = -nu.zeta * big * big / (d1 * d1) - nu.sigma * g * g / (d2 * d2);
        if dr == 0.0 || r == 0.0 {
            break;
        }
        let next = x - r / dr;
        if !(next > 0.0) {
            break;
        }
        x = next;
    }
    Ok(x)
}

/// Phase-2 power ratios of one sub-channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Phase2Ratios {
    pub source: f64,
    pub relay: f64,
    /// Whether the relay-forwarding branch was selected.
    pub relay_active: bool,
}

/// Phase-2 source and relay power per unit time fraction.
///
/// Tries the relay-forwarding branch first and keeps it when the relay ratio
/// comes out strictly positive; otherwise the relay stays silent and the source
/// alone water-fills against `(zeta + sigma) / (epsilon ln 2)`.
pub fn ratio_phase2(nu: &DualPoint, g_sd: f64, g_rd: f64) -> Result<Phase2Ratios> {
    check_gain("g_sd", g_sd)?;
    check_gain("g_rd", g_rd)?;
    let (zeta, sigma, eps, eta) = (nu.zeta, nu.sigma, nu.epsilon, nu.eta);
    let weight = zeta + sigma;
    if eps == 0.0 && eta == 0.0 && weight > 0.0 && (g_sd > 0.0 || g_rd > 0.0) {
        return Err(Error::infeasible(
            "epsilon = eta = 0 with positive rate weight: phase-2 power is unbounded",
        ));
    }
    if let Some(r) = relay_branch(nu, g_sd, g_rd) {
        if r.relay > 0.0 {
            return Ok(r);
        }
    }
    let source = if g_sd == 0.0 || weight == 0.0 {
        0.0
    } else if eps == 0.0 {
        return Err(Error::infeasible(
            "epsilon = 0 with positive rate weight: phase-2 source power is unbounded",
        ));
    } else {
        (weight / (eps * LN_2) - 1.0 / g_sd).max(0.0)
    };
    Ok(Phase2Ratios {
        source,
        relay: 0.0,
        relay_active: false,
    })
}

/// Relay-forwarding branch; `None` where it is undefined.
fn relay_branch(nu: &DualPoint, g_sd: f64, g_rd: f64) -> Option<Phase2Ratios> {
    if nu.eta <= 0.0 || g_rd <= 0.0 {
        return None;
    }
    let denom = nu.epsilon - nu.eta * g_sd / g_rd;
    if !(denom > 0.0) {
        return None;
    }
    let source = if g_sd == 0.0 {
        0.0
    } else {
        (nu.zeta / (denom * LN_2) - 1.0 / g_sd).max(0.0)
    };
    let relay = nu.sigma / (nu.eta * LN_2) - 1.0 / g_rd - source * g_sd / g_rd;
    Some(Phase2Ratios {
        source,
        relay,
        relay_active: true,
    })
}

/// Minimizer over `[0, phase length]` of `phi(theta; sensed) / T_f - weighted_gain * theta`.
///
/// `weighted_gain` is the band's sum of dual-weighted marginal gains `f(.)`.
pub fn theta_from_marginal(
    params: &TrafficParams,
    phase: Phase,
    sensed: TrafficState,
    weighted_gain: f64,
) -> f64 {
    let len = phase.length(params.alpha);
    let (l, m) = (params.lambda, params.mu);
    let k = l + m;
    let kt = k * params.frame_duration;
    let theta = match sensed {
        TrafficState::Idle => {
            // ln(1 - k S / lambda), with ln of a non-positive argument taken as -inf
            let arg = k / l * weighted_gain;
            if arg >= 1.0 {
                len
            } else {
                -(-arg).ln_1p() / kt
            }
        }
        TrafficState::Active => {
            let arg = k / m * weighted_gain - l / m;
            if arg <= 0.0 {
                0.0
            } else {
                len + arg.ln() / kt
            }
        }
    };
    theta.clamp(0.0, len)
}

/// Phase-1 time fraction of a band given `(g_sr, g_sd)` of each of its sub-channels.
pub fn theta_phase1(
    nu: &DualPoint,
    params: &TrafficParams,
    band_gains: &[(f64, f64)],
    sensed: TrafficState,
) -> Result<f64> {
    let mut s = 0.0;
    for &(g_sr, g_sd) in band_gains {
        let r = ratio_phase1(nu, g_sr, g_sd)?;
        s += phase1_gain(nu, r, g_sr, g_sd);
    }
    Ok(theta_from_marginal(params, Phase::One, sensed, s))
}

/// Phase-2 time fraction of a band given `(g_sd, g_rd)` of each of its sub-channels.
pub fn theta_phase2(
    nu: &DualPoint,
    params: &TrafficParams,
    band_gains: &[(f64, f64)],
    sensed: TrafficState,
) -> Result<f64> {
    let mut s = 0.0;
    for &(g_sd, g_rd) in band_gains {
        let r = ratio_phase2(nu, g_sd, g_rd)?;
        s += phase2_gain(nu, r.source, r.relay, g_sd, g_rd);
    }
    Ok(theta_from_marginal(params, Phase::Two, sensed, s))
}

fn phase1_gain(nu: &DualPoint, ratio: f64, g_sr: f64, g_sd: f64) -> f64 {
    nu.sigma * f_unchecked(g_sd * ratio) + nu.zeta * f_unchecked(g_sr.max(g_sd) * ratio)
}

fn phase2_gain(nu: &DualPoint, source: f64, relay: f64, g_sd: f64, g_rd: f64) -> f64 {
    nu.zeta * f_unchecked(g_sd * source) + nu.sigma * f_unchecked(g_sd * source + g_rd * relay)
}

/// Transmission interval inside a phase: as early as possible after IDLE,
/// as late as possible after ACTIVE. Times are absolute (seconds into the frame).
pub fn access_intervals(
    theta: f64,
    phase: Phase,
    sensed: TrafficState,
    params: &TrafficParams,
) -> Result<IntervalSet> {
    let len = phase.length(params.alpha);
    if !(0.0..=len).contains(&theta) {
        return Err(Error::domain("theta", format!("{theta} outside [0, {len}]")));
    }
    if theta == 0.0 {
        return Ok(IntervalSet::empty());
    }
    let tf = params.frame_duration;
    let start = phase.start(params.alpha) * tf;
    let end = match phase {
        Phase::One => params.alpha * tf,
        Phase::Two => tf,
    };
    let d = theta * tf;
    match sensed {
        TrafficState::Idle => IntervalSet::single(start, (start + d).min(end)),
        TrafficState::Active => IntervalSet::single((end - d).max(start), end),
    }
}

/// Primal solution for one network state at a fixed dual point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    /// Phase-1 source power per unit time fraction, per sub-channel.
    pub ratio_s1: Vec<f64>,
    /// Phase-2 source power per unit time fraction, per sub-channel.
    pub ratio_s2: Vec<f64>,
    /// Phase-2 relay power per unit time fraction, per sub-channel.
    pub ratio_r: Vec<f64>,
    /// Phase-1 time fraction per band, in `[0, alpha]`.
    pub theta1: Vec<f64>,
    /// Phase-2 time fraction per band, in `[0, 1 - alpha]`.
    pub theta2: Vec<f64>,
    pub p_s1: Vec<f64>,
    pub p_s2: Vec<f64>,
    pub p_r: Vec<f64>,
    pub intervals1: Vec<IntervalSet>,
    pub intervals2: Vec<IntervalSet>,
}

impl Allocation {
    /// Builds powers from ratios and band time fractions.
    pub fn assemble(
        scenario: &Scenario,
        ratio_s1: Vec<f64>,
        ratio_s2: Vec<f64>,
        ratio_r: Vec<f64>,
        theta1: Vec<f64>,
        theta2: Vec<f64>,
        intervals1: Vec<IntervalSet>,
        intervals2: Vec<IntervalSet>,
    ) -> Self {
        let bands = &scenario.bands;
        let n = bands.n_subchannels();
        let t1 = |i: usize| theta1[bands.band_of(i)];
        let t2 = |i: usize| theta2[bands.band_of(i)];
        let p_s1 = (0..n).map(|i| ratio_s1[i] * t1(i)).collect();
        let p_s2 = (0..n).map(|i| ratio_s2[i] * t2(i)).collect();
        let p_r = (0..n).map(|i| ratio_r[i] * t2(i)).collect();
        Allocation {
            ratio_s1,
            ratio_s2,
            ratio_r,
            theta1,
            theta2,
            p_s1,
            p_s2,
            p_r,
            intervals1,
            intervals2,
        }
    }

    pub fn zero(scenario: &Scenario) -> Self {
        let n = scenario.n_subchannels();
        let m = scenario.n_bands();
        Allocation::assemble(
            scenario,
            vec![0.0; n],
            vec![0.0; n],
            vec![0.0; n],
            vec![0.0; m],
            vec![0.0; m],
            vec![IntervalSet::empty(); m],
            vec![IntervalSet::empty(); m],
        )
    }

    pub fn source_power(&self) -> f64 {
        self.p_s1.iter().sum::<f64>() + self.p_s2.iter().sum::<f64>()
    }

    pub fn relay_power(&self) -> f64 {
        self.p_r.iter().sum()
    }
}

pub(crate) fn check_dimensions(nsi: &NetworkStateInfo, scenario: &Scenario) -> Result<()> {
    if nsi.gains.len() != scenario.n_subchannels() || nsi.n_bands() != scenario.n_bands() {
        return Err(Error::Dimension(format!(
            "NSI has {} sub-channels / {} bands, scenario has {} / {}",
            nsi.gains.len(),
            nsi.n_bands(),
            scenario.n_subchannels(),
            scenario.n_bands()
        )));
    }
    Ok(())
}

/// Per-sub-channel ratios of one realization: `(ratio_s1, ratio_s2, ratio_r)`.
pub fn realization_ratios(
    nu: &DualPoint,
    nsi: &NetworkStateInfo,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let g = &nsi.gains;
    let n = g.len();
    let (mut r1, mut rs, mut rr) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        r1.push(ratio_phase1(nu, g.sr[i], g.sd[i])?);
        let p2 = ratio_phase2(nu, g.sd[i], g.rd[i])?;
        rs.push(p2.source);
        rr.push(p2.relay);
    }
    Ok((r1, rs, rr))
}

/// Lagrangian-optimal allocation for one network state.
pub fn solve_realization(
    nu: &DualPoint,
    nsi: &NetworkStateInfo,
    scenario: &Scenario,
) -> Result<Allocation> {
    check_dimensions(nsi, scenario)?;
    let params = &scenario.traffic;
    let g = &nsi.gains;
    let (r1, rs, rr) = realization_ratios(nu, nsi)?;
    let m_count = scenario.n_bands();
    let mut theta1 = Vec::with_capacity(m_count);
    let mut theta2 = Vec::with_capacity(m_count);
    let mut iv1 = Vec::with_capacity(m_count);
    let mut iv2 = Vec::with_capacity(m_count);
    for m in 0..m_count {
        let band = scenario.bands.band(m);
        let s1: f64 = band
            .iter()
            .map(|&i| phase1_gain(nu, r1[i], g.sr[i], g.sd[i]))
            .sum();
        let s2: f64 = band
            .iter()
            .map(|&i| phase2_gain(nu, rs[i], rr[i], g.sd[i], g.rd[i]))
            .sum();
        let t1 = theta_from_marginal(params, Phase::One, nsi.x[m], s1);
        let t2 = theta_from_marginal(params, Phase::Two, nsi.y[m], s2);
        iv1.push(access_intervals(t1, Phase::One, nsi.x[m], params)?);
        iv2.push(access_intervals(t2, Phase::Two, nsi.y[m], params)?);
        theta1.push(t1);
        theta2.push(t2);
    }
    Ok(Allocation::assemble(scenario, r1, rs, rr, theta1, theta2, iv1, iv2))
}

/// Per-realization rate terms `(R1 / W, R2 / W)` in bit/s/Hz.
pub fn rate_terms(alloc: &Allocation, nsi: &NetworkStateInfo, scenario: &Scenario) -> (f64, f64) {
    let g = &nsi.gains;
    let bands = &scenario.bands;
    let (mut r1, mut r2) = (0.0, 0.0);
    for i in 0..g.len() {
        let t1 = alloc.theta1[bands.band_of(i)];
        let t2 = alloc.theta2[bands.band_of(i)];
        let big = g.sr[i].max(g.sd[i]);
        let (x1, xs, xr) = (alloc.ratio_s1[i], alloc.ratio_s2[i], alloc.ratio_r[i]);
        if t1 > 0.0 {
            r1 += t1 * (x1 * big).ln_1p() / LN_2;
            r2 += t1 * (x1 * g.sd[i]).ln_1p() / LN_2;
        }
        if t2 > 0.0 {
            r1 += t2 * (xs * g.sd[i]).ln_1p() / LN_2;
            r2 += t2 * (xs * g.sd[i] + xr * g.rd[i]).ln_1p() / LN_2;
        }
    }
    (r1, r2)
}

/// Expected collision time of the allocation given the sensing outcomes (seconds per frame).
pub fn expected_collision(alloc: &Allocation, nsi: &NetworkStateInfo, params: &TrafficParams) -> f64 {
    (0..alloc.theta1.len())
        .map(|m| {
            phi_unchecked(params, Phase::One, nsi.x[m], alloc.theta1[m])
                + phi_unchecked(params, Phase::Two, nsi.y[m], alloc.theta2[m])
        })
        .sum()
}

/// Value of the per-realization Lagrangian (without the constant budget and rate-target terms).
pub fn lagrangian_value(
    nu: &DualPoint,
    alloc: &Allocation,
    nsi: &NetworkStateInfo,
    scenario: &Scenario,
) -> f64 {
    let (r1, r2) = rate_terms(alloc, nsi, scenario);
    expected_collision(alloc, nsi, &scenario.traffic) / scenario.traffic.frame_duration
        - nu.zeta * r1
        - nu.sigma * r2
        + nu.epsilon * alloc.source_power()
        + nu.eta * alloc.relay_power()
}

//! Off-line projected subgradient ascent on the dual point.
//!
//! Expectations over the network state are replaced by sample averages over a
//! Monte-Carlo set of realizations (channel gains plus sensing outcomes drawn
//! from the traffic chain). By default the same set is reused at every
//! iteration, which makes the estimated dual function deterministic and
//! concave; `fresh_samples` redraws it each time instead.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::allocator::{
    expected_collision, rate_terms, solve_realization, Allocation, DualPoint,
};
use crate::channel::{sample_gains, ChannelGains, NetworkStateInfo};
use crate::config::{DualConfig, Scenario};
use crate::error::{Error, Result};
use crate::rng::{Stream, Streams};
use crate::stats::Estimate;
use crate::traffic::{stationary_dist, transition_matrix, TrafficParams, TrafficState};

/// Floor applied to the power prices so that no ratio becomes unbounded.
pub const PRICE_FLOOR: f64 = 1e-12;

/// Sensing outcomes `(x, y)` of `n_bands` independent bands: `x` from the
/// stationary law, `y` from `P(alpha T_f)` given `x`.
pub fn sample_sensing<R: Rng + ?Sized>(
    params: &TrafficParams,
    n_bands: usize,
    rng: &mut R,
) -> (Vec<TrafficState>, Vec<TrafficState>) {
    let (_, p_active) = stationary_dist(params);
    let p = transition_matrix(params, params.alpha * params.frame_duration);
    let mut x = Vec::with_capacity(n_bands);
    let mut y = Vec::with_capacity(n_bands);
    for _ in 0..n_bands {
        let u: f64 = rng.random();
        let xm = if u < p_active {
            TrafficState::Active
        } else {
            TrafficState::Idle
        };
        let v: f64 = rng.random();
        let ym = if v < p[xm.index()][TrafficState::Active.index()] {
            TrafficState::Active
        } else {
            TrafficState::Idle
        };
        x.push(xm);
        y.push(ym);
    }
    (x, y)
}

/// Where the gains of a sample set come from.
#[derive(Debug, Clone)]
pub enum GainSource {
    /// Rayleigh fading drawn from the scenario's channel model.
    Rayleigh,
    /// The same deterministic gains in every realization.
    Fixed(ChannelGains),
    /// Gains replayed from a trace, cycling if the set is longer than the trace.
    Trace(Vec<ChannelGains>),
}

/// Whether the relay takes part in the transmission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Topology {
    Cooperative,
    /// Relay disabled: S-R and R-D gains are zeroed.
    Direct,
}

/// Monte-Carlo realizations of the network state.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    samples: Vec<NetworkStateInfo>,
}

impl SampleSet {
    /// Draws `n` realizations; sample `i` uses its own substream of block `outer`.
    pub fn draw(
        scenario: &Scenario,
        source: &GainSource,
        n: usize,
        streams: &Streams,
        outer: u64,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("n_samples", "must be >= 1"));
        }
        let check = |g: &ChannelGains| {
            if g.len() == scenario.n_subchannels() {
                Ok(())
            } else {
                Err(Error::Dimension(format!(
                    "gains cover {} sub-channels, scenario has {}",
                    g.len(),
                    scenario.n_subchannels()
                )))
            }
        };
        match source {
            GainSource::Fixed(g) => check(g)?,
            GainSource::Trace(t) => {
                if t.is_empty() {
                    return Err(Error::domain("trace", "no frames"));
                }
                t.iter().try_for_each(check)?
            }
            GainSource::Rayleigh => {}
        }
        let samples = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = streams.rng2(Stream::Mc, outer, i as u64);
                let gains = match source {
                    GainSource::Rayleigh => sample_gains(&scenario.channel, &mut rng),
                    GainSource::Fixed(g) => g.clone(),
                    GainSource::Trace(t) => t[i % t.len()].clone(),
                };
                let (x, y) = sample_sensing(&scenario.traffic, scenario.n_bands(), &mut rng);
                NetworkStateInfo::new(gains, x, y)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SampleSet { samples })
    }

    /// Draws the set and applies the topology.
    pub fn draw_for(
        scenario: &Scenario,
        source: &GainSource,
        topology: Topology,
        n: usize,
        streams: &Streams,
        outer: u64,
    ) -> Result<Self> {
        let set = Self::draw(scenario, source, n, streams, outer)?;
        Ok(match topology {
            Topology::Cooperative => set,
            Topology::Direct => set.without_relay(),
        })
    }

    pub fn from_samples(samples: Vec<NetworkStateInfo>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::domain("n_samples", "must be >= 1"));
        }
        Ok(SampleSet { samples })
    }

    pub fn samples(&self) -> &[NetworkStateInfo] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// The same realizations with the relay links removed.
    pub fn without_relay(&self) -> Self {
        SampleSet {
            samples: self.samples.iter().map(|s| s.without_relay()).collect(),
        }
    }
}

/// Per-realization terms entering the expectations.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RealizationTerms {
    /// Expected collision time given the sensing outcomes (s per frame).
    pub collision: f64,
    /// `R1 / W` (bit/s/Hz).
    pub r1: f64,
    /// `R2 / W` (bit/s/Hz).
    pub r2: f64,
    pub p_s: f64,
    pub p_r: f64,
}

pub fn terms_of(alloc: &Allocation, nsi: &NetworkStateInfo, scenario: &Scenario) -> RealizationTerms {
    let (r1, r2) = rate_terms(alloc, nsi, scenario);
    RealizationTerms {
        collision: expected_collision(alloc, nsi, &scenario.traffic),
        r1,
        r2,
        p_s: alloc.source_power(),
        p_r: alloc.relay_power(),
    }
}

pub fn realization_terms(
    nu: &DualPoint,
    nsi: &NetworkStateInfo,
    scenario: &Scenario,
) -> Result<RealizationTerms> {
    let alloc = solve_realization(nu, nsi, scenario)?;
    Ok(terms_of(&alloc, nsi, scenario))
}

/// Sample means of the expectation terms, with standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TermEstimates {
    /// Expected collision time per second of air time.
    pub collision_per_second: Estimate,
    /// `R1` (bit/s).
    pub r1: Estimate,
    /// `R2` (bit/s).
    pub r2: Estimate,
    pub p_s: Estimate,
    pub p_r: Estimate,
}

fn estimate_terms(terms: &[RealizationTerms], scenario: &Scenario) -> TermEstimates {
    let col = |f: fn(&RealizationTerms) -> f64| -> Vec<f64> { terms.iter().map(f).collect() };
    let w = scenario.bandwidth;
    TermEstimates {
        collision_per_second: Estimate::from_samples(&col(|t| t.collision))
            .scaled(1.0 / scenario.traffic.frame_duration),
        r1: Estimate::from_samples(&col(|t| t.r1)).scaled(w),
        r2: Estimate::from_samples(&col(|t| t.r2)).scaled(w),
        p_s: Estimate::from_samples(&col(|t| t.p_s)),
        p_r: Estimate::from_samples(&col(|t| t.p_r)),
    }
}

/// Sample means of rates and collision over given allocations.
pub fn evaluate_rates(
    allocs: &[Allocation],
    samples: &[NetworkStateInfo],
    scenario: &Scenario,
) -> Result<TermEstimates> {
    if allocs.len() != samples.len() {
        return Err(Error::Dimension(format!(
            "{} allocations for {} samples",
            allocs.len(),
            samples.len()
        )));
    }
    let terms: Vec<RealizationTerms> = allocs
        .iter()
        .zip(samples)
        .map(|(a, s)| terms_of(a, s, scenario))
        .collect();
    Ok(estimate_terms(&terms, scenario))
}

/// Subgradient of the dual function at a dual point, estimated by Monte Carlo.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubgradientSample {
    /// `((R_min - R1) / W, (R_min - R2) / W, E[sum P_s] - P_s_max, E[sum P_r] - P_r_max)`.
    pub h: [f64; 4],
    /// Standard errors of the entries of `h`.
    pub h_std_err: [f64; 4],
    pub terms: TermEstimates,
    /// Estimated dual function value (collision measured per second).
    pub dual_value: f64,
}

impl SubgradientSample {
    /// Largest normalized rate shortfall (bit/s/Hz), zero when both constraints hold.
    pub fn rate_violation(&self) -> f64 {
        self.h[0].max(self.h[1]).max(0.0)
    }

    /// Largest power excess relative to its budget, zero when both hold.
    pub fn power_violation(&self, scenario: &Scenario) -> f64 {
        (self.h[2] / scenario.p_s_max)
            .max(self.h[3] / scenario.p_r_max)
            .max(0.0)
    }
}

/// Estimates the subgradient on a fixed sample set.
pub fn mc_subgradient(
    nu: &DualPoint,
    scenario: &Scenario,
    samples: &SampleSet,
) -> Result<SubgradientSample> {
    let results: Vec<Result<RealizationTerms>> = samples
        .samples
        .par_iter()
        .map(|nsi| realization_terms(nu, nsi, scenario))
        .collect();
    let mut terms = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        terms.push(r.map_err(|e| e.at_sample(i))?);
    }
    Ok(subgradient_from_terms(nu, scenario, &terms))
}

/// Draws `n_samples` Rayleigh realizations from block `outer` and estimates the subgradient.
pub fn mc_subgradient_seeded(
    nu: &DualPoint,
    scenario: &Scenario,
    n_samples: usize,
    streams: &Streams,
    outer: u64,
) -> Result<SubgradientSample> {
    let set = SampleSet::draw(scenario, &GainSource::Rayleigh, n_samples, streams, outer)?;
    mc_subgradient(nu, scenario, &set)
}

fn subgradient_from_terms(
    nu: &DualPoint,
    scenario: &Scenario,
    terms: &[RealizationTerms],
) -> SubgradientSample {
    let est = estimate_terms(terms, scenario);
    let w = scenario.bandwidth;
    let r = scenario.r_min_normalized();
    let h = [
        r - est.r1.mean / w,
        r - est.r2.mean / w,
        est.p_s.mean - scenario.p_s_max,
        est.p_r.mean - scenario.p_r_max,
    ];
    let h_std_err = [
        est.r1.std_err / w,
        est.r2.std_err / w,
        est.p_s.std_err,
        est.p_r.std_err,
    ];
    let dual_value = est.collision_per_second.mean + nu.zeta * h[0] + nu.sigma * h[1]
        + nu.epsilon * h[2]
        + nu.eta * h[3];
    SubgradientSample {
        h,
        h_std_err,
        terms: est,
        dual_value,
    }
}

/// Step-size and stopping settings of the ascent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AscentSettings {
    /// Step `a / (b + t)` at iteration `t`.
    pub step_a: f64,
    pub step_b: f64,
    pub max_iter: usize,
    pub tolerance: f64,
    pub patience: usize,
    pub fresh_samples: bool,
    pub mc_samples: usize,
}

impl AscentSettings {
    pub fn from_config(dual: &DualConfig, mc_samples: usize) -> Self {
        AscentSettings {
            step_a: dual.step_a,
            step_b: dual.step_b,
            max_iter: dual.max_iter,
            tolerance: dual.tolerance,
            patience: dual.patience,
            fresh_samples: dual.fresh_samples,
            mc_samples,
        }
    }

    pub fn step(&self, t: usize) -> f64 {
        self.step_a / (self.step_b + t as f64)
    }
}

/// One row of the ascent trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub nu: DualPoint,
    pub step: f64,
    pub h: [f64; 4],
    /// Estimated collision per second at this dual point.
    pub collision: f64,
    pub dual_value: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DualTrace {
    pub rows: Vec<TraceRow>,
}

impl DualTrace {
    /// CSV with columns `iter,zeta,sigma,epsilon,eta,step,h1,h2,h3,h4,I1_est,dual_value`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = crate::table::csv_writer(out);
        w.write_record([
            "iter", "zeta", "sigma", "epsilon", "eta", "step", "h1", "h2", "h3", "h4", "I1_est",
            "dual_value",
        ])?;
        for r in &self.rows {
            let mut rec = vec![r.iter.to_string()];
            rec.extend(r.nu.as_array().iter().map(|v| v.to_string()));
            rec.push(r.step.to_string());
            rec.extend(r.h.iter().map(|v| v.to_string()));
            rec.push(r.collision.to_string());
            rec.push(r.dual_value.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Outcome of the ascent.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    /// Best iterate found (see [`optimize_dual`]).
    pub nu: DualPoint,
    /// Subgradient estimate at `nu`.
    pub at_best: SubgradientSample,
    pub best_iter: usize,
    pub trace: DualTrace,
    /// Whether the stopping rule fired before `max_iter`.
    pub converged: bool,
}

/// Initial dual point `(1, 1, 1 / P_s_max, 1 / P_r_max)`.
pub fn initial_dual(scenario: &Scenario) -> DualPoint {
    DualPoint::from_array([1.0, 1.0, 1.0 / scenario.p_s_max, 1.0 / scenario.p_r_max])
}

fn project(nu: [f64; 4]) -> DualPoint {
    DualPoint::from_array([
        nu[0].max(0.0),
        nu[1].max(0.0),
        nu[2].max(PRICE_FLOOR),
        nu[3].max(PRICE_FLOOR),
    ])
}

/// Diagonally scaled ascent direction.
///
/// Each entry of `h` is normalized by the size of its constraint (the rate
/// target or the power budget) and multiplied by the current price plus a
/// small offset, so that a unit step changes every price by a comparable
/// relative amount whatever its physical units.
fn direction(nu: &DualPoint, h: &[f64; 4], scenario: &Scenario, start: &DualPoint) -> [f64; 4] {
    let r = scenario.r_min_normalized().max(1.0);
    let size = [r, r, scenario.p_s_max, scenario.p_r_max];
    let v = nu.as_array();
    let v0 = start.as_array();
    std::array::from_fn(|i| (v[i] + OFFSET * v0[i].max(PRICE_FLOOR)) * h[i] / size[i])
}

/// Relative offset keeping zero prices movable.
const OFFSET: f64 = 1e-3;

/// Feasibility test used by the stopping rule and best-iterate selection.
fn within_tolerance(s: &SubgradientSample, scenario: &Scenario, tol: f64) -> bool {
    s.rate_violation() <= tol && s.power_violation(scenario) <= tol
}

/// Complementary slackness: every price times its constraint slack is small
/// relative to the achieved collision level.
fn slack_ok(nu: &DualPoint, s: &SubgradientSample, tol: f64) -> bool {
    let budget = tol * (s.terms.collision_per_second.mean + tol);
    nu.as_array()
        .iter()
        .zip(s.h.iter())
        .all(|(v, h)| v * h.abs() <= budget)
}

/// Projected subgradient ascent `nu <- max(nu + step h(nu), 0)`.
///
/// Stops after `patience` consecutive iterations in which both normalized
/// violations and the complementary-slackness products are within
/// `tolerance`, or after `max_iter`. Returns the iterate with the highest
/// estimated dual value among those within tolerance, or the least-violating
/// one when none is.
pub fn optimize_dual(
    scenario: &Scenario,
    settings: &AscentSettings,
    source: &GainSource,
    topology: Topology,
    streams: &Streams,
) -> Result<DualSolution> {
    optimize_dual_from(scenario, settings, source, topology, streams, initial_dual(scenario))
}

pub fn optimize_dual_from(
    scenario: &Scenario,
    settings: &AscentSettings,
    source: &GainSource,
    topology: Topology,
    streams: &Streams,
    start: DualPoint,
) -> Result<DualSolution> {
    let first = SampleSet::draw_for(scenario, source, topology, settings.mc_samples, streams, 0)?;
    ascend(scenario, settings, first, start, |t| {
        SampleSet::draw_for(scenario, source, topology, settings.mc_samples, streams, t as u64)
    })
}

/// The ascent on a caller-supplied sample set, reused at every iteration.
pub fn optimize_dual_on(
    scenario: &Scenario,
    settings: &AscentSettings,
    samples: SampleSet,
    start: DualPoint,
) -> Result<DualSolution> {
    let fixed = samples.clone();
    let settings = AscentSettings {
        fresh_samples: false,
        ..*settings
    };
    ascend(scenario, &settings, samples, start, move |_| Ok(fixed.clone()))
}

fn ascend<F: FnMut(usize) -> Result<SampleSet>>(
    scenario: &Scenario,
    settings: &AscentSettings,
    mut samples: SampleSet,
    start: DualPoint,
    mut redraw: F,
) -> Result<DualSolution> {
    if settings.max_iter == 0 {
        return Err(Error::domain("max_iter", "must be >= 1"));
    }
    let start = project(start.as_array());
    let mut nu = start;
    let mut trace = DualTrace::default();
    let mut best: Option<(usize, DualPoint, SubgradientSample)> = None;
    let mut streak = 0;
    let mut converged = false;
    let tol = settings.tolerance;
    for t in 0..settings.max_iter {
        if settings.fresh_samples && t > 0 {
            samples = redraw(t)?;
        }
        let s = mc_subgradient(&nu, scenario, &samples)?;
        let step = settings.step(t);
        trace.rows.push(TraceRow {
            iter: t,
            nu,
            step,
            h: s.h,
            collision: s.terms.collision_per_second.mean,
            dual_value: s.dual_value,
        });
        let ok = within_tolerance(&s, scenario, tol);
        let better = match &best {
            None => true,
            Some((_, _, b)) => {
                let b_ok = within_tolerance(b, scenario, tol);
                match (ok, b_ok) {
                    (true, false) => true,
                    (false, true) => false,
                    (true, true) => s.dual_value > b.dual_value,
                    (false, false) => violation(&s, scenario) < violation(b, scenario),
                }
            }
        };
        if better {
            best = Some((t, nu, s));
        }
        if ok && slack_ok(&nu, &s, tol) {
            streak += 1;
            if streak >= settings.patience.max(1) {
                converged = true;
                break;
            }
        } else {
            streak = 0;
        }
        let d = direction(&nu, &s.h, scenario, &start);
        let a = nu.as_array();
        nu = project(std::array::from_fn(|i| a[i] + step * d[i]));
    }
    let (best_iter, nu, at_best) = best.expect("at least one iteration");
    Ok(DualSolution {
        nu,
        at_best,
        best_iter,
        trace,
        converged,
    })
}

fn violation(s: &SubgradientSample, scenario: &Scenario) -> f64 {
    s.rate_violation().max(s.power_violation(scenario))
}

/// Per-unit-time-fraction sums of one realization at fixed prices: rates
/// `log2(1 + ratio g)` and power ratios summed over sub-channels, per phase.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct UnitTerms {
    r1_p1: f64,
    r1_p2: f64,
    r2_p1: f64,
    r2_p2: f64,
    s_p1: f64,
    s_p2: f64,
    relay: f64,
}

impl UnitTerms {
    fn as_array(&self) -> [f64; 7] {
        [self.r1_p1, self.r1_p2, self.r2_p1, self.r2_p2, self.s_p1, self.s_p2, self.relay]
    }
}

fn unit_terms(nu: &DualPoint, nsi: &NetworkStateInfo) -> Result<UnitTerms> {
    let (r1, rs, rr) = crate::allocator::realization_ratios(nu, nsi)?;
    let g = &nsi.gains;
    let mut u = UnitTerms::default();
    for i in 0..g.len() {
        let big = g.sr[i].max(g.sd[i]);
        u.r1_p1 += (r1[i] * big).ln_1p() / std::f64::consts::LN_2;
        u.r2_p1 += (r1[i] * g.sd[i]).ln_1p() / std::f64::consts::LN_2;
        u.r1_p2 += (rs[i] * g.sd[i]).ln_1p() / std::f64::consts::LN_2;
        u.r2_p2 += (rs[i] * g.sd[i] + rr[i] * g.rd[i]).ln_1p() / std::f64::consts::LN_2;
        u.s_p1 += r1[i];
        u.s_p2 += rs[i];
        u.relay += rr[i];
    }
    Ok(u)
}

fn mean_unit_terms(nu: &DualPoint, samples: &SampleSet) -> Result<[f64; 7]> {
    let results: Vec<Result<UnitTerms>> = samples
        .samples
        .par_iter()
        .map(|nsi| unit_terms(nu, nsi))
        .collect();
    let mut cols: [Vec<f64>; 7] = std::array::from_fn(|_| Vec::with_capacity(samples.len()));
    for (i, r) in results.into_iter().enumerate() {
        let a = r.map_err(|e| e.at_sample(i))?.as_array();
        for (c, v) in cols.iter_mut().zip(a) {
            c.push(v);
        }
    }
    Ok(std::array::from_fn(|k| Estimate::from_samples(&cols[k]).mean))
}

/// Power allocation maximizing `min(R1, R2)` when every band transmits for
/// fixed fractions `theta1` (phase 1) and `theta2` (phase 2) of every frame.
///
/// Prices take the form `(w, 1 - w, epsilon, eta)`; since the power ratios
/// depend on the prices only up to scale this covers every optimum. `w`
/// balances the two rates and `epsilon`, `eta` are driven to exhaust the
/// budgets. The remaining budget error after the iteration is removed by
/// scaling the ratios with `kappa_s`, `kappa_r` <= 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxMinSolution {
    pub nu: DualPoint,
    pub theta1: f64,
    pub theta2: f64,
    pub kappa_s: f64,
    pub kappa_r: f64,
    /// `R1 / W`, `R2 / W` on the sample set after scaling (bit/s/Hz).
    pub r1: f64,
    pub r2: f64,
    pub p_s: f64,
    pub p_r: f64,
}

impl MaxMinSolution {
    /// Achieved `min(R1, R2) / W`.
    pub fn rate(&self) -> f64 {
        self.r1.min(self.r2)
    }
}

/// Bound on `|ln(zeta / sigma)|` in the max-min solver.
const U_MAX: f64 = 60.0;

/// Rprop-style signed step with per-coordinate adaptation.
#[derive(Debug, Clone, Copy)]
struct SignStep {
    step: f64,
    last: f64,
}

impl SignStep {
    fn new(step: f64) -> Self {
        SignStep { step, last: 0.0 }
    }

    fn next(&mut self, g: f64) -> f64 {
        if g * self.last < 0.0 {
            self.step *= 0.5;
        } else if g * self.last > 0.0 {
            self.step = (self.step * 1.2).min(2.0);
        }
        self.last = g;
        g.signum() * self.step
    }
}

/// Solves the fixed-time-fraction max-min rate problem on `samples`.
///
/// `warm` seeds the prices (e.g. from a nearby `theta`).
pub fn max_min_rate(
    scenario: &Scenario,
    samples: &SampleSet,
    theta1: f64,
    theta2: f64,
    warm: Option<DualPoint>,
) -> Result<MaxMinSolution> {
    let alpha = scenario.traffic.alpha;
    if !(0.0..=alpha).contains(&theta1) || !(0.0..=1.0 - alpha).contains(&theta2) {
        return Err(Error::domain("theta", format!("({theta1}, {theta2}) outside the phases")));
    }
    let (ps, pr) = (scenario.p_s_max, scenario.p_r_max);
    let summarize = |nu: &DualPoint| -> Result<[f64; 5]> {
        let m = mean_unit_terms(nu, samples)?;
        Ok([
            theta1 * m[0] + theta2 * m[1],
            theta1 * m[2] + theta2 * m[3],
            theta1 * m[4] + theta2 * m[5],
            theta2 * m[6],
            0.0,
        ])
    };
    if theta1 == 0.0 && theta2 == 0.0 {
        return Ok(MaxMinSolution {
            nu: warm.unwrap_or(DualPoint::from_array([0.5, 0.5, 1.0 / ps, 1.0 / pr])),
            theta1,
            theta2,
            kappa_s: 1.0,
            kappa_r: 1.0,
            r1: 0.0,
            r2: 0.0,
            p_s: 0.0,
            p_r: 0.0,
        });
    }
    // rate weights as a logistic in u = ln(zeta / sigma), exact near either end
    let weights = |u: f64| {
        let e = (-u.abs()).exp();
        let (big, small) = (1.0 / (1.0 + e), e / (1.0 + e));
        if u >= 0.0 {
            (big, small)
        } else {
            (small, big)
        }
    };
    let start = warm.unwrap_or(DualPoint::from_array([0.5, 0.5, 1.0 / ps, 1.0 / pr]));
    let (mut u, mut log_e, mut log_h) = (
        (start.zeta.max(1e-300) / start.sigma.max(1e-300)).ln().clamp(-U_MAX, U_MAX),
        start.epsilon.max(PRICE_FLOOR).ln(),
        start.eta.max(PRICE_FLOOR).ln(),
    );
    let price = |u: f64, log_e: f64, log_h: f64| {
        let (z, sg) = weights(u);
        DualPoint::from_array([z, sg, log_e.exp(), log_h.exp()])
    };
    let (mut su, mut se, mut sh) = (SignStep::new(0.5), SignStep::new(0.5), SignStep::new(0.5));
    const ITER: usize = 400;
    const TOL: f64 = 1e-6;
    let mut nu = start;
    for _ in 0..ITER {
        nu = price(u, log_e, log_h);
        let [r1, r2, s, q, _] = summarize(&nu)?;
        // prices rise when the budget is overspent
        let gs = if s > 0.0 { (s / ps).ln() } else { -1.0 };
        let gr = if q > 0.0 { (q / pr).ln() } else { -1.0 };
        let total = r1 + r2;
        let gu = if total > 0.0 { (r1 - r2) / total } else { 0.0 };
        // weight is moved away from the larger rate
        let u_stuck = (u <= -U_MAX && gu > 0.0) || (u >= U_MAX && gu < 0.0);
        // a slack relay budget at the price floor is optimal
        let relay_slack = gr < 0.0 && log_h <= PRICE_FLOOR.ln();
        if gs.abs() < TOL && (gr.abs() < TOL || relay_slack) && (gu.abs() < TOL || u_stuck) {
            break;
        }
        log_e += se.next(gs);
        log_h = (log_h + sh.next(gr)).max(PRICE_FLOOR.ln());
        u = (u - su.next(gu)).clamp(-U_MAX, U_MAX);
    }
    let [_, _, s, q, _] = summarize(&nu)?;
    let kappa_s = if s > ps { ps / s } else { 1.0 };
    let kappa_r = if q > pr { pr / q } else { 1.0 };
    let (r1, r2, p_s, p_r) = scaled_rates(scenario, samples, &nu, theta1, theta2, kappa_s, kappa_r)?;
    Ok(MaxMinSolution {
        nu,
        theta1,
        theta2,
        kappa_s,
        kappa_r,
        r1,
        r2,
        p_s,
        p_r,
    })
}

/// Rates and powers of fixed fractions with the price-derived ratios scaled by `kappa`.
fn scaled_rates(
    scenario: &Scenario,
    samples: &SampleSet,
    nu: &DualPoint,
    theta1: f64,
    theta2: f64,
    kappa_s: f64,
    kappa_r: f64,
) -> Result<(f64, f64, f64, f64)> {
    let allocs: Vec<Result<Allocation>> = samples
        .samples
        .par_iter()
        .map(|nsi| fixed_fraction_allocation(nu, nsi, scenario, theta1, theta2, kappa_s, kappa_r))
        .collect();
    let mut terms = Vec::with_capacity(allocs.len());
    for (i, (a, nsi)) in allocs.into_iter().zip(&samples.samples).enumerate() {
        let a = a.map_err(|e| e.at_sample(i))?;
        terms.push(terms_of(&a, nsi, scenario));
    }
    let est = estimate_terms(&terms, scenario);
    let w = scenario.bandwidth;
    Ok((est.r1.mean / w, est.r2.mean / w, est.p_s.mean, est.p_r.mean))
}

/// Allocation using the same fractions on every band, price-derived ratios
/// scaled by `kappa_s` (source) and `kappa_r` (relay). Transmission intervals
/// are left empty; the caller places them.
pub fn fixed_fraction_allocation(
    nu: &DualPoint,
    nsi: &NetworkStateInfo,
    scenario: &Scenario,
    theta1: f64,
    theta2: f64,
    kappa_s: f64,
    kappa_r: f64,
) -> Result<Allocation> {
    crate::allocator::check_dimensions(nsi, scenario)?;
    let (r1, rs, rr) = crate::allocator::realization_ratios(nu, nsi)?;
    let m = scenario.n_bands();
    Ok(Allocation::assemble(
        scenario,
        r1.into_iter().map(|v| v * kappa_s).collect(),
        rs.into_iter().map(|v| v * kappa_s).collect(),
        rr.into_iter().map(|v| v * kappa_r).collect(),
        vec![theta1; m],
        vec![theta2; m],
        vec![crate::traffic::IntervalSet::empty(); m],
        vec![crate::traffic::IntervalSet::empty(); m],
    ))
}

/// Largest `min(R1, R2)` (bit/s) reachable on `samples` when both phases are
/// used in full on every band.
pub fn capacity(scenario: &Scenario, samples: &SampleSet) -> Result<MaxMinSolution> {
    let a = scenario.traffic.alpha;
    max_min_rate(scenario, samples, a, 1.0 - a, None)
}

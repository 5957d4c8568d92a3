//! Frame-level Monte-Carlo replay of a spectrum-sharing policy.
//!
//! Each frame draws fresh channel gains and, per band, a traffic path over
//! `[0, T_f]` started from the stationary law. Sensing is perfect: `x_m` and
//! `y_m` are read off the path at `0` and `alpha T_f`. The realized collision
//! time is the overlap between the path's ACTIVE periods and the band's
//! transmission intervals; rates use the analytic log terms.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::allocator::{rate_terms, solve_realization, Allocation, DualPoint};
use crate::channel::{sample_gains, NetworkStateInfo};
use crate::config::Scenario;
use crate::dualopt::{
    capacity, fixed_fraction_allocation, max_min_rate, optimize_dual, AscentSettings,
    DualSolution, GainSource, MaxMinSolution, SampleSet, Topology,
};
use crate::error::{Error, Result};
use crate::rng::{Stream, Streams};
use crate::stats::Estimate;
use crate::traffic::{
    collision_time, sample_stationary_path, IntervalSet, Phase, StatePath, TrafficState,
};

/// Sensing-free baseline: fixed fraction `theta` in both phases on every band,
/// placed uniformly at random in each phase, with max-min optimal powers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeHopping {
    pub theta: f64,
    /// Prices generating the power ratios.
    pub nu: DualPoint,
    /// Source and relay ratio scaling enforcing the budgets.
    pub kappa_s: f64,
    pub kappa_r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Policy {
    /// Sensing-aware closed-form policy at a dual point.
    Proposed(DualPoint),
    /// The closed-form policy with the relay switched off.
    RelayFree(DualPoint),
    TimeHopping(TimeHopping),
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Proposed(_) => "proposed",
            Policy::RelayFree(_) => "relay-free",
            Policy::TimeHopping(_) => "time-hopping",
        }
    }

    /// A policy that never transmits.
    pub fn silent() -> Self {
        Policy::TimeHopping(TimeHopping {
            theta: 0.0,
            nu: DualPoint::from_array([0.0, 0.0, 1.0, 1.0]),
            kappa_s: 1.0,
            kappa_r: 1.0,
        })
    }

    fn validate(&self, scenario: &Scenario) -> Result<()> {
        match self {
            Policy::Proposed(nu) | Policy::RelayFree(nu) => {
                DualPoint::new(nu.zeta, nu.sigma, nu.epsilon, nu.eta).map(|_| ())
            }
            Policy::TimeHopping(th) => {
                let a = scenario.traffic.alpha;
                let max = a.min(1.0 - a);
                if !(0.0..=max).contains(&th.theta) {
                    return Err(Error::domain("theta", format!("{} outside [0, {max}]", th.theta)));
                }
                if !(th.kappa_s > 0.0 && th.kappa_s <= 1.0 && th.kappa_r > 0.0 && th.kappa_r <= 1.0) {
                    return Err(Error::domain("kappa", format!("({}, {})", th.kappa_s, th.kappa_r)));
                }
                Ok(())
            }
        }
    }
}

/// Outcome of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    /// Realized collision time per band (s).
    pub band_collision: Vec<f64>,
    /// `R1 / W` and `R2 / W` contributions of the frame (bit/s/Hz).
    pub r1: f64,
    pub r2: f64,
    /// Frame-average source and relay power summed over sub-channels.
    pub p_s: f64,
    pub p_r: f64,
    pub x: Vec<TrafficState>,
    pub y: Vec<TrafficState>,
    pub theta1: Vec<f64>,
    pub theta2: Vec<f64>,
}

impl FrameResult {
    pub fn collision(&self) -> f64 {
        self.band_collision.iter().sum()
    }
}

/// Uniformly placed interval of `theta T_f` inside a phase.
pub fn time_hopping_offsets<R: Rng + ?Sized>(
    theta: f64,
    phase: Phase,
    params: &crate::traffic::TrafficParams,
    rng: &mut R,
) -> Result<IntervalSet> {
    let len = phase.length(params.alpha);
    if !(0.0..=len).contains(&theta) {
        return Err(Error::domain("theta", format!("{theta} outside [0, {len}]")));
    }
    let u: f64 = rng.random();
    if theta == 0.0 {
        return Ok(IntervalSet::empty());
    }
    let tf = params.frame_duration;
    let start = (phase.start(params.alpha) + u * (len - theta)) * tf;
    let end = if theta == len {
        (phase.start(params.alpha) + len) * tf
    } else {
        start + theta * tf
    };
    IntervalSet::single(start, end)
}

fn frame_rngs(streams: &Streams, frame: u64) -> [rand_chacha::ChaCha8Rng; 3] {
    [
        streams.rng(Stream::Channel, frame),
        streams.rng(Stream::Traffic, frame),
        streams.rng(Stream::Hopping, frame),
    ]
}

/// Draws the frame's gains and per-band traffic paths and reads off the sensing outcomes.
pub fn draw_frame(
    scenario: &Scenario,
    streams: &Streams,
    frame: u64,
) -> Result<(NetworkStateInfo, Vec<StatePath>)> {
    let [mut ch, mut tr, _] = frame_rngs(streams, frame);
    let gains = sample_gains(&scenario.channel, &mut ch);
    let params = &scenario.traffic;
    let tf = params.frame_duration;
    let paths = (0..scenario.n_bands())
        .map(|_| sample_stationary_path(params, tf, &mut tr))
        .collect::<Result<Vec<_>>>()?;
    let x = paths.iter().map(|p| p.state_at(0.0)).collect();
    let y = paths.iter().map(|p| p.state_at(params.alpha * tf)).collect();
    Ok((NetworkStateInfo::new(gains, x, y)?, paths))
}

/// Allocation a policy applies to a frame; time-hopping draws its placement from `hop`.
pub fn policy_allocation<R: Rng + ?Sized>(
    policy: &Policy,
    nsi: &NetworkStateInfo,
    scenario: &Scenario,
    hop: &mut R,
) -> Result<(Allocation, NetworkStateInfo)> {
    match policy {
        Policy::Proposed(nu) => Ok((solve_realization(nu, nsi, scenario)?, nsi.clone())),
        Policy::RelayFree(nu) => {
            let direct = nsi.without_relay();
            Ok((solve_realization(nu, &direct, scenario)?, direct))
        }
        Policy::TimeHopping(th) => {
            let mut a = fixed_fraction_allocation(
                &th.nu, nsi, scenario, th.theta, th.theta, th.kappa_s, th.kappa_r,
            )?;
            let params = &scenario.traffic;
            let i1 = time_hopping_offsets(th.theta, Phase::One, params, hop)?;
            let i2 = time_hopping_offsets(th.theta, Phase::Two, params, hop)?;
            let m = scenario.n_bands();
            a.intervals1 = vec![i1; m];
            a.intervals2 = vec![i2; m];
            Ok((a, nsi.clone()))
        }
    }
}

/// Applies an allocation to realized traffic paths.
pub fn frame_outcome(
    alloc: &Allocation,
    nsi: &NetworkStateInfo,
    paths: &[StatePath],
    scenario: &Scenario,
) -> Result<FrameResult> {
    if paths.len() != scenario.n_bands() {
        return Err(Error::Dimension(format!(
            "{} traffic paths for {} bands",
            paths.len(),
            scenario.n_bands()
        )));
    }
    let band_collision = paths
        .iter()
        .enumerate()
        .map(|(m, p)| {
            let tx = alloc.intervals1[m].concat(&alloc.intervals2[m])?;
            collision_time(p, &tx)
        })
        .collect::<Result<Vec<_>>>()?;
    let (r1, r2) = rate_terms(alloc, nsi, scenario);
    Ok(FrameResult {
        band_collision,
        r1,
        r2,
        p_s: alloc.source_power(),
        p_r: alloc.relay_power(),
        x: nsi.x.clone(),
        y: nsi.y.clone(),
        theta1: alloc.theta1.clone(),
        theta2: alloc.theta2.clone(),
    })
}

/// Runs one frame of `policy` on the given state and paths.
pub fn run_frame<R: Rng + ?Sized>(
    policy: &Policy,
    nsi: &NetworkStateInfo,
    paths: &[StatePath],
    scenario: &Scenario,
    hop: &mut R,
) -> Result<FrameResult> {
    let (alloc, seen) = policy_allocation(policy, nsi, scenario, hop)?;
    frame_outcome(&alloc, &seen, paths, scenario)
}

/// Averages over a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub n_frames: usize,
    pub collision_per_second: Estimate,
    /// `R1` and `R2` (bit/s).
    pub r1: Estimate,
    pub r2: Estimate,
    pub p_s: Estimate,
    pub p_r: Estimate,
}

impl RunSummary {
    /// `min(R1, R2)` with the standard error of the smaller term (bit/s).
    pub fn achieved_rate(&self) -> Estimate {
        if self.r1.mean <= self.r2.mean {
            self.r1
        } else {
            self.r2
        }
    }

    pub fn from_frames(frames: &[FrameResult], scenario: &Scenario) -> Self {
        let col = |f: &dyn Fn(&FrameResult) -> f64| -> Vec<f64> { frames.iter().map(f).collect() };
        let w = scenario.bandwidth;
        RunSummary {
            n_frames: frames.len(),
            collision_per_second: Estimate::from_samples(&col(&|f| f.collision()))
                .scaled(1.0 / scenario.traffic.frame_duration),
            r1: Estimate::from_samples(&col(&|f| f.r1)).scaled(w),
            r2: Estimate::from_samples(&col(&|f| f.r2)).scaled(w),
            p_s: Estimate::from_samples(&col(&|f| f.p_s)),
            p_r: Estimate::from_samples(&col(&|f| f.p_r)),
        }
    }
}

impl RunSummary {
    /// One-row CSV: estimates with standard errors, achieved rate and its efficiency.
    pub fn write_csv<W: Write>(&self, out: W, policy: &str, scenario: &Scenario) -> Result<()> {
        let mut w = crate::table::csv_writer(out);
        w.write_record([
            "policy",
            "n_frames",
            "collision_per_second",
            "collision_se",
            "r1",
            "r1_se",
            "r2",
            "r2_se",
            "achieved_rate",
            "achieved_rate_se",
            "efficiency",
            "p_s",
            "p_s_se",
            "p_r",
            "p_r_se",
        ])?;
        let rate = self.achieved_rate();
        let mut rec = vec![policy.to_string(), self.n_frames.to_string()];
        for e in [self.collision_per_second, self.r1, self.r2, rate] {
            rec.push(e.mean.to_string());
            rec.push(e.std_err.to_string());
        }
        rec.push(scenario.efficiency(rate.mean).to_string());
        for e in [self.p_s, self.p_r] {
            rec.push(e.mean.to_string());
            rec.push(e.std_err.to_string());
        }
        w.write_record(&rec)?;
        w.flush()?;
        Ok(())
    }
}

/// Simulates `n_frames` frames; frame `l` uses substreams indexed by `l`, so
/// the result does not depend on the thread count.
pub fn run_policy_frames(
    policy: &Policy,
    scenario: &Scenario,
    n_frames: usize,
    streams: &Streams,
) -> Result<Vec<FrameResult>> {
    if n_frames == 0 {
        return Err(Error::domain("n_frames", "must be >= 1"));
    }
    policy.validate(scenario)?;
    let results: Vec<Result<FrameResult>> = (0..n_frames as u64)
        .into_par_iter()
        .map(|l| {
            let (nsi, paths) = draw_frame(scenario, streams, l)?;
            let mut hop = streams.rng(Stream::Hopping, l);
            run_frame(policy, &nsi, &paths, scenario, &mut hop)
        })
        .collect();
    let mut frames = Vec::with_capacity(n_frames);
    for (i, r) in results.into_iter().enumerate() {
        frames.push(r.map_err(|e| e.at_sample(i))?);
    }
    Ok(frames)
}

pub fn run_policy(
    policy: &Policy,
    scenario: &Scenario,
    n_frames: usize,
    streams: &Streams,
) -> Result<RunSummary> {
    let frames = run_policy_frames(policy, scenario, n_frames, streams)?;
    Ok(RunSummary::from_frames(&frames, scenario))
}

/// Per-frame CSV: one row per (frame, band), with frame-level rate and power
/// terms repeated on every band row.
pub fn write_frames_csv<W: Write>(out: W, frames: &[FrameResult], scenario: &Scenario) -> Result<()> {
    let mut w = crate::table::csv_writer(out);
    w.write_record([
        "frame", "band", "x", "y", "theta1", "theta2", "collision", "r1_term", "r2_term", "e_s",
        "e_r",
    ])?;
    let tf = scenario.traffic.frame_duration;
    for (l, f) in frames.iter().enumerate() {
        for m in 0..f.band_collision.len() {
            w.write_record([
                l.to_string(),
                m.to_string(),
                f.x[m].index().to_string(),
                f.y[m].index().to_string(),
                f.theta1[m].to_string(),
                f.theta2[m].to_string(),
                f.band_collision[m].to_string(),
                f.r1.to_string(),
                f.r2.to_string(),
                (f.p_s * tf).to_string(),
                (f.p_r * tf).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Result of fitting a policy to a rate target.
#[derive(Debug, Clone, PartialEq)]
pub enum Calibration {
    Feasible {
        policy: Policy,
        /// Ascent details for the dual-based policies.
        dual: Option<Box<DualSolution>>,
    },
    /// The target exceeds what the policy family can reach.
    Infeasible {
        /// Largest `min(R1, R2)` reachable by the family (bit/s).
        capacity: f64,
        reason: String,
    },
}

impl Calibration {
    pub fn policy(&self) -> Option<&Policy> {
        match self {
            Calibration::Feasible { policy, .. } => Some(policy),
            Calibration::Infeasible { .. } => None,
        }
    }
}

/// Which policy family to calibrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    Proposed,
    RelayFree,
    TimeHopping,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Proposed, Family::RelayFree, Family::TimeHopping];

    pub fn name(self) -> &'static str {
        match self {
            Family::Proposed => "proposed",
            Family::RelayFree => "relay-free",
            Family::TimeHopping => "time-hopping",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Parse {
                kind: "policy",
                detail: format!("{s:?}; expected proposed, relay-free or time-hopping"),
            })
    }

    fn topology(self) -> Topology {
        match self {
            Family::RelayFree => Topology::Direct,
            _ => Topology::Cooperative,
        }
    }
}

/// Fits a policy of `family` to the scenario's `r_min`.
///
/// The dual-based families first compare the target with the family's
/// capacity on the sample set (full phases, max-min optimal powers) and then
/// run the ascent; a run that ends outside tolerance is reported infeasible.
/// Time-hopping bisects `theta` for the smallest fraction whose max-min rate
/// reaches the target.
pub fn calibrate_baseline(
    family: Family,
    scenario: &Scenario,
    settings: &AscentSettings,
    streams: &Streams,
) -> Result<Calibration> {
    let samples = SampleSet::draw_for(
        scenario,
        &GainSource::Rayleigh,
        family.topology(),
        settings.mc_samples,
        streams,
        0,
    )?;
    let target = scenario.r_min_normalized();
    let cap = capacity(scenario, &samples)?;
    let cap_rate = cap.rate() * scenario.bandwidth;
    if target == 0.0 {
        let policy = match family {
            Family::TimeHopping => Policy::silent(),
            Family::Proposed => Policy::Proposed(DualPoint::from_array([0.0, 0.0, 1.0, 1.0])),
            Family::RelayFree => Policy::RelayFree(DualPoint::from_array([0.0, 0.0, 1.0, 1.0])),
        };
        return Ok(Calibration::Feasible { policy, dual: None });
    }
    if target >= cap.rate() {
        return Ok(Calibration::Infeasible {
            capacity: cap_rate,
            reason: format!(
                "r_min = {:.6e} bit/s exceeds the {} capacity {:.6e} bit/s",
                scenario.r_min,
                family.name(),
                cap_rate
            ),
        });
    }
    match family {
        Family::Proposed | Family::RelayFree => {
            let sol = optimize_dual(scenario, settings, &GainSource::Rayleigh, family.topology(), streams)?;
            let s = &sol.at_best;
            let tol = settings.tolerance;
            if s.rate_violation() > tol || s.power_violation(scenario) > tol {
                return Ok(Calibration::Infeasible {
                    capacity: cap_rate,
                    reason: format!(
                        "ascent ended with rate violation {:.3e} and power violation {:.3e}",
                        s.rate_violation(),
                        s.power_violation(scenario)
                    ),
                });
            }
            let policy = if family == Family::Proposed {
                Policy::Proposed(sol.nu)
            } else {
                Policy::RelayFree(sol.nu)
            };
            Ok(Calibration::Feasible {
                policy,
                dual: Some(Box::new(sol)),
            })
        }
        Family::TimeHopping => {
            let th = calibrate_time_hopping(scenario, &samples, target)?;
            match th {
                Some(m) => Ok(Calibration::Feasible {
                    policy: Policy::TimeHopping(TimeHopping {
                        theta: m.theta1,
                        nu: m.nu,
                        kappa_s: m.kappa_s,
                        kappa_r: m.kappa_r,
                    }),
                    dual: None,
                }),
                None => {
                    let a = scenario.traffic.alpha;
                    let full = max_min_rate(scenario, &samples, a.min(1.0 - a), a.min(1.0 - a), None)?;
                    Ok(Calibration::Infeasible {
                        capacity: full.rate() * scenario.bandwidth,
                        reason: "target above the time-hopping capacity".into(),
                    })
                }
            }
        }
    }
}

/// Smallest common fraction whose max-min rate reaches `target` (bit/s/Hz).
fn calibrate_time_hopping(
    scenario: &Scenario,
    samples: &SampleSet,
    target: f64,
) -> Result<Option<MaxMinSolution>> {
    let a = scenario.traffic.alpha;
    let max = a.min(1.0 - a);
    let full = max_min_rate(scenario, samples, max, max, None)?;
    if full.rate() < target {
        return Ok(None);
    }
    let (mut lo, mut hi) = (0.0, max);
    let mut best = full;
    let mut warm = Some(full.nu);
    // rate is increasing in theta; stop at 1e-4 relative width
    while hi - lo > 1e-4 * max {
        let mid = 0.5 * (lo + hi);
        let m = max_min_rate(scenario, samples, mid, mid, warm)?;
        warm = Some(m.nu);
        if m.rate() >= target {
            hi = mid;
            best = m;
        } else {
            lo = mid;
        }
    }
    Ok(Some(best))
}

/// Paired comparison of edge placement against alternatives on the same frames.
///
/// Time fractions come from the proposed policy at `nu`; alternative `s`
/// places each interval at offset `s (len - theta)` into its phase regardless
/// of the sensing outcome. Returns, per alternative, the mean and standard
/// error of `(alternative - edge)` collision time per frame (s).
pub fn placement_study(
    nu: &DualPoint,
    scenario: &Scenario,
    n_frames: usize,
    offsets: &[f64],
    streams: &Streams,
) -> Result<Vec<Estimate>> {
    if n_frames == 0 {
        return Err(Error::domain("n_frames", "must be >= 1"));
    }
    if let Some(s) = offsets.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::domain("offset", format!("{s} outside [0, 1]")));
    }
    let params = &scenario.traffic;
    let tf = params.frame_duration;
    let rows: Vec<Result<Vec<f64>>> = (0..n_frames as u64)
        .into_par_iter()
        .map(|l| {
            let (nsi, paths) = draw_frame(scenario, streams, l)?;
            let alloc = solve_realization(nu, &nsi, scenario)?;
            let mut base = 0.0;
            for (m, p) in paths.iter().enumerate() {
                base += collision_time(p, &alloc.intervals1[m].concat(&alloc.intervals2[m])?)?;
            }
            offsets
                .iter()
                .map(|&s| {
                    let mut total = 0.0;
                    for (m, p) in paths.iter().enumerate() {
                        let place = |phase: Phase, theta: f64| -> Result<IntervalSet> {
                            if theta == 0.0 {
                                return Ok(IntervalSet::empty());
                            }
                            let len = phase.length(params.alpha);
                            let start = (phase.start(params.alpha) + s * (len - theta)) * tf;
                            let phase_end = (phase.start(params.alpha) + len) * tf;
                            IntervalSet::single(start, (start + theta * tf).min(phase_end))
                        };
                        let tx = place(Phase::One, alloc.theta1[m])?
                            .concat(&place(Phase::Two, alloc.theta2[m])?)?;
                        total += collision_time(p, &tx)?;
                    }
                    Ok(total - base)
                })
                .collect()
        })
        .collect();
    let mut cols = vec![Vec::with_capacity(n_frames); offsets.len()];
    for (i, r) in rows.into_iter().enumerate() {
        for (c, v) in cols.iter_mut().zip(r.map_err(|e| e.at_sample(i))?) {
            c.push(v);
        }
    }
    Ok(cols.iter().map(|c| Estimate::from_samples(c)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ScenarioConfig;
    use crate::dualopt::mc_subgradient;
    use proptest::prelude::*;

    fn scenario() -> Scenario {
        Scenario::from_config(&ScenarioConfig::default().with_r_min(8e6)).unwrap()
    }

    fn nu() -> DualPoint {
        DualPoint::new(0.02, 0.05, 0.5, 0.3).unwrap()
    }

    fn pool(n: usize) -> rayon::ThreadPool {
        rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap()
    }

    #[test]
    fn silent_policy_never_collides() {
        let sc = scenario();
        let s = run_policy(&Policy::silent(), &sc, 200, &Streams::new(1)).unwrap();
        assert_eq!(s.collision_per_second.mean, 0.0);
        assert_eq!(s.achieved_rate().mean, 0.0);
        assert_eq!(s.p_s.mean, 0.0);
    }

    #[test]
    fn frames_do_not_depend_on_thread_count() {
        let sc = scenario();
        let st = Streams::new(11);
        for p in [Policy::Proposed(nu()), Policy::RelayFree(nu())] {
            let one = pool(1).install(|| run_policy_frames(&p, &sc, 300, &st)).unwrap();
            let four = pool(4).install(|| run_policy_frames(&p, &sc, 300, &st)).unwrap();
            assert_eq!(one, four);
        }
    }

    #[test]
    fn sensing_is_read_off_the_paths() {
        let sc = scenario();
        let st = Streams::new(5);
        for l in 0..50 {
            let (nsi, paths) = draw_frame(&sc, &st, l).unwrap();
            for (m, p) in paths.iter().enumerate() {
                assert_eq!(nsi.x[m], p.state_at(0.0));
                assert_eq!(nsi.y[m], p.state_at(sc.traffic.alpha * sc.traffic.frame_duration));
            }
        }
    }

    #[test]
    fn relay_free_frames_use_no_relay_power() {
        let sc = scenario();
        let frames = run_policy_frames(&Policy::RelayFree(nu()), &sc, 200, &Streams::new(2)).unwrap();
        assert!(frames.iter().all(|f| f.p_r == 0.0));
    }

    #[test]
    fn simulated_collision_matches_the_conditional_expectation() {
        let sc = scenario();
        let st = Streams::new(8);
        let n = 20_000;
        let frames = run_policy_frames(&Policy::Proposed(nu()), &sc, n, &st).unwrap();
        let sim = RunSummary::from_frames(&frames, &sc);
        // analytic expectation on the very same network states
        let states: Vec<NetworkStateInfo> = (0..n as u64).map(|l| draw_frame(&sc, &st, l).unwrap().0).collect();
        let analytic = mc_subgradient(&nu(), &sc, &SampleSet::from_samples(states).unwrap()).unwrap();
        let a = analytic.terms.collision_per_second;
        let se = (sim.collision_per_second.std_err.powi(2) + a.std_err.powi(2)).sqrt();
        assert!((sim.collision_per_second.mean - a.mean).abs() < 4.0 * se);
        // rates and powers are the same deterministic functions of the state
        assert!((sim.r1.mean - analytic.terms.r1.mean).abs() < 1e-6 * sim.r1.mean);
    }

    #[test]
    fn edge_placement_beats_fixed_offsets() {
        let sc = scenario();
        let diffs = placement_study(&nu(), &sc, 4_000, &[0.0, 0.25, 0.5, 1.0], &Streams::new(3)).unwrap();
        for d in &diffs {
            assert!(d.mean > -3.0 * d.std_err, "{d:?}");
        }
        // the mid placement is clearly worse
        assert!(diffs[2].mean > 3.0 * diffs[2].std_err);
        assert!(placement_study(&nu(), &sc, 10, &[1.5], &Streams::new(3)).is_err());
    }

    #[test]
    fn policy_validation() {
        let sc = scenario();
        let bad = Policy::TimeHopping(TimeHopping {
            theta: 0.7,
            nu: nu(),
            kappa_s: 1.0,
            kappa_r: 1.0,
        });
        assert!(run_policy(&bad, &sc, 10, &Streams::new(1)).is_err());
        assert!(run_policy(&Policy::silent(), &sc, 0, &Streams::new(1)).is_err());
    }

    #[test]
    fn family_names_round_trip() {
        for f in Family::ALL {
            assert_eq!(Family::parse(f.name()).unwrap(), f);
        }
        assert!(Family::parse("oracle").is_err());
    }

    #[test]
    fn unreachable_targets_are_infeasible() {
        let mut cfg = ScenarioConfig::default().with_r_min(500e6);
        cfg.simulation.mc_samples = 200;
        let sc = Scenario::from_config(&cfg).unwrap();
        let settings = AscentSettings::from_config(&cfg.dual, cfg.simulation.mc_samples);
        for f in Family::ALL {
            let c = calibrate_baseline(f, &sc, &settings, &Streams::new(1)).unwrap();
            assert!(matches!(c, Calibration::Infeasible { .. }), "{f:?}");
        }
    }

    #[test]
    fn time_hopping_calibration_meets_the_target() {
        let mut cfg = ScenarioConfig::default().with_r_min(8e6);
        cfg.simulation.mc_samples = 500;
        let sc = Scenario::from_config(&cfg).unwrap();
        let settings = AscentSettings::from_config(&cfg.dual, cfg.simulation.mc_samples);
        let c = calibrate_baseline(Family::TimeHopping, &sc, &settings, &Streams::new(1)).unwrap();
        let Some(Policy::TimeHopping(th)) = c.policy() else {
            panic!("{c:?}")
        };
        assert!(th.theta > 0.0 && th.theta < 0.5);
        let s = run_policy(c.policy().unwrap(), &sc, 5_000, &Streams::new(2)).unwrap();
        assert!(s.p_s.mean <= sc.p_s_max * 1.05);
        assert!((s.achieved_rate().mean - 8e6).abs() < 0.05 * 8e6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn hopping_interval_stays_in_its_phase(theta_frac in 0.0f64..=1.0, seed in 0u64..1000, two in any::<bool>()) {
            let sc = scenario();
            let p = &sc.traffic;
            let phase = if two { Phase::Two } else { Phase::One };
            let theta = theta_frac * phase.length(p.alpha);
            let mut rng = Streams::new(seed).rng(Stream::Hopping, 0);
            let iv = time_hopping_offsets(theta, phase, p, &mut rng).unwrap();
            let tf = p.frame_duration;
            let lo = phase.start(p.alpha) * tf;
            let hi = (phase.start(p.alpha) + phase.length(p.alpha)) * tf;
            prop_assert!(iv.lies_within(lo - 1e-15, hi + 1e-15));
            prop_assert!((iv.measure() - theta * tf).abs() < 1e-12);
        }
    }
}

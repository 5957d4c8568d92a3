//! Two-state continuous-time Markov model of ad-hoc band occupancy.
//!
//! State 0 is IDLE and state 1 is ACTIVE. The chain leaves IDLE at rate
//! `lambda` and leaves ACTIVE at rate `mu`, so the transition matrix is
//!
//! ```text
//!              1     | mu + lambda e^{-kt}   lambda - lambda e^{-kt} |
//! P(t) =  ---------- |                                               |,  k = lambda + mu
//!          lambda+mu | mu - mu e^{-kt}       lambda + mu e^{-kt}     |
//! ```
//!
//! and the stationary ACTIVE probability is `lambda / (lambda + mu)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::exponential;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrafficState {
    Idle,
    Active,
}

impl TrafficState {
    pub fn index(self) -> usize {
        match self {
            TrafficState::Idle => 0,
            TrafficState::Active => 1,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(TrafficState::Idle),
            1 => Ok(TrafficState::Active),
            _ => Err(Error::domain("traffic state", format!("{i} is not 0 or 1"))),
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            TrafficState::Idle => TrafficState::Active,
            TrafficState::Active => TrafficState::Idle,
        }
    }

    pub fn is_active(self) -> bool {
        self == TrafficState::Active
    }
}

/// Phase of a relay frame: Phase 1 covers `[0, alpha T_f]`, Phase 2 covers `[alpha T_f, T_f]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    One,
    Two,
}

impl Phase {
    pub const BOTH: [Phase; 2] = [Phase::One, Phase::Two];

    /// Phase start as a fraction of the frame.
    pub fn start(self, alpha: f64) -> f64 {
        match self {
            Phase::One => 0.0,
            Phase::Two => alpha,
        }
    }

    /// Phase length as a fraction of the frame.
    pub fn length(self, alpha: f64) -> f64 {
        match self {
            Phase::One => alpha,
            Phase::Two => 1.0 - alpha,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficParams {
    /// Rate of leaving IDLE (1/s).
    pub lambda: f64,
    /// Rate of leaving ACTIVE (1/s).
    pub mu: f64,
    /// Frame duration `T_f` (s).
    pub frame_duration: f64,
    /// Phase split `alpha`.
    pub alpha: f64,
}

impl TrafficParams {
    pub fn new(lambda: f64, mu: f64, frame_duration: f64, alpha: f64) -> Result<Self> {
        let p = TrafficParams {
            lambda,
            mu,
            frame_duration,
            alpha,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.lambda) {
            return Err(Error::domain("lambda", format!("{} must be > 0", self.lambda)));
        }
        if !positive(self.mu) {
            return Err(Error::domain("mu", format!("{} must be > 0", self.mu)));
        }
        if !positive(self.frame_duration) {
            return Err(Error::domain(
                "frame_duration",
                format!("{} must be > 0", self.frame_duration),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::domain("alpha", format!("{} not in (0, 1)", self.alpha)));
        }
        Ok(())
    }

    /// `lambda + mu`.
    pub fn total_rate(&self) -> f64 {
        self.lambda + self.mu
    }

    fn exit_rate(&self, s: TrafficState) -> f64 {
        match s {
            TrafficState::Idle => self.lambda,
            TrafficState::Active => self.mu,
        }
    }
}

/// Entry `(from, to)` of `P(elapsed)`.
pub fn transition_prob(
    params: &TrafficParams,
    from: TrafficState,
    to: TrafficState,
    elapsed: f64,
) -> Result<f64> {
    if !(elapsed >= 0.0) {
        return Err(Error::domain("elapsed", format!("{elapsed} is negative")));
    }
    Ok(transition_matrix(params, elapsed)[from.index()][to.index()])
}

/// Full `P(t)` for `t >= 0`, indexed `[from][to]`.
pub fn transition_matrix(params: &TrafficParams, t: f64) -> [[f64; 2]; 2] {
    let (l, m) = (params.lambda, params.mu);
    let k = l + m;
    // 1 - e^{-kt}, accurate for small kt
    let decay = -(-k * t).exp_m1();
    let to_active_from_idle = l / k * decay;
    let to_idle_from_active = m / k * decay;
    [
        [1.0 - to_active_from_idle, to_active_from_idle],
        [to_idle_from_active, 1.0 - to_idle_from_active],
    ]
}

/// `(p_idle, p_active)` of the stationary law.
pub fn stationary_dist(params: &TrafficParams) -> (f64, f64) {
    let k = params.total_rate();
    (params.mu / k, params.lambda / k)
}

/// Expected collision time inside a phase when the CRN occupies a single
/// interval of `theta * T_f` placed as early as possible after an IDLE sensing
/// result, or as late as possible after an ACTIVE one.
///
/// Returns time in the units of `frame_duration`.
pub fn phi_collision(
    params: &TrafficParams,
    phase: Phase,
    sensed: TrafficState,
    theta: f64,
) -> Result<f64> {
    let len = phase.length(params.alpha);
    if !(0.0..=len).contains(&theta) {
        return Err(Error::domain(
            "theta",
            format!("{theta} outside [0, {len}] for {phase:?}"),
        ));
    }
    Ok(phi_unchecked(params, phase, sensed, theta))
}

pub(crate) fn phi_unchecked(
    params: &TrafficParams,
    phase: Phase,
    sensed: TrafficState,
    theta: f64,
) -> f64 {
    let (l, m, tf) = (params.lambda, params.mu, params.frame_duration);
    let k = l + m;
    let x = k * theta * tf;
    match sensed {
        // (lambda/k^2) (x - 1 + e^{-x})
        TrafficState::Idle => l / (k * k) * x_minus_one_minus_expm(x),
        TrafficState::Active => {
            let len = phase.length(params.alpha);
            // e^{-k(len-theta)T} - e^{-k len T}, written to avoid overflow for large kT
            let tail = (-k * (len - theta) * tf).exp() * -(-x).exp_m1();
            l / k * theta * tf + m / (k * k) * tail
        }
    }
}

/// `x - 1 + e^{-x}` without cancellation near zero.
fn x_minus_one_minus_expm(x: f64) -> f64 {
    if x < 1e-2 {
        let x2 = x * x;
        x2 * (0.5 - x / 6.0 + x2 / 24.0 - x2 * x / 120.0 + x2 * x2 / 720.0)
    } else {
        x + (-x).exp_m1()
    }
}

/// Ordered, pairwise disjoint closed intervals (time).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IntervalSet {
    intervals: Vec<(f64, f64)>,
}

impl IntervalSet {
    pub fn empty() -> Self {
        IntervalSet::default()
    }

    /// A single interval `[start, end]`; empty when `end == start`.
    pub fn single(start: f64, end: f64) -> Result<Self> {
        IntervalSet::new(vec![(start, end)])
    }

    /// Validates ordering and disjointness. Degenerate zero-length intervals are dropped.
    pub fn new(intervals: Vec<(f64, f64)>) -> Result<Self> {
        let mut out: Vec<(f64, f64)> = Vec::with_capacity(intervals.len());
        for (a, b) in intervals {
            if !(a.is_finite() && b.is_finite() && b >= a) {
                return Err(Error::domain("interval", format!("[{a}, {b}] is not ordered")));
            }
            if b == a {
                continue;
            }
            if let Some(&(_, prev_end)) = out.last() {
                if a < prev_end {
                    return Err(Error::domain(
                        "interval",
                        format!("[{a}, {b}] overlaps or precedes an earlier interval"),
                    ));
                }
            }
            out.push((a, b));
        }
        Ok(IntervalSet { intervals: out })
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    /// Lebesgue measure.
    pub fn measure(&self) -> f64 {
        self.intervals.iter().map(|(a, b)| b - a).sum()
    }

    pub fn lies_within(&self, lo: f64, hi: f64) -> bool {
        self.intervals.iter().all(|&(a, b)| a >= lo && b <= hi)
    }

    /// Union with a set that lies entirely after this one.
    pub fn concat(&self, later: &IntervalSet) -> Result<Self> {
        let mut v = self.intervals.clone();
        v.extend_from_slice(&later.intervals);
        IntervalSet::new(v)
    }
}

/// Right-continuous piecewise-constant occupancy path on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePath {
    initial: TrafficState,
    horizon: f64,
    switches: Vec<f64>,
}

impl StatePath {
    pub fn constant(state: TrafficState, horizon: f64) -> Self {
        StatePath {
            initial: state,
            horizon,
            switches: Vec::new(),
        }
    }

    /// Path starting in `initial` that flips state at every time in `switches`.
    pub fn from_switches(initial: TrafficState, horizon: f64, switches: Vec<f64>) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::domain("horizon", format!("{horizon} must be > 0")));
        }
        let ordered = switches.windows(2).all(|w| w[0] < w[1]);
        let inside = switches.iter().all(|&t| t > 0.0 && t < horizon);
        if !ordered || !inside {
            return Err(Error::domain("switches", "must increase strictly inside (0, horizon)"));
        }
        Ok(StatePath {
            initial,
            horizon,
            switches,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn initial(&self) -> TrafficState {
        self.initial
    }

    pub fn switches(&self) -> &[f64] {
        &self.switches
    }

    pub fn state_at(&self, t: f64) -> TrafficState {
        let flips = self.switches.partition_point(|&s| s <= t);
        if flips % 2 == 0 {
            self.initial
        } else {
            self.initial.flipped()
        }
    }

    /// `(t_start, t_end, state)` segments covering `[0, horizon]`.
    pub fn segments(&self) -> impl Iterator<Item = (f64, f64, TrafficState)> + '_ {
        let starts = std::iter::once(0.0).chain(self.switches.iter().copied());
        let ends = self
            .switches
            .iter()
            .copied()
            .chain(std::iter::once(self.horizon));
        starts.zip(ends).enumerate().map(move |(i, (a, b))| {
            let s = if i % 2 == 0 {
                self.initial
            } else {
                self.initial.flipped()
            };
            (a, b, s)
        })
    }

    /// Measure of ACTIVE time inside `[a, b]`.
    fn active_time_in(&self, a: f64, b: f64) -> f64 {
        // index of the segment containing a
        let mut i = self.switches.partition_point(|&s| s <= a);
        let mut state = if i % 2 == 0 {
            self.initial
        } else {
            self.initial.flipped()
        };
        let mut t = a;
        let mut total = 0.0;
        while t < b {
            let seg_end = self.switches.get(i).copied().unwrap_or(self.horizon).min(b);
            if state.is_active() {
                total += seg_end - t;
            }
            t = seg_end;
            i += 1;
            state = state.flipped();
        }
        total
    }
}

/// Samples a path with IDLE holding times `Exp(lambda)` and ACTIVE holding times `Exp(mu)`.
pub fn sample_trajectory<R: Rng + ?Sized>(
    params: &TrafficParams,
    initial: TrafficState,
    horizon: f64,
    rng: &mut R,
) -> Result<StatePath> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::domain("horizon", format!("{horizon} must be > 0")));
    }
    let mut switches = Vec::new();
    let mut state = initial;
    let mut t = 0.0;
    loop {
        t += exponential(rng, params.exit_rate(state));
        if t >= horizon {
            break;
        }
        switches.push(t);
        state = state.flipped();
    }
    Ok(StatePath {
        initial,
        horizon,
        switches,
    })
}

/// Draws the initial state from the stationary law, then samples the path.
pub fn sample_stationary_path<R: Rng + ?Sized>(
    params: &TrafficParams,
    horizon: f64,
    rng: &mut R,
) -> Result<StatePath> {
    let (_, p_active) = stationary_dist(params);
    let u: f64 = rng.random();
    let initial = if u < p_active {
        TrafficState::Active
    } else {
        TrafficState::Idle
    };
    sample_trajectory(params, initial, horizon, rng)
}

/// Time during which `path` is ACTIVE while the CRN transmits over `tx`.
pub fn collision_time(path: &StatePath, tx: &IntervalSet) -> Result<f64> {
    let mut total = 0.0;
    for &(a, b) in tx.intervals() {
        if a < 0.0 || b > path.horizon {
            return Err(Error::domain(
                "interval",
                format!("[{a}, {b}] exceeds path horizon {}", path.horizon),
            ));
        }
        total += path.active_time_in(a, b);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Stream, Streams};
    use proptest::prelude::*;

    fn unit() -> TrafficParams {
        TrafficParams::new(1.0, 1.0, 1.0, 0.5).unwrap()
    }

    #[test]
    fn identity_at_zero() {
        let p = TrafficParams::new(0.3, 2.0, 1.0, 0.5).unwrap();
        for s in [TrafficState::Idle, TrafficState::Active] {
            assert_eq!(transition_prob(&p, s, s, 0.0).unwrap(), 1.0);
        }
    }

    #[test]
    fn long_run_limit_is_stationary() {
        let p = unit();
        let v = transition_prob(&p, TrafficState::Idle, TrafficState::Active, 1e3).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
        let q = TrafficParams::new(2.0, 1.0, 1.0, 0.5).unwrap();
        let row = transition_matrix(&q, 50.0 / 3.0);
        let (pi0, pi1) = stationary_dist(&q);
        for from in 0..2 {
            assert!((row[from][0] - pi0).abs() < 1e-9);
            assert!((row[from][1] - pi1).abs() < 1e-9);
        }
    }

    #[test]
    fn quarter_occupancy_time() {
        // 0.34657 = ln(2)/2 gives P01 = 0.25 when lambda = mu = 1
        let v = transition_prob(&unit(), TrafficState::Idle, TrafficState::Active, 0.34657).unwrap();
        assert!((v - 0.25).abs() < 1e-5, "{v}");
    }

    #[test]
    fn negative_elapsed_is_rejected() {
        assert!(transition_prob(&unit(), TrafficState::Idle, TrafficState::Idle, -1.0).is_err());
    }

    #[test]
    fn stationary_examples() {
        assert_eq!(stationary_dist(&unit()), (0.5, 0.5));
        let p = TrafficParams::new(1.0, 3.0, 1.0, 0.5).unwrap();
        assert_eq!(stationary_dist(&p), (0.75, 0.25));
    }

    #[test]
    fn phi_examples() {
        let p = unit();
        for phase in Phase::BOTH {
            for s in [TrafficState::Idle, TrafficState::Active] {
                assert_eq!(phi_collision(&p, phase, s, 0.0).unwrap(), 0.0);
            }
        }
        let v = phi_collision(&p, Phase::One, TrafficState::Idle, 0.5).unwrap();
        assert!((v - 0.091970).abs() < 1e-6, "{v}");
        assert!(phi_collision(&p, Phase::One, TrafficState::Idle, 0.51).is_err());
        assert!(phi_collision(&p, Phase::Two, TrafficState::Active, -0.1).is_err());
    }

    #[test]
    fn phi_small_argument_branch_is_continuous() {
        let p = unit();
        // x = 2 theta crosses the series threshold at theta = 5e-3
        let below = phi_collision(&p, Phase::One, TrafficState::Idle, 5e-3 * (1.0 - 1e-12)).unwrap();
        let above = phi_collision(&p, Phase::One, TrafficState::Idle, 5e-3).unwrap();
        assert!((below - above).abs() < 1e-16);
    }

    #[test]
    fn interval_set_validation() {
        assert!(IntervalSet::new(vec![(0.0, 0.2), (0.1, 0.3)]).is_err());
        assert!(IntervalSet::new(vec![(0.3, 0.2)]).is_err());
        let s = IntervalSet::new(vec![(0.0, 0.2), (0.2, 0.3), (0.5, 0.5)]).unwrap();
        assert_eq!(s.intervals().len(), 2);
        assert!((s.measure() - 0.3).abs() < 1e-15);
        assert!(IntervalSet::single(0.1, 0.1).unwrap().is_empty());
    }

    #[test]
    fn collision_on_constant_paths() {
        let tx = IntervalSet::new(vec![(0.1, 0.25), (0.6, 0.75)]).unwrap();
        let idle = StatePath::constant(TrafficState::Idle, 1.0);
        let active = StatePath::constant(TrafficState::Active, 1.0);
        assert_eq!(collision_time(&idle, &tx).unwrap(), 0.0);
        assert!((collision_time(&active, &tx).unwrap() - 0.3).abs() < 1e-15);
        let beyond = IntervalSet::single(0.5, 1.5).unwrap();
        assert!(collision_time(&active, &beyond).is_err());
    }

    #[test]
    fn collision_matches_dense_riemann_sum() {
        let p = unit();
        let mut rng = Streams::new(11).rng(Stream::Traffic, 0);
        let path = sample_trajectory(&p, TrafficState::Idle, 1.0, &mut rng).unwrap();
        let tx = IntervalSet::single(0.0, 1.0).unwrap();
        let exact = collision_time(&path, &tx).unwrap();
        // exact integral of the indicator from the segment list
        let from_segments: f64 = path
            .segments()
            .filter(|s| s.2.is_active())
            .map(|(a, b, _)| b - a)
            .sum();
        assert!((exact - from_segments).abs() < 1e-12);
        let n = 2_000_000;
        let h = 1.0 / n as f64;
        let riemann: f64 = (0..n)
            .filter(|i| path.state_at((*i as f64 + 0.5) * h).is_active())
            .count() as f64
            * h;
        // the midpoint rule misses at most one cell per switch
        assert!((exact - riemann).abs() <= h * (path.switches().len() as f64 + 1.0));
    }

    #[test]
    fn trajectory_is_deterministic_under_seed() {
        let p = unit();
        let s = Streams::new(5);
        let a = sample_trajectory(&p, TrafficState::Active, 20.0, &mut s.rng(Stream::Traffic, 3)).unwrap();
        let b = sample_trajectory(&p, TrafficState::Active, 20.0, &mut s.rng(Stream::Traffic, 3)).unwrap();
        assert_eq!(a, b);
        assert!(sample_trajectory(&p, TrafficState::Idle, 0.0, &mut s.rng(Stream::Traffic, 3)).is_err());
    }

    #[test]
    fn tiny_horizon_stays_in_initial_state() {
        let p = unit();
        let mut rng = Streams::new(5).rng(Stream::Traffic, 0);
        let path = sample_trajectory(&p, TrafficState::Idle, 1e-12, &mut rng).unwrap();
        assert!(path.switches().is_empty());
        assert_eq!(path.state_at(0.5e-12), TrafficState::Idle);
    }

    #[test]
    fn ergodic_active_fraction() {
        let p = unit();
        let horizon = 1e4;
        let mut rng = Streams::new(8).rng(Stream::Traffic, 0);
        let path = sample_trajectory(&p, TrafficState::Idle, horizon, &mut rng).unwrap();
        let active: f64 = path
            .segments()
            .filter(|s| s.2.is_active())
            .map(|(a, b, _)| b - a)
            .sum::<f64>()
            / horizon;
        // batch-means standard error over 100 blocks
        let blocks = 100;
        let w = horizon / blocks as f64;
        let fr: Vec<f64> = (0..blocks)
            .map(|i| {
                let tx = IntervalSet::single(i as f64 * w, (i + 1) as f64 * w).unwrap();
                collision_time(&path, &tx).unwrap() / w
            })
            .collect();
        let se = crate::stats::Estimate::from_samples(&fr).std_err;
        assert!((active - 0.5).abs() < 3.0 * se, "{active} +- {se}");
    }

    #[test]
    fn holding_time_means_follow_exit_rates() {
        // IDLE is left at rate lambda, ACTIVE at rate mu
        let p = TrafficParams::new(1.0, 2.0, 1.0, 0.5).unwrap();
        let mut rng = Streams::new(9).rng(Stream::Traffic, 0);
        let path = sample_trajectory(&p, TrafficState::Idle, 80_000.0, &mut rng).unwrap();
        let (mut idle, mut active) = (Vec::new(), Vec::new());
        let segs: Vec<_> = path.segments().collect();
        for &(a, b, s) in &segs[..segs.len() - 1] {
            if s.is_active() {
                active.push(b - a)
            } else {
                idle.push(b - a)
            }
        }
        assert!(idle.len() > 50_000 && active.len() > 50_000);
        let mi = idle.iter().sum::<f64>() / idle.len() as f64;
        let ma = active.iter().sum::<f64>() / active.len() as f64;
        assert!((mi - 1.0).abs() < 0.02, "idle mean {mi}");
        assert!((ma - 0.5).abs() < 0.01, "active mean {ma}");
    }

    fn params_strategy() -> impl Strategy<Value = TrafficParams> {
        (0.05f64..5.0, 0.05f64..5.0, 0.1f64..3.0, 0.05f64..0.95)
            .prop_map(|(l, m, t, a)| TrafficParams::new(l, m, t, a).unwrap())
    }

    proptest! {
        #[test]
        fn chapman_kolmogorov(p in params_strategy(), s in 0.0f64..10.0, t in 0.0f64..10.0) {
            let ps = transition_matrix(&p, s);
            let pt = transition_matrix(&p, t);
            let pst = transition_matrix(&p, s + t);
            for i in 0..2 {
                for j in 0..2 {
                    let prod = ps[i][0] * pt[0][j] + ps[i][1] * pt[1][j];
                    prop_assert!((prod - pst[i][j]).abs() < 1e-12);
                }
                prop_assert!((pst[i][0] + pst[i][1] - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn phi_strictly_convex_and_bounded(p in params_strategy(), frac in 0.01f64..0.99, two in any::<bool>(), active in any::<bool>()) {
            let phase = if two { Phase::Two } else { Phase::One };
            let sensed = if active { TrafficState::Active } else { TrafficState::Idle };
            let len = phase.length(p.alpha);
            let th = frac * len;
            let h = 1e-4 * len;
            let f = |t: f64| phi_collision(&p, phase, sensed, t).unwrap();
            let v = f(th);
            prop_assert!(v >= 0.0 && v <= th * p.frame_duration + 1e-15);
            if th - h > 0.0 && th + h < len {
                prop_assert!(f(th + h) - 2.0 * v + f(th - h) > 0.0);
                prop_assert!(f(th + h) > v);
            }
        }

        #[test]
        fn collision_is_additive(seed in 0u64..1000, cut in 0.05f64..0.95) {
            let p = TrafficParams::new(1.0, 1.0, 1.0, 0.5).unwrap();
            let mut rng = Streams::new(seed).rng(Stream::Traffic, 0);
            let path = sample_stationary_path(&p, 1.0, &mut rng).unwrap();
            let whole = collision_time(&path, &IntervalSet::single(0.0, 1.0).unwrap()).unwrap();
            let left = collision_time(&path, &IntervalSet::single(0.0, cut).unwrap()).unwrap();
            let right = collision_time(&path, &IntervalSet::single(cut, 1.0).unwrap()).unwrap();
            let both = collision_time(&path, &IntervalSet::new(vec![(0.0, cut), (cut, 1.0)]).unwrap()).unwrap();
            prop_assert!((whole - left - right).abs() < 1e-12);
            prop_assert!((whole - both).abs() < 1e-12);
            prop_assert!(whole <= 1.0);
        }
    }
}

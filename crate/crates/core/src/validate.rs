//! Self-checks of the closed forms against the brute-force oracles, with
//! optional fault injection into the collision integral.

use std::io::Write;

use rand::Rng;

use crate::allocator::{lagrangian_value, solve_realization, DualPoint};
use crate::channel::ChannelGains;
use crate::config::{Scenario, ScenarioConfig};
use crate::dualopt::{initial_dual, optimize_dual_on, AscentSettings, SampleSet};
use crate::error::Result;
use crate::oracle::{grid_search_lagrangian, grid_search_primal, placement_enumerate, quad_phi, ToyInstance};
use crate::rng::{Stream, Streams};
use crate::traffic::{phi_collision, Phase, TrafficParams, TrafficState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidateOptions {
    pub seed: u64,
    /// Relative error injected into every closed-form collision integral.
    pub phi_perturbation: f64,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        ValidateOptions {
            seed: 1,
            phi_perturbation: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    /// Worst error observed.
    pub metric: f64,
    pub threshold: f64,
    pub cases: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.metric <= self.threshold
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidateReport {
    pub scenario_hash: String,
    /// Free-form remarks written as `# note=` lines.
    pub notes: Vec<String>,
    pub checks: Vec<CheckResult>,
}

impl ValidateReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    /// One `key=value` line per check, preceded by the scenario hash.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# scenario_hash={}", self.scenario_hash)?;
        for n in &self.notes {
            writeln!(out, "# note={n}")?;
        }
        for c in &self.checks {
            writeln!(
                out,
                "check={} cases={} metric={:e} threshold={:e} result={}",
                c.name,
                c.cases,
                c.metric,
                c.threshold,
                if c.passed() { "PASS" } else { "FAIL" }
            )?;
        }
        writeln!(out, "overall={}", if self.passed() { "PASS" } else { "FAIL" })?;
        Ok(())
    }
}

fn random_state<R: Rng>(rng: &mut R) -> TrafficState {
    if rng.random::<bool>() {
        TrafficState::Active
    } else {
        TrafficState::Idle
    }
}

fn random_params<R: Rng>(rng: &mut R) -> TrafficParams {
    let tf = 10f64.powf(rng.random_range(-3.0..0.0));
    let lambda = 10f64.powf(rng.random_range(-1.0..1.0)) / tf;
    let mu = 10f64.powf(rng.random_range(-1.0..1.0)) / tf;
    TrafficParams::new(lambda, mu, tf, rng.random_range(0.1..0.9)).expect("valid ranges")
}

fn random_phase<R: Rng>(rng: &mut R) -> Phase {
    if rng.random::<bool>() {
        Phase::One
    } else {
        Phase::Two
    }
}

/// Closed-form collision integral against quadrature, error relative to `T_f`.
fn check_phi(rng: &mut impl Rng, scenario: &Scenario, perturb: f64) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for k in 0..240 {
        // the scenario's own traffic on a theta grid, then random tuples
        let (params, phase, sensed, theta) = if k < 40 {
            let p = scenario.traffic;
            let phase = if k % 2 == 0 { Phase::One } else { Phase::Two };
            let sensed = if k % 4 < 2 { TrafficState::Idle } else { TrafficState::Active };
            (p, phase, sensed, phase.length(p.alpha) * (k / 4) as f64 / 9.0)
        } else {
            let p = random_params(rng);
            let phase = random_phase(rng);
            let theta = rng.random_range(0.0..=1.0) * phase.length(p.alpha);
            (p, phase, random_state(rng), theta)
        };
        let closed = phi_collision(&params, phase, sensed, theta)? * (1.0 + perturb);
        let quad = quad_phi(&params, phase, sensed, theta)?;
        worst = worst.max((closed - quad).abs() / params.frame_duration);
        cases += 1;
    }
    Ok(CheckResult {
        name: "phi_closed_form",
        metric: worst,
        threshold: 1e-9,
        cases,
    })
}

/// Edge placement against the best of 101 enumerated placements.
fn check_placement(rng: &mut impl Rng, perturb: f64) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let params = random_params(rng);
        let phase = random_phase(rng);
        let theta = rng.random_range(0.0..=1.0) * phase.length(params.alpha);
        let sensed = random_state(rng);
        let scan = placement_enumerate(&params, theta, phase, sensed, 100)?;
        let closed = phi_collision(&params, phase, sensed, theta)? * (1.0 + perturb);
        let best = scan.collisions[scan.best_index];
        // how far the closed-form placement is from the best enumerated one
        worst = worst.max((closed - best).abs() / params.frame_duration);
    }
    Ok(CheckResult {
        name: "placement_optimal",
        metric: worst,
        threshold: 1e-9,
        cases: 50,
    })
}

fn toy_scenario(n: usize, r_min: f64) -> Result<Scenario> {
    let mut c = ScenarioConfig::default();
    c.network.n_subchannels = n;
    c.network.n_bands = 1;
    c.network.frame_duration = 1.0;
    c.network.bandwidth_hz = 1.0;
    c.rate.r_min = r_min;
    Scenario::from_config(&c)
}

/// Closed-form per-realization minimizer against the numerical one on 20 toys.
fn check_kkt(rng: &mut impl Rng) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    for k in 0..20 {
        let n = 1 + k % 2;
        let sc = toy_scenario(n, 1.0)?;
        let mut gains = || (0..n).map(|_| rng.random_range(0.2..5.0)).collect::<Vec<f64>>();
        let g = ChannelGains::new(gains(), gains(), gains())?;
        let inst = ToyInstance::new(sc.clone(), g, random_state(rng), random_state(rng))?;
        let nu = DualPoint::new(
            rng.random_range(0.0..0.3),
            rng.random_range(0.0..0.3),
            rng.random_range(0.05..0.5),
            rng.random_range(0.05..0.5),
        )?;
        let grid = grid_search_lagrangian(&inst, &nu)?;
        let a = solve_realization(&nu, &inst.nsi, &sc)?;
        let mut d = (grid.theta1 - a.theta1[0]).abs().max((grid.theta2 - a.theta2[0]).abs());
        for i in 0..n {
            for (x, y) in [
                (grid.ratio_s1[i], a.ratio_s1[i]),
                (grid.ratio_s2[i], a.ratio_s2[i]),
                (grid.ratio_r[i], a.ratio_r[i]),
            ] {
                d = d.max((x - y).abs() / y.abs().max(1.0));
            }
        }
        // the value gap is held to a tighter bound than the coordinates
        let dv = (grid.value - lagrangian_value(&nu, &a, &inst.nsi, &sc)).abs();
        worst = worst.max(d).max(dv * 10.0);
    }
    Ok(CheckResult {
        name: "kkt_vs_grid",
        metric: worst,
        threshold: 1e-3,
        cases: 20,
    })
}

/// Dual ascent on single-realization toys against the primal search.
fn check_dual_toys() -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    let targets = [0.8, 1.5];
    for &r in &targets {
        let sc = toy_scenario(1, r)?;
        let g = ChannelGains::new(vec![4.0], vec![4.0], vec![1.0])?;
        let inst = ToyInstance::new(sc.clone(), g, TrafficState::Idle, TrafficState::Active)?;
        let primal = grid_search_primal(&inst)?.expect("toy target within capacity");
        let settings = AscentSettings::from_config(&ScenarioConfig::default().dual, 1);
        let set = SampleSet::from_samples(vec![inst.nsi.clone()])?;
        let sol = optimize_dual_on(&sc, &settings, set, initial_dual(&sc))?;
        let dual = sol.at_best.terms.collision_per_second.mean;
        worst = worst.max((dual - primal.collision).abs() / primal.collision);
    }
    Ok(CheckResult {
        name: "dual_vs_primal",
        metric: worst,
        threshold: 1e-2,
        cases: targets.len(),
    })
}

/// Runs every check; the scenario supplies its traffic model and hash.
pub fn run(cfg: &ScenarioConfig, opts: &ValidateOptions) -> Result<ValidateReport> {
    let scenario = Scenario::from_config(cfg)?;
    let streams = Streams::new(opts.seed);
    let mut rng = streams.rng(Stream::Validate, 0);
    let checks = vec![
        check_phi(&mut rng, &scenario, opts.phi_perturbation)?,
        check_placement(&mut rng, opts.phi_perturbation)?,
        check_kkt(&mut rng)?,
        check_dual_toys()?,
    ];
    Ok(ValidateReport {
        scenario_hash: cfg.scenario_hash(),
        notes: Vec::new(),
        checks,
    })
}

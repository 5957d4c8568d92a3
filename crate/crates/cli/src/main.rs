//! Command-line front end: optimize a policy off-line, simulate it frame by
//! frame, sweep rate targets against the baselines, and run the self-checks.
//!
//! Exit codes: 0 success (ascent converged), 1 error, 2 ascent stopped at
//! `max_iter`, 3 rate target infeasible, 4 a validation check failed.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use relay_share::config::{Scenario, ScenarioConfig};
use relay_share::dualopt::{capacity, optimize_dual, AscentSettings, DualTrace, GainSource, SampleSet};
use relay_share::rng::Streams;
use relay_share::simulator::{
    calibrate_baseline, draw_frame, run_policy_frames, write_frames_csv, Calibration, Family, Policy, RunSummary,
};
use relay_share::sweep::{run_sweep, write_sweep_csv, SweepRow};
use relay_share::table::{csv_writer, write_hash_line, PolicyTable};
use relay_share::validate::{self, ValidateOptions};

const EXIT_MAX_ITER: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_CHECK_FAILED: u8 = 4;

#[derive(Parser)]
#[command(name = "relay-share", version, about = "Relay-network spectrum sharing with CTMC ad-hoc traffic")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario TOML file; built-in defaults when omitted or empty.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Worker threads (results do not depend on it).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a policy to the configured rate target; writes policy_table.txt and dual_trace.csv.
    Optimize {
        #[command(flatten)]
        common: Common,
        /// proposed, relay-free or time-hopping
        #[arg(long, default_value = "proposed")]
        policy: String,
    },
    /// Replay a policy table frame by frame; writes run_summary.csv.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Policy table (default: <out>/policy_table.txt).
        #[arg(long)]
        table: Option<PathBuf>,
        /// Frames to simulate (overrides the config)
        #[arg(long)]
        frames: Option<usize>,
        /// Also write per-frame rows to frames.csv.
        #[arg(long)]
        per_frame: bool,
    },
    /// Calibrate and simulate each policy at every rate target of the sweep list; writes sweep.csv.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Policies to include (repeatable; default all).
        #[arg(long)]
        policy: Vec<String>,
        /// Frames to simulate (overrides the config)
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Cross-check the closed forms against the brute-force oracles; writes validate_report.txt.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Relative error injected into the collision integral (test mode).
        #[arg(long, default_value_t = 0.0, hide = true)]
        phi_perturbation: f64,
    },
    /// Print the built-in default configuration as TOML.
    DefaultConfig,
    /// Write the traffic paths of the first frames to trajectories.csv.
    ExportTrace {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10)]
        frames: usize,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// Loads the config; the flag is set when built-in defaults are used.
fn load_config(common: &Common) -> Result<(ScenarioConfig, bool)> {
    let (mut cfg, defaults) = match &common.config {
        None => (ScenarioConfig::default(), true),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            if text.trim().is_empty() {
                (ScenarioConfig::default(), true)
            } else {
                let cfg = ScenarioConfig::from_toml_str(&text).with_context(|| format!("in {}", p.display()))?;
                (cfg, false)
            }
        }
    };
    if let Some(s) = common.seed {
        cfg.simulation.seed = s;
        cfg.validate()?;
    }
    Ok((cfg, defaults))
}

fn setup(common: &Common) -> Result<(ScenarioConfig, bool)> {
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
    load_config(common)
}

fn create(dir: &Path, name: &str) -> Result<std::io::BufWriter<fs::File>> {
    let path = dir.join(name);
    let f = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(std::io::BufWriter::new(f))
}

fn write_trace(dir: &Path, hash: &str, trace: &DualTrace) -> Result<()> {
    let mut f = create(dir, "dual_trace.csv")?;
    write_hash_line(&mut f, hash)?;
    trace.write_csv(&mut f)?;
    f.flush()?;
    Ok(())
}

fn write_table(dir: &Path, table: &PolicyTable) -> Result<()> {
    let mut f = create(dir, "policy_table.txt")?;
    table.write(&mut f)?;
    f.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Optimize { common, policy } => optimize(&common, &policy),
        Command::Simulate {
            common,
            table,
            frames,
            per_frame,
        } => simulate(&common, table, frames, per_frame),
        Command::Sweep { common, policy, frames } => sweep(&common, &policy, frames),
        Command::Validate {
            common,
            phi_perturbation,
        } => run_validate(&common, phi_perturbation),
        Command::ExportTrace { common, frames } => export_trace(&common, frames),
        Command::DefaultConfig => {
            print!("{}", ScenarioConfig::default().to_toml_string());
            Ok(0)
        }
    }
}

fn optimize(common: &Common, policy: &str) -> Result<u8> {
    let family = Family::parse(policy)?;
    let (cfg, _) = setup(common)?;
    let scenario = Scenario::from_config(&cfg)?;
    let hash = cfg.scenario_hash();
    let streams = Streams::new(cfg.simulation.seed);
    let settings = AscentSettings::from_config(&cfg.dual, cfg.simulation.mc_samples);
    let table = |policy: Policy| PolicyTable {
        policy,
        config_hash: hash.clone(),
        traffic: scenario.traffic,
    };
    let dual_family = matches!(family, Family::Proposed | Family::RelayFree);
    if !dual_family || scenario.r_min == 0.0 {
        // closed-form calibration, no ascent
        write_trace(&common.out, &hash, &DualTrace::default())?;
        return match calibrate_baseline(family, &scenario, &settings, &streams)? {
            Calibration::Feasible { policy, .. } => {
                write_table(&common.out, &table(policy))?;
                println!("policy={} converged=true", family.name());
                Ok(0)
            }
            Calibration::Infeasible { capacity, reason } => {
                println!("policy={} infeasible capacity={capacity:e}: {reason}", family.name());
                Ok(EXIT_INFEASIBLE)
            }
        };
    }
    let topology = if family == Family::Proposed {
        relay_share::dualopt::Topology::Cooperative
    } else {
        relay_share::dualopt::Topology::Direct
    };
    let samples = SampleSet::draw_for(&scenario, &GainSource::Rayleigh, topology, settings.mc_samples, &streams, 0)?;
    let cap = capacity(&scenario, &samples)?.rate() * scenario.bandwidth;
    if scenario.r_min >= cap {
        write_trace(&common.out, &hash, &DualTrace::default())?;
        println!(
            "policy={} infeasible: r_min={:e} bit/s exceeds capacity {cap:e} bit/s",
            family.name(),
            scenario.r_min
        );
        return Ok(EXIT_INFEASIBLE);
    }
    let sol = optimize_dual(&scenario, &settings, &GainSource::Rayleigh, topology, &streams)?;
    write_trace(&common.out, &hash, &sol.trace)?;
    let p = if family == Family::Proposed {
        Policy::Proposed(sol.nu)
    } else {
        Policy::RelayFree(sol.nu)
    };
    write_table(&common.out, &table(p))?;
    let s = &sol.at_best;
    println!(
        "policy={} converged={} iterations={} best_iter={} rate_violation={:e} power_violation={:e} collision={:e}",
        family.name(),
        sol.converged,
        sol.trace.rows.len(),
        sol.best_iter,
        s.rate_violation(),
        s.power_violation(&scenario),
        s.terms.collision_per_second.mean
    );
    Ok(if sol.converged { 0 } else { EXIT_MAX_ITER })
}

fn simulate(common: &Common, table: Option<PathBuf>, frames: Option<usize>, per_frame: bool) -> Result<u8> {
    let (cfg, _) = setup(common)?;
    let scenario = Scenario::from_config(&cfg)?;
    let hash = cfg.scenario_hash();
    let path = table.unwrap_or_else(|| common.out.join("policy_table.txt"));
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let table = PolicyTable::parse(&text).with_context(|| format!("in {}", path.display()))?;
    table.check(&hash, &scenario.traffic)?;
    let n = frames.unwrap_or(cfg.simulation.n_frames);
    let streams = Streams::new(cfg.simulation.seed);
    let results = run_policy_frames(&table.policy, &scenario, n, &streams)?;
    let s = RunSummary::from_frames(&results, &scenario);
    let mut f = create(&common.out, "run_summary.csv")?;
    write_hash_line(&mut f, &hash)?;
    s.write_csv(&mut f, table.policy.name(), &scenario)?;
    f.flush()?;
    if per_frame {
        let mut f = create(&common.out, "frames.csv")?;
        write_hash_line(&mut f, &hash)?;
        write_frames_csv(&mut f, &results, &scenario)?;
        f.flush()?;
    }
    let rate = s.achieved_rate();
    println!(
        "policy={} frames={n} collision_per_second={:e} achieved_rate={:e}",
        table.policy.name(),
        s.collision_per_second.mean,
        rate.mean
    );
    Ok(0)
}

fn sweep(common: &Common, policies: &[String], frames: Option<usize>) -> Result<u8> {
    let (cfg, _) = setup(common)?;
    let families = if policies.is_empty() {
        Family::ALL.to_vec()
    } else {
        policies.iter().map(|p| Family::parse(p)).collect::<relay_share::Result<Vec<_>>>()?
    };
    if cfg.rate.sweep.is_empty() {
        bail!("rate.sweep is empty; list at least one rate target");
    }
    let n = frames.unwrap_or(cfg.simulation.n_frames);
    let streams = Streams::new(cfg.simulation.seed);
    let points = run_sweep(&cfg, &families, &cfg.rate.sweep, n, &streams)?;
    let rows: Vec<SweepRow> = points.iter().map(|p| p.row).collect();
    let mut f = create(&common.out, "sweep.csv")?;
    write_sweep_csv(&mut f, &cfg.scenario_hash(), &rows)?;
    f.flush()?;
    for r in &rows {
        println!(
            "policy={} r_min={:e} efficiency={:.4} collision={:e} feasible={}",
            r.policy.name(),
            r.r_min,
            r.efficiency,
            r.collision.mean,
            r.feasible
        );
    }
    Ok(0)
}

fn run_validate(common: &Common, phi_perturbation: f64) -> Result<u8> {
    let (cfg, defaults) = setup(common)?;
    let opts = ValidateOptions {
        seed: cfg.simulation.seed,
        phi_perturbation,
    };
    let mut report = validate::run(&cfg, &opts)?;
    if defaults {
        report.notes.push("no config given; built-in defaults used".into());
    }
    if phi_perturbation != 0.0 {
        report.notes.push(format!("phi perturbed by {phi_perturbation:e} (test mode)"));
    }
    let mut f = create(&common.out, "validate_report.txt")?;
    report.write_text(&mut f)?;
    f.flush()?;
    report.write_text(std::io::stdout().lock())?;
    Ok(if report.passed() { 0 } else { EXIT_CHECK_FAILED })
}

fn export_trace(common: &Common, frames: usize) -> Result<u8> {
    let (cfg, _) = setup(common)?;
    let scenario = Scenario::from_config(&cfg)?;
    let streams = Streams::new(cfg.simulation.seed);
    let mut f = create(&common.out, "trajectories.csv")?;
    write_hash_line(&mut f, &cfg.scenario_hash())?;
    let mut w = csv_writer(&mut f);
    w.write_record(["frame", "band", "t_start", "t_end", "state"])?;
    for l in 0..frames as u64 {
        let (_, paths) = draw_frame(&scenario, &streams, l)?;
        for (m, p) in paths.iter().enumerate() {
            for (a, b, s) in p.segments() {
                w.write_record([
                    l.to_string(),
                    m.to_string(),
                    a.to_string(),
                    b.to_string(),
                    s.index().to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    drop(w);
    f.flush()?;
    Ok(0)
}

//! Efficiency sweep: calibrate each policy family to a list of rate targets,
//! simulate it, and tabulate collision against spectral efficiency.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::config::{Scenario, ScenarioConfig};
use crate::dualopt::AscentSettings;
use crate::error::{Error, Result};
use crate::rng::Streams;
use crate::simulator::{calibrate_baseline, run_policy, Calibration, Family, RunSummary};
use crate::stats::Estimate;
use crate::table::{split_hash_line, write_hash_line};

/// One (policy, target) point of the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub policy: Family,
    /// Rate target (bit/s).
    pub r_min: f64,
    /// `r_min / (W N)`.
    pub efficiency: f64,
    /// Simulated collision per second; NaN when infeasible.
    pub collision: Estimate,
    pub feasible: bool,
}

/// A sweep row with the calibration and simulation behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub row: SweepRow,
    pub calibration: Calibration,
    pub summary: Option<RunSummary>,
}

/// Calibrates and simulates every family at every target.
///
/// All points share the master seed, so the families see the same channel
/// and traffic realizations (common random numbers).
pub fn run_sweep(
    cfg: &ScenarioConfig,
    families: &[Family],
    r_mins: &[f64],
    n_frames: usize,
    streams: &Streams,
) -> Result<Vec<SweepPoint>> {
    let settings = AscentSettings::from_config(&cfg.dual, cfg.simulation.mc_samples);
    let mut points = Vec::with_capacity(families.len() * r_mins.len());
    for &family in families {
        for &r_min in r_mins {
            let scenario = Scenario::from_config(&cfg.with_r_min(r_min))?;
            let calibration = calibrate_baseline(family, &scenario, &settings, streams)?;
            let summary = match calibration.policy() {
                Some(p) => Some(run_policy(p, &scenario, n_frames, streams)?),
                None => None,
            };
            let collision = summary.map_or(
                Estimate {
                    mean: f64::NAN,
                    std_err: f64::NAN,
                },
                |s| s.collision_per_second,
            );
            points.push(SweepPoint {
                row: SweepRow {
                    policy: family,
                    r_min,
                    efficiency: scenario.efficiency(r_min),
                    collision,
                    feasible: summary.is_some(),
                },
                calibration,
                summary,
            });
        }
    }
    points.sort_by(|a, b| {
        (a.row.policy.name(), a.row.r_min)
            .partial_cmp(&(b.row.policy.name(), b.row.r_min))
            .expect("finite targets")
    });
    Ok(points)
}

/// Efficiency at which `family` reaches `collision`, interpolating linearly
/// in log-collision between the bracketing feasible points.
pub fn efficiency_at_collision(rows: &[SweepRow], family: Family, collision: f64) -> Option<f64> {
    let mut pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.policy == family && r.feasible && r.collision.mean > 0.0)
        .map(|r| (r.efficiency, r.collision.mean))
        .collect();
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite"));
    pts.windows(2).find_map(|w| {
        let ((e0, c0), (e1, c1)) = (w[0], w[1]);
        if c0 <= collision && collision <= c1 && c1 > c0 {
            let t = (collision / c0).ln() / (c1 / c0).ln();
            Some(e0 + t * (e1 - e0))
        } else {
            None
        }
    })
}

/// Proposed over relay-free efficiency at a collision level.
pub fn efficiency_ratio(rows: &[SweepRow], collision: f64) -> Option<f64> {
    Some(
        efficiency_at_collision(rows, Family::Proposed, collision)?
            / efficiency_at_collision(rows, Family::RelayFree, collision)?,
    )
}

/// Collision level at which the efficiency ratio is reported.
pub const RATIO_COLLISION: f64 = 0.01;

/// Sweep CSV: hash line, header, one row per point, then a comment with the
/// efficiency ratio at [`RATIO_COLLISION`].
pub fn write_sweep_csv<W: Write>(mut out: W, scenario_hash: &str, rows: &[SweepRow]) -> Result<()> {
    write_hash_line(&mut out, scenario_hash)?;
    {
        let mut w = crate::table::csv_writer(&mut out);
        w.write_record(["policy", "r_min", "efficiency", "collision", "collision_se", "feasible"])?;
        for r in rows {
            w.write_record([
                r.policy.name().to_string(),
                r.r_min.to_string(),
                r.efficiency.to_string(),
                r.collision.mean.to_string(),
                r.collision.std_err.to_string(),
                r.feasible.to_string(),
            ])?;
        }
        w.flush()?;
    }
    match efficiency_ratio(rows, RATIO_COLLISION) {
        Some(v) => writeln!(out, "# efficiency_ratio_at_collision_{RATIO_COLLISION}={v}")?,
        None => writeln!(out, "# efficiency_ratio_at_collision_{RATIO_COLLISION}=NA")?,
    }
    Ok(())
}

/// Reads a sweep CSV back; returns the scenario hash and the rows.
pub fn read_sweep_csv(text: &str) -> Result<(String, Vec<SweepRow>)> {
    let (hash, body) = split_hash_line(text)?;
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(body.as_bytes());
    let bad = |d: String| Error::Parse {
        kind: "sweep csv",
        detail: d,
    };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 6 {
            return Err(bad(format!("{} fields, expected 6", rec.len())));
        }
        let num = |i: usize| rec[i].parse::<f64>().map_err(|e| bad(format!("field {i}: {e}")));
        rows.push(SweepRow {
            policy: Family::parse(&rec[0])?,
            r_min: num(1)?,
            efficiency: num(2)?,
            collision: Estimate {
                mean: num(3)?,
                std_err: num(4)?,
            },
            feasible: rec[5].parse().map_err(|e| bad(format!("feasible: {e}")))?,
        });
    }
    Ok((hash.to_string(), rows))
}

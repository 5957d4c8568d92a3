//! Text formats: the `key=value` policy table and the scenario-hash line that
//! heads every CSV output.

use std::io::Write;

use crate::allocator::DualPoint;
use crate::error::{Error, Result};
use crate::simulator::{Policy, TimeHopping};
use crate::traffic::TrafficParams;

/// CSV writer with `,` separators and LF line endings.
pub fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

/// Writes the `# scenario_hash=<hex>` line that precedes every CSV header.
pub fn write_hash_line<W: Write>(out: &mut W, scenario_hash: &str) -> Result<()> {
    writeln!(out, "# scenario_hash={scenario_hash}")?;
    Ok(())
}

/// Splits a CSV produced by this crate into its scenario hash and the body
/// (header and rows).
pub fn split_hash_line(text: &str) -> Result<(&str, &str)> {
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    let hash = first
        .trim_end()
        .strip_prefix("# scenario_hash=")
        .ok_or_else(|| parse_err("missing `# scenario_hash=` line"))?;
    Ok((hash, rest))
}

fn parse_err(detail: impl Into<String>) -> Error {
    Error::Parse {
        kind: "policy table",
        detail: detail.into(),
    }
}

/// A calibrated policy bound to the configuration it was fitted on, with the
/// traffic coefficients the per-frame rule needs.
///
/// Format: one `key=value` per line; keys `policy`, `config_hash`, `lambda`,
/// `mu`, `frame_duration`, `alpha`, `zeta`, `sigma`, `epsilon`, `eta`, plus
/// `theta`, `kappa_s`, `kappa_r` for time-hopping. Floats use the shortest
/// representation that parses back to the same value.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    pub policy: Policy,
    pub config_hash: String,
    pub traffic: TrafficParams,
}

impl PolicyTable {
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "policy={}", self.policy.name())?;
        writeln!(out, "config_hash={}", self.config_hash)?;
        writeln!(out, "lambda={}", self.traffic.lambda)?;
        writeln!(out, "mu={}", self.traffic.mu)?;
        writeln!(out, "frame_duration={}", self.traffic.frame_duration)?;
        writeln!(out, "alpha={}", self.traffic.alpha)?;
        let nu = match &self.policy {
            Policy::Proposed(nu) | Policy::RelayFree(nu) => nu,
            Policy::TimeHopping(th) => {
                writeln!(out, "theta={}", th.theta)?;
                writeln!(out, "kappa_s={}", th.kappa_s)?;
                writeln!(out, "kappa_r={}", th.kappa_r)?;
                &th.nu
            }
        };
        writeln!(out, "zeta={}", nu.zeta)?;
        writeln!(out, "sigma={}", nu.sigma)?;
        writeln!(out, "epsilon={}", nu.epsilon)?;
        writeln!(out, "eta={}", nu.eta)?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii")
    }

    /// Parses the table; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = std::collections::BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("line {}: expected key=value", i + 1)))?;
            if kv.insert(k.trim(), v.trim()).is_some() {
                return Err(parse_err(format!("duplicate key {k:?}")));
            }
        }
        let text_of = |k: &str| kv.get(k).copied().ok_or_else(|| parse_err(format!("missing {k}")));
        let num = |k: &str| -> Result<f64> {
            text_of(k)?
                .parse::<f64>()
                .map_err(|e| parse_err(format!("{k}: {e}")))
        };
        let nu = DualPoint::new(num("zeta")?, num("sigma")?, num("epsilon")?, num("eta")?)?;
        let name = text_of("policy")?;
        let (policy, keys) = match name {
            "proposed" => (Policy::Proposed(nu), 10),
            "relay-free" => (Policy::RelayFree(nu), 10),
            "time-hopping" => (
                Policy::TimeHopping(TimeHopping {
                    theta: num("theta")?,
                    nu,
                    kappa_s: num("kappa_s")?,
                    kappa_r: num("kappa_r")?,
                }),
                13,
            ),
            other => return Err(parse_err(format!("unknown policy {other:?}"))),
        };
        if kv.len() != keys {
            return Err(parse_err(format!("{} keys for a {name} table, expected {keys}", kv.len())));
        }
        let traffic = TrafficParams::new(num("lambda")?, num("mu")?, num("frame_duration")?, num("alpha")?)?;
        Ok(PolicyTable {
            policy,
            config_hash: text_of("config_hash")?.to_string(),
            traffic,
        })
    }

    /// Fails unless the table was fitted on the configuration with `hash`
    /// and carries the same traffic coefficients.
    pub fn check(&self, hash: &str, traffic: &TrafficParams) -> Result<()> {
        if self.config_hash == hash && self.traffic == *traffic {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "policy table was fitted on config {} but the current config is {hash}",
                self.config_hash
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hash_line_round_trip() {
        let mut buf = Vec::new();
        write_hash_line(&mut buf, "abc").unwrap();
        buf.extend_from_slice(b"a,b\n1,2\n");
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(split_hash_line(&text).unwrap(), ("abc", "a,b\n1,2\n"));
        assert!(split_hash_line("a,b\n").is_err());
    }

    #[test]
    fn rejects_malformed_tables() {
        assert!(PolicyTable::parse("policy=proposed\n").is_err());
        let ok = "policy=proposed\nconfig_hash=x\nlambda=100\nmu=100\nframe_duration=0.01\nalpha=0.5\nzeta=1\nsigma=1\nepsilon=1\neta=1\n";
        assert!(PolicyTable::parse(ok).is_ok());
        assert!(PolicyTable::parse(&ok.replace("zeta=1", "zeta=-1")).is_err());
        assert!(PolicyTable::parse(&format!("{ok}zeta=2\n")).is_err());
        assert!(PolicyTable::parse(&format!("{ok}extra=2\n")).is_err());
        assert!(PolicyTable::parse(&ok.replace("proposed", "greedy")).is_err());
        assert!(PolicyTable::parse(&ok.replace("alpha=0.5", "alpha=1.5")).is_err());
    }

    #[test]
    fn hash_mismatch_is_an_error() {
        let traffic = TrafficParams::new(100.0, 100.0, 0.01, 0.5).unwrap();
        let t = PolicyTable {
            policy: Policy::silent(),
            config_hash: "a".into(),
            traffic,
        };
        assert!(t.check("a", &traffic).is_ok());
        assert!(t.check("b", &traffic).is_err());
        let other = TrafficParams { mu: 50.0, ..traffic };
        assert!(t.check("a", &other).is_err());
    }

    proptest! {
        #[test]
        fn tables_round_trip_exactly(
            z in 0.0f64..1e3, s in 0.0f64..1e3, e in 1e-12f64..1e3, h in 1e-12f64..1e3,
            theta in 0.0f64..0.5, ks in 1e-3f64..=1.0, kr in 1e-3f64..=1.0, kind in 0usize..3, lam in 1e-3f64..1e6,
        ) {
            let nu = DualPoint::new(z, s, e, h).unwrap();
            let policy = match kind {
                0 => Policy::Proposed(nu),
                1 => Policy::RelayFree(nu),
                _ => Policy::TimeHopping(TimeHopping { theta, nu, kappa_s: ks, kappa_r: kr }),
            };
            let traffic = TrafficParams::new(lam, 100.0, 0.01, 0.5).unwrap();
            let t = PolicyTable { policy, config_hash: "deadbeef".into(), traffic };
            prop_assert_eq!(PolicyTable::parse(&t.to_text()).unwrap(), t);
        }
    }
}

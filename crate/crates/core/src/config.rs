//! Scenario configuration: the TOML file layout, its defaults, and the
//! validated runtime [`Scenario`] derived from it.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{calibrate_mean_snr, ChannelParams};
use crate::error::{Error, Result};
use crate::traffic::TrafficParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub network: NetworkConfig,
    pub traffic: TrafficConfig,
    pub channel: ChannelConfig,
    pub power: PowerConfig,
    pub rate: RateConfig,
    pub simulation: SimulationConfig,
    pub dual: DualConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// Number of CRN sub-channels `N`.
    pub n_subchannels: usize,
    /// Number of ad-hoc bands `M`.
    pub n_bands: usize,
    pub band_map: BandMapSpec,
    /// Sub-channel bandwidth `W` (Hz).
    pub bandwidth_hz: f64,
    /// Frame duration `T_f` (s).
    pub frame_duration: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BandMapSpec {
    /// `"uniform"`: consecutive blocks of `N / M` sub-channels.
    Named(String),
    /// Explicit sub-channel indices (0-based) of every band.
    Explicit(Vec<Vec<usize>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficConfig {
    /// `lambda * T_f`.
    pub lambda_tf: f64,
    /// `mu * T_f`.
    pub mu_tf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub path_loss_exponent: f64,
    pub relay_position: f64,
    /// Target `P_s_max E[g_sd] / N` in dB.
    pub sd_snr_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerConfig {
    pub p_s_max: f64,
    pub p_r_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateConfig {
    /// Required ergodic rate (bit/s).
    pub r_min: f64,
    /// Rate targets for `sweep` (bit/s).
    pub sweep: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub n_frames: usize,
    pub mc_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DualConfig {
    /// Step numerator `a` in `a / (b + t)`.
    pub step_a: f64,
    /// Step offset `b` in `a / (b + t)`.
    pub step_b: f64,
    pub max_iter: usize,
    /// Normalized violation tolerance.
    pub tolerance: f64,
    /// Consecutive in-tolerance iterations required to stop.
    pub patience: usize,
    /// Redraw the Monte-Carlo sample set every iteration instead of reusing it.
    pub fresh_samples: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            network: NetworkConfig {
                n_subchannels: 16,
                n_bands: 4,
                band_map: BandMapSpec::Named("uniform".into()),
                bandwidth_hz: 1.0e6,
                frame_duration: 0.01,
                alpha: 0.5,
            },
            traffic: TrafficConfig {
                lambda_tf: 1.0,
                mu_tf: 1.0,
            },
            channel: ChannelConfig {
                path_loss_exponent: 4.0,
                relay_position: 0.5,
                sd_snr_db: 5.0,
            },
            power: PowerConfig {
                p_s_max: 1.0,
                p_r_max: 1.0,
            },
            rate: RateConfig {
                r_min: 24.0e6,
                sweep: vec![2.0e6, 4.0e6, 6.0e6, 8.0e6, 12.0e6, 16.0e6, 24.0e6, 32.0e6, 40.0e6, 48.0e6],
            },
            simulation: SimulationConfig {
                n_frames: 100_000,
                mc_samples: 10_000,
                seed: 1,
            },
            dual: DualConfig {
                step_a: 20.0,
                step_b: 20.0,
                max_iter: 2000,
                tolerance: 1e-2,
                patience: 20,
                fresh_samples: false,
            },
        }
    }
}

impl ScenarioConfig {
    /// Strict parse: every key must be present and no unknown keys are allowed.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical serialization.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        Scenario::from_config(self).map(|_| ())?;
        let d = &self.dual;
        if !(d.step_a > 0.0 && d.step_b >= 0.0 && d.tolerance > 0.0) {
            return Err(Error::Config("dual step_a, tolerance must be > 0 and step_b >= 0".into()));
        }
        if d.max_iter == 0 || d.patience == 0 {
            return Err(Error::Config("dual max_iter and patience must be >= 1".into()));
        }
        if self.simulation.seed > i64::MAX as u64 {
            return Err(Error::Config("simulation.seed must fit in a signed 64-bit integer".into()));
        }
        if self.simulation.mc_samples == 0 {
            return Err(Error::Config("simulation.mc_samples must be >= 1".into()));
        }
        if self.rate.sweep.iter().any(|r| !(*r >= 0.0)) {
            return Err(Error::Config("rate.sweep entries must be >= 0".into()));
        }
        Ok(())
    }

    /// Copy with a different rate target.
    pub fn with_r_min(&self, r_min: f64) -> Self {
        let mut c = self.clone();
        c.rate.r_min = r_min;
        c
    }

    /// Hash of everything that determines an optimized policy. Run-only settings
    /// (frame count, seed, sweep list) are excluded.
    pub fn scenario_hash(&self) -> String {
        let mut c = self.clone();
        c.simulation.n_frames = 0;
        c.simulation.seed = 0;
        c.rate.sweep.clear();
        let digest = Sha256::digest(c.to_toml_string().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Partition of the sub-channels into ad-hoc bands.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BandMap {
    bands: Vec<Vec<usize>>,
    band_of: Vec<usize>,
}

impl BandMap {
    pub fn uniform(n_subchannels: usize, n_bands: usize) -> Result<Self> {
        if n_bands == 0 || n_subchannels % n_bands != 0 {
            return Err(Error::Config(format!(
                "n_subchannels={n_subchannels} is not divisible by n_bands={n_bands}"
            )));
        }
        let per = n_subchannels / n_bands;
        BandMap::explicit(
            n_subchannels,
            (0..n_bands).map(|m| (m * per..(m + 1) * per).collect()).collect(),
        )
    }

    pub fn explicit(n_subchannels: usize, bands: Vec<Vec<usize>>) -> Result<Self> {
        let mut band_of = vec![usize::MAX; n_subchannels];
        for (m, band) in bands.iter().enumerate() {
            for &n in band {
                if n >= n_subchannels {
                    return Err(Error::Config(format!("band {m} lists sub-channel {n} >= {n_subchannels}")));
                }
                if band_of[n] != usize::MAX {
                    return Err(Error::Config(format!("sub-channel {n} appears in two bands")));
                }
                band_of[n] = m;
            }
        }
        if let Some(n) = band_of.iter().position(|&b| b == usize::MAX) {
            return Err(Error::Config(format!("sub-channel {n} belongs to no band")));
        }
        Ok(BandMap { bands, band_of })
    }

    pub fn n_bands(&self) -> usize {
        self.bands.len()
    }

    pub fn n_subchannels(&self) -> usize {
        self.band_of.len()
    }

    pub fn band(&self, m: usize) -> &[usize] {
        &self.bands[m]
    }

    pub fn band_of(&self, n: usize) -> usize {
        self.band_of[n]
    }
}

/// Validated problem data shared by the allocator, dual optimizer and simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub traffic: TrafficParams,
    pub channel: ChannelParams,
    pub bands: BandMap,
    /// Sub-channel bandwidth `W` (Hz).
    pub bandwidth: f64,
    pub p_s_max: f64,
    pub p_r_max: f64,
    /// Rate target (bit/s).
    pub r_min: f64,
}

impl Scenario {
    pub fn from_config(cfg: &ScenarioConfig) -> Result<Self> {
        let net = &cfg.network;
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} must be > 0")))
            }
        };
        positive("bandwidth_hz", net.bandwidth_hz)?;
        positive("frame_duration", net.frame_duration)?;
        positive("lambda_tf", cfg.traffic.lambda_tf)?;
        positive("mu_tf", cfg.traffic.mu_tf)?;
        positive("p_s_max", cfg.power.p_s_max)?;
        positive("p_r_max", cfg.power.p_r_max)?;
        if !(cfg.rate.r_min >= 0.0 && cfg.rate.r_min.is_finite()) {
            return Err(Error::Config(format!("r_min = {} must be >= 0", cfg.rate.r_min)));
        }
        if !(net.alpha > 0.0 && net.alpha < 1.0) {
            return Err(Error::Config(format!("alpha = {} not in (0, 1)", net.alpha)));
        }
        if net.n_subchannels == 0 || net.n_bands == 0 {
            return Err(Error::Config("n_subchannels and n_bands must be >= 1".into()));
        }
        let bands = match &net.band_map {
            BandMapSpec::Named(name) if name == "uniform" => {
                BandMap::uniform(net.n_subchannels, net.n_bands)?
            }
            BandMapSpec::Named(other) => {
                return Err(Error::Config(format!("band_map = {other:?}; expected \"uniform\" or a list")))
            }
            BandMapSpec::Explicit(b) => BandMap::explicit(net.n_subchannels, b.clone())?,
        };
        if bands.n_bands() != net.n_bands {
            return Err(Error::Config(format!(
                "band_map lists {} bands but n_bands = {}",
                bands.n_bands(),
                net.n_bands
            )));
        }
        let tf = net.frame_duration;
        let traffic = TrafficParams::new(cfg.traffic.lambda_tf / tf, cfg.traffic.mu_tf / tf, tf, net.alpha)
            .map_err(|e| Error::Config(e.to_string()))?;
        let mean_sd = calibrate_mean_snr(cfg.power.p_s_max, net.n_subchannels, cfg.channel.sd_snr_db)?;
        let channel = ChannelParams::new(
            cfg.channel.path_loss_exponent,
            cfg.channel.relay_position,
            mean_sd,
            net.n_subchannels,
        )
        .map_err(|e| Error::Config(e.to_string()))?;
        Ok(Scenario {
            traffic,
            channel,
            bands,
            bandwidth: net.bandwidth_hz,
            p_s_max: cfg.power.p_s_max,
            p_r_max: cfg.power.p_r_max,
            r_min: cfg.rate.r_min,
        })
    }

    pub fn n_subchannels(&self) -> usize {
        self.bands.n_subchannels()
    }

    pub fn n_bands(&self) -> usize {
        self.bands.n_bands()
    }

    /// `R_min / W`.
    pub fn r_min_normalized(&self) -> f64 {
        self.r_min / self.bandwidth
    }

    /// Spectral efficiency `R / (W N)` of a rate `R`.
    pub fn efficiency(&self, rate: f64) -> f64 {
        rate / (self.bandwidth * self.n_subchannels() as f64)
    }
}

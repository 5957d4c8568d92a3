//! Block-fading channel gains for the source-relay, relay-destination and
//! source-destination links, and the per-frame network state (gains plus
//! sensing outcomes).
//!
//! Gains are power gains normalized by interference-plus-noise power. Each is
//! a path-loss mean times an `Exp(1)` Rayleigh power fade, drawn i.i.d. across
//! sub-channels and frames. Nodes sit on a line with the relay at
//! `relay_position` (fraction of the source-destination distance), so the
//! S-R and R-D means are the S-D mean scaled by `d^-ploss`.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::exponential;
use crate::traffic::TrafficState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub path_loss_exponent: f64,
    pub relay_position: f64,
    /// Mean S-D gain `E[g_sd]`.
    pub mean_sd_snr: f64,
    pub n_subchannels: usize,
}

impl ChannelParams {
    pub fn new(
        path_loss_exponent: f64,
        relay_position: f64,
        mean_sd_snr: f64,
        n_subchannels: usize,
    ) -> Result<Self> {
        if !(path_loss_exponent > 0.0 && path_loss_exponent.is_finite()) {
            return Err(Error::domain("path_loss_exponent", format!("{path_loss_exponent}")));
        }
        if !(relay_position > 0.0 && relay_position < 1.0) {
            return Err(Error::domain("relay_position", format!("{relay_position} not in (0, 1)")));
        }
        if !(mean_sd_snr > 0.0 && mean_sd_snr.is_finite()) {
            return Err(Error::domain("mean_sd_snr", format!("{mean_sd_snr}")));
        }
        if n_subchannels == 0 {
            return Err(Error::domain("n_subchannels", "must be >= 1"));
        }
        Ok(ChannelParams {
            path_loss_exponent,
            relay_position,
            mean_sd_snr,
            n_subchannels,
        })
    }

    pub fn mean_sr(&self) -> f64 {
        self.mean_sd_snr * self.relay_position.powf(-self.path_loss_exponent)
    }

    pub fn mean_rd(&self) -> f64 {
        self.mean_sd_snr * (1.0 - self.relay_position).powf(-self.path_loss_exponent)
    }
}

/// Mean S-D gain for which `p_s_max * E[g_sd] / n` equals `target_db`.
pub fn calibrate_mean_snr(p_s_max: f64, n_subchannels: usize, target_db: f64) -> Result<f64> {
    if !(p_s_max > 0.0) || n_subchannels == 0 {
        return Err(Error::domain(
            "calibration",
            format!("p_s_max={p_s_max}, n={n_subchannels}"),
        ));
    }
    Ok(10f64.powf(target_db / 10.0) * n_subchannels as f64 / p_s_max)
}

/// Gains of the three links on each sub-channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelGains {
    pub sr: Vec<f64>,
    pub rd: Vec<f64>,
    pub sd: Vec<f64>,
}

impl ChannelGains {
    pub fn new(sr: Vec<f64>, rd: Vec<f64>, sd: Vec<f64>) -> Result<Self> {
        if sr.len() != sd.len() || rd.len() != sd.len() {
            return Err(Error::Dimension(format!(
                "gain vectors of length {}, {}, {}",
                sr.len(),
                rd.len(),
                sd.len()
            )));
        }
        if sr.iter().chain(&rd).chain(&sd).any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(Error::domain("gain", "gains must be finite and >= 0"));
        }
        Ok(ChannelGains { sr, rd, sd })
    }

    pub fn len(&self) -> usize {
        self.sd.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sd.is_empty()
    }

    /// Same direct link with the relay switched off.
    pub fn without_relay(&self) -> Self {
        ChannelGains {
            sr: vec![0.0; self.len()],
            rd: vec![0.0; self.len()],
            sd: self.sd.clone(),
        }
    }
}

/// Draws one frame of gains. Per sub-channel the fades are drawn in the order S-R, R-D, S-D.
pub fn sample_gains<R: Rng + ?Sized>(params: &ChannelParams, rng: &mut R) -> ChannelGains {
    let n = params.n_subchannels;
    let (msr, mrd, msd) = (params.mean_sr(), params.mean_rd(), params.mean_sd_snr);
    let mut g = ChannelGains {
        sr: Vec::with_capacity(n),
        rd: Vec::with_capacity(n),
        sd: Vec::with_capacity(n),
    };
    for _ in 0..n {
        g.sr.push(msr * exponential(rng, 1.0));
        g.rd.push(mrd * exponential(rng, 1.0));
        g.sd.push(msd * exponential(rng, 1.0));
    }
    g
}

/// Network state of one frame: channel gains and the sensing outcomes at the
/// start of each phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkStateInfo {
    pub gains: ChannelGains,
    /// Sensed state of each band at `t = 0`.
    pub x: Vec<TrafficState>,
    /// Sensed state of each band at `t = alpha T_f`.
    pub y: Vec<TrafficState>,
}

impl NetworkStateInfo {
    pub fn new(gains: ChannelGains, x: Vec<TrafficState>, y: Vec<TrafficState>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::Dimension(format!("{} x outcomes vs {} y outcomes", x.len(), y.len())));
        }
        Ok(NetworkStateInfo { gains, x, y })
    }

    pub fn n_bands(&self) -> usize {
        self.x.len()
    }

    pub fn without_relay(&self) -> Self {
        NetworkStateInfo {
            gains: self.gains.without_relay(),
            x: self.x.clone(),
            y: self.y.clone(),
        }
    }
}

/// Writes gain traces as CSV rows `frame,n,g_sr,g_rd,g_sd`.
pub fn write_gain_trace<W: Write>(out: W, frames: &[ChannelGains]) -> Result<()> {
    let mut w = crate::table::csv_writer(out);
    w.write_record(["frame", "n", "g_sr", "g_rd", "g_sd"])?;
    for (f, g) in frames.iter().enumerate() {
        for n in 0..g.len() {
            w.write_record(&[
                f.to_string(),
                n.to_string(),
                g.sr[n].to_string(),
                g.rd[n].to_string(),
                g.sd[n].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a gain trace written by [`write_gain_trace`] (or produced externally).
///
/// Rows must be grouped by frame with `n = 0..N-1` in order; `#` lines are comments.
pub fn read_gain_trace<R: Read>(input: R, n_subchannels: usize) -> Result<Vec<ChannelGains>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut frames: Vec<ChannelGains> = Vec::new();
    let mut cur: Option<(usize, Vec<f64>, Vec<f64>, Vec<f64>)> = None;
    let bad = |detail: String| Error::Parse {
        kind: "gain trace",
        detail,
    };
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 5 {
            return Err(bad(format!("row {line}: expected 5 fields, got {}", rec.len())));
        }
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .map_err(|e| bad(format!("row {line} field {i}: {e}")))
        };
        let frame = rec[0]
            .parse::<usize>()
            .map_err(|e| bad(format!("row {line}: frame {e}")))?;
        let n = rec[1]
            .parse::<usize>()
            .map_err(|e| bad(format!("row {line}: n {e}")))?;
        if cur.as_ref().is_some_and(|c| c.0 != frame) {
            let (f, sr, rd, sd) = cur.take().unwrap();
            if sd.len() != n_subchannels {
                return Err(bad(format!("frame {f} has {} sub-channels", sd.len())));
            }
            frames.push(ChannelGains::new(sr, rd, sd)?);
        }
        let c = cur.get_or_insert_with(|| (frame, Vec::new(), Vec::new(), Vec::new()));
        if n != c.3.len() {
            return Err(bad(format!("row {line}: sub-channel {n} out of order")));
        }
        c.1.push(num(2)?);
        c.2.push(num(3)?);
        c.3.push(num(4)?);
    }
    if let Some((f, sr, rd, sd)) = cur {
        if sd.len() != n_subchannels {
            return Err(bad(format!("frame {f} has {} sub-channels", sd.len())));
        }
        frames.push(ChannelGains::new(sr, rd, sd)?);
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Stream, Streams};

    #[test]
    fn calibration_examples() {
        assert!((calibrate_mean_snr(1.0, 1, 0.0).unwrap() - 1.0).abs() < 1e-15);
        let m = calibrate_mean_snr(1.0, 16, 5.0).unwrap();
        assert!((m - 50.596).abs() < 1e-3, "{m}");
        let h = calibrate_mean_snr(2.0, 16, 5.0).unwrap();
        assert!((h - 25.298).abs() < 1e-3, "{h}");
        assert!(calibrate_mean_snr(0.0, 16, 5.0).is_err());
    }

    #[test]
    fn midpoint_relay_gains_are_sixteen_times_direct() {
        let p = ChannelParams::new(4.0, 0.5, 3.0, 4).unwrap();
        assert!((p.mean_sr() / p.mean_sd_snr - 16.0).abs() < 1e-12);
        assert!((p.mean_rd() / p.mean_sd_snr - 16.0).abs() < 1e-12);
    }

    #[test]
    fn gains_scale_linearly_with_mean() {
        let s = Streams::new(4);
        let p1 = ChannelParams::new(4.0, 0.5, 2.0, 8).unwrap();
        let p2 = ChannelParams::new(4.0, 0.5, 6.0, 8).unwrap();
        let a = sample_gains(&p1, &mut s.rng(Stream::Channel, 0));
        let b = sample_gains(&p2, &mut s.rng(Stream::Channel, 0));
        for n in 0..8 {
            assert!((b.sd[n] - 3.0 * a.sd[n]).abs() <= 1e-12 * b.sd[n]);
            assert!((b.sr[n] - 3.0 * a.sr[n]).abs() <= 1e-12 * b.sr[n]);
            assert!((b.rd[n] - 3.0 * a.rd[n]).abs() <= 1e-12 * b.rd[n]);
        }
    }

    #[test]
    fn sample_means_and_independence() {
        let p = ChannelParams::new(4.0, 0.5, 5.0, 2).unwrap();
        let s = Streams::new(12);
        let n = 100_000;
        let draws: Vec<ChannelGains> = (0..n).map(|i| sample_gains(&p, &mut s.rng(Stream::Channel, i))).collect();
        let mean = |f: &dyn Fn(&ChannelGains) -> f64| draws.iter().map(f).sum::<f64>() / n as f64;
        let msd = mean(&|g| g.sd[0]);
        let msr = mean(&|g| g.sr[1]);
        assert!((msd / 5.0 - 1.0).abs() < 0.02, "{msd}");
        assert!((msr / 80.0 - 1.0).abs() < 0.02, "{msr}");
        assert!(draws.iter().all(|g| g.sd.iter().chain(&g.sr).chain(&g.rd).all(|v| v.is_finite() && *v >= 0.0)));
        // correlation of the S-D gain across the two sub-channels
        let m0 = msd;
        let m1 = mean(&|g| g.sd[1]);
        let cov = mean(&|g| (g.sd[0] - m0) * (g.sd[1] - m1));
        let v0 = mean(&|g| (g.sd[0] - m0).powi(2));
        let v1 = mean(&|g| (g.sd[1] - m1).powi(2));
        assert!((cov / (v0 * v1).sqrt()).abs() < 0.02);
    }

    #[test]
    fn trace_round_trip() {
        let p = ChannelParams::new(4.0, 0.5, 5.0, 3).unwrap();
        let s = Streams::new(1);
        let frames: Vec<_> = (0..4).map(|i| sample_gains(&p, &mut s.rng(Stream::Channel, i))).collect();
        let mut buf = Vec::new();
        write_gain_trace(&mut buf, &frames).unwrap();
        let back = read_gain_trace(buf.as_slice(), 3).unwrap();
        assert_eq!(back, frames);
        assert!(read_gain_trace(buf.as_slice(), 2).is_err());
    }

    #[test]
    fn rejects_bad_gains() {
        assert!(ChannelGains::new(vec![1.0], vec![1.0, 2.0], vec![1.0]).is_err());
        assert!(ChannelGains::new(vec![-1.0], vec![1.0], vec![1.0]).is_err());
    }
}

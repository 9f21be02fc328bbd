//! Deterministic mock encoder driven by log-quadratic generators.
//!
//! ```toml
//! video_id = "mock"
//! seed = 7
//! noise_scale = 0.0
//! qps = [18, 21, 24, 27]
//!
//! [[entries]]
//! segment_index = 0
//! config_id = "A"
//! vmaf = [4.9, -0.004, -0.0003]
//! psnr = [3.9, -0.006, -0.00005]
//! bitrate = [12.0, -0.2, 0.0005]
//! fps = [2.5, 0.05, 0.0]
//! ```

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use super::EncoderError;
use crate::sweepdata::{ConfigDescriptor, EncodingSample, SweepDataset, DEFAULT_SEGMENT_SECONDS};

/// `(β₀, β₁, β₂)` of `exp(β₀ + β₁·qp + β₂·qp²)`.
pub type Generator = [f64; 3];

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthEntry {
    pub segment_index: u32,
    pub config_id: String,
    pub vmaf: Generator,
    pub psnr: Generator,
    pub bitrate: Generator,
    pub fps: Generator,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthParams {
    #[serde(default = "default_video")]
    pub video_id: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub noise_scale: f64,
    #[serde(default = "default_codec")]
    pub codec: String,
    #[serde(default = "default_segment_seconds")]
    pub segment_seconds: f64,
    pub qps: Vec<i32>,
    pub entries: Vec<GroundTruthEntry>,
}

fn default_video() -> String {
    "mock".to_string()
}

fn default_codec() -> String {
    "mock".to_string()
}

fn default_segment_seconds() -> f64 {
    DEFAULT_SEGMENT_SECONDS
}

/// Closed-form generator value.
pub fn generate(g: &Generator, qp: f64) -> f64 {
    (g[0] + g[1] * qp + g[2] * qp * qp).exp()
}

impl GroundTruthParams {
    pub fn from_toml(text: &str) -> Result<Self, EncoderError> {
        let p: Self = toml::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    /// Checks that every noiseless sample is finite, positive, and that VMAF
    /// stays within 100 even at the largest noise draw.
    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: String| Err(EncoderError::InvalidGroundTruth(m));
        if !(self.noise_scale >= 0.0 && self.noise_scale < 1.0) {
            return bad(format!("noise_scale {} outside [0, 1)", self.noise_scale));
        }
        if !(self.segment_seconds.is_finite() && self.segment_seconds > 0.0) {
            return bad("segment_seconds must be positive".into());
        }
        if self.qps.is_empty() || self.entries.is_empty() {
            return bad("qps and entries must be non-empty".into());
        }
        let mut keys = BTreeSet::new();
        for e in &self.entries {
            if e.config_id.is_empty() || !keys.insert((e.segment_index, e.config_id.as_str())) {
                return bad(format!("duplicate or empty entry {}/{}", e.segment_index, e.config_id));
            }
            for &qp in &self.qps {
                let q = qp as f64;
                for (name, g) in [("vmaf", &e.vmaf), ("psnr", &e.psnr), ("bitrate", &e.bitrate), ("fps", &e.fps)] {
                    let v = generate(g, q);
                    if !(v.is_finite() && v > 0.0) {
                        return bad(format!("{name} of {}/{} at qp {qp} is {v}", e.segment_index, e.config_id));
                    }
                }
                if generate(&e.vmaf, q) > 100.0 {
                    return bad(format!("vmaf of {}/{} exceeds 100 at qp {qp}", e.segment_index, e.config_id));
                }
            }
        }
        Ok(())
    }

    pub fn entry(&self, segment_index: u32, config_id: &str) -> Option<&GroundTruthEntry> {
        self.entries
            .iter()
            .find(|e| e.segment_index == segment_index && e.config_id == config_id)
    }
}

fn stream_id(segment_index: u32, config_id: &str, qp: i32) -> u64 {
    // FNV-1a; stable across platforms and toolchains.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let bytes = segment_index
        .to_le_bytes()
        .into_iter()
        .chain(qp.to_le_bytes())
        .chain(config_id.bytes());
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// One noisy sample; a pure function of `(gt.seed, segment, config, qp)`.
pub fn mock_encode(
    gt: &GroundTruthParams,
    segment_index: u32,
    config_id: &str,
    qp: i32,
) -> Result<EncodingSample, EncoderError> {
    let e = gt.entry(segment_index, config_id).ok_or_else(|| EncoderError::UnknownKey {
        segment_index,
        config_id: config_id.to_string(),
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(gt.seed);
    rng.set_stream(stream_id(segment_index, config_id, qp));
    let mut noisy = |g: &Generator| {
        let clean = generate(g, qp as f64);
        if gt.noise_scale == 0.0 {
            clean
        } else {
            clean * (1.0 + gt.noise_scale * rng.gen_range(-1.0..=1.0))
        }
    };
    let vmaf = noisy(&e.vmaf).min(100.0);
    let psnr = noisy(&e.psnr);
    let bitrate_kbps = noisy(&e.bitrate);
    let enc_fps = noisy(&e.fps);
    Ok(EncodingSample {
        video_id: gt.video_id.clone(),
        segment_index,
        config_id: config_id.to_string(),
        qp,
        vmaf,
        psnr_y: psnr,
        psnr_u: psnr,
        psnr_v: psnr,
        bitrate_kbps,
        enc_fps,
    })
}

/// Samples every entry at every QP, in `(segment, config, qp)` order.
pub fn mock_sweep(gt: &GroundTruthParams) -> Result<SweepDataset, EncoderError> {
    gt.validate()?;
    let mut entries: Vec<&GroundTruthEntry> = gt.entries.iter().collect();
    entries.sort_by(|a, b| (a.segment_index, &a.config_id).cmp(&(b.segment_index, &b.config_id)));
    let mut qps = gt.qps.clone();
    qps.sort_unstable();
    qps.dedup();
    let mut samples = Vec::with_capacity(entries.len() * qps.len());
    for e in &entries {
        for &qp in &qps {
            samples.push(mock_encode(gt, e.segment_index, &e.config_id, qp)?);
        }
    }
    let configs: BTreeSet<&str> = gt.entries.iter().map(|e| e.config_id.as_str()).collect();
    let configs = configs
        .into_iter()
        .map(|c| ConfigDescriptor::bare(c, gt.codec.clone()))
        .collect();
    Ok(SweepDataset::new(samples, configs, gt.segment_seconds, gt.codec.clone())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt(noise: f64) -> GroundTruthParams {
        GroundTruthParams {
            video_id: "v".into(),
            seed: 11,
            noise_scale: noise,
            codec: "mock".into(),
            segment_seconds: 3.0,
            qps: vec![20, 24, 28, 32],
            entries: vec![GroundTruthEntry {
                segment_index: 0,
                config_id: "A".into(),
                vmaf: [4.6, -0.002, -0.0002],
                psnr: [3.9, -0.006, -0.00005],
                bitrate: [12.0, -0.2, 0.0005],
                fps: [2.5, 0.05, 0.0],
            }],
        }
    }

    #[test]
    fn noiseless_is_closed_form() {
        let g = gt(0.0);
        let s = mock_encode(&g, 0, "A", 24).unwrap();
        assert_eq!(s.bitrate_kbps, (12.0f64 - 0.2 * 24.0 + 0.0005 * 576.0).exp());
        assert_eq!(s.psnr(), s.psnr_y);
    }

    #[test]
    fn deterministic() {
        let g = gt(0.05);
        let a = mock_encode(&g, 0, "A", 24).unwrap();
        let b = mock_encode(&g, 0, "A", 24).unwrap();
        assert_eq!(a, b);
        let c = mock_encode(&g, 0, "A", 28).unwrap();
        assert_ne!(a.bitrate_kbps / generate(&g.entries[0].bitrate, 24.0), c.bitrate_kbps / generate(&g.entries[0].bitrate, 28.0));
    }

    #[test]
    fn bitrate_drops_on_decreasing_branch() {
        let g = gt(0.0);
        let a = mock_encode(&g, 0, "A", 20).unwrap();
        let b = mock_encode(&g, 0, "A", 24).unwrap();
        assert!(b.bitrate_kbps < a.bitrate_kbps);
    }

    #[test]
    fn unknown_key() {
        assert!(matches!(mock_encode(&gt(0.0), 1, "A", 24), Err(EncoderError::UnknownKey { .. })));
    }

    #[test]
    fn sweep_cardinality() {
        assert_eq!(mock_sweep(&gt(0.0)).unwrap().samples().len(), 4);
        let mut bad = gt(0.0);
        bad.entries[0].vmaf = [5.0, 0.0, 0.0];
        assert!(matches!(mock_sweep(&bad), Err(EncoderError::InvalidGroundTruth(_))));
    }
}

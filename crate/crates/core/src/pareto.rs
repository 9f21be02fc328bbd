//! Pareto elimination over (VMAF ↑, PSNR ↑, bitrate ↓, FPS ↑).
//!
//! Pairwise O(n²) elimination. A point is dropped when another point is at
//! least as good in all four objectives and strictly better in one. Among
//! points with identical objective tuples only the one with the smallest key
//! survives.

use thiserror::Error;

use crate::sweepdata::{EncodingSample, SampleKey};

#[derive(Debug, Error, PartialEq)]
pub enum ParetoError {
    #[error("empty input")]
    EmptyInput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectivePoint {
    pub key: SampleKey,
    pub vmaf: f64,
    /// PSNR_611 in dB.
    pub psnr: f64,
    pub bitrate_kbps: f64,
    pub fps: f64,
}

impl ObjectivePoint {
    pub fn from_sample(s: &EncodingSample) -> Self {
        Self {
            key: s.key(),
            vmaf: s.vmaf,
            psnr: s.psnr(),
            bitrate_kbps: s.bitrate_kbps,
            fps: s.enc_fps,
        }
    }

    fn same_objectives(&self, other: &Self) -> bool {
        self.vmaf == other.vmaf
            && self.psnr == other.psnr
            && self.bitrate_kbps == other.bitrate_kbps
            && self.fps == other.fps
    }
}

/// True iff `a` is no worse than `b` everywhere and strictly better somewhere.
pub fn dominates(a: &ObjectivePoint, b: &ObjectivePoint) -> bool {
    let no_worse = a.vmaf >= b.vmaf
        && a.psnr >= b.psnr
        && a.bitrate_kbps <= b.bitrate_kbps
        && a.fps >= b.fps;
    let better = a.vmaf > b.vmaf
        || a.psnr > b.psnr
        || a.bitrate_kbps < b.bitrate_kbps
        || a.fps > b.fps;
    no_worse && better
}

/// `a` eliminates `b`: dominance, or an identical tuple with a smaller key.
fn eliminates(a: &ObjectivePoint, b: &ObjectivePoint) -> bool {
    dominates(a, b) || (a.key < b.key && a.same_objectives(b))
}

/// For every input point (in input order), `None` if it is on the front or
/// the key of a front point that eliminates it.
pub fn classify(points: &[ObjectivePoint]) -> Result<Vec<Option<SampleKey>>, ParetoError> {
    if points.is_empty() {
        return Err(ParetoError::EmptyInput);
    }
    let on_front: Vec<bool> = points
        .iter()
        .map(|p| !points.iter().any(|q| eliminates(q, p)))
        .collect();
    let mut front_order: Vec<usize> = (0..points.len()).filter(|&i| on_front[i]).collect();
    front_order.sort_by(|&a, &b| points[a].key.cmp(&points[b].key));

    Ok(points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if on_front[i] {
                None
            } else {
                // Elimination is transitive, so some front point always eliminates p.
                front_order
                    .iter()
                    .find(|&&f| eliminates(&points[f], p))
                    .map(|&f| points[f].key.clone())
            }
        })
        .collect())
}

/// Non-dominated subset, sorted by key.
pub fn pareto_front(points: &[ObjectivePoint]) -> Result<Vec<ObjectivePoint>, ParetoError> {
    if points.is_empty() {
        return Err(ParetoError::EmptyInput);
    }
    let mut front: Vec<ObjectivePoint> = points
        .iter()
        .filter(|p| !points.iter().any(|q| eliminates(q, p)))
        .cloned()
        .collect();
    front.sort_by(|a, b| a.key.cmp(&b.key));
    front.dedup_by(|a, b| a.key == b.key);
    Ok(front)
}

/// Pareto front of a set of samples, returned as the surviving samples.
pub fn sample_front<'a>(samples: &[&'a EncodingSample]) -> Result<Vec<&'a EncodingSample>, ParetoError> {
    let points: Vec<ObjectivePoint> = samples.iter().map(|s| ObjectivePoint::from_sample(s)).collect();
    let keep = classify(&points)?;
    let mut out: Vec<&EncodingSample> = samples
        .iter()
        .zip(keep)
        .filter(|(_, k)| k.is_none())
        .map(|(s, _)| *s)
        .collect();
    out.sort_by(|a, b| (&a.config_id, a.qp).cmp(&(&b.config_id, b.qp)));
    Ok(out)
}

//! Offline model building with reuse, the per-segment decision loop, and the
//! comparison against a static constant-QP baseline.

use std::io::{Read, Write};

use thiserror::Error;

use crate::metrics::QualityKind;
use crate::models::{
    self, reuse_check, training_samples, ModelBundle, ModelError, ModelStore, Predicted, ReuseCheck,
};
use crate::numfmt::fmt_f64;
use crate::optimizer::{self, ConstraintSet, Decision, Mode, OptimizerError, DECISION_COLUMNS};
use crate::sweepdata::{EncodingSample, SweepDataset};

/// Largest VMAF reduction still treated as imperceptible.
pub const JND_VMAF_THRESHOLD: f64 = 6.0;
/// Default VMAF reduction applied to a baseline score.
pub const DEFAULT_JND_DELTA: f64 = 3.0;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("model store is empty")]
    EmptyStore,
    #[error("video `{0}` not found in the model store")]
    UnknownVideo(String),
    #[error("store holds several videos ({0}); pick one")]
    AmbiguousVideo(String),
    #[error("bandwidth trace has no value at t = {0}")]
    TraceGap(f64),
    #[error("invalid bandwidth trace: {0}")]
    InvalidTrace(String),
    #[error("baseline configuration `{config_id}` missing from segment {segment_index}")]
    BaselineConfigMissing { config_id: String, segment_index: u32 },
    #[error("JND delta {0} exceeds the {JND_VMAF_THRESHOLD}-point threshold")]
    DeltaTooLarge(f64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Piecewise-constant available bandwidth.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthTrace {
    steps: Vec<(f64, f64)>,
}

impl BandwidthTrace {
    pub fn new(steps: Vec<(f64, f64)>) -> Result<Self, SessionError> {
        let bad = |m: &str| Err(SessionError::InvalidTrace(m.to_string()));
        if steps.is_empty() {
            return bad("no steps");
        }
        if steps[0].0 != 0.0 {
            return bad("first step must start at t = 0");
        }
        if steps.iter().any(|&(t, k)| !(t.is_finite() && k.is_finite() && k > 0.0)) {
            return bad("times must be finite and bandwidth positive");
        }
        if steps.windows(2).any(|w| w[1].0 <= w[0].0) {
            return bad("times must be strictly increasing");
        }
        Ok(Self { steps })
    }

    pub fn constant(kbps: f64) -> Result<Self, SessionError> {
        Self::new(vec![(0.0, kbps)])
    }

    pub fn steps(&self) -> &[(f64, f64)] {
        &self.steps
    }

    /// Bandwidth in effect at `t`; the last step holds forever.
    pub fn at(&self, t: f64) -> Result<f64, SessionError> {
        if !(t >= 0.0) {
            return Err(SessionError::TraceGap(t));
        }
        let idx = self.steps.partition_point(|&(start, _)| start <= t);
        Ok(self.steps[idx - 1].1)
    }

    /// Reads a `t_seconds,available_kbps` CSV.
    pub fn from_csv<R: Read>(source: R) -> Result<Self, SessionError> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(source);
        let headers = reader.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| SessionError::InvalidTrace(format!("missing column `{name}`")))
        };
        let (ti, ki) = (col("t_seconds")?, col("available_kbps")?);
        let mut steps = Vec::new();
        for record in reader.records() {
            let record = record?;
            let num = |i: usize| -> Result<f64, SessionError> {
                let raw = record.get(i).unwrap_or("");
                raw.parse()
                    .map_err(|_| SessionError::InvalidTrace(format!("cannot parse `{raw}`")))
            };
            steps.push((num(ti)?, num(ki)?));
        }
        Self::new(steps)
    }
}

/// Reuse decision taken for one segment while building the store.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentBuildLog {
    pub video_id: String,
    pub segment_index: u32,
    /// `None` for the first segment or when the previous bundle lacked a
    /// configuration present now.
    pub check: Option<ReuseCheck>,
}

/// Builds the model store, reusing the previous segment's models whenever
/// they predict the current segment's Pareto samples within tolerance.
pub fn build_models(ds: &SweepDataset) -> Result<ModelStore, SessionError> {
    build_models_logged(ds).map(|(store, _)| store)
}

pub fn build_models_logged(ds: &SweepDataset) -> Result<(ModelStore, Vec<SegmentBuildLog>), SessionError> {
    let mut store = ModelStore::new();
    let mut log = Vec::new();
    for video_id in ds.videos() {
        let mut prev: Option<ModelBundle> = None;
        for segment_index in ds.segments(video_id) {
            let training = training_samples(ds, video_id, segment_index, true)?;
            let current: Vec<&EncodingSample> =
                training.values().flat_map(|(s, _)| s.iter().copied()).collect();
            let check = match &prev {
                None => None,
                Some(p) => match reuse_check(p, &current) {
                    Ok(c) => Some(c),
                    Err(ModelError::ConfigNotCovered(_)) => None,
                    Err(e) => return Err(e.into()),
                },
            };
            let bundle = match (&prev, check) {
                (Some(p), Some(c)) if c.reuse => p.reused_for(segment_index),
                _ => models::fit_segment_bundle(ds, video_id, segment_index, true)?,
            };
            log.push(SegmentBuildLog {
                video_id: video_id.to_string(),
                segment_index,
                check,
            });
            prev = Some(bundle.clone());
            store.insert(bundle);
        }
    }
    Ok((store, log))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionOptions {
    pub segment_seconds: f64,
    /// Multiplier applied to the trace bandwidth before it becomes `b_max`.
    pub safety: f64,
}

impl Default for SessionOptions {
    fn default() -> Self {
        Self {
            segment_seconds: crate::sweepdata::DEFAULT_SEGMENT_SECONDS,
            safety: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionRow {
    pub segment_index: u32,
    pub decision: Decision,
    /// Trace bandwidth at segment start, times the safety factor.
    pub available_kbps: f64,
    /// Bitrate cap actually enforced, if the mode uses one.
    pub b_max_used: Option<f64>,
    pub constraints_used: ConstraintSet,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Averages {
    pub bitrate_kbps: f64,
    pub vmaf: f64,
    pub psnr: f64,
    pub fps: f64,
}

impl Averages {
    pub fn of<'a>(points: impl IntoIterator<Item = &'a Predicted>) -> Self {
        let mut sum = Averages {
            bitrate_kbps: 0.0,
            vmaf: 0.0,
            psnr: 0.0,
            fps: 0.0,
        };
        let mut n = 0usize;
        for p in points {
            sum.bitrate_kbps += p.bitrate_kbps;
            sum.vmaf += p.vmaf;
            sum.psnr += p.psnr;
            sum.fps += p.fps;
            n += 1;
        }
        let n = n.max(1) as f64;
        Averages {
            bitrate_kbps: sum.bitrate_kbps / n,
            vmaf: sum.vmaf / n,
            psnr: sum.psnr / n,
            fps: sum.fps / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineComparison {
    pub config_id: String,
    pub qp: i32,
    /// Baseline predictions per segment, in row order.
    pub rows: Vec<Predicted>,
    pub averages: Averages,
    /// Bitrate saving of the adaptive run, in percent of the baseline.
    pub delta_gain_percent: f64,
    /// Adaptive minus baseline.
    pub delta_vmaf: f64,
    pub delta_psnr: f64,
    pub delta_fps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionReport {
    pub video_id: String,
    pub mode: Mode,
    pub rows: Vec<SessionRow>,
    pub averages: Averages,
    pub baseline: Option<BaselineComparison>,
}

fn pick_video<'a>(store: &'a ModelStore, video_id: Option<&'a str>) -> Result<&'a str, SessionError> {
    if store.is_empty() {
        return Err(SessionError::EmptyStore);
    }
    match video_id {
        Some(v) if store.segments(v).is_empty() => Err(SessionError::UnknownVideo(v.to_string())),
        Some(v) => Ok(v),
        None => {
            let videos = store.videos();
            if videos.len() == 1 {
                Ok(videos[0])
            } else {
                Err(SessionError::AmbiguousVideo(videos.join(", ")))
            }
        }
    }
}

/// Runs one decision per segment of `video_id` (or the store's only video).
///
/// In the max-quality and max-FPS modes the bitrate cap of each segment is
/// the trace value at the segment's start times `safety`, further capped by
/// `base.b_max` when set. The min-bitrate mode records the trace value but
/// does not enforce it.
pub fn run_session(
    store: &ModelStore,
    video_id: Option<&str>,
    trace: &BandwidthTrace,
    mode: Mode,
    base: &ConstraintSet,
    opts: SessionOptions,
) -> Result<SessionReport, SessionError> {
    if !(opts.segment_seconds.is_finite() && opts.segment_seconds > 0.0) {
        return Err(SessionError::InvalidInput(format!(
            "segment_seconds = {}",
            opts.segment_seconds
        )));
    }
    if !(opts.safety.is_finite() && opts.safety > 0.0) {
        return Err(SessionError::InvalidInput(format!("safety = {}", opts.safety)));
    }
    let video = pick_video(store, video_id)?;
    let mut rows = Vec::new();
    for bundle in store.segments(video) {
        let start = bundle.segment_index as f64 * opts.segment_seconds;
        let available = trace.at(start)? * opts.safety;
        let mut constraints = *base;
        let b_max_used = match mode {
            Mode::MinBitrate => base.b_max,
            Mode::MaxQuality | Mode::MaxFps => {
                let cap = base.b_max.map_or(available, |b| b.min(available));
                constraints.b_max = Some(cap);
                Some(cap)
            }
        };
        let decision = optimizer::solve(bundle, mode, &constraints)?;
        rows.push(SessionRow {
            segment_index: bundle.segment_index,
            decision,
            available_kbps: available,
            b_max_used,
            constraints_used: constraints,
        });
    }
    let averages = Averages::of(rows.iter().map(|r| &r.decision.predicted));
    Ok(SessionReport {
        video_id: video.to_string(),
        mode,
        rows,
        averages,
        baseline: None,
    })
}

/// `(baseline − adaptive) / baseline · 100`.
pub fn delta_gain_percent(baseline_avg_bitrate: f64, adaptive_avg_bitrate: f64) -> f64 {
    (baseline_avg_bitrate - adaptive_avg_bitrate) / baseline_avg_bitrate * 100.0
}

/// Fills the static-baseline comparison: the fixed `(config_id, qp)` is
/// predicted through the same bundles the session used.
pub fn compare_static(
    mut report: SessionReport,
    store: &ModelStore,
    config_id: &str,
    qp: i32,
) -> Result<SessionReport, SessionError> {
    let mut rows = Vec::with_capacity(report.rows.len());
    for row in &report.rows {
        let models = store
            .get(&report.video_id, row.segment_index)
            .and_then(|b| b.configs.get(config_id))
            .ok_or_else(|| SessionError::BaselineConfigMissing {
                config_id: config_id.to_string(),
                segment_index: row.segment_index,
            })?;
        rows.push(models.predict(qp as f64)?);
    }
    let averages = Averages::of(&rows);
    let adaptive = report.averages;
    report.baseline = Some(BaselineComparison {
        config_id: config_id.to_string(),
        qp,
        rows,
        averages,
        delta_gain_percent: delta_gain_percent(averages.bitrate_kbps, adaptive.bitrate_kbps),
        delta_vmaf: adaptive.vmaf - averages.vmaf,
        delta_psnr: adaptive.psnr - averages.psnr,
        delta_fps: adaptive.fps - averages.fps,
    });
    Ok(report)
}

/// Quality bound `baseline_vmaf − delta` for a just-noticeable-difference run.
pub fn jnd_constraint(baseline_vmaf: f64, delta: f64) -> Result<f64, SessionError> {
    if !(baseline_vmaf > 0.0 && baseline_vmaf <= 100.0) {
        return Err(SessionError::InvalidInput(format!(
            "baseline VMAF {baseline_vmaf} outside (0, 100]"
        )));
    }
    if delta > JND_VMAF_THRESHOLD {
        return Err(SessionError::DeltaTooLarge(delta));
    }
    if !(delta >= 0.0) {
        return Err(SessionError::InvalidInput(format!("negative JND delta {delta}")));
    }
    Ok(baseline_vmaf - delta)
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Writes the per-segment report followed by a `# summary` trailer.
pub fn write_report<W: Write>(report: &SessionReport, mut out: W) -> Result<(), SessionError> {
    writeln!(
        out,
        "segment_index,{DECISION_COLUMNS},available_kbps,b_max_used,vq_kind,vq_min,fps_min"
    )?;
    for row in &report.rows {
        let c = &row.constraints_used;
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            row.segment_index,
            row.decision.csv_row(),
            fmt_f64(row.available_kbps),
            opt(row.b_max_used),
            c.vq_min.map(|b| b.kind.to_string()).unwrap_or_default(),
            opt(c.vq_min.map(|b| b.value)),
            opt(c.fps_min),
        )?;
    }
    let a = &report.averages;
    writeln!(out, "# summary")?;
    writeln!(out, "# video_id={}", report.video_id)?;
    writeln!(out, "# mode={}", report.mode)?;
    writeln!(out, "# segments={}", report.rows.len())?;
    writeln!(out, "# avg_bitrate_kbps={}", fmt_f64(a.bitrate_kbps))?;
    writeln!(out, "# avg_vmaf={}", fmt_f64(a.vmaf))?;
    writeln!(out, "# avg_psnr={}", fmt_f64(a.psnr))?;
    writeln!(out, "# avg_fps={}", fmt_f64(a.fps))?;
    if let Some(b) = &report.baseline {
        writeln!(out, "# baseline={}:{}", b.config_id, b.qp)?;
        writeln!(out, "# baseline_avg_bitrate_kbps={}", fmt_f64(b.averages.bitrate_kbps))?;
        writeln!(out, "# baseline_avg_vmaf={}", fmt_f64(b.averages.vmaf))?;
        writeln!(out, "# baseline_avg_psnr={}", fmt_f64(b.averages.psnr))?;
        writeln!(out, "# baseline_avg_fps={}", fmt_f64(b.averages.fps))?;
        writeln!(out, "# delta_gain_percent={}", fmt_f64(b.delta_gain_percent))?;
        writeln!(out, "# delta_vmaf={}", fmt_f64(b.delta_vmaf))?;
        writeln!(out, "# delta_psnr={}", fmt_f64(b.delta_psnr))?;
        writeln!(out, "# delta_fps={}", fmt_f64(b.delta_fps))?;
    }
    Ok(())
}

/// Quality kind of a constraint set, for reporting.
pub fn constraint_kind(c: &ConstraintSet) -> Option<QualityKind> {
    c.vq_min.map(|b| b.kind)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_lookup() {
        let t = BandwidthTrace::new(vec![(0.0, 10_000.0), (3.0, 2_000.0)]).unwrap();
        assert_eq!(t.at(0.0).unwrap(), 10_000.0);
        assert_eq!(t.at(2.999).unwrap(), 10_000.0);
        assert_eq!(t.at(3.0).unwrap(), 2_000.0);
        assert_eq!(t.at(1e6).unwrap(), 2_000.0);
        assert!(t.at(-1.0).is_err());
    }

    #[test]
    fn trace_validation() {
        assert!(BandwidthTrace::new(vec![]).is_err());
        assert!(BandwidthTrace::new(vec![(1.0, 5.0)]).is_err());
        assert!(BandwidthTrace::new(vec![(0.0, 5.0), (0.0, 6.0)]).is_err());
        assert!(BandwidthTrace::new(vec![(0.0, -5.0)]).is_err());
        let csv = "t_seconds,available_kbps\n0,10000\n3,2000\n";
        let t = BandwidthTrace::from_csv(csv.as_bytes()).unwrap();
        assert_eq!(t.steps(), &[(0.0, 10_000.0), (3.0, 2_000.0)]);
    }

    #[test]
    fn jnd_examples() {
        assert!((jnd_constraint(92.58, 3.0).unwrap() - 89.58).abs() < 1e-12);
        assert!((jnd_constraint(99.56, 3.0).unwrap() - 96.56).abs() < 1e-12);
        assert_eq!(jnd_constraint(50.0, 0.0).unwrap(), 50.0);
        assert!(matches!(jnd_constraint(90.0, 6.5), Err(SessionError::DeltaTooLarge(_))));
        assert!(jnd_constraint(0.0, 3.0).is_err());
        assert!(jnd_constraint(90.0, -1.0).is_err());
    }

    #[test]
    fn delta_gain_sign() {
        assert!((delta_gain_percent(10_864.0, 9_656.0) - 11.1).abs() < 0.05);
        assert_eq!(delta_gain_percent(100.0, 100.0), 0.0);
        assert!(delta_gain_percent(100.0, 120.0) < 0.0);
    }
}

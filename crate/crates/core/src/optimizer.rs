//! Constrained selection of (configuration, integer QP) over a segment's models.
//!
//! Three modes are supported:
//!
//! * minimum bitrate subject to `VQ ≥ vq_min` and `FPS ≥ fps_min`,
//! * maximum quality subject to `B ≤ b_max` and `FPS ≥ fps_min`,
//! * maximum encoding FPS subject to `B ≤ b_max` and `VQ ≥ vq_min`.
//!
//! Per configuration, each constraint is turned into an integer QP interval by
//! inverting its model and rounding toward the feasible side (floor for a
//! quality lower bound on a decreasing model, ceil for a bitrate cap), then
//! re-checked with `predict`. Models that turn inside the support are scanned
//! instead. The best feasible point is chosen under a total order:
//!
//! | mode        | primary          | then          | then        | then   |
//! |-------------|------------------|---------------|-------------|--------|
//! | min-bitrate | lowest bitrate   | highest FPS   | `config_id` | low QP |
//! | max-quality | highest quality  | lowest bitrate| `config_id` | low QP |
//! | max-fps     | highest FPS      | lowest bitrate| `config_id` | low QP |
//!
//! When nothing is feasible, [`relax_and_retry`] scans a ±4 QP window.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::metrics::QualityKind;
use crate::models::{Branch, ConfigModels, Direction, ModelBundle, ModelError, Objective, Predicted};

/// Half-width of the relaxation QP window.
pub const RELAX_WINDOW_QP: i32 = 4;

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("bundle has no configurations")]
    EmptyBundle,
    #[error("{mode} mode requires a {name} constraint")]
    MissingConstraint { mode: Mode, name: &'static str },
    #[error("no predictable point inside the relaxation window around QP {0}")]
    EmptyWindow(i32),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    MinBitrate,
    MaxQuality,
    MaxFps,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::MinBitrate => "min-bitrate",
            Mode::MaxQuality => "max-quality",
            Mode::MaxFps => "max-fps",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "min-bitrate" => Ok(Mode::MinBitrate),
            "max-quality" => Ok(Mode::MaxQuality),
            "max-fps" => Ok(Mode::MaxFps),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityBound {
    pub kind: QualityKind,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ConstraintSet {
    pub vq_min: Option<QualityBound>,
    pub b_max: Option<f64>,
    pub fps_min: Option<f64>,
}

impl ConstraintSet {
    pub fn with_vq_min(mut self, kind: QualityKind, value: f64) -> Self {
        self.vq_min = Some(QualityBound { kind, value });
        self
    }

    pub fn with_b_max(mut self, kbps: f64) -> Self {
        self.b_max = Some(kbps);
        self
    }

    pub fn with_fps_min(mut self, fps: f64) -> Self {
        self.fps_min = Some(fps);
        self
    }

    /// Every present constraint holds for `p`.
    pub fn satisfied_by(&self, p: &Predicted) -> bool {
        self.vq_min.is_none_or(|b| quality(p, b.kind) >= b.value)
            && self.b_max.is_none_or(|b| p.bitrate_kbps <= b)
            && self.fps_min.is_none_or(|f| p.fps >= f)
    }

    fn require(&self, mode: Mode) -> Result<(), OptimizerError> {
        let missing = |name| Err(OptimizerError::MissingConstraint { mode, name });
        match mode {
            Mode::MinBitrate if self.vq_min.is_none() => missing("vq_min"),
            Mode::MinBitrate | Mode::MaxQuality if self.fps_min.is_none() => missing("fps_min"),
            Mode::MaxQuality | Mode::MaxFps if self.b_max.is_none() => missing("b_max"),
            Mode::MaxFps if self.vq_min.is_none() => missing("vq_min"),
            _ => Ok(()),
        }
    }

    /// Only the constraint the mode's objective trades against directly.
    fn primary_only(&self, mode: Mode) -> Self {
        match mode {
            Mode::MinBitrate => Self {
                vq_min: self.vq_min,
                ..Self::default()
            },
            Mode::MaxQuality | Mode::MaxFps => Self {
                b_max: self.b_max,
                ..Self::default()
            },
        }
    }

    /// `(normalized bitrate excess, sum of other normalized violations)`.
    fn violation(&self, p: &Predicted) -> (f64, f64) {
        let rel = |excess: f64, bound: f64| {
            if excess <= 0.0 {
                0.0
            } else if bound > 0.0 {
                excess / bound
            } else {
                excess
            }
        };
        let bitrate = self.b_max.map_or(0.0, |b| rel(p.bitrate_kbps - b, b));
        let vq = self
            .vq_min
            .map_or(0.0, |b| rel(b.value - quality(p, b.kind), b.value));
        let fps = self.fps_min.map_or(0.0, |f| rel(f - p.fps, f));
        (bitrate, vq + fps)
    }
}

pub fn quality(p: &Predicted, kind: QualityKind) -> f64 {
    match kind {
        QualityKind::Vmaf => p.vmaf,
        QualityKind::Psnr611 => p.psnr,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DecisionStatus {
    Feasible,
    Relaxed(String),
    Infeasible,
}

impl fmt::Display for DecisionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecisionStatus::Feasible => f.write_str("feasible"),
            DecisionStatus::Relaxed(how) => write!(f, "relaxed:{how}"),
            DecisionStatus::Infeasible => f.write_str("infeasible"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub config_id: String,
    pub qp: i32,
    pub predicted: Predicted,
    pub status: DecisionStatus,
    pub objective_value: f64,
}

pub const DECISION_COLUMNS: &str =
    "config_id,qp,vmaf,psnr,bitrate_kbps,fps,status,objective_value";

impl Decision {
    /// One CSV row in [`DECISION_COLUMNS`] order.
    pub fn csv_row(&self) -> String {
        use crate::numfmt::fmt_f64;
        format!(
            "{},{},{},{},{},{},{},{}",
            self.config_id,
            self.qp,
            fmt_f64(self.predicted.vmaf),
            fmt_f64(self.predicted.psnr),
            fmt_f64(self.predicted.bitrate_kbps),
            fmt_f64(self.predicted.fps),
            self.status,
            fmt_f64(self.objective_value),
        )
    }
}

/// A predicted grid point.
#[derive(Debug, Clone)]
pub struct Candidate<'a> {
    pub config_id: &'a str,
    pub qp: i32,
    pub predicted: Predicted,
}

/// Quality kind the mode ranks by: the constraint's kind, else VMAF.
fn ranking_kind(c: &ConstraintSet) -> QualityKind {
    c.vq_min.map_or(QualityKind::Vmaf, |b| b.kind)
}

pub fn objective_value(mode: Mode, kind: QualityKind, p: &Predicted) -> f64 {
    match mode {
        Mode::MinBitrate => p.bitrate_kbps,
        Mode::MaxQuality => quality(p, kind),
        Mode::MaxFps => p.fps,
    }
}

/// Total order on candidates; `Less` means better.
pub fn rank(mode: Mode, kind: QualityKind, a: &Candidate<'_>, b: &Candidate<'_>) -> Ordering {
    let (pa, pb) = (&a.predicted, &b.predicted);
    let head = match mode {
        Mode::MinBitrate => pa
            .bitrate_kbps
            .total_cmp(&pb.bitrate_kbps)
            .then(pb.fps.total_cmp(&pa.fps)),
        Mode::MaxQuality => quality(pb, kind)
            .total_cmp(&quality(pa, kind))
            .then(pa.bitrate_kbps.total_cmp(&pb.bitrate_kbps)),
        Mode::MaxFps => pb
            .fps
            .total_cmp(&pa.fps)
            .then(pa.bitrate_kbps.total_cmp(&pb.bitrate_kbps)),
    };
    head.then_with(|| a.config_id.cmp(b.config_id))
        .then(a.qp.cmp(&b.qp))
}

fn decision(mode: Mode, kind: QualityKind, c: Candidate<'_>, status: DecisionStatus) -> Decision {
    Decision {
        config_id: c.config_id.to_string(),
        qp: c.qp,
        objective_value: objective_value(mode, kind, &c.predicted),
        predicted: c.predicted,
        status,
    }
}

fn branch_for(direction: Direction) -> Branch {
    match direction {
        Direction::Increasing => Branch::FpsIncreasing,
        _ => Branch::QualityDecreasing,
    }
}

/// One bound on one objective.
#[derive(Debug, Clone, Copy)]
enum Bound {
    AtLeast(f64),
    AtMost(f64),
}

impl Bound {
    fn holds(self, v: f64) -> bool {
        match self {
            Bound::AtLeast(t) => v >= t,
            Bound::AtMost(t) => v <= t,
        }
    }

    fn target(self) -> f64 {
        match self {
            Bound::AtLeast(t) | Bound::AtMost(t) => t,
        }
    }
}

fn bounds(c: &ConstraintSet) -> Vec<(Objective, Bound)> {
    let mut out = Vec::new();
    if let Some(vq) = c.vq_min {
        let obj = match vq.kind {
            QualityKind::Vmaf => Objective::Vmaf,
            QualityKind::Psnr611 => Objective::Psnr,
        };
        out.push((obj, Bound::AtLeast(vq.value)));
    }
    if let Some(b) = c.b_max {
        out.push((Objective::Bitrate, Bound::AtMost(b)));
    }
    if let Some(f) = c.fps_min {
        out.push((Objective::Fps, Bound::AtLeast(f)));
    }
    out
}

/// Integer QPs in `[lo, hi]` at which `model` satisfies `bound`, as a mask.
fn constraint_mask(
    models: &ConfigModels,
    objective: Objective,
    bound: Bound,
    lo: i32,
    hi: i32,
) -> Result<Vec<bool>, ModelError> {
    let model = models.get(objective);
    let pass = |q: i32| -> Result<bool, ModelError> { Ok(bound.holds(model.predict(q as f64)?)) };
    let scan = || (lo..=hi).map(pass).collect::<Result<Vec<bool>, _>>();

    let direction = match model.direction_on(lo as f64, hi as f64) {
        Some(d @ (Direction::Increasing | Direction::Decreasing)) => d,
        _ => return scan(),
    };
    let (pass_lo, pass_hi) = (pass(lo)?, pass(hi)?);
    if pass_lo == pass_hi {
        return Ok(vec![pass_lo; (hi - lo + 1) as usize]);
    }
    let Ok(root) = model.invert(bound.target(), branch_for(direction)) else {
        return scan();
    };
    let width = (hi - lo + 1) as usize;
    let mut mask = vec![false; width];
    if pass_lo {
        // Feasible set is [lo, k].
        let mut k = (root.floor() as i32).clamp(lo, hi);
        while k < hi && pass(k + 1)? {
            k += 1;
        }
        while k >= lo && !pass(k)? {
            k -= 1;
        }
        for q in lo..=k {
            mask[(q - lo) as usize] = true;
        }
    } else {
        // Feasible set is [k, hi].
        let mut k = (root.ceil() as i32).clamp(lo, hi);
        while k > lo && pass(k - 1)? {
            k -= 1;
        }
        while k <= hi && !pass(k)? {
            k += 1;
        }
        for q in k..=hi {
            mask[(q - lo) as usize] = true;
        }
    }
    Ok(mask)
}

/// Feasible integer QPs of one configuration over its fitted support.
pub fn feasible_qps(models: &ConfigModels, c: &ConstraintSet) -> Result<Vec<i32>, ModelError> {
    let (lo, hi) = models.support();
    let mut mask = vec![true; (hi - lo + 1).max(0) as usize];
    for (objective, bound) in bounds(c) {
        if !mask.iter().any(|&m| m) {
            break;
        }
        let m = constraint_mask(models, objective, bound, lo, hi)?;
        for (a, b) in mask.iter_mut().zip(m) {
            *a &= b;
        }
    }
    Ok((lo..=hi).filter(|q| mask[(q - lo) as usize]).collect())
}

fn best_feasible<'a>(
    bundle: &'a ModelBundle,
    mode: Mode,
    c: &ConstraintSet,
) -> Result<Option<Candidate<'a>>, OptimizerError> {
    let kind = ranking_kind(c);
    let per_config: Vec<Option<Candidate<'a>>> = bundle
        .configs
        .par_iter()
        .map(|(config_id, models)| -> Result<Option<Candidate<'a>>, ModelError> {
            let mut best: Option<Candidate<'a>> = None;
            for qp in feasible_qps(models, c)? {
                let cand = Candidate {
                    config_id: config_id.as_str(),
                    qp,
                    predicted: models.predict(qp as f64)?,
                };
                if best
                    .as_ref()
                    .is_none_or(|b| rank(mode, kind, &cand, b) == Ordering::Less)
                {
                    best = Some(cand);
                }
            }
            Ok(best)
        })
        .collect::<Result<_, _>>()?;
    Ok(per_config
        .into_iter()
        .flatten()
        .min_by(|a, b| rank(mode, kind, a, b)))
}

/// Solves `mode` over `bundle`, relaxing through the QP window when nothing
/// is feasible.
pub fn solve(bundle: &ModelBundle, mode: Mode, c: &ConstraintSet) -> Result<Decision, OptimizerError> {
    if bundle.configs.is_empty() {
        return Err(OptimizerError::EmptyBundle);
    }
    c.require(mode)?;
    match best_feasible(bundle, mode, c)? {
        Some(best) => Ok(decision(mode, ranking_kind(c), best, DecisionStatus::Feasible)),
        None => {
            let anchor = relaxation_anchor(bundle, mode, c)?;
            relax_and_retry(bundle, mode, c, anchor)
        }
    }
}

pub fn solve_min_bitrate(bundle: &ModelBundle, c: &ConstraintSet) -> Result<Decision, OptimizerError> {
    solve(bundle, Mode::MinBitrate, c)
}

pub fn solve_max_quality(bundle: &ModelBundle, c: &ConstraintSet) -> Result<Decision, OptimizerError> {
    solve(bundle, Mode::MaxQuality, c)
}

pub fn solve_max_fps(bundle: &ModelBundle, c: &ConstraintSet) -> Result<Decision, OptimizerError> {
    solve(bundle, Mode::MaxFps, c)
}

/// Every predictable grid point of the bundle, restricted to `qps` when given.
fn grid<'a>(bundle: &'a ModelBundle, window: Option<(i32, i32)>) -> Result<Vec<Candidate<'a>>, ModelError> {
    let mut out = Vec::new();
    for (config_id, models) in &bundle.configs {
        let (lo, hi) = match window {
            None => models.support(),
            Some((wlo, whi)) => {
                let (plo, phi) = models.predict_range();
                (wlo.max(plo), whi.min(phi))
            }
        };
        for qp in lo..=hi {
            out.push(Candidate {
                config_id,
                qp,
                predicted: models.predict(qp as f64)?,
            });
        }
    }
    Ok(out)
}

/// QP the relaxation window is centered on: the optimum under the mode's
/// primary constraint alone (quality for min-bitrate, bitrate otherwise), or
/// the grid point closest to meeting that constraint.
pub fn relaxation_anchor(bundle: &ModelBundle, mode: Mode, c: &ConstraintSet) -> Result<i32, OptimizerError> {
    let primary = c.primary_only(mode);
    if let Some(best) = best_feasible(bundle, mode, &primary)? {
        return Ok(best.qp);
    }
    let kind = ranking_kind(c);
    let points = grid(bundle, None)?;
    let closest = points
        .iter()
        .min_by(|a, b| {
            let (va, vb) = (primary.violation(&a.predicted), primary.violation(&b.predicted));
            (va.0 + va.1)
                .total_cmp(&(vb.0 + vb.1))
                .then_with(|| rank(mode, kind, a, b))
        })
        .ok_or(OptimizerError::EmptyBundle)?;
    Ok(closest.qp)
}

/// Scans every configuration at `|QP − anchor| ≤ 4` inside the bundle's
/// global QP bounds. A constraint-satisfying point wins (`qp-window`);
/// otherwise the point with the smallest bitrate excess, then the smallest
/// normalized violation of the remaining constraints (`least-violation`).
pub fn relax_and_retry(
    bundle: &ModelBundle,
    mode: Mode,
    c: &ConstraintSet,
    anchor: i32,
) -> Result<Decision, OptimizerError> {
    let (glo, ghi) = bundle.global_qp_bounds().ok_or(OptimizerError::EmptyBundle)?;
    let wlo = (anchor - RELAX_WINDOW_QP).max(glo);
    let whi = (anchor + RELAX_WINDOW_QP).min(ghi);
    let kind = ranking_kind(c);
    let points = grid(bundle, Some((wlo, whi)))?;

    let feasible = points
        .iter()
        .filter(|p| c.satisfied_by(&p.predicted))
        .min_by(|a, b| rank(mode, kind, a, b));
    if let Some(best) = feasible {
        return Ok(decision(mode, kind, best.clone(), DecisionStatus::Relaxed("qp-window".into())));
    }
    let least = points
        .iter()
        .min_by(|a, b| {
            let (va, vb) = (c.violation(&a.predicted), c.violation(&b.predicted));
            va.0.total_cmp(&vb.0)
                .then(va.1.total_cmp(&vb.1))
                .then_with(|| rank(mode, kind, a, b))
        })
        .ok_or(OptimizerError::EmptyWindow(anchor))?;
    Ok(decision(
        mode,
        kind,
        least.clone(),
        DecisionStatus::Relaxed("least-violation".into()),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ForwardModel, Provenance};
    use std::collections::BTreeMap;

    fn m(o: Objective, c: Vec<f64>, lo: i32, hi: i32) -> ForwardModel {
        ForwardModel::from_coeffs(o, c, 1.0, lo, hi).unwrap()
    }

    fn config(b0_bitrate: f64, fps_b0: f64, lo: i32, hi: i32) -> ConfigModels {
        ConfigModels::new(
            m(Objective::Vmaf, vec![4.7, -0.004, -0.0002], lo, hi),
            m(Objective::Psnr, vec![3.9, -0.006], lo, hi),
            m(Objective::Bitrate, vec![b0_bitrate, -0.12, 0.0005], lo, hi),
            m(Objective::Fps, vec![fps_b0, 0.03], lo, hi),
        )
        .unwrap()
    }

    fn bundle(configs: Vec<(&str, ConfigModels)>) -> ModelBundle {
        ModelBundle {
            video_id: "v".into(),
            segment_index: 0,
            configs: configs
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect::<BTreeMap<_, _>>(),
            provenance: Provenance::Fitted,
        }
    }

    fn vmaf_at(q: f64) -> f64 {
        (4.7 - 0.004 * q - 0.0002 * q * q).exp()
    }

    #[test]
    fn forced_single_qp() {
        let b = bundle(vec![("A", config(11.0, 2.5, 18, 45))]);
        // VMAF at 30 and 31 bracket the bound, FPS forbids QP < 30.
        let vq = 0.5 * (vmaf_at(30.0) + vmaf_at(31.0));
        let fps = (2.5f64 + 0.03 * 30.0).exp() - 1e-9;
        let c = ConstraintSet::default()
            .with_vq_min(QualityKind::Vmaf, vq)
            .with_fps_min(fps);
        let d = solve_min_bitrate(&b, &c).unwrap();
        assert_eq!((d.config_id.as_str(), d.qp), ("A", 30));
        assert_eq!(d.status, DecisionStatus::Feasible);
        assert!(c.satisfied_by(&d.predicted));
    }

    #[test]
    fn unconstrained_max_quality_takes_lowest_qp() {
        let b = bundle(vec![("A", config(11.0, 2.5, 18, 45)), ("B", config(10.5, 2.4, 20, 45))]);
        let c = ConstraintSet::default().with_b_max(1e9).with_fps_min(0.0);
        let d = solve_max_quality(&b, &c).unwrap();
        assert_eq!((d.config_id.as_str(), d.qp), ("A", 18));
        assert!((d.objective_value - vmaf_at(18.0)).abs() < 1e-9);
    }

    #[test]
    fn infeasible_bitrate_cap_relaxes() {
        let b = bundle(vec![("A", config(11.0, 2.5, 18, 45))]);
        let c = ConstraintSet::default().with_b_max(10.0).with_fps_min(0.0);
        let d = solve_max_quality(&b, &c).unwrap();
        assert_eq!(d.status, DecisionStatus::Relaxed("least-violation".into()));
        assert_eq!(d.qp, 45);
    }

    #[test]
    fn max_fps_tie_prefers_lower_bitrate() {
        let b = bundle(vec![("A", config(11.0, 2.5, 18, 45)), ("B", config(10.9, 2.5, 18, 45))]);
        let c = ConstraintSet::default()
            .with_b_max(1e9)
            .with_vq_min(QualityKind::Vmaf, 1.0);
        let d = solve_max_fps(&b, &c).unwrap();
        assert_eq!((d.config_id.as_str(), d.qp), ("B", 45));
    }

    #[test]
    fn max_fps_single_feasible_point() {
        let b = bundle(vec![("A", config(11.0, 2.5, 18, 45))]);
        let bitrate = |q: f64| (11.0 - 0.12 * q + 0.0005 * q * q).exp();
        // Bitrate cap admits QP ≥ 30, quality bound admits QP ≤ 30.
        let c = ConstraintSet::default()
            .with_b_max(bitrate(30.0) * (1.0 + 1e-12))
            .with_vq_min(QualityKind::Vmaf, vmaf_at(30.0) * (1.0 - 1e-12));
        let d = solve_max_fps(&b, &c).unwrap();
        assert_eq!(d.qp, 30);
        assert_eq!(d.status, DecisionStatus::Feasible);
    }

    #[test]
    fn window_with_one_feasible_point() {
        // A is fitted on 18..=30 only; B on 34..=45. The window around 31
        // reaches A's extrapolation zone, where one point meets the bounds.
        let b = bundle(vec![("A", config(11.0, 2.5, 18, 30)), ("B", config(11.0, 2.5, 34, 45))]);
        let vq = 0.5 * (vmaf_at(31.0) + vmaf_at(32.0));
        let fps = (2.5f64 + 0.03 * 31.0).exp() - 1e-9;
        let c = ConstraintSet::default()
            .with_vq_min(QualityKind::Vmaf, vq)
            .with_fps_min(fps);
        assert!(best_feasible(&b, Mode::MinBitrate, &c).unwrap().is_none());
        let d = relax_and_retry(&b, Mode::MinBitrate, &c, 31).unwrap();
        assert_eq!((d.config_id.as_str(), d.qp), ("A", 31));
        assert_eq!(d.status, DecisionStatus::Relaxed("qp-window".into()));
    }

    #[test]
    fn least_violation_honors_bitrate_cap() {
        let b = bundle(vec![("A", config(11.0, 2.5, 18, 45)), ("B", config(10.8, 2.5, 18, 45))]);
        let anchor = 30;
        let c = ConstraintSet::default()
            .with_b_max(1e9)
            .with_vq_min(QualityKind::Vmaf, 99.0)
            .with_fps_min(0.0);
        let d = relax_and_retry(&b, Mode::MaxFps, &c, anchor).unwrap();
        // Oracle: exhaustive scan of the window for the least quality
        // shortfall, ties going to higher FPS and then lower bitrate.
        let mut best: Option<(f64, f64, f64, &str, i32)> = None;
        for (cfg, models) in &b.configs {
            for q in anchor - 4..=anchor + 4 {
                let p = models.predict(q as f64).unwrap();
                let key = ((99.0 - p.vmaf) / 99.0, -p.fps, p.bitrate_kbps);
                if best.is_none_or(|(s, f, r, _, _)| key < (s, f, r)) {
                    best = Some((key.0, key.1, key.2, cfg, q));
                }
            }
        }
        let (_, _, _, cfg, q) = best.unwrap();
        assert_eq!((d.config_id.as_str(), d.qp), (cfg, q));
        assert!(d.predicted.bitrate_kbps <= 1e9);
        assert_eq!(d.status, DecisionStatus::Relaxed("least-violation".into()));
    }

    #[test]
    fn window_clamped_at_ceiling() {
        let b = bundle(vec![("A", config(11.0, 2.5, 18, 45))]);
        let c = ConstraintSet::default().with_b_max(1.0).with_fps_min(0.0);
        let d = relax_and_retry(&b, Mode::MaxQuality, &c, 45).unwrap();
        assert!(d.qp <= 45 && d.qp >= 41);
    }

    #[test]
    fn missing_constraints_and_empty_bundle() {
        let b = bundle(vec![("A", config(11.0, 2.5, 18, 45))]);
        assert!(matches!(
            solve_min_bitrate(&b, &ConstraintSet::default().with_fps_min(1.0)),
            Err(OptimizerError::MissingConstraint { name: "vq_min", .. })
        ));
        assert!(matches!(
            solve_max_quality(&b, &ConstraintSet::default().with_fps_min(1.0)),
            Err(OptimizerError::MissingConstraint { name: "b_max", .. })
        ));
        let empty = bundle(vec![]);
        assert!(matches!(
            solve_max_fps(&empty, &ConstraintSet::default()),
            Err(OptimizerError::EmptyBundle)
        ));
    }

    #[test]
    fn quadratic_quality_model_with_interior_vertex() {
        // This VMAF model turns at QP ≈ 22; the mask must still be exact.
        let mut cm = config(11.0, 2.5, 18, 45);
        cm.vmaf = m(Objective::Vmaf, vec![3.84, 0.0670, -0.001499], 18, 45);
        let c = ConstraintSet::default().with_vq_min(QualityKind::Vmaf, 90.0);
        let got = feasible_qps(&cm, &c).unwrap();
        let oracle: Vec<i32> = (18..=45)
            .filter(|&q| cm.vmaf.predict(q as f64).unwrap() >= 90.0)
            .collect();
        assert_eq!(got, oracle);
        assert_eq!(*got.last().unwrap(), 30);
    }

    #[test]
    fn decision_row() {
        let b = bundle(vec![("A", config(11.0, 2.5, 18, 45))]);
        let c = ConstraintSet::default().with_b_max(1e9).with_fps_min(0.0);
        let d = solve_max_quality(&b, &c).unwrap();
        let row = d.csv_row();
        assert!(row.starts_with("A,18,"));
        assert!(row.contains(",feasible,"));
    }
}

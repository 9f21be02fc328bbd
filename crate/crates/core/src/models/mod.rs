//! Log-domain polynomial forward models.
//!
//! Every (segment, configuration, objective) gets a model
//! `ln(value) = β₀ + β₁·QP + β₂·QP² + β₃·QP³` of order 0 to 3. The order is
//! chosen by adjusted R² over the candidates the sample count allows.

mod bundle;
mod store;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::polyfit::{self, PolyFitError};
use crate::sweepdata::SweepError;

pub use bundle::{
    fit_segment_bundle, reuse_check, training_samples, ConfigModels, ModelBundle, ObjectiveErrors,
    Predicted, Provenance, ReuseCheck, REUSE_BITRATE_TOL, REUSE_FPS_TOL, REUSE_QUALITY_TOL,
};
pub use store::{read_store, write_store, ModelStore, STORE_COLUMNS};

/// Highest polynomial order considered by the stepwise selection.
pub const MAX_ORDER: usize = 3;

/// QP distance beyond the fitted support that `predict` still accepts.
pub const EXTRAPOLATION_QP: i32 = 4;

/// Minimum number of distinct QPs needed to fit a model.
pub const MIN_DISTINCT_QPS: usize = 4;

/// Adjusted-R² margin a higher order must beat to be preferred.
const ORDER_TIE_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("need at least {MIN_DISTINCT_QPS} distinct QP values, got {0}")]
    TooFewPoints(usize),
    #[error("value {value} at QP {qp} is not strictly positive")]
    NonPositiveValue { qp: i32, value: f64 },
    #[error("singular least-squares system")]
    SingularSystem,
    #[error("max order {0} outside 0..=3")]
    InvalidOrder(usize),
    #[error("adjusted R² undefined for n = {n}, d = {d}")]
    DegenerateFreedom { n: usize, d: usize },
    #[error("adjusted R² undefined for zero total sum of squares")]
    ZeroTss,
    #[error("QP {qp} outside the model support [{lo}, {hi}] ± {EXTRAPOLATION_QP}")]
    OutOfSupport { qp: f64, lo: i32, hi: i32 },
    #[error("target {target} unachievable: {reason}")]
    Unachievable { target: f64, reason: String },
    #[error("target {target} only reachable across the turning point at QP {vertex}")]
    NonMonotoneSupport { target: f64, vertex: f64 },
    #[error("configuration `{0}` is not covered by the previous bundle")]
    ConfigNotCovered(String),
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("config {config_id}, {objective}: {source}")]
    InConfig {
        config_id: String,
        objective: Objective,
        #[source]
        source: Box<ModelError>,
    },
    #[error(transparent)]
    Sweep(#[from] SweepError),
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Objective {
    Vmaf,
    Psnr,
    Bitrate,
    Fps,
}

impl Objective {
    pub const ALL: [Objective; 4] = [
        Objective::Vmaf,
        Objective::Psnr,
        Objective::Bitrate,
        Objective::Fps,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Vmaf => "vmaf",
            Objective::Psnr => "psnr",
            Objective::Bitrate => "bitrate",
            Objective::Fps => "fps",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "vmaf" => Ok(Objective::Vmaf),
            "psnr" => Ok(Objective::Psnr),
            "bitrate" => Ok(Objective::Bitrate),
            "fps" => Ok(Objective::Fps),
            other => Err(format!("unknown objective `{other}`")),
        }
    }
}

/// Physically meaningful branch to pick when inverting a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    QualityDecreasing,
    BitrateDecreasing,
    FpsIncreasing,
}

impl Branch {
    pub fn for_objective(objective: Objective) -> Self {
        match objective {
            Objective::Vmaf | Objective::Psnr => Branch::QualityDecreasing,
            Objective::Bitrate => Branch::BitrateDecreasing,
            Objective::Fps => Branch::FpsIncreasing,
        }
    }

    fn increasing(self) -> bool {
        matches!(self, Branch::FpsIncreasing)
    }
}

/// Monotonic behaviour of a model over an interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Increasing,
    Decreasing,
    Constant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardModel {
    pub objective: Objective,
    pub order: usize,
    /// β₀..β_order, raw QP power basis, natural-log domain.
    pub coeffs: Vec<f64>,
    pub adj_r2: f64,
    pub qp_min: i32,
    pub qp_max: i32,
    /// Number of samples the model was fitted on; unknown for loaded models.
    pub n_points: Option<usize>,
}

impl ForwardModel {
    /// Builds a model from explicit coefficients, e.g. reference coefficients.
    pub fn from_coeffs(
        objective: Objective,
        coeffs: Vec<f64>,
        adj_r2: f64,
        qp_min: i32,
        qp_max: i32,
    ) -> Result<Self, ModelError> {
        if coeffs.is_empty() || coeffs.len() > MAX_ORDER + 1 {
            return Err(ModelError::Invalid(format!(
                "expected 1..=4 coefficients, got {}",
                coeffs.len()
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(ModelError::Invalid("non-finite coefficient".into()));
        }
        if qp_min >= qp_max {
            return Err(ModelError::Invalid(format!(
                "empty QP support [{qp_min}, {qp_max}]"
            )));
        }
        let model = Self {
            objective,
            order: coeffs.len() - 1,
            coeffs,
            adj_r2,
            qp_min,
            qp_max,
            n_points: None,
        };
        for qp in qp_min..=qp_max {
            let v = model.log_value(qp as f64).exp();
            if !(v.is_finite() && v > 0.0) {
                return Err(ModelError::Invalid(format!(
                    "prediction {v} at QP {qp} is not finite and positive"
                )));
            }
        }
        Ok(model)
    }

    pub fn log_value(&self, qp: f64) -> f64 {
        polyfit::eval(&self.coeffs, qp)
    }

    /// `(qp_min - 4, qp_max + 4)`: the range `predict` accepts.
    pub fn predict_range(&self) -> (i32, i32) {
        (self.qp_min - EXTRAPOLATION_QP, self.qp_max + EXTRAPOLATION_QP)
    }

    /// Predicted objective value. VMAF is clamped to 100.
    pub fn predict(&self, qp: f64) -> Result<f64, ModelError> {
        let (lo, hi) = self.predict_range();
        if !(qp >= lo as f64 && qp <= hi as f64) {
            return Err(ModelError::OutOfSupport {
                qp,
                lo: self.qp_min,
                hi: self.qp_max,
            });
        }
        let v = self.log_value(qp).exp();
        Ok(match self.objective {
            Objective::Vmaf => v.min(100.0),
            _ => v,
        })
    }

    /// Real roots of the derivative, ascending.
    fn turning_points(&self) -> Vec<f64> {
        let d = polyfit::derivative(&self.coeffs);
        match d.len() {
            2 if d[1] != 0.0 => vec![-d[0] / d[1]],
            3 if d[2] != 0.0 => {
                let disc = d[1] * d[1] - 4.0 * d[2] * d[0];
                if disc < 0.0 {
                    Vec::new()
                } else {
                    let (a, b) = quadratic_roots(d[2], d[1], d[0], disc);
                    if a == b {
                        // Double root: the derivative does not change sign.
                        Vec::new()
                    } else {
                        vec![a.min(b), a.max(b)]
                    }
                }
            }
            3 if d[1] != 0.0 => vec![-d[0] / d[1]],
            _ => Vec::new(),
        }
    }

    /// Direction of the model on `[lo, hi]`, or `None` if it turns inside.
    pub fn direction_on(&self, lo: f64, hi: f64) -> Option<Direction> {
        if self.turning_points().iter().any(|&t| t > lo && t < hi) {
            return None;
        }
        let d = polyfit::derivative(&self.coeffs);
        let slope = polyfit::eval(&d, 0.5 * (lo + hi));
        Some(if slope > 0.0 {
            Direction::Increasing
        } else if slope < 0.0 {
            Direction::Decreasing
        } else {
            Direction::Constant
        })
    }

    /// Real-valued QP at which the model reaches `target`, on `branch`.
    pub fn invert(&self, target: f64, branch: Branch) -> Result<f64, ModelError> {
        let unachievable = |reason: &str| ModelError::Unachievable {
            target,
            reason: reason.to_string(),
        };
        if !(target.is_finite() && target > 0.0) {
            return Err(unachievable("target must be positive"));
        }
        let level = target.ln();
        let (wlo, whi) = self.predict_range();
        let (wlo, whi) = (wlo as f64, whi as f64);
        let want = if branch.increasing() {
            Direction::Increasing
        } else {
            Direction::Decreasing
        };
        let b = &self.coeffs;
        let in_window = |q: f64| q >= wlo && q <= whi;

        match trim_order(b) {
            0 => Err(unachievable("constant model has no monotone branch")),
            1 => {
                let q = (level - b[0]) / b[1];
                let dir = if b[1] > 0.0 {
                    Direction::Increasing
                } else {
                    Direction::Decreasing
                };
                if dir != want {
                    Err(unachievable("model is monotone in the opposite direction"))
                } else if !in_window(q) {
                    Err(unachievable("solution lies outside the model support"))
                } else {
                    Ok(q)
                }
            }
            2 => {
                let (c0, c1, c2) = (b[0] - level, b[1], b[2]);
                let disc = c1 * c1 - 4.0 * c2 * c0;
                if disc < 0.0 {
                    return Err(unachievable("target beyond the model extremum"));
                }
                let (r1, r2) = quadratic_roots(c2, c1, c0, disc);
                let vertex = -c1 / (2.0 * c2);
                // Slope at a root has the sign of c2·(root - vertex).
                let on_branch = |r: f64| {
                    let slope = c2 * (r - vertex);
                    if want == Direction::Increasing {
                        slope >= 0.0
                    } else {
                        slope <= 0.0
                    }
                };
                let (good, other) = if on_branch(r1) { (r1, r2) } else { (r2, r1) };
                if in_window(good) {
                    Ok(good)
                } else if in_window(other)
                    && vertex > self.qp_min as f64
                    && vertex < self.qp_max as f64
                {
                    Err(ModelError::NonMonotoneSupport { target, vertex })
                } else {
                    Err(unachievable("solution lies outside the model support"))
                }
            }
            _ => self.invert_by_bisection(level, want, wlo, whi, target),
        }
    }

    fn invert_by_bisection(
        &self,
        level: f64,
        want: Direction,
        wlo: f64,
        whi: f64,
        target: f64,
    ) -> Result<f64, ModelError> {
        let mut cuts = vec![wlo];
        cuts.extend(self.turning_points().into_iter().filter(|&t| t > wlo && t < whi));
        cuts.push(whi);
        let mut best: Option<(f64, f64)> = None;
        let mut opposite: Option<f64> = None;
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (fa, fb) = (self.log_value(a) - level, self.log_value(b) - level);
            if fa * fb > 0.0 {
                continue;
            }
            let increasing = fb > fa;
            let dir = if increasing {
                Direction::Increasing
            } else {
                Direction::Decreasing
            };
            if dir != want {
                opposite.get_or_insert(a.max(self.qp_min as f64));
                continue;
            }
            let root = bisect(|q| self.log_value(q) - level, a, b, increasing);
            let share = b.min(self.qp_max as f64) - a.max(self.qp_min as f64);
            if best.is_none_or(|(_, s)| share > s) {
                best = Some((root, share));
            }
        }
        match (best, opposite) {
            (Some((root, _)), _) => Ok(root),
            (None, Some(vertex)) => Err(ModelError::NonMonotoneSupport { target, vertex }),
            (None, None) => Err(ModelError::Unachievable {
                target,
                reason: "target outside the model range".into(),
            }),
        }
    }
}

fn trim_order(b: &[f64]) -> usize {
    let mut order = b.len() - 1;
    while order > 0 && b[order] == 0.0 {
        order -= 1;
    }
    order
}

/// Roots of `a·x² + b·x + c` given a non-negative discriminant, computed
/// without cancellation.
fn quadratic_roots(a: f64, b: f64, c: f64, disc: f64) -> (f64, f64) {
    let sq = disc.sqrt();
    let q = -0.5 * (b + if b >= 0.0 { sq } else { -sq });
    if q == 0.0 {
        return (0.0, 0.0);
    }
    let r1 = q / a;
    let r2 = c / q;
    (r1.min(r2), r1.max(r2))
}

fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, increasing: bool) -> f64 {
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let v = f(m);
        if v == 0.0 {
            return m;
        }
        if (v < 0.0) == increasing {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// `1 − (RSS/(n−d−1)) / (TSS/(n−1))`.
pub fn adjusted_r2(rss: f64, tss: f64, n: usize, d: usize) -> Result<f64, ModelError> {
    if n <= d + 1 {
        return Err(ModelError::DegenerateFreedom { n, d });
    }
    if tss <= 0.0 {
        return Err(ModelError::ZeroTss);
    }
    Ok(1.0 - (rss / (n - d - 1) as f64) / (tss / (n - 1) as f64))
}

/// Fits one objective over `(qp, value)` pairs with stepwise order selection.
pub fn fit_objective(
    objective: Objective,
    pairs: &[(i32, f64)],
    max_order: usize,
) -> Result<ForwardModel, ModelError> {
    if max_order > MAX_ORDER {
        return Err(ModelError::InvalidOrder(max_order));
    }
    for &(qp, value) in pairs {
        if !(value.is_finite() && value > 0.0) {
            return Err(ModelError::NonPositiveValue { qp, value });
        }
    }
    let mut distinct: Vec<i32> = pairs.iter().map(|p| p.0).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < MIN_DISTINCT_QPS {
        return Err(ModelError::TooFewPoints(distinct.len()));
    }
    let qp_min = distinct[0];
    let qp_max = distinct[distinct.len() - 1];
    let n = pairs.len();
    let xs: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();

    let constant = |beta0: f64, adj_r2: f64| ForwardModel {
        objective,
        order: 0,
        coeffs: vec![beta0],
        adj_r2,
        qp_min,
        qp_max,
        n_points: Some(n),
    };
    if ys.iter().all(|&y| y == ys[0]) {
        return Ok(constant(ys[0], 1.0));
    }
    let mean = ys.iter().sum::<f64>() / n as f64;
    let tss: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
    if max_order == 0 {
        return Ok(constant(mean, adjusted_r2(tss, tss, n, 0)?));
    }

    let mut best: Option<ForwardModel> = None;
    for d in 1..=max_order {
        if n < d + 2 || distinct.len() < d + 1 {
            continue;
        }
        let fit = polyfit::fit(&xs, &ys, d).map_err(|e| match e {
            PolyFitError::Singular => ModelError::SingularSystem,
            other => ModelError::Invalid(other.to_string()),
        })?;
        let adj = adjusted_r2(fit.rss, tss, n, d)?;
        let better = best
            .as_ref()
            .is_none_or(|b| adj > b.adj_r2 + ORDER_TIE_EPS);
        if better {
            best = Some(ForwardModel {
                objective,
                order: d,
                coeffs: fit.coeffs,
                adj_r2: adj,
                qp_min,
                qp_max,
                n_points: Some(n),
            });
        }
    }
    best.ok_or(ModelError::TooFewPoints(distinct.len()))
}

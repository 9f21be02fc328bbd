//! Quality-metric arithmetic: PSNR_611 and Bjontegaard-Delta bitrate.

use std::fmt;
use std::io::Read;
use std::str::FromStr;

use thiserror::Error;

use crate::polyfit;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("non-finite or non-positive PSNR input")]
    NonFinite,
    #[error("curves measure different quality kinds ({0} vs {1})")]
    QualityKindMismatch(QualityKind, QualityKind),
    #[error("curves do not overlap in quality")]
    NoOverlap,
    #[error("degenerate rate-distortion curve: {0}")]
    DegenerateCurve(String),
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QualityKind {
    Psnr611,
    Vmaf,
}

impl fmt::Display for QualityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QualityKind::Psnr611 => "psnr",
            QualityKind::Vmaf => "vmaf",
        })
    }
}

impl FromStr for QualityKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "psnr" | "psnr611" | "psnr_611" => Ok(QualityKind::Psnr611),
            "vmaf" => Ok(QualityKind::Vmaf),
            other => Err(format!("unknown quality kind `{other}` (expected vmaf or psnr)")),
        }
    }
}

/// Weighted PSNR: `(6·Y + U + V) / 8`.
pub fn psnr_weighted(psnr_y: f64, psnr_u: f64, psnr_v: f64) -> Result<f64, MetricsError> {
    if [psnr_y, psnr_u, psnr_v]
        .iter()
        .any(|v| !v.is_finite() || *v <= 0.0)
    {
        return Err(MetricsError::NonFinite);
    }
    Ok((6.0 * psnr_y + psnr_u + psnr_v) / 8.0)
}

/// Rate-distortion curve with strictly increasing bitrate and quality.
#[derive(Debug, Clone, PartialEq)]
pub struct RdCurve {
    points: Vec<(f64, f64)>,
    kind: QualityKind,
}

impl RdCurve {
    pub fn new(mut points: Vec<(f64, f64)>, kind: QualityKind) -> Result<Self, MetricsError> {
        if points.len() < 4 {
            return Err(MetricsError::DegenerateCurve(format!(
                "need at least 4 points, got {}",
                points.len()
            )));
        }
        if points
            .iter()
            .any(|&(b, q)| !(b.is_finite() && b > 0.0 && q.is_finite()))
        {
            return Err(MetricsError::DegenerateCurve(
                "bitrates must be positive and values finite".into(),
            ));
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in points.windows(2) {
            if !(w[1].0 > w[0].0 && w[1].1 > w[0].1) {
                return Err(MetricsError::DegenerateCurve(
                    "bitrate and quality must both be strictly increasing".into(),
                ));
            }
        }
        Ok(Self { points, kind })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn kind(&self) -> QualityKind {
        self.kind
    }

    fn quality_range(&self) -> (f64, f64) {
        (self.points[0].1, self.points[self.points.len() - 1].1)
    }

    /// Cubic fit of log10(bitrate) as a function of quality.
    fn log_rate_poly(&self) -> Result<Vec<f64>, MetricsError> {
        let qs: Vec<f64> = self.points.iter().map(|p| p.1).collect();
        let lr: Vec<f64> = self.points.iter().map(|p| p.0.log10()).collect();
        polyfit::fit(&qs, &lr, 3)
            .map(|f| f.coeffs)
            .map_err(|e| MetricsError::DegenerateCurve(e.to_string()))
    }

    /// Reads a `bitrate_kbps,quality` CSV.
    pub fn from_csv<R: Read>(source: R, kind: QualityKind) -> Result<Self, MetricsError> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(source);
        let headers = reader.headers()?.clone();
        let col = |name: &str| {
            headers.iter().position(|h| h == name).ok_or(MetricsError::Malformed {
                line: 1,
                message: format!("missing column `{name}`"),
            })
        };
        let (bi, qi) = (col("bitrate_kbps")?, col("quality")?);
        let mut points = Vec::new();
        for record in reader.records() {
            let record = record?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let num = |i: usize| -> Result<f64, MetricsError> {
                let raw = record.get(i).unwrap_or("");
                raw.parse().map_err(|_| MetricsError::Malformed {
                    line,
                    message: format!("cannot parse `{raw}`"),
                })
            };
            points.push((num(bi)?, num(qi)?));
        }
        Self::new(points, kind)
    }
}

/// Bjontegaard-Delta bitrate of `test` relative to `reference`, in percent.
///
/// Negative values mean the test curve needs less bitrate for the same
/// quality. Each curve's log10 bitrate is fitted by a cubic in quality and the
/// mean difference is taken over the overlapping quality interval.
pub fn bd_rate(reference: &RdCurve, test: &RdCurve) -> Result<f64, MetricsError> {
    if reference.kind != test.kind {
        return Err(MetricsError::QualityKindMismatch(reference.kind, test.kind));
    }
    let (rlo, rhi) = reference.quality_range();
    let (tlo, thi) = test.quality_range();
    let lo = rlo.max(tlo);
    let hi = rhi.min(thi);
    if !(hi > lo) {
        return Err(MetricsError::NoOverlap);
    }
    let pr = reference.log_rate_poly()?;
    let pt = test.log_rate_poly()?;
    let avg_diff =
        (polyfit::integrate(&pt, lo, hi) - polyfit::integrate(&pr, lo, hi)) / (hi - lo);
    Ok((10f64.powf(avg_diff) - 1.0) * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_examples() {
        assert_eq!(psnr_weighted(40.0, 40.0, 40.0).unwrap(), 40.0);
        assert_eq!(psnr_weighted(40.0, 30.0, 30.0).unwrap(), 37.5);
        assert_eq!(psnr_weighted(36.0, 42.0, 43.0).unwrap(), 37.625);
        assert!(psnr_weighted(f64::NAN, 1.0, 1.0).is_err());
        assert!(psnr_weighted(f64::INFINITY, 1.0, 1.0).is_err());
    }

    fn reference() -> RdCurve {
        RdCurve::new(
            vec![(1000.0, 34.0), (2000.0, 37.0), (4000.0, 40.0), (8000.0, 42.0)],
            QualityKind::Psnr611,
        )
        .unwrap()
    }

    #[test]
    fn identical_curves() {
        assert_eq!(bd_rate(&reference(), &reference()).unwrap(), 0.0);
    }

    #[test]
    fn half_bitrate() {
        let half = RdCurve::new(
            reference().points().iter().map(|&(b, q)| (b * 0.5, q)).collect(),
            QualityKind::Psnr611,
        )
        .unwrap();
        let v = bd_rate(&reference(), &half).unwrap();
        assert!((v + 50.0).abs() < 1e-9, "{v}");
    }

    #[test]
    fn errors() {
        let vmaf = RdCurve::new(reference().points().to_vec(), QualityKind::Vmaf).unwrap();
        assert!(matches!(
            bd_rate(&reference(), &vmaf),
            Err(MetricsError::QualityKindMismatch(..))
        ));
        let far = RdCurve::new(
            vec![(1.0, 50.0), (2.0, 51.0), (3.0, 52.0), (4.0, 53.0)],
            QualityKind::Psnr611,
        )
        .unwrap();
        assert!(matches!(bd_rate(&reference(), &far), Err(MetricsError::NoOverlap)));
        assert!(RdCurve::new(vec![(1.0, 1.0); 3], QualityKind::Vmaf).is_err());
        assert!(RdCurve::new(
            vec![(1.0, 4.0), (2.0, 3.0), (3.0, 5.0), (4.0, 6.0)],
            QualityKind::Vmaf
        )
        .is_err());
    }

    #[test]
    fn csv_curve() {
        let text = "bitrate_kbps,quality\n1000,34\n2000,37\n4000,40\n8000,42\n";
        let c = RdCurve::from_csv(text.as_bytes(), QualityKind::Psnr611).unwrap();
        assert_eq!(c, reference());
    }
}

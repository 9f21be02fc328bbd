//! Least-squares polynomial fitting in one variable.
//!
//! The abscissa is centered and scaled to `[-1, 1]` before the design matrix
//! is built, the system is solved by SVD, and the coefficients are expanded
//! back into the raw power basis `c0 + c1·x + c2·x² + …`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PolyFitError {
    #[error("need at least {need} points for degree {degree}, got {got}")]
    TooFewPoints { need: usize, got: usize, degree: usize },
    #[error("design matrix is rank deficient")]
    Singular,
    #[error("non-finite input")]
    NonFinite,
}

/// Fitted polynomial in the raw power basis.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyFit {
    pub coeffs: Vec<f64>,
    /// Residual sum of squares on the fitted data.
    pub rss: f64,
}

/// Relative singular-value cutoff below which the system counts as singular.
const RANK_TOL: f64 = 1e-11;

pub fn fit(xs: &[f64], ys: &[f64], degree: usize) -> Result<PolyFit, PolyFitError> {
    assert_eq!(xs.len(), ys.len(), "abscissa/ordinate length mismatch");
    let n = xs.len();
    if n < degree + 1 {
        return Err(PolyFitError::TooFewPoints {
            need: degree + 1,
            got: n,
            degree,
        });
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(PolyFitError::NonFinite);
    }
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    if degree == 0 {
        let mean = ys.iter().sum::<f64>() / n as f64;
        let rss = ys.iter().map(|y| (y - mean).powi(2)).sum();
        return Ok(PolyFit {
            coeffs: vec![mean],
            rss,
        });
    }
    if half <= 0.0 {
        return Err(PolyFitError::Singular);
    }

    let design = DMatrix::from_fn(n, degree + 1, |r, c| ((xs[r] - center) / half).powi(c as i32));
    let rhs = DVector::from_column_slice(ys);
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin / smax < RANK_TOL {
        return Err(PolyFitError::Singular);
    }
    let scaled = svd
        .solve(&rhs, smax * f64::EPSILON)
        .map_err(|_| PolyFitError::Singular)?;
    let residual = &rhs - &design * &scaled;
    let rss = residual.norm_squared();

    Ok(PolyFit {
        coeffs: unscale(scaled.as_slice(), center, half),
        rss,
    })
}

/// Expands `Σ a_k ((x - center)/half)^k` into raw power-basis coefficients.
fn unscale(scaled: &[f64], center: f64, half: f64) -> Vec<f64> {
    let d = scaled.len();
    let mut raw = vec![0.0; d];
    for (k, &a) in scaled.iter().enumerate() {
        let ak = a / half.powi(k as i32);
        // (x - c)^k = Σ_j C(k, j) x^j (-c)^(k-j)
        let mut binom = 1.0;
        for (j, r) in raw.iter_mut().enumerate().take(k + 1) {
            *r += ak * binom * (-center).powi((k - j) as i32);
            binom = binom * (k - j) as f64 / (j + 1) as f64;
        }
    }
    raw
}

/// Horner evaluation of a raw power-basis polynomial.
pub fn eval(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Derivative coefficients.
pub fn derivative(coeffs: &[f64]) -> Vec<f64> {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, &c)| k as f64 * c)
        .collect()
}

/// Exact definite integral over `[a, b]`.
pub fn integrate(coeffs: &[f64], a: f64, b: f64) -> f64 {
    let anti: Vec<f64> = std::iter::once(0.0)
        .chain(coeffs.iter().enumerate().map(|(k, &c)| c / (k + 1) as f64))
        .collect();
    eval(&anti, b) - eval(&anti, a)
}

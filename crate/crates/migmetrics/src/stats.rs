//! Shared numeric kernels: weighted least squares, Pearson correlation,
//! power-law fits and Nadaraya-Watson kernel smoothing.
//!
//! All summations go through compensated (Kahan) accumulation so that
//! partition-parallel merges of the same data agree to well below 1e-9
//! relative, independent of merge order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default kernel bandwidth (years) for age-schedule smoothing.
pub const DEFAULT_BANDWIDTH: f64 = 2.0;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("mismatched input lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no x variation")]
    NoXVariation,
    #[error("all weights are zero")]
    ZeroWeights,
    #[error("negative weight at index {0}")]
    NegativeWeight(usize),
    #[error("series is constant")]
    ConstantSeries,
    #[error("non-positive coordinate at index {0}")]
    NonPositiveCoordinate(usize),
    #[error("bandwidth must be positive")]
    BadBandwidth,
    #[error("empty input")]
    EmptyInput,
    #[error("x values must be strictly increasing")]
    UnsortedX,
}

/// Compensated floating-point accumulator.
///
/// `merge` folds another accumulator in without losing its compensation
/// term, so chunk-parallel sums stay order-insensitive to ~1 ulp.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn merge(&mut self, other: KahanSum) {
        self.add(other.sum);
        self.add(-other.comp);
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum - self.comp
    }
}

impl std::iter::FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = KahanSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

/// Result of a simple linear regression y = intercept + slope * x.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Standard error of the slope (0 when the fit is saturated, n = 2).
    pub slope_stderr: f64,
    /// Number of points with positive weight.
    pub n_points: usize,
    pub weight_total: f64,
}

/// Power-law fit y = coefficient * x^exponent, estimated in log-log space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerFit {
    pub coefficient: f64,
    pub exponent: f64,
    /// Coefficient of determination of the underlying log-log line.
    pub r_squared: f64,
    pub n_points: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub r: f64,
    pub n: usize,
}

/// Least squares line minimising sum of w_i * (y_i - a - b*x_i)^2.
///
/// Points with zero weight are ignored entirely. The reported r-squared
/// uses the weighted total sum of squares, consistent with the objective.
pub fn weighted_ols(points: &[(f64, f64)], weights: &[f64]) -> Result<LinearFit, StatsError> {
    if points.len() != weights.len() {
        return Err(StatsError::LengthMismatch(points.len(), weights.len()));
    }
    for (i, &w) in weights.iter().enumerate() {
        if w < 0.0 || !w.is_finite() {
            return Err(StatsError::NegativeWeight(i));
        }
    }
    let n_eff = weights.iter().filter(|&&w| w > 0.0).count();
    if points.len() < 2 || n_eff < 2 {
        if weights.iter().all(|&w| w == 0.0) && !weights.is_empty() {
            return Err(StatsError::ZeroWeights);
        }
        return Err(StatsError::TooFewPoints {
            needed: 2,
            got: n_eff,
        });
    }

    let mut w_tot = KahanSum::new();
    let mut wx = KahanSum::new();
    let mut wy = KahanSum::new();
    for (&(x, y), &w) in points.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        w_tot.add(w);
        wx.add(w * x);
        wy.add(w * y);
    }
    let w_total = w_tot.value();
    if w_total <= 0.0 {
        return Err(StatsError::ZeroWeights);
    }
    let x_bar = wx.value() / w_total;
    let y_bar = wy.value() / w_total;

    let mut sxx = KahanSum::new();
    let mut sxy = KahanSum::new();
    let mut syy = KahanSum::new();
    for (&(x, y), &w) in points.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let dx = x - x_bar;
        let dy = y - y_bar;
        sxx.add(w * dx * dx);
        sxy.add(w * dx * dy);
        syy.add(w * dy * dy);
    }
    let sxx = sxx.value();
    if sxx <= 0.0 {
        return Err(StatsError::NoXVariation);
    }
    let slope = sxy.value() / sxx;
    let intercept = y_bar - slope * x_bar;

    let mut ss_res = KahanSum::new();
    for (&(x, y), &w) in points.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let r = y - intercept - slope * x;
        ss_res.add(w * r * r);
    }
    let ss_res = ss_res.value().max(0.0);
    let ss_tot = syy.value();
    let r_squared = if ss_tot > 0.0 {
        clamp_unit(1.0 - ss_res / ss_tot)
    } else {
        // All y equal: the horizontal line fits exactly.
        1.0
    };
    let slope_stderr = if n_eff > 2 {
        (ss_res / ((n_eff - 2) as f64 * sxx)).sqrt()
    } else {
        0.0
    };

    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
        slope_stderr,
        n_points: n_eff,
        weight_total: w_total,
    })
}

/// Unweighted least squares line.
pub fn ols(points: &[(f64, f64)]) -> Result<LinearFit, StatsError> {
    let weights = vec![1.0; points.len()];
    weighted_ols(points, &weights)
}

fn clamp_unit(v: f64) -> f64 {
    if v < 0.0 && v > -1e-12 {
        0.0
    } else if v > 1.0 && v < 1.0 + 1e-12 {
        1.0
    } else {
        v
    }
}

/// Product-moment correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<CorrelationResult, StatsError> {
    if xs.len() != ys.len() {
        return Err(StatsError::LengthMismatch(xs.len(), ys.len()));
    }
    let n = xs.len();
    if n < 2 {
        return Err(StatsError::TooFewPoints { needed: 2, got: n });
    }
    let x_bar = xs.iter().copied().collect::<KahanSum>().value() / n as f64;
    let y_bar = ys.iter().copied().collect::<KahanSum>().value() / n as f64;
    let mut sxx = KahanSum::new();
    let mut syy = KahanSum::new();
    let mut sxy = KahanSum::new();
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = x - x_bar;
        let dy = y - y_bar;
        sxx.add(dx * dx);
        syy.add(dy * dy);
        sxy.add(dx * dy);
    }
    let (sxx, syy) = (sxx.value(), syy.value());
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(StatsError::ConstantSeries);
    }
    let r = (sxy.value() / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    Ok(CorrelationResult { r, n })
}

/// Fit y = a * x^b by ordinary least squares on (ln x, ln y).
///
/// The exponent equals the `weighted_ols` slope on the log-transformed
/// data exactly; both coordinates must be strictly positive.
pub fn power_fit(points: &[(f64, f64)]) -> Result<PowerFit, StatsError> {
    for (i, &(x, y)) in points.iter().enumerate() {
        if x <= 0.0 || y <= 0.0 || !x.is_finite() || !y.is_finite() {
            return Err(StatsError::NonPositiveCoordinate(i));
        }
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let fit = match ols(&logs) {
        Ok(fit) => fit,
        // Constant y in log space: slope 0 through the mean level.
        Err(StatsError::NoXVariation) => return Err(StatsError::NoXVariation),
        Err(e) => return Err(e),
    };
    Ok(PowerFit {
        coefficient: fit.intercept.exp(),
        exponent: fit.slope,
        r_squared: fit.r_squared,
        n_points: fit.n_points,
    })
}

/// Nadaraya-Watson kernel regression with a Gaussian kernel.
///
/// `xs` must be strictly increasing. Grid points are evaluated by the
/// same weighted average everywhere; a point far outside the support of
/// `xs` degrades gracefully to the nearest observation. Output values
/// are convex combinations of `ys`, hence bounded by [min, max] of the
/// inputs, and non-negative whenever the inputs are.
pub fn kernel_smooth(
    xs: &[f64],
    ys: &[f64],
    bandwidth: f64,
    grid: &[f64],
) -> Result<Vec<f64>, StatsError> {
    if xs.is_empty() || ys.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    if xs.len() != ys.len() {
        return Err(StatsError::LengthMismatch(xs.len(), ys.len()));
    }
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(StatsError::BadBandwidth);
    }
    if xs.windows(2).any(|w| w[0] >= w[1]) {
        return Err(StatsError::UnsortedX);
    }

    let mut out = Vec::with_capacity(grid.len());
    for &g in grid {
        let mut num = KahanSum::new();
        let mut den = KahanSum::new();
        for (&x, &y) in xs.iter().zip(ys) {
            let u = (g - x) / bandwidth;
            let k = (-0.5 * u * u).exp();
            num.add(k * y);
            den.add(k);
        }
        let d = den.value();
        if d > 0.0 && d.is_normal() {
            out.push(num.value() / d);
        } else {
            // All kernel weights underflowed: take the nearest point,
            // which is the bandwidth -> 0 limit of the estimator.
            let idx = match xs.binary_search_by(|x| x.partial_cmp(&g).unwrap()) {
                Ok(i) => i,
                Err(i) => {
                    if i == 0 {
                        0
                    } else if i >= xs.len() {
                        xs.len() - 1
                    } else if (g - xs[i - 1]).abs() <= (xs[i] - g).abs() {
                        i - 1
                    } else {
                        i
                    }
                }
            };
            out.push(ys[idx]);
        }
    }
    Ok(out)
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn residuals_orthogonal(
            raw in proptest::collection::vec((-50.0..50.0f64, -50.0..50.0f64, 0.01..10.0f64), 3..40)
        ) {
            let points: Vec<(f64, f64)> = raw.iter().map(|&(x, y, _)| (x, y)).collect();
            let weights: Vec<f64> = raw.iter().map(|&(_, _, w)| w).collect();
            if let Ok(fit) = weighted_ols(&points, &weights) {
                let mut wr = KahanSum::new();
                let mut wxr = KahanSum::new();
                let mut scale = KahanSum::new();
                for (&(x, y), &w) in points.iter().zip(&weights) {
                    let r = y - fit.intercept - fit.slope * x;
                    wr.add(w * r);
                    wxr.add(w * x * r);
                    scale.add(w * (y.abs() + x.abs() + 1.0));
                }
                let s = scale.value();
                prop_assert!(wr.value().abs() <= 1e-9 * s);
                prop_assert!(wxr.value().abs() <= 1e-9 * s * 60.0);
            }
        }

        #[test]
        fn pearson_affine_invariant(
            xs in proptest::collection::vec(-100.0..100.0f64, 5..30),
            a in 0.1..10.0f64,
            b in -5.0..5.0f64,
        ) {
            let ys: Vec<f64> = xs.iter().map(|x| x * 0.5 + (x * x) * 0.01).collect();
            if let (Ok(base), Ok(shifted)) = (
                pearson(&xs, &ys),
                pearson(&xs.iter().map(|x| a * x + b).collect::<Vec<_>>(), &ys),
            ) {
                prop_assert!((base.r - shifted.r).abs() < 1e-9);
                if let Ok(flipped) = pearson(&xs.iter().map(|x| -x).collect::<Vec<_>>(), &ys) {
                    prop_assert!((base.r + flipped.r).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn smooth_bounded_by_inputs(
            ys in proptest::collection::vec(0.0..10.0f64, 5..40),
            bw in 0.1..5.0f64,
        ) {
            let xs: Vec<f64> = (0..ys.len()).map(|i| i as f64).collect();
            let grid: Vec<f64> = (0..(2 * ys.len() - 1)).map(|i| i as f64 * 0.5).collect();
            let out = kernel_smooth(&xs, &ys, bw, &grid).unwrap();
            let lo = ys.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for v in out {
                prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
            }
        }
    }
}

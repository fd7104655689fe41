//! Summary statistics and log-log regression.
//!
//! Quantiles use linear interpolation between closest ranks: for sorted
//! values `x_0 ≤ … ≤ x_{n-1}` the `q`-quantile is read at position
//! `h = (n - 1) q`, interpolating between `x_⌊h⌋` and `x_⌈h⌉`.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959963984540054;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub slope: f64,
    pub intercept: f64,
    /// `Z95 · SE(slope)`.
    pub slope_half_width: f64,
    /// `(SSR / n)^{1/2}` in log space.
    pub residual_rms: f64,
    pub points: usize,
}

/// Ordinary least squares of `ln y` on `ln x`.
pub fn loglog_fit(points: &[(f64, f64)]) -> Result<FitResult> {
    if points.len() < 3 {
        return Err(LabError::InsufficientData(format!(
            "log-log fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    for (index, &(x, y)) in points.iter().enumerate() {
        if !(x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite()) {
            return Err(LabError::NonPositive { index, x, y });
        }
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(LabError::Degenerate("all abscissae coincide".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let se = (ssr / (n - 2.0) / sxx).sqrt();
    Ok(FitResult {
        slope,
        intercept,
        slope_half_width: Z95 * se,
        residual_rms: (ssr / n).sqrt(),
        points: points.len(),
    })
}

/// Acceptance interval for a statistic and the fraction of records that
/// must fall inside it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub min: f64,
    pub max: f64,
    pub pass_rate: f64,
}

impl Band {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub mean: f64,
    /// Standard error of the mean (sample standard deviation over `√n`).
    pub se: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
    /// Fraction inside the band, when one is given.
    pub pass_rate: Option<f64>,
}

pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn aggregate_values(values: &[f64], band: Option<&Band>) -> Result<Aggregate> {
    if values.is_empty() {
        return Err(LabError::InsufficientData("no values to aggregate".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let se = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pass_rate = band.map(|b| values.iter().filter(|v| b.contains(**v)).count() as f64 / n);
    Ok(Aggregate {
        count: values.len(),
        mean,
        se,
        q05: quantile_sorted(&sorted, 0.05),
        q50: quantile_sorted(&sorted, 0.5),
        q95: quantile_sorted(&sorted, 0.95),
        pass_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law() {
        let pts: Vec<(f64, f64)> = [2.0, 4.0, 8.0].iter().map(|&x| (x, x * x)).collect();
        let f = loglog_fit(&pts).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-10);
        assert!(f.residual_rms < 1e-12);
        let flat = loglog_fit(&[(1.0, 7.0), (2.0, 7.0), (5.0, 7.0)]).unwrap();
        assert!(flat.slope.abs() < 1e-10);
    }

    #[test]
    fn fit_preconditions() {
        assert!(matches!(loglog_fit(&[(1.0, 1.0), (2.0, 2.0)]), Err(LabError::InsufficientData(_))));
        assert!(matches!(
            loglog_fit(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]),
            Err(LabError::NonPositive { index: 1, .. })
        ));
    }

    #[test]
    fn median_and_single_value() {
        let a = aggregate_values(&[5.0, 1.0, 3.0, 2.0, 4.0], None).unwrap();
        assert_eq!(a.q50, 3.0);
        assert_eq!(a.q05, 1.2);
        let s = aggregate_values(&[3.0], None).unwrap();
        assert_eq!((s.mean, s.se, s.q05, s.q50, s.q95), (3.0, 0.0, 3.0, 3.0, 3.0));
        assert!(aggregate_values(&[], None).is_err());
    }

    #[test]
    fn pass_rate_counts_band() {
        let band = Band {
            min: 1.0,
            max: 2.0,
            pass_rate: 0.5,
        };
        let a = aggregate_values(&[0.5, 1.0, 1.5, 3.0], Some(&band)).unwrap();
        assert_eq!(a.pass_rate, Some(0.5));
    }
}

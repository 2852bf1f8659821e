use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub const MIN_NORMALITY_SAMPLES: usize = 30;
/// Histogram layout used for export: 40 equal bins on `[-4, 4]`.
pub const HIST_RANGE: (f64, f64) = (-4.0, 4.0);
pub const HIST_BINS: usize = 40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistBin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
    /// `count / (N * width)`; values outside the range are counted in `N`.
    pub density: f64,
    /// Standard normal density at the bin center.
    pub normal_density: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalityReport {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (`N - 1` divisor).
    pub std: f64,
    /// Kolmogorov–Smirnov distance to the standard normal CDF.
    pub ks_stat: f64,
    pub bins: Vec<HistBin>,
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("valid parameters")
}

/// `sup_x |F_N(x) - Phi(x)|`.
pub fn ks_statistic(values: &[f64]) -> f64 {
    let normal = std_normal();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal.cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

pub fn normality_check(values: &[f64]) -> Result<NormalityReport> {
    if values.len() < MIN_NORMALITY_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "normality check needs at least {MIN_NORMALITY_SAMPLES} values, got {}",
            values.len()
        )));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("statistic {v}")));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let (lo, hi) = HIST_RANGE;
    let width = (hi - lo) / HIST_BINS as f64;
    let mut counts = vec![0usize; HIST_BINS];
    for &v in values {
        if (lo..=hi).contains(&v) {
            counts[(((v - lo) / width) as usize).min(HIST_BINS - 1)] += 1;
        }
    }
    let bins = counts
        .into_iter()
        .enumerate()
        .map(|(b, count)| {
            let low = lo + b as f64 * width;
            let mid = low + width / 2.0;
            HistBin {
                low,
                high: lo + (b + 1) as f64 * width,
                count,
                density: count as f64 / (n as f64 * width),
                normal_density: (-mid * mid / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt(),
            }
        })
        .collect();
    Ok(NormalityReport {
        n,
        mean,
        std,
        ks_stat: ks_statistic(values),
        bins,
    })
}

use serde::{Deserialize, Serialize};

use super::HarnessError;

/// `R ≈ −a·exp(H) + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyPerformanceFit {
    pub a: f64,
    pub b: f64,
    pub residual_rms: f64,
    pub num_points: usize,
}

impl EntropyPerformanceFit {
    pub fn predict(&self, h: f64) -> f64 {
        -self.a * h.exp() + self.b
    }
}

/// Ordinary least squares of `R` on `exp(H)`; the slope is `−a`.
pub fn fit_entropy_performance(points: &[(f64, f64)]) -> Result<EntropyPerformanceFit, HarnessError> {
    if points.len() < 2 {
        return Err(HarnessError::Degenerate(format!(
            "need at least 2 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|(h, r)| !h.is_finite() || !r.is_finite() || !h.exp().is_finite()) {
        return Err(HarnessError::Degenerate("non-finite point".into()));
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|(h, _)| h.exp()).collect();
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_r = points.iter().map(|(_, r)| r).sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mean_x).powi(2)).sum();
    if sxx <= f64::EPSILON * mean_x.abs().max(1.0) * n {
        return Err(HarnessError::Degenerate("all entropies are equal".into()));
    }
    let sxr: f64 = xs.iter().zip(points).map(|(x, (_, r))| (x - mean_x) * (r - mean_r)).sum();
    let slope = sxr / sxx;
    let b = mean_r - slope * mean_x;
    let sse: f64 = xs.iter().zip(points).map(|(x, (_, r))| (r - (slope * x + b)).powi(2)).sum();
    Ok(EntropyPerformanceFit {
        a: -slope,
        b,
        residual_rms: (sse / n).sqrt(),
        num_points: points.len(),
    })
}

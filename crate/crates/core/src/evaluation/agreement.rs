use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Limits-of-agreement multiplier.
pub const LOA_Z: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    pub n: usize,
    /// Mean of `true - pred`.
    pub bias: f64,
    /// Sample standard deviation of the differences.
    pub sd: f64,
    pub loa_low: f64,
    pub loa_high: f64,
    /// `None` when either coordinate has zero variance.
    pub pearson: Option<f64>,
}

impl fmt::Display for AgreementStats {
    /// `bias (low, high)` with one decimal and signed limits.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1} ({:+.1}, {:+.1})", self.bias, self.loa_low, self.loa_high)
    }
}

/// Bland-Altman statistics of `(true, predicted)` pairs.
pub fn bland_altman(pairs: &[(f64, f64)]) -> Result<AgreementStats> {
    if pairs.len() < 2 {
        return Err(Error::InvalidArgument(format!("Bland-Altman needs at least 2 pairs, got {}", pairs.len())));
    }
    if pairs.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(Error::non_finite("Bland-Altman input"));
    }
    let n = pairs.len() as f64;
    let diffs: Vec<f64> = pairs.iter().map(|(t, p)| t - p).collect();
    let bias = diffs.iter().sum::<f64>() / n;
    let sd = (diffs.iter().map(|d| (d - bias).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    Ok(AgreementStats {
        n: pairs.len(),
        bias,
        sd,
        loa_low: bias - LOA_Z * sd,
        loa_high: bias + LOA_Z * sd,
        pearson: pearson(pairs).ok(),
    })
}

/// Sample Pearson correlation of `(x, y)` pairs.
pub fn pearson(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.len() < 2 {
        return Err(Error::InvalidArgument(format!("Pearson needs at least 2 pairs, got {}", pairs.len())));
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InvalidArgument("Pearson correlation undefined for zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

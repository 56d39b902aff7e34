use serde::{Deserialize, Serialize};

use crate::data::{BrainMask, Volume};
use crate::error::{Error, Result};
use crate::losses::SsimConstants;

/// Denominator of the normalized RMSE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NrmseNorm {
    /// Mean of the reference.
    #[default]
    Mean,
    /// Max minus min of the reference.
    Range,
}

fn check(reference: &[f32], pred: &[f32], mask: Option<&BrainMask>) -> Result<()> {
    if reference.len() != pred.len() {
        return Err(Error::Shape(format!("{} reference voxels vs {} predicted", reference.len(), pred.len())));
    }
    if let Some(m) = mask {
        if m.inside().len() != reference.len() {
            return Err(Error::Shape(format!("mask of {} voxels for {} voxel volumes", m.inside().len(), reference.len())));
        }
    }
    if reference.is_empty() {
        return Err(Error::InvalidArgument("empty volumes".into()));
    }
    Ok(())
}

/// Voxel pairs inside `mask`, or all pairs without one.
pub fn select_pairs(reference: &[f32], pred: &[f32], mask: Option<&BrainMask>) -> Result<(Vec<f32>, Vec<f32>)> {
    check(reference, pred, mask)?;
    Ok(match mask {
        Some(m) => (m.select(reference).collect(), m.select(pred).collect()),
        None => (reference.to_vec(), pred.to_vec()),
    })
}

pub fn nrmse_values(reference: &[f32], pred: &[f32], mask: Option<&BrainMask>, norm: NrmseNorm) -> Result<f64> {
    let (r, p) = select_pairs(reference, pred, mask)?;
    let n = r.len() as f64;
    let rmse = (r.iter().zip(&p).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum::<f64>() / n).sqrt();
    let denom = match norm {
        NrmseNorm::Mean => r.iter().map(|&v| v as f64).sum::<f64>() / n,
        NrmseNorm::Range => {
            let (lo, hi) = r.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v as f64), hi.max(v as f64)));
            hi - lo
        }
    };
    if !(denom > 0.0) {
        return Err(Error::Data(format!("NRMSE normalizer is {denom}, must be positive")));
    }
    Ok(rmse / denom)
}

/// RMSE over the mask divided by the in-mask mean of the reference.
pub fn nrmse(reference: &Volume, pred: &Volume, mask: &BrainMask) -> Result<f64> {
    if reference.dims() != pred.dims() || reference.channels() != pred.channels() {
        return Err(Error::Shape("reference and prediction differ in shape".into()));
    }
    nrmse_values(reference.data(), pred.data(), Some(mask), NrmseNorm::Mean)
}

/// 3D summed-area table with a zero border, `(m+1)(n+1)(p+1)` entries.
struct Integral {
    dims: [usize; 3],
    table: Vec<f64>,
}

impl Integral {
    fn new(values: impl Iterator<Item = f64>, dims: [usize; 3]) -> Self {
        let [m, n, p] = dims;
        let (sn, sp) = ((n + 1) * (p + 1), p + 1);
        let mut table = vec![0.0; (m + 1) * sn];
        let mut it = values;
        for i in 0..m {
            for j in 0..n {
                for k in 0..p {
                    let v = it.next().expect("value count matches dims");
                    let at = |a: usize, b: usize, c: usize| a * sn + b * sp + c;
                    table[at(i + 1, j + 1, k + 1)] = v + table[at(i, j + 1, k + 1)] + table[at(i + 1, j, k + 1)] + table[at(i + 1, j + 1, k)]
                        - table[at(i, j, k + 1)]
                        - table[at(i, j + 1, k)]
                        - table[at(i + 1, j, k)]
                        + table[at(i, j, k)];
                }
            }
        }
        Integral { dims, table }
    }

    /// Sum over the half-open box `[lo, hi)`.
    fn sum(&self, lo: [usize; 3], hi: [usize; 3]) -> f64 {
        let [_, n, p] = self.dims;
        let (sn, sp) = ((n + 1) * (p + 1), p + 1);
        let t = |a: usize, b: usize, c: usize| self.table[a * sn + b * sp + c];
        t(hi[0], hi[1], hi[2]) - t(lo[0], hi[1], hi[2]) - t(hi[0], lo[1], hi[2]) - t(hi[0], hi[1], lo[2])
            + t(lo[0], lo[1], hi[2])
            + t(lo[0], hi[1], lo[2])
            + t(hi[0], lo[1], lo[2])
            - t(lo[0], lo[1], lo[2])
    }
}

/// Mean local SSIM over cubic box windows of side `window` (odd), clipped at the
/// volume border, averaged over `mask` voxels or all voxels.
pub fn windowed_ssim(x: &[f32], y: &[f32], dims: [usize; 3], window: usize, c: &SsimConstants, mask: Option<&BrainMask>) -> Result<f64> {
    check(x, y, mask)?;
    if x.len() != dims.iter().product::<usize>() {
        return Err(Error::Shape(format!("{} voxels for dims {dims:?}", x.len())));
    }
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("window must be odd, got {window}")));
    }
    let f = |v: &f32| *v as f64;
    let sx = Integral::new(x.iter().map(f), dims);
    let sy = Integral::new(y.iter().map(f), dims);
    let sxx = Integral::new(x.iter().map(|v| f(v) * f(v)), dims);
    let syy = Integral::new(y.iter().map(|v| f(v) * f(v)), dims);
    let sxy = Integral::new(x.iter().zip(y).map(|(a, b)| f(a) * f(b)), dims);
    let half = window / 2;
    let [m, n, p] = dims;
    let (mut total, mut count) = (0.0, 0usize);
    for i in 0..m {
        for j in 0..n {
            for k in 0..p {
                let idx = (i * n + j) * p + k;
                if mask.is_some_and(|mk| !mk.inside()[idx]) {
                    continue;
                }
                let lo = [i.saturating_sub(half), j.saturating_sub(half), k.saturating_sub(half)];
                let hi = [(i + half + 1).min(m), (j + half + 1).min(n), (k + half + 1).min(p)];
                let cnt = ((hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2])) as f64;
                let mx = sx.sum(lo, hi) / cnt;
                let my = sy.sum(lo, hi) / cnt;
                let vx = (sxx.sum(lo, hi) / cnt - mx * mx).max(0.0);
                let vy = (syy.sum(lo, hi) / cnt - my * my).max(0.0);
                let cov = sxy.sum(lo, hi) / cnt - mx * my;
                total += (2.0 * mx * my + c.c1) * (2.0 * cov + c.c2) / ((mx * mx + my * my + c.c1) * (vx + vy + c.c2));
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

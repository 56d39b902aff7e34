use super::{BrainMask, Volume};
use crate::error::{Error, Result};

/// Per-channel in-mask means.
pub fn masked_channel_means(v: &Volume, mask: &BrainMask) -> Result<Vec<f64>> {
    mask.check(v)?;
    Ok((0..v.channels()).map(|c| mask.mean(v.channel(c))).collect())
}

/// Scales every channel so its in-mask mean is one. Returns the volume and the
/// divisor applied to each channel.
pub fn normalize_with_factors(v: &Volume, mask: &BrainMask) -> Result<(Volume, Vec<f64>)> {
    let means = masked_channel_means(v, mask)?;
    let mut out = v.clone();
    for (c, &mean) in means.iter().enumerate() {
        if !(mean > 0.0) || !mean.is_finite() {
            return Err(Error::Data(format!("channel {c} has in-mask mean {mean}, cannot normalize")));
        }
        let inv = 1.0 / mean;
        for x in out.channel_mut(c) {
            *x = (*x as f64 * inv) as f32;
        }
    }
    Ok((out, means))
}

/// Scales every channel so its in-mask mean is one; out-of-mask voxels share the factor.
pub fn normalize_mean_one(v: &Volume, mask: &BrainMask) -> Result<Volume> {
    normalize_with_factors(v, mask).map(|(v, _)| v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_channel_becomes_one() {
        let v = Volume::new(1, [2, 2, 2], vec![5.0; 8]).unwrap();
        let out = normalize_mean_one(&v, &BrainMask::full([2, 2, 2])).unwrap();
        assert!(out.data().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn rejects_non_positive_mean() {
        let v = Volume::new(1, [2, 2, 2], vec![-1.0; 8]).unwrap();
        assert!(matches!(normalize_mean_one(&v, &BrainMask::full([2, 2, 2])), Err(Error::Data(_))));
    }
}

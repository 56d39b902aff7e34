use super::Volume;
use crate::error::{Error, Result};

/// Smallest accepted fraction of voxels inside a mask.
pub const MIN_COVERAGE: f64 = 0.01;
/// Default threshold relative to the maximum of channel 0.
pub const DEFAULT_THRESHOLD: f32 = 0.1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BrainMask {
    dims: [usize; 3],
    inside: Vec<bool>,
    count: usize,
}

impl BrainMask {
    pub fn new(dims: [usize; 3], inside: Vec<bool>) -> Result<Self> {
        if inside.len() != dims.iter().product::<usize>() {
            return Err(Error::Shape(format!("mask of {} voxels for dims {dims:?}", inside.len())));
        }
        let count = inside.iter().filter(|&&b| b).count();
        if (count as f64) < MIN_COVERAGE * inside.len() as f64 || count == 0 {
            return Err(Error::Data(format!(
                "brain mask covers {count} of {} voxels, below {}%",
                inside.len(),
                MIN_COVERAGE * 100.0
            )));
        }
        Ok(BrainMask { dims, inside, count })
    }

    /// Voxels of channel 0 strictly above `fraction` of its maximum.
    pub fn from_threshold(v: &Volume, fraction: f32) -> Result<Self> {
        let ch = v.channel(0);
        let max = ch.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        if max <= 0.0 {
            return Err(Error::Data("channel 0 has no positive voxels to threshold".into()));
        }
        let cut = fraction * max;
        Self::new(v.dims(), ch.iter().map(|&x| x > cut).collect())
    }

    /// Every voxel inside.
    pub fn full(dims: [usize; 3]) -> Self {
        let n = dims.iter().product();
        BrainMask {
            dims,
            inside: vec![true; n],
            count: n,
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn inside(&self) -> &[bool] {
        &self.inside
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn check(&self, v: &Volume) -> Result<()> {
        if v.dims() != self.dims {
            return Err(Error::Shape(format!("mask dims {:?} vs volume dims {:?}", self.dims, v.dims())));
        }
        Ok(())
    }

    /// Values of `channel` at masked voxels.
    pub fn select<'a>(&'a self, channel: &'a [f32]) -> impl Iterator<Item = f32> + 'a {
        channel.iter().zip(&self.inside).filter(|(_, &m)| m).map(|(&x, _)| x)
    }

    pub fn mean(&self, channel: &[f32]) -> f64 {
        self.select(channel).map(f64::from).sum::<f64>() / self.count as f64
    }
}

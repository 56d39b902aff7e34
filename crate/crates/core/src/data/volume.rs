use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A multi-channel 3D image stored channel-major, `[C][m][n][p]` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Volume {
    channels: usize,
    dims: [usize; 3],
    spacing: [f32; 3],
    unit: String,
    data: Vec<f32>,
}

impl Volume {
    pub fn new(channels: usize, dims: [usize; 3], data: Vec<f32>) -> Result<Self> {
        Self::with_meta(channels, dims, [1.0; 3], String::new(), data)
    }

    pub fn with_meta(channels: usize, dims: [usize; 3], spacing: [f32; 3], unit: String, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || dims.contains(&0) {
            return Err(Error::Shape(format!("volume needs positive sizes, got {channels} x {dims:?}")));
        }
        let expect = channels
            .checked_mul(dims[0])
            .and_then(|v| v.checked_mul(dims[1]))
            .and_then(|v| v.checked_mul(dims[2]))
            .ok_or_else(|| Error::Shape("volume size overflows".into()))?;
        if data.len() != expect {
            return Err(Error::Shape(format!(
                "{channels} x {dims:?} volume needs {expect} voxels, got {}",
                data.len()
            )));
        }
        if !spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(Error::InvalidArgument(format!("voxel spacing must be positive, got {spacing:?}")));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite voxel at index {i}")));
        }
        Ok(Volume {
            channels,
            dims,
            spacing,
            unit,
            data,
        })
    }

    pub fn zeros(channels: usize, dims: [usize; 3]) -> Result<Self> {
        Self::new(channels, dims, vec![0.0; channels * dims.iter().product::<usize>()])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn unit(&self) -> &str {
        &self.unit
    }

    pub fn set_unit(&mut self, unit: impl Into<String>) {
        self.unit = unit.into();
    }

    pub fn set_spacing(&mut self, spacing: [f32; 3]) -> Result<()> {
        if !spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(Error::InvalidArgument(format!("voxel spacing must be positive, got {spacing:?}")));
        }
        self.spacing = spacing;
        Ok(())
    }

    /// Voxels per channel.
    pub fn voxels(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Mutable voxel access. Callers must keep values finite.
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let v = self.voxels();
        &self.data[c * v..(c + 1) * v]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let v = self.voxels();
        &mut self.data[c * v..(c + 1) * v]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    /// Same geometry and metadata, different data.
    pub fn like(&self, channels: usize, data: Vec<f32>) -> Result<Self> {
        Self::with_meta(channels, self.dims, self.spacing, self.unit.clone(), data)
    }

    /// `[1, C, m, n, p]` tensor view of the data.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let [m, n, p] = self.dims;
        Tensor::new(vec![1, self.channels, m, n, p], self.data.clone()).expect("volume sizes are consistent")
    }
}

/// Concatenates equally shaped volumes into an `[N, C, m, n, p]` tensor.
pub fn stack(volumes: &[&Volume]) -> Result<Tensor<f32>> {
    let first = volumes
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot stack zero volumes".into()))?;
    let mut data = Vec::with_capacity(first.data.len() * volumes.len());
    for v in volumes {
        if v.channels != first.channels || v.dims != first.dims {
            return Err(Error::Shape(format!(
                "cannot stack {} x {:?} with {} x {:?}",
                v.channels, v.dims, first.channels, first.dims
            )));
        }
        data.extend_from_slice(&v.data);
    }
    let [m, n, p] = first.dims;
    Tensor::new(vec![volumes.len(), first.channels, m, n, p], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_volumes() {
        assert!(Volume::new(1, [2, 2, 0], vec![]).is_err());
        assert!(Volume::new(1, [2, 2, 2], vec![0.0; 7]).is_err());
        let mut d = vec![0.0; 8];
        d[3] = f32::NAN;
        assert!(matches!(Volume::new(1, [2, 2, 2], d), Err(Error::Data(_))));
    }

    #[test]
    fn stack_checks_shapes() {
        let a = Volume::zeros(2, [2, 2, 2]).unwrap();
        let b = Volume::zeros(1, [2, 2, 2]).unwrap();
        assert_eq!(stack(&[&a, &a]).unwrap().shape(), &[2, 2, 2, 2, 2]);
        assert!(stack(&[&a, &b]).is_err());
    }
}

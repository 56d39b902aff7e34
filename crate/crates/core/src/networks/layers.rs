use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ConvGeometry, Tape, Var};
use crate::error::Result;
use crate::networks::params::{glorot_std, he_std, normal_tensor, Bound, ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Init {
    He,
    Glorot,
}

/// A 3D convolution with bias, cubic kernel.
#[derive(Debug, Clone)]
pub struct Conv3dLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub geom: ConvGeometry,
}

impl Conv3dLayer {
    /// Stride-1 convolution with size-preserving padding.
    pub fn same<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        init: Init,
    ) -> Self {
        let fan_in = in_channels * kernel.pow(3);
        let std = match init {
            Init::He => he_std(fan_in),
            Init::Glorot => glorot_std(fan_in, out_channels * kernel.pow(3)),
        };
        let weight = store.push(
            format!("{name}.weight"),
            normal_tensor(rng, vec![out_channels, in_channels, kernel, kernel, kernel], std),
        );
        let bias = store.push(format!("{name}.bias"), Tensor::zeros(vec![out_channels]));
        Conv3dLayer {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            geom: ConvGeometry::same([kernel; 3]),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        tape.conv3d(x, p.var(self.weight), Some(p.var(self.bias)), self.geom)
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel.pow(3) + self.out_channels
    }
}

/// Fully connected layer `[N, K] -> [N, M]`.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl DenseLayer {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        inputs: usize,
        outputs: usize,
        init: Init,
    ) -> Self {
        let std = match init {
            Init::He => he_std(inputs),
            Init::Glorot => glorot_std(inputs, outputs),
        };
        let weight = store.push(format!("{name}.weight"), normal_tensor(rng, vec![inputs, outputs], std));
        let bias = store.push(format!("{name}.bias"), Tensor::zeros(vec![outputs]));
        DenseLayer {
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        tape.dense(x, p.var(self.weight), Some(p.var(self.bias)))
    }

    pub fn param_count(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }
}

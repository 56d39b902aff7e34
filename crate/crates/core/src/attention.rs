//! Channel and spatial attention gates for the synthesis encoder-decoder.
//!
//! The channel gate squeezes each channel to pooled statistics, passes them
//! through a shared two-layer bottleneck MLP and rescales channels by the
//! sigmoid of the result. The spatial gate pools across channels (mean and
//! max), convolves the two maps down to one and rescales every voxel.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::networks::layers::{Conv3dLayer, DenseLayer, Init};
use crate::networks::params::{Bound, ParamStore};
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatePooling {
    Avg,
    Max,
    /// Average- and max-pooled descriptors through the shared MLP, summed.
    AvgMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionOrder {
    ChannelThenSpatial,
    SpatialThenChannel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttentionConfig {
    pub reduction_ratio: usize,
    pub spatial_kernel: usize,
    pub pooling: GatePooling,
    pub order: AttentionOrder,
    /// Gate every encoder scale output.
    pub on_encoder: bool,
    /// Gate every skip connection.
    pub on_skips: bool,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            reduction_ratio: 4,
            spatial_kernel: 7,
            pooling: GatePooling::AvgMax,
            order: AttentionOrder::ChannelThenSpatial,
            on_encoder: true,
            on_skips: true,
        }
    }
}

impl AttentionConfig {
    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.reduction_ratio == 0 || !channels.is_multiple_of(self.reduction_ratio) {
            return Err(Error::Config(format!(
                "{channels} channels not divisible by reduction ratio {}",
                self.reduction_ratio
            )));
        }
        if self.spatial_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "spatial attention kernel must be odd, got {}",
                self.spatial_kernel
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ChannelAttentionParams {
    pub channels: usize,
    pub reduction_ratio: usize,
    pub pooling: GatePooling,
    pub fc1: DenseLayer,
    pub fc2: DenseLayer,
}

impl ChannelAttentionParams {
    pub fn build<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        channels: usize,
        reduction_ratio: usize,
        pooling: GatePooling,
    ) -> Result<Self> {
        if reduction_ratio == 0 || !channels.is_multiple_of(reduction_ratio) {
            return Err(Error::Config(format!(
                "{channels} channels not divisible by reduction ratio {reduction_ratio}"
            )));
        }
        let hidden = channels / reduction_ratio;
        let fc1 = DenseLayer::new(store, rng, &format!("{name}.fc1"), channels, hidden, Init::He);
        let fc2 = DenseLayer::new(store, rng, &format!("{name}.fc2"), hidden, channels, Init::Glorot);
        Ok(ChannelAttentionParams {
            channels,
            reduction_ratio,
            pooling,
            fc1,
            fc2,
        })
    }

    fn mlp<T: Scalar>(&self, tape: &Tape<T>, p: &Bound, pooled: Var) -> Result<Var> {
        let h = tape.relu(self.fc1.forward(tape, p, pooled)?);
        self.fc2.forward(tape, p, h)
    }
}

/// `x * sigmoid(MLP(pool(x)))`, broadcast over space.
pub fn channel_attention<T: Scalar>(
    tape: &Tape<T>,
    p: &Bound,
    x: Var,
    params: &ChannelAttentionParams,
) -> Result<Var> {
    let c = tape.shape(x).get(1).copied().unwrap_or(0);
    if c != params.channels {
        return Err(Error::Shape(format!(
            "channel attention built for {} channels, input has {c}",
            params.channels
        )));
    }
    let logits = match params.pooling {
        GatePooling::Avg => params.mlp(tape, p, tape.global_avg_pool(x)?)?,
        GatePooling::Max => params.mlp(tape, p, tape.global_max_pool(x)?)?,
        GatePooling::AvgMax => {
            let a = params.mlp(tape, p, tape.global_avg_pool(x)?)?;
            let m = params.mlp(tape, p, tape.global_max_pool(x)?)?;
            tape.add(a, m)?
        }
    };
    tape.broadcast_mul_channels(x, tape.sigmoid(logits))
}

#[derive(Debug, Clone)]
pub struct SpatialAttentionParams {
    pub kernel: usize,
    pub conv: Conv3dLayer,
}

impl SpatialAttentionParams {
    pub fn build<T: Scalar>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, kernel: usize) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("spatial attention kernel must be odd, got {kernel}")));
        }
        let conv = Conv3dLayer::same(store, rng, &format!("{name}.conv"), 2, 1, kernel, Init::Glorot);
        Ok(SpatialAttentionParams { kernel, conv })
    }
}

/// `x * sigmoid(conv([mean_c(x), max_c(x)]))`, broadcast over channels.
pub fn spatial_attention<T: Scalar>(
    tape: &Tape<T>,
    p: &Bound,
    x: Var,
    params: &SpatialAttentionParams,
) -> Result<Var> {
    let pooled = tape.concat_channels(&[tape.channel_mean(x)?, tape.channel_max(x)?])?;
    let mask = tape.sigmoid(params.conv.forward(tape, p, pooled)?);
    tape.broadcast_mul_spatial(x, mask)
}

/// A channel gate and a spatial gate applied in a fixed order.
#[derive(Debug, Clone)]
pub struct AttentionBlock {
    pub channel: ChannelAttentionParams,
    pub spatial: SpatialAttentionParams,
    pub order: AttentionOrder,
}

impl AttentionBlock {
    pub fn build<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        channels: usize,
        cfg: &AttentionConfig,
    ) -> Result<Self> {
        cfg.validate(channels)?;
        Ok(AttentionBlock {
            channel: ChannelAttentionParams::build(
                store,
                rng,
                &format!("{name}.channel"),
                channels,
                cfg.reduction_ratio,
                cfg.pooling,
            )?,
            spatial: SpatialAttentionParams::build(store, rng, &format!("{name}.spatial"), cfg.spatial_kernel)?,
            order: cfg.order,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        attention_block(tape, p, x, &self.channel, &self.spatial, self.order)
    }
}

pub fn attention_block<T: Scalar>(
    tape: &Tape<T>,
    p: &Bound,
    x: Var,
    cp: &ChannelAttentionParams,
    sp: &SpatialAttentionParams,
    order: AttentionOrder,
) -> Result<Var> {
    match order {
        AttentionOrder::ChannelThenSpatial => {
            let y = channel_attention(tape, p, x, cp)?;
            spatial_attention(tape, p, y, sp)
        }
        AttentionOrder::SpatialThenChannel => {
            let y = spatial_attention(tape, p, x, sp)?;
            channel_attention(tape, p, y, cp)
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::tensor::Tensor;

    fn block(channels: usize, seed: u64) -> (ParamStore<f64>, AttentionBlock) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = AttentionBlock::build(&mut store, &mut rng, "att", channels, &AttentionConfig::default()).unwrap();
        (store, b)
    }

    fn random_input(shape: Vec<usize>, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        crate::networks::params::normal_tensor(&mut rng, shape, 1.0)
    }

    fn zero_all(store: &mut ParamStore<f64>) {
        for t in store.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    #[test]
    fn zero_weights_halve_the_input() {
        let (mut store, b) = block(4, 1);
        zero_all(&mut store);
        let x = random_input(vec![1, 4, 2, 2, 2], 2);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let xv = tape.constant(x.clone());
        let c = channel_attention(&tape, &p, xv, &b.channel).unwrap();
        assert!(tape.value(c).max_abs_diff(&x.map(|v| 0.5 * v)).unwrap() < 1e-15);
        let s = spatial_attention(&tape, &p, xv, &b.spatial).unwrap();
        assert!(tape.value(s).max_abs_diff(&x.map(|v| 0.5 * v)).unwrap() < 1e-15);
        let both = b.forward(&tape, &p, xv).unwrap();
        assert!(tape.value(both).max_abs_diff(&x.map(|v| 0.25 * v)).unwrap() < 1e-15);
    }

    #[test]
    fn saturated_gates_pass_input_through() {
        let (mut store, b) = block(4, 3);
        let ch_bias = b.channel.fc2.bias;
        store.get_mut(ch_bias).data_mut().iter_mut().for_each(|v| *v = 20.0);
        let sp_bias = b.spatial.conv.bias;
        store.get_mut(b.spatial.conv.weight).data_mut().iter_mut().for_each(|v| *v = 0.0);
        store.get_mut(sp_bias).data_mut().iter_mut().for_each(|v| *v = 20.0);
        let x = random_input(vec![1, 4, 2, 2, 2], 4);
        let tape = Tape::new();
        let p = store.bind(&tape);
        let xv = tape.constant(x.clone());
        let y = b.forward(&tape, &p, xv).unwrap();
        assert!(tape.value(y).max_abs_diff(&x).unwrap() < 1e-6);
    }

    #[test]
    fn configuration_errors() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(ChannelAttentionParams::build(&mut store, &mut rng, "c", 6, 4, GatePooling::Avg).is_err());
        assert!(SpatialAttentionParams::build(&mut store, &mut rng, "s", 4).is_err());
    }
}

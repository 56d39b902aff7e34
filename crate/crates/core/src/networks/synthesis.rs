//! Attention-gated 3D encoder-decoder producing a single-channel CBF volume.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionBlock, AttentionConfig};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::networks::layers::{Conv3dLayer, Init};
use crate::networks::params::{Bound, ParamStore};
use crate::tensor::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    pub in_channels: usize,
    /// Channel width of the first scale; doubles at every further scale.
    pub base_width: usize,
    /// Number of resolution levels. 1 means no down/upsampling.
    pub num_scales: usize,
    pub kernel_size: usize,
    pub attention: AttentionConfig,
    /// Initial bias of the output convolution. Inputs and targets are
    /// normalised to unit in-brain mean, so 1 starts near the target level.
    pub output_bias_init: f64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            in_channels: 8,
            base_width: 16,
            num_scales: 3,
            kernel_size: 3,
            attention: AttentionConfig::default(),
            output_bias_init: 1.0,
        }
    }
}

impl SynthesisConfig {
    pub fn width(&self, scale: usize) -> usize {
        self.base_width << scale
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.base_width == 0 || self.num_scales == 0 {
            return Err(Error::Config("synthesis widths and scale count must be positive".into()));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "synthesis kernel size must be odd, got {}",
                self.kernel_size
            )));
        }
        if self.attention.on_encoder || self.attention.on_skips {
            for s in 0..self.num_scales {
                self.attention.validate(self.width(s))?;
            }
        }
        Ok(())
    }

    /// Spatial dims must halve cleanly `num_scales - 1` times.
    pub fn check_dims(&self, dims: [usize; 3]) -> Result<()> {
        let div = 1usize << (self.num_scales - 1);
        if dims.iter().any(|&d| d == 0 || d % div != 0) {
            return Err(Error::Config(format!(
                "spatial dims {dims:?} not divisible by {div} (num_scales = {})",
                self.num_scales
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct EncoderStage {
    conv1: Conv3dLayer,
    conv2: Conv3dLayer,
    attention: Option<AttentionBlock>,
    skip_attention: Option<AttentionBlock>,
}

#[derive(Debug, Clone)]
struct DecoderStage {
    up_conv: Conv3dLayer,
    merge_conv: Conv3dLayer,
    refine_conv: Conv3dLayer,
}

/// Layer structure of the synthesis branch; weights live in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct SynthesisNet {
    pub config: SynthesisConfig,
    encoder: Vec<EncoderStage>,
    decoder: Vec<DecoderStage>,
    head: Conv3dLayer,
}

impl SynthesisNet {
    pub fn build<T: Scalar>(cfg: &SynthesisConfig, store: &mut ParamStore<T>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = cfg.kernel_size;
        let mut encoder = Vec::with_capacity(cfg.num_scales);
        let mut in_ch = cfg.in_channels;
        for s in 0..cfg.num_scales {
            let w = cfg.width(s);
            let conv1 = Conv3dLayer::same(store, &mut rng, &format!("synth.enc{s}.conv1"), in_ch, w, k, Init::He);
            let conv2 = Conv3dLayer::same(store, &mut rng, &format!("synth.enc{s}.conv2"), w, w, k, Init::He);
            let attention = if cfg.attention.on_encoder {
                Some(AttentionBlock::build(store, &mut rng, &format!("synth.enc{s}.att"), w, &cfg.attention)?)
            } else {
                None
            };
            let skip_attention = if cfg.attention.on_skips && s + 1 < cfg.num_scales {
                Some(AttentionBlock::build(store, &mut rng, &format!("synth.skip{s}.att"), w, &cfg.attention)?)
            } else {
                None
            };
            encoder.push(EncoderStage {
                conv1,
                conv2,
                attention,
                skip_attention,
            });
            in_ch = w;
        }
        let mut decoder = Vec::with_capacity(cfg.num_scales.saturating_sub(1));
        for s in (0..cfg.num_scales.saturating_sub(1)).rev() {
            let (deep, w) = (cfg.width(s + 1), cfg.width(s));
            decoder.push(DecoderStage {
                up_conv: Conv3dLayer::same(store, &mut rng, &format!("synth.dec{s}.up"), deep, w, k, Init::He),
                merge_conv: Conv3dLayer::same(store, &mut rng, &format!("synth.dec{s}.merge"), 2 * w, w, k, Init::He),
                refine_conv: Conv3dLayer::same(store, &mut rng, &format!("synth.dec{s}.refine"), w, w, k, Init::He),
            });
        }
        let head = Conv3dLayer::same(store, &mut rng, "synth.head", cfg.width(0), 1, 1, Init::Glorot);
        store
            .get_mut(head.bias)
            .data_mut()
            .fill(T::of_f64(cfg.output_bias_init));
        Ok(SynthesisNet {
            config: cfg.clone(),
            encoder,
            decoder,
            head,
        })
    }

    /// `[N, C, D, H, W] -> [N, 1, D, H, W]`, non-negative.
    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, p: &Bound, input: Var) -> Result<Var> {
        let shape = tape.shape(input);
        let [_, c, d, h, w] = crate::tensor::dims5(&shape)?;
        if c != self.config.in_channels {
            return Err(Error::Shape(format!(
                "synthesis branch expects {} input channels, got {c}",
                self.config.in_channels
            )));
        }
        self.config.check_dims([d, h, w]).map_err(|e| Error::Shape(e.to_string()))?;
        let mut x = input;
        let mut skips = Vec::with_capacity(self.decoder.len());
        let last = self.encoder.len() - 1;
        for (s, stage) in self.encoder.iter().enumerate() {
            if s > 0 {
                x = tape.maxpool3d(x, [2, 2, 2])?;
            }
            x = tape.relu(stage.conv1.forward(tape, p, x)?);
            x = tape.relu(stage.conv2.forward(tape, p, x)?);
            if let Some(att) = &stage.attention {
                x = att.forward(tape, p, x)?;
            }
            if s < last {
                skips.push(match &stage.skip_attention {
                    Some(att) => att.forward(tape, p, x)?,
                    None => x,
                });
            }
        }
        for (stage, skip) in self.decoder.iter().zip(skips.into_iter().rev()) {
            x = tape.upsample_nearest(x, [2, 2, 2])?;
            x = tape.relu(stage.up_conv.forward(tape, p, x)?);
            x = tape.concat_channels(&[x, skip])?;
            x = tape.relu(stage.merge_conv.forward(tape, p, x)?);
            x = tape.relu(stage.refine_conv.forward(tape, p, x)?);
        }
        Ok(tape.relu(self.head.forward(tape, p, x)?))
    }
}

//! The synthesis branch, the diagnosis branch and the joint multi-task model.

pub mod checkpoint;
pub mod diagnosis;
pub mod layers;
pub mod params;
pub mod synthesis;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use crate::label::ClassLabel;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::label::one_hot;
use crate::losses::{self, LossReport, LossWeights, SsimConstants};
use crate::tensor::{Scalar, Tensor};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use diagnosis::{DiagnosisConfig, DiagnosisNet, DiagnosisOutput};
use layers::{Conv3dLayer, Init};
pub use params::{Bound, ParamId, ParamStore};
pub use synthesis::{SynthesisConfig, SynthesisNet};

/// Number of MRI input sequences.
pub const MRI_CHANNELS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Spatial size of the input volumes.
    pub input_dims: [usize; 3],
    pub in_channels: usize,
    pub synthesis: SynthesisConfig,
    pub diagnosis: DiagnosisConfig,
    /// Feed both branches from one shared convolution instead of the raw input.
    pub shared_stem: bool,
    pub stem_width: usize,
    pub stem_kernel: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dims: [96, 96, 64],
            in_channels: MRI_CHANNELS,
            synthesis: SynthesisConfig::default(),
            diagnosis: DiagnosisConfig::default(),
            shared_stem: false,
            stem_width: 8,
            stem_kernel: 3,
        }
    }
}

impl ModelConfig {
    /// Small configuration suited to 32x32x16 volumes on a single CPU core.
    pub fn desk(input_dims: [usize; 3]) -> Self {
        ModelConfig {
            input_dims,
            synthesis: SynthesisConfig {
                base_width: 8,
                attention: crate::attention::AttentionConfig {
                    reduction_ratio: 2,
                    ..Default::default()
                },
                ..Default::default()
            },
            diagnosis: DiagnosisConfig {
                path_widths: [8, 8, 8],
                post_concat_widths: vec![16, 16],
                fc_hidden: 32,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    /// Copy with branch input channel counts made consistent with the stem setting.
    pub fn resolved(&self) -> Self {
        let mut cfg = self.clone();
        let branch_in = if cfg.shared_stem { cfg.stem_width } else { cfg.in_channels };
        cfg.synthesis.in_channels = branch_in;
        cfg.diagnosis.in_channels = branch_in;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::Config("in_channels must be positive".into()));
        }
        if self.shared_stem && (self.stem_width == 0 || self.stem_kernel.is_multiple_of(2)) {
            return Err(Error::Config("stem width must be positive and kernel odd".into()));
        }
        let cfg = self.resolved();
        cfg.synthesis.validate()?;
        cfg.synthesis.check_dims(self.input_dims)?;
        cfg.diagnosis.validate()?;
        cfg.diagnosis.feature_dims(self.input_dims)?;
        Ok(())
    }
}

/// Handles of one multi-task forward pass.
#[derive(Debug, Clone, Copy)]
pub struct MultiTaskOutput {
    /// `[N, 1, D, H, W]` predicted CBF.
    pub cbf: Var,
    /// `[N, 4]` class probabilities.
    pub probs: Var,
    pub logits: Var,
}

/// Both branches plus their parameters.
#[derive(Debug, Clone)]
pub struct MultiTaskModel<T> {
    config: ModelConfig,
    store: ParamStore<T>,
    stem: Option<Conv3dLayer>,
    synthesis: SynthesisNet,
    diagnosis: DiagnosisNet,
}

impl<T: Scalar> MultiTaskModel<T> {
    /// Deterministic construction: the same config and seed always give identical parameters.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let cfg = config.resolved();
        let mut store = ParamStore::new();
        let stem = cfg.shared_stem.then(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(params::derive_seed(seed, 0));
            Conv3dLayer::same(
                &mut store,
                &mut rng,
                "stem",
                cfg.in_channels,
                cfg.stem_width,
                cfg.stem_kernel,
                Init::He,
            )
        });
        let synthesis = SynthesisNet::build(&cfg.synthesis, &mut store, params::derive_seed(seed, 1))?;
        let diagnosis = DiagnosisNet::build(&cfg.diagnosis, cfg.input_dims, &mut store, params::derive_seed(seed, 2))?;
        Ok(MultiTaskModel {
            config: cfg,
            store,
            stem,
            synthesis,
            diagnosis,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn param_count(&self) -> usize {
        self.store.scalar_count()
    }

    pub fn synthesis(&self) -> &SynthesisNet {
        &self.synthesis
    }

    pub fn diagnosis(&self) -> &DiagnosisNet {
        &self.diagnosis
    }

    /// Same structure and values in another precision.
    pub fn cast<U: Scalar>(&self) -> MultiTaskModel<U> {
        MultiTaskModel {
            config: self.config.clone(),
            store: self.store.cast(),
            stem: self.stem.clone(),
            synthesis: self.synthesis.clone(),
            diagnosis: self.diagnosis.clone(),
        }
    }

    /// Runs both branches on `mri: [N, 8, D, H, W]`.
    pub fn forward(&self, tape: &Tape<T>, p: &Bound, mri: Var) -> Result<MultiTaskOutput> {
        let shape = tape.shape(mri);
        let [_, c, d, h, w] = crate::tensor::dims5(&shape)?;
        if c != self.config.in_channels || [d, h, w] != self.config.input_dims {
            return Err(Error::Shape(format!(
                "model expects [N, {}, {:?}] input, got {shape:?}",
                self.config.in_channels, self.config.input_dims
            )));
        }
        let x = match &self.stem {
            Some(stem) => tape.relu(stem.forward(tape, p, mri)?),
            None => mri,
        };
        let cbf = self.synthesis.forward(tape, p, x)?;
        let diag = self.diagnosis.forward(tape, p, x)?;
        Ok(MultiTaskOutput {
            cbf,
            probs: diag.probs,
            logits: diag.logits,
        })
    }

    /// Inference without recording gradients: `(cbf, probs)`.
    pub fn predict(&self, mri: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let tape = Tape::new();
        let p = self.store.bind_frozen(&tape);
        let x = tape.constant(mri.clone());
        let out = self.forward(&tape, &p, x)?;
        let cbf = tape.value(out.cbf).clone();
        let probs = tape.value(out.probs).clone();
        Ok((cbf, probs))
    }
}

/// One mini-batch of inputs, targets and labels.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    /// `[N, 8, D, H, W]`.
    pub mri: Tensor<T>,
    /// `[N, 1, D, H, W]`.
    pub pet: Tensor<T>,
    pub labels: Vec<ClassLabel>,
}

impl<T: Scalar> Batch<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let [n, _, d, h, w] = self.mri.dims5()?;
        let [pn, pc, pd, ph, pw] = self.pet.dims5()?;
        if n != self.labels.len() || pn != n || pc != 1 || [pd, ph, pw] != [d, h, w] {
            return Err(Error::Shape(format!(
                "inconsistent batch: mri {:?}, pet {:?}, {} labels",
                self.mri.shape(),
                self.pet.shape(),
                self.labels.len()
            )));
        }
        Ok(())
    }

    /// SSIM/PSNR constants from each target's maximum voxel.
    pub fn ssim_constants(&self) -> Result<Vec<SsimConstants>> {
        let per = self.pet.numel() / self.len();
        self.pet.data().chunks(per).map(SsimConstants::from_reference).collect()
    }
}

/// Result of [`train_step`]: the loss scalars and the gradient of every parameter.
#[derive(Debug, Clone)]
pub struct StepOutput<T> {
    pub report: LossReport,
    pub grads: Vec<Tensor<T>>,
}

fn loss_graph<T: Scalar>(
    tape: &Tape<T>,
    model: &MultiTaskModel<T>,
    p: &Bound,
    batch: &Batch<T>,
    weights: &LossWeights,
) -> Result<(LossReport, Var)> {
    batch.validate()?;
    let consts = batch.ssim_constants()?;
    let mri = tape.constant(batch.mri.clone());
    let pet = tape.constant(batch.pet.clone());
    let out = model.forward(tape, p, mri)?;
    let trans = losses::translation_loss(tape, out.cbf, pet, weights, &consts)?;
    let l_class = losses::classification_loss(tape, out.probs, &one_hot(&batch.labels))?;
    let item = |v: Var| tape.item(v).map(|x| x.as_f64());
    let mut report = LossReport {
        mse: item(trans.mse)?,
        mae: item(trans.mae)?,
        ssim: item(trans.ssim)?,
        psnr: item(trans.psnr)?,
        l_trans: item(trans.total)?,
        l_class: item(l_class)?,
        l_global: 0.0,
    };
    if let Some(term) = report.first_non_finite() {
        return Err(Error::non_finite(term));
    }
    let global = losses::global_loss(tape, trans.total, l_class, weights.class_weight)?;
    report.l_global = item(global)?;
    if !report.l_global.is_finite() {
        return Err(Error::non_finite("l_global"));
    }
    Ok((report, global))
}

/// One forward and backward pass of the global loss. Parameters are not modified.
pub fn train_step<T: Scalar>(model: &MultiTaskModel<T>, batch: &Batch<T>, weights: &LossWeights) -> Result<StepOutput<T>> {
    let tape = Tape::new();
    let p = model.store.bind(&tape);
    let (report, global) = loss_graph(&tape, model, &p, batch, weights)?;
    let mut grads = tape.backward(global)?;
    let grads = model
        .store
        .ids()
        .map(|id| {
            let v = p.var(id);
            grads.take(v).unwrap_or_else(|| Tensor::zeros(model.store.get(id).shape().to_vec()))
        })
        .collect();
    Ok(StepOutput { report, grads })
}

/// Loss scalars without a backward pass.
pub fn evaluate_batch<T: Scalar>(model: &MultiTaskModel<T>, batch: &Batch<T>, weights: &LossWeights) -> Result<LossReport> {
    let tape = Tape::new();
    let p = model.store.bind_frozen(&tape);
    loss_graph(&tape, model, &p, batch, weights).map(|(r, _)| r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            input_dims: [8, 8, 4],
            synthesis: SynthesisConfig {
                base_width: 4,
                num_scales: 2,
                attention: crate::attention::AttentionConfig {
                    reduction_ratio: 2,
                    spatial_kernel: 3,
                    ..Default::default()
                },
                ..Default::default()
            },
            diagnosis: DiagnosisConfig {
                input_downsample: 2,
                path_widths: [2, 2, 2],
                post_concat_widths: vec![4],
                fc_hidden: 4,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = MultiTaskModel::<f32>::build(&tiny(), 7).unwrap();
        let b = MultiTaskModel::<f32>::build(&tiny(), 7).unwrap();
        let c = MultiTaskModel::<f32>::build(&tiny(), 8).unwrap();
        assert_eq!(a.store(), b.store());
        assert_ne!(a.store(), c.store());
    }

    #[test]
    fn stem_changes_branch_inputs() {
        let cfg = ModelConfig {
            shared_stem: true,
            stem_width: 4,
            ..tiny()
        };
        let m = MultiTaskModel::<f32>::build(&cfg, 1).unwrap();
        assert_eq!(m.config().synthesis.in_channels, 4);
        assert!(m.store().find("stem.weight").is_some());
    }

    #[test]
    fn rejects_indivisible_dims() {
        let cfg = ModelConfig {
            input_dims: [8, 8, 6],
            ..tiny()
        };
        assert!(MultiTaskModel::<f32>::build(&cfg, 0).is_err());
    }
}

//! Multi-scale 3D CNN classifier.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::label::ClassLabel;
use crate::networks::layers::{Conv3dLayer, DenseLayer, Init};
use crate::networks::params::{Bound, ParamStore};
use crate::tensor::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnosisConfig {
    pub in_channels: usize,
    /// Average-pooling factor applied to the input before the parallel paths.
    pub input_downsample: usize,
    /// Kernel sizes of the three parallel paths.
    pub path_kernels: [usize; 3],
    pub path_widths: [usize; 3],
    /// Widths of the convolutions after concatenation; each is followed by ReLU and 2x max pooling.
    pub post_concat_widths: Vec<usize>,
    /// Hidden width of the first fully connected layer.
    pub fc_hidden: usize,
    pub num_classes: usize,
}

impl Default for DiagnosisConfig {
    fn default() -> Self {
        DiagnosisConfig {
            in_channels: 8,
            input_downsample: 2,
            path_kernels: [3, 5, 7],
            path_widths: [8, 8, 8],
            post_concat_widths: vec![16, 16],
            fc_hidden: 32,
            num_classes: ClassLabel::COUNT,
        }
    }
}

impl DiagnosisConfig {
    pub fn concat_channels(&self) -> usize {
        self.path_widths.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes != ClassLabel::COUNT {
            return Err(Error::Config(format!(
                "diagnosis branch must have {} classes, got {}",
                ClassLabel::COUNT,
                self.num_classes
            )));
        }
        if self.path_kernels.iter().any(|k| k % 2 == 0) {
            return Err(Error::Config(format!("path kernels must be odd: {:?}", self.path_kernels)));
        }
        if self.in_channels == 0
            || self.input_downsample == 0
            || self.fc_hidden == 0
            || self.path_widths.contains(&0)
            || self.post_concat_widths.contains(&0)
        {
            return Err(Error::Config("diagnosis widths must be positive".into()));
        }
        Ok(())
    }

    /// Spatial dims reaching the flatten step.
    pub fn feature_dims(&self, dims: [usize; 3]) -> Result<[usize; 3]> {
        let div = self.input_downsample << self.post_concat_widths.len();
        if dims.iter().any(|&d| d == 0 || d % div != 0) {
            return Err(Error::Config(format!(
                "spatial dims {dims:?} not divisible by {div} required by the diagnosis branch"
            )));
        }
        Ok(dims.map(|d| d / div))
    }

    pub fn flat_features(&self, dims: [usize; 3]) -> Result<usize> {
        let fd = self.feature_dims(dims)?;
        let c = self.post_concat_widths.last().copied().unwrap_or(self.concat_channels());
        Ok(c * fd.iter().product::<usize>())
    }
}

#[derive(Debug, Clone)]
pub struct DiagnosisNet {
    pub config: DiagnosisConfig,
    pub input_dims: [usize; 3],
    paths: Vec<Conv3dLayer>,
    post: Vec<Conv3dLayer>,
    fc1: DenseLayer,
    fc2: DenseLayer,
}

/// Tape handles produced by the diagnosis forward pass.
#[derive(Debug, Clone, Copy)]
pub struct DiagnosisOutput {
    pub features: Var,
    pub logits: Var,
    pub probs: Var,
}

impl DiagnosisNet {
    pub fn build<T: Scalar>(
        cfg: &DiagnosisConfig,
        input_dims: [usize; 3],
        store: &mut ParamStore<T>,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let flat = cfg.flat_features(input_dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let paths = cfg
            .path_kernels
            .iter()
            .zip(cfg.path_widths)
            .enumerate()
            .map(|(i, (&k, w))| {
                Conv3dLayer::same(store, &mut rng, &format!("diag.path{i}"), cfg.in_channels, w, k, Init::He)
            })
            .collect();
        let mut in_ch = cfg.concat_channels();
        let mut post = Vec::with_capacity(cfg.post_concat_widths.len());
        for (i, &w) in cfg.post_concat_widths.iter().enumerate() {
            post.push(Conv3dLayer::same(store, &mut rng, &format!("diag.post{i}"), in_ch, w, 3, Init::He));
            in_ch = w;
        }
        let fc1 = DenseLayer::new(store, &mut rng, "diag.fc1", flat, cfg.fc_hidden, Init::He);
        let fc2 = DenseLayer::new(store, &mut rng, "diag.fc2", cfg.fc_hidden, cfg.num_classes, Init::Glorot);
        Ok(DiagnosisNet {
            config: cfg.clone(),
            input_dims,
            paths,
            post,
            fc1,
            fc2,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<T>, p: &Bound, input: Var) -> Result<DiagnosisOutput> {
        let shape = tape.shape(input);
        let [_, c, d, h, w] = crate::tensor::dims5(&shape)?;
        if c != self.config.in_channels || [d, h, w] != self.input_dims {
            return Err(Error::Shape(format!(
                "diagnosis branch built for [{}, {:?}] input, got {shape:?}",
                self.config.in_channels, self.input_dims
            )));
        }
        let ds = self.config.input_downsample;
        let x = if ds > 1 { tape.avgpool3d(input, [ds; 3])? } else { input };
        let feats = self
            .paths
            .iter()
            .map(|conv| Ok(tape.relu(conv.forward(tape, p, x)?)))
            .collect::<Result<Vec<_>>>()?;
        let mut x = tape.concat_channels(&feats)?;
        let features = x;
        for conv in &self.post {
            x = tape.relu(conv.forward(tape, p, x)?);
            x = tape.maxpool3d(x, [2, 2, 2])?;
        }
        let flat = tape.flatten(x)?;
        let hidden = tape.relu(self.fc1.forward(tape, p, flat)?);
        let logits = self.fc2.forward(tape, p, hidden)?;
        let probs = tape.softmax(logits)?;
        Ok(DiagnosisOutput {
            features,
            logits,
            probs,
        })
    }
}

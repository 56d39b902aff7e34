//! Volumes, the MVOL format, normalization, augmentation, cross-validation splits
//! and the phantom generator.

pub mod augment;
pub mod folds;
pub mod manifest;
pub mod mask;
pub mod mvol;
pub mod normalize;
pub mod phantom;
mod volume;

use std::path::{Path, PathBuf};

use rayon::prelude::*;

pub use augment::{augment_eightfold, Transform, TRANSFORMS};
pub use folds::{leakage_violations, make_cv_folds, split_train_val, FoldOptions, FoldSplit};
pub use manifest::{ClassCount, DatasetManifest, ScanRecord, SessionKind};
pub use mask::BrainMask;
pub use mvol::{load_volume, save_volume};
pub use normalize::{normalize_mean_one, normalize_with_factors};
pub use phantom::{generate_phantom, generate_scan, write_phantom_dataset, PhantomScan};
pub use volume::{stack, Volume};

use crate::error::{Error, Result};
use crate::label::ClassLabel;
use crate::networks::MRI_CHANNELS;

/// A scan ready for the network: both volumes at in-mask mean one.
#[derive(Debug, Clone)]
pub struct Sample {
    pub subject_id: String,
    pub session: SessionKind,
    pub label: ClassLabel,
    pub input: Volume,
    pub target: Volume,
    pub mask: BrainMask,
    /// In-mask mean of the raw target; multiplying restores physical units.
    pub target_scale: f64,
}

impl Sample {
    /// Masks by thresholding input channel 0 and normalizes both volumes.
    pub fn from_volumes(subject_id: String, session: SessionKind, label: ClassLabel, input: Volume, target: Volume) -> Result<Self> {
        if input.channels() != MRI_CHANNELS || target.channels() != 1 {
            return Err(Error::Data(format!(
                "subject {subject_id}: expected {MRI_CHANNELS} input channels and 1 target channel, got {} and {}",
                input.channels(),
                target.channels()
            )));
        }
        if input.dims() != target.dims() {
            return Err(Error::Data(format!(
                "subject {subject_id}: input dims {:?} differ from target dims {:?}",
                input.dims(),
                target.dims()
            )));
        }
        let mask = BrainMask::from_threshold(&input, mask::DEFAULT_THRESHOLD)?;
        let input = normalize_mean_one(&input, &mask)?;
        let (target, factors) = normalize_with_factors(&target, &mask)?;
        Ok(Sample {
            subject_id,
            session,
            label,
            input,
            target,
            mask,
            target_scale: factors[0],
        })
    }

    pub fn load(root: &Path, record: &ScanRecord) -> Result<Self> {
        let input = load_volume(root.join(&record.input))?;
        let target = load_volume(root.join(&record.target))?;
        Self::from_volumes(record.subject_id.clone(), record.session, record.label, input, target)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.input.dims()
    }
}

/// A manifest with every scan loaded.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    /// Directory that record paths are relative to.
    pub root: PathBuf,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let manifest_path = manifest_path.as_ref();
        let manifest = DatasetManifest::load(manifest_path)?;
        let root = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::load_records(manifest, root)
    }

    pub fn load_records(manifest: DatasetManifest, root: PathBuf) -> Result<Self> {
        let samples: Vec<Sample> = manifest.records.par_iter().map(|r| Sample::load(&root, r)).collect::<Result<_>>()?;
        let dims = samples[0].dims();
        if let Some(bad) = samples.iter().find(|s| s.dims() != dims) {
            return Err(Error::Data(format!(
                "subject {} has dims {:?}, expected {dims:?}",
                bad.subject_id,
                bad.dims()
            )));
        }
        Ok(Dataset { manifest, root, samples })
    }

    /// Common spatial dims of all scans.
    pub fn dims(&self) -> [usize; 3] {
        self.samples[0].dims()
    }

    pub fn select(&self, indices: &[usize]) -> Vec<Sample> {
        indices.iter().map(|&i| self.samples[i].clone()).collect()
    }
}

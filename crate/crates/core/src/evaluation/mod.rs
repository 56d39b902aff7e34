//! Image-quality metrics, agreement statistics, classification metrics and reports.

pub mod agreement;
pub mod classification;
pub mod image;
pub mod report;
mod svg;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use agreement::{bland_altman, pearson, AgreementStats};
pub use classification::{classification_metrics, ClassMetrics, ConfusionMatrix4, MetricRow};
pub use image::{nrmse, nrmse_values, windowed_ssim, NrmseNorm};
pub use report::{emit_report, validate_report_json, Report, REPORT_FILES, SCHEMA_VERSION};

use crate::data::{Sample, SessionKind, Volume};
use crate::error::{Error, Result};
use crate::label::ClassLabel;
use crate::losses::{self, PsnrForm, SsimConstants};
use crate::networks::MultiTaskModel;
use crate::tensor::Tensor;

/// Reported PSNR ceiling; identical volumes would otherwise score infinity.
pub const PSNR_CAP_DB: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "window")]
pub enum SsimMode {
    /// One SSIM from whole-volume statistics.
    #[default]
    Global,
    /// Mean of local SSIM over cubic windows of the given odd side.
    Windowed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    /// Restrict image metrics to the brain mask.
    pub masked: bool,
    pub nrmse_norm: NrmseNorm,
    pub ssim: SsimMode,
    pub psnr_form: PsnrForm,
    pub batch_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            masked: true,
            nrmse_norm: NrmseNorm::Mean,
            ssim: SsimMode::Global,
            psnr_form: PsnrForm::Printed,
            batch_size: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanEvaluation {
    pub subject_id: String,
    pub session: SessionKind,
    pub label: ClassLabel,
    pub predicted: ClassLabel,
    pub probs: [f64; ClassLabel::COUNT],
    pub ssim: f64,
    pub psnr: f64,
    pub nrmse: f64,
    /// In-mask mean CBF in physical units.
    pub true_mean_cbf: f64,
    pub pred_mean_cbf: f64,
}

/// Cohort means of the per-scan image metrics.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub n: usize,
    pub ssim: f64,
    pub psnr: f64,
    pub nrmse: f64,
}

impl ImageMetrics {
    pub fn from_scans(scans: &[ScanEvaluation]) -> Self {
        let n = scans.len();
        let mean = |f: fn(&ScanEvaluation) -> f64| scans.iter().map(f).sum::<f64>() / n as f64;
        ImageMetrics {
            n,
            ssim: mean(|s| s.ssim),
            psnr: mean(|s| s.psnr),
            nrmse: mean(|s| s.nrmse),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldEvaluation {
    pub scans: Vec<ScanEvaluation>,
    pub image: ImageMetrics,
    pub confusion: ConfusionMatrix4,
    pub classification: ClassMetrics,
    /// `None` with fewer than two scans.
    pub agreement: Option<AgreementStats>,
}

impl FoldEvaluation {
    /// Pools scans of several evaluations and recomputes every aggregate.
    pub fn pooled(parts: &[FoldEvaluation]) -> Result<Self> {
        summarize(parts.iter().flat_map(|p| p.scans.iter().cloned()).collect())
    }

    /// Share of scans whose predicted label is correct.
    pub fn accuracy(&self) -> f64 {
        self.confusion.correct() as f64 / self.confusion.total() as f64
    }
}

fn summarize(scans: Vec<ScanEvaluation>) -> Result<FoldEvaluation> {
    if scans.is_empty() {
        return Err(Error::InvalidArgument("no scans to evaluate".into()));
    }
    let confusion = ConfusionMatrix4::from_predictions(scans.iter().map(|s| (s.label, s.predicted)));
    let pairs: Vec<(f64, f64)> = scans.iter().map(|s| (s.true_mean_cbf, s.pred_mean_cbf)).collect();
    Ok(FoldEvaluation {
        image: ImageMetrics::from_scans(&scans),
        classification: classification_metrics(&confusion)?,
        agreement: if pairs.len() >= 2 { Some(bland_altman(&pairs)?) } else { None },
        confusion,
        scans,
    })
}

/// Scores one predicted CBF volume (normalized units) and class probabilities against a sample.
pub fn evaluate_scan(sample: &Sample, pred: &Volume, probs: &[f64], opts: &EvalOptions) -> Result<ScanEvaluation> {
    if pred.dims() != sample.dims() || pred.channels() != 1 {
        return Err(Error::Shape(format!(
            "prediction {}x{:?} vs target 1x{:?}",
            pred.channels(),
            pred.dims(),
            sample.dims()
        )));
    }
    if probs.len() != ClassLabel::COUNT {
        return Err(Error::Shape(format!("{} class probabilities", probs.len())));
    }
    let mask = opts.masked.then_some(&sample.mask);
    let reference = sample.target.data();
    let (r, p) = image::select_pairs(reference, pred.data(), mask)?;
    let c_max = r.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let consts = SsimConstants::new(c_max)?;
    let ssim = match opts.ssim {
        SsimMode::Global => losses::ssim_global_value(&r, &p, &consts)?,
        SsimMode::Windowed(w) => windowed_ssim(reference, pred.data(), sample.dims(), w, &consts, mask)?,
    };
    let psnr = losses::psnr_value(&r, &p, c_max, opts.psnr_form)?.min(PSNR_CAP_DB);
    let nrmse = nrmse_values(reference, pred.data(), mask, opts.nrmse_norm)?;
    let in_mask_mean = |v: &[f32]| sample.mask.mean(v) * sample.target_scale;
    Ok(ScanEvaluation {
        subject_id: sample.subject_id.clone(),
        session: sample.session,
        label: sample.label,
        predicted: ClassLabel::argmax(probs)?,
        probs: [probs[0], probs[1], probs[2], probs[3]],
        ssim,
        psnr,
        nrmse,
        true_mean_cbf: in_mask_mean(reference),
        pred_mean_cbf: in_mask_mean(pred.data()),
    })
}

/// Aggregates already computed predictions, one `(cbf, probs)` per sample.
pub fn evaluate_predictions(samples: &[Sample], preds: &[(Volume, Vec<f64>)], opts: &EvalOptions) -> Result<FoldEvaluation> {
    if samples.len() != preds.len() {
        return Err(Error::Shape(format!("{} samples but {} predictions", samples.len(), preds.len())));
    }
    let scans = samples
        .par_iter()
        .zip(preds)
        .map(|(s, (v, p))| evaluate_scan(s, v, p, opts))
        .collect::<Result<Vec<_>>>()?;
    summarize(scans)
}

/// Runs the model on every sample: normalized CBF volume and class probabilities.
pub fn predict_samples(model: &MultiTaskModel<f32>, samples: &[Sample], batch_size: usize) -> Result<Vec<(Volume, Vec<f64>)>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Volume> = chunk.iter().map(|s| &s.input).collect();
        let mri = crate::data::stack(&refs)?;
        let (cbf, probs): (Tensor<f32>, Tensor<f32>) = model.predict(&mri)?;
        let per = cbf.numel() / chunk.len();
        for (i, s) in chunk.iter().enumerate() {
            let v = s.target.like(1, cbf.data()[i * per..(i + 1) * per].to_vec())?;
            let p = probs.data()[i * ClassLabel::COUNT..(i + 1) * ClassLabel::COUNT].iter().map(|&x| x as f64).collect();
            out.push((v, p));
        }
    }
    Ok(out)
}

/// Predicts and evaluates a model on a test set.
pub fn evaluate_fold(model: &MultiTaskModel<f32>, samples: &[Sample], opts: &EvalOptions) -> Result<FoldEvaluation> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let dims = model.config().input_dims;
    if let Some(s) = samples.iter().find(|s| s.dims() != dims) {
        return Err(Error::Data(format!(
            "checkpoint expects {dims:?} volumes, subject {} has {:?}",
            s.subject_id,
            s.dims()
        )));
    }
    let preds = predict_samples(model, samples, opts.batch_size)?;
    evaluate_predictions(samples, &preds, opts)
}

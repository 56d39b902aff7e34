//! Translation, classification and global losses.
//!
//! Each loss exists twice: as a tape operation used for training, and as a
//! plain function on slices used for verification and reporting.

use serde::{Deserialize, Serialize};

use crate::autodiff::{SsimParts, Tape, Var};
use crate::error::{Error, Result};
use crate::label::ClassLabel;
use crate::tensor::{Scalar, Tensor};

/// Probabilities are clamped to this floor before taking the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// MSE floor before the logarithm in PSNR so identical volumes stay finite.
const MSE_FLOOR: f64 = 1e-30;

/// How `c_max` enters PSNR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PsnrForm {
    /// `10 log10(c_max / MSE)`.
    #[default]
    Printed,
    /// `10 log10(c_max^2 / MSE)`.
    Squared,
}

impl PsnrForm {
    fn offset_db(self, c_max: f64) -> f64 {
        match self {
            PsnrForm::Printed => 10.0 * c_max.log10(),
            PsnrForm::Squared => 20.0 * c_max.log10(),
        }
    }
}

/// Weights of the composite translation loss and the classification balance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
    /// `-1` lowers the loss as PSNR improves; `+1` adds PSNR literally.
    pub psnr_sign: i8,
    pub psnr_form: PsnrForm,
    /// Cap on the PSNR term, in dB.
    pub psnr_cap_db: f64,
    /// Multiplier on the classification loss in the global sum.
    pub class_weight: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w1: 0.15,
            w2: 0.15,
            w3: 0.60,
            w4: 0.20,
            psnr_sign: -1,
            psnr_form: PsnrForm::Printed,
            psnr_cap_db: 100.0,
            class_weight: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("w1", self.w1), ("w2", self.w2), ("w3", self.w3), ("w4", self.w4)] {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::Config(format!("loss weight {name} = {w} outside [0, 1]")));
            }
        }
        if self.psnr_sign != 1 && self.psnr_sign != -1 {
            return Err(Error::Config(format!("psnr_sign must be +1 or -1, got {}", self.psnr_sign)));
        }
        if !(self.psnr_cap_db.is_finite() && self.psnr_cap_db > 0.0) {
            return Err(Error::Config("psnr_cap_db must be a positive finite number".into()));
        }
        if !(self.class_weight.is_finite() && self.class_weight >= 0.0) {
            return Err(Error::Config("class_weight must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn with_weights(w: [f64; 4]) -> Self {
        LossWeights {
            w1: w[0],
            w2: w[1],
            w3: w[2],
            w4: w[3],
            ..Default::default()
        }
    }
}

/// SSIM stabilising constants derived from the dynamic-range maximum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimConstants {
    pub c_max: f64,
    pub c1: f64,
    pub c2: f64,
}

impl SsimConstants {
    pub fn new(c_max: f64) -> Result<Self> {
        if !(c_max > 0.0 && c_max.is_finite()) {
            return Err(Error::InvalidArgument(format!("c_max must be positive, got {c_max}")));
        }
        Ok(SsimConstants {
            c_max,
            c1: (0.01 * c_max).powi(2),
            c2: (0.03 * c_max).powi(2),
        })
    }

    /// Constants from the maximum voxel of a reference volume.
    pub fn from_reference<T: Scalar>(reference: &[T]) -> Result<Self> {
        let max = reference.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        Self::new(max)
    }
}

/// Every loss scalar of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub mse: f64,
    pub mae: f64,
    pub ssim: f64,
    pub psnr: f64,
    pub l_trans: f64,
    pub l_class: f64,
    pub l_global: f64,
}

impl LossReport {
    pub const COLUMNS: [&'static str; 7] = ["mse", "mae", "ssim", "psnr", "l_trans", "l_class", "l_global"];

    pub fn values(&self) -> [f64; 7] {
        [
            self.mse,
            self.mae,
            self.ssim,
            self.psnr,
            self.l_trans,
            self.l_class,
            self.l_global,
        ]
    }

    /// Sample-weighted mean of reports.
    pub fn weighted_mean(items: &[(LossReport, usize)]) -> LossReport {
        let total: usize = items.iter().map(|(_, n)| n).sum();
        if total == 0 {
            return LossReport::default();
        }
        let mut acc = [0.0; 7];
        for (r, n) in items {
            for (a, v) in acc.iter_mut().zip(r.values()) {
                *a += v * *n as f64;
            }
        }
        let t = total as f64;
        LossReport {
            mse: acc[0] / t,
            mae: acc[1] / t,
            ssim: acc[2] / t,
            psnr: acc[3] / t,
            l_trans: acc[4] / t,
            l_class: acc[5] / t,
            l_global: acc[6] / t,
        }
    }

    /// Name of the first non-finite field, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        Self::COLUMNS
            .iter()
            .zip(self.values())
            .find(|(_, v)| !v.is_finite())
            .map(|(n, _)| *n)
    }
}

/// Tape handles of the translation loss and its constituents (batch means).
#[derive(Debug, Clone, Copy)]
pub struct TranslationTerms {
    pub mse: Var,
    pub mae: Var,
    pub ssim: Var,
    pub psnr: Var,
    pub total: Var,
}

pub fn mse<T: Scalar>(tape: &Tape<T>, pred: Var, target: Var) -> Result<Var> {
    let d = tape.sub(pred, target)?;
    Ok(tape.mean_all(tape.square(d)))
}

pub fn mae<T: Scalar>(tape: &Tape<T>, pred: Var, target: Var) -> Result<Var> {
    let d = tape.sub(pred, target)?;
    Ok(tape.mean_all(tape.abs(d)))
}

/// Batch mean of per-sample global SSIM.
pub fn ssim_global<T: Scalar>(tape: &Tape<T>, pred: Var, target: Var, consts: &[SsimConstants]) -> Result<Var> {
    let c1: Vec<f64> = consts.iter().map(|c| c.c1).collect();
    let c2: Vec<f64> = consts.iter().map(|c| c.c2).collect();
    let per = tape.ssim_global(pred, target, &c1, &c2)?;
    Ok(tape.mean_all(per))
}

/// Batch mean of per-sample PSNR, capped at `cap_db`.
pub fn psnr_capped<T: Scalar>(
    tape: &Tape<T>,
    pred: Var,
    target: Var,
    consts: &[SsimConstants],
    form: PsnrForm,
    cap_db: f64,
) -> Result<Var> {
    let d = tape.sub(pred, target)?;
    let per_mse = tape.mean_per_sample(tape.square(d));
    let log_mse = tape.log10(tape.clamp_min(per_mse, MSE_FLOOR));
    let offsets: Vec<f64> = consts.iter().map(|c| form.offset_db(c.c_max)).collect();
    let offsets = tape.constant(Tensor::from_f64(vec![offsets.len()], &offsets)?);
    let psnr = tape.add(tape.scale(log_mse, -10.0), offsets)?;
    Ok(tape.mean_all(tape.clamp_max(psnr, cap_db)))
}

/// `w1 MSE + w2 MAE + w3 (1 - SSIM) + sign * w4 * PSNR_capped`.
pub fn translation_loss<T: Scalar>(
    tape: &Tape<T>,
    pred: Var,
    target: Var,
    w: &LossWeights,
    consts: &[SsimConstants],
) -> Result<TranslationTerms> {
    let mse_v = mse(tape, pred, target)?;
    let mae_v = mae(tape, pred, target)?;
    let ssim_v = ssim_global(tape, pred, target, consts)?;
    let psnr_v = psnr_capped(tape, pred, target, consts, w.psnr_form, w.psnr_cap_db)?;
    let dissim = tape.add_scalar(tape.scale(ssim_v, -1.0), 1.0);
    let mut total = tape.scale(mse_v, w.w1);
    total = tape.add(total, tape.scale(mae_v, w.w2))?;
    total = tape.add(total, tape.scale(dissim, w.w3))?;
    total = tape.add(total, tape.scale(psnr_v, f64::from(w.psnr_sign) * w.w4))?;
    Ok(TranslationTerms {
        mse: mse_v,
        mae: mae_v,
        ssim: ssim_v,
        psnr: psnr_v,
        total,
    })
}

fn validate_class_inputs<T: Scalar>(probs: &[T], labels: &[T], k: usize) -> Result<()> {
    if probs.len() != labels.len() || !probs.len().is_multiple_of(k) {
        return Err(Error::Shape(format!(
            "classification loss expects matching [N, {k}] tensors"
        )));
    }
    for (row, lab) in probs.chunks(k).zip(labels.chunks(k)) {
        if row.iter().any(|p| p.as_f64() < 0.0 || !p.is_finite()) {
            return Err(Error::InvalidArgument("negative or non-finite probability".into()));
        }
        let s: f64 = row.iter().map(|p| p.as_f64()).sum();
        if (s - 1.0).abs() > 1e-5 {
            return Err(Error::InvalidArgument(format!("probability row sums to {s}, not 1")));
        }
        let ones = lab.iter().filter(|v| v.as_f64() == 1.0).count();
        let zeros = lab.iter().filter(|v| v.as_f64() == 0.0).count();
        if ones != 1 || zeros != k - 1 {
            return Err(Error::InvalidArgument("label row is not one-hot".into()));
        }
    }
    Ok(())
}

/// Categorical cross-entropy with a base-10 logarithm, averaged over the batch.
pub fn classification_loss<T: Scalar>(tape: &Tape<T>, probs: Var, labels: &Tensor<T>) -> Result<Var> {
    let shape = tape.shape(probs);
    if shape.len() != 2 || shape[1] != ClassLabel::COUNT || labels.shape() != shape.as_slice() {
        return Err(Error::Shape(format!(
            "classification loss expects [N, 4] probabilities and labels, got {shape:?} and {:?}",
            labels.shape()
        )));
    }
    validate_class_inputs(tape.value(probs).data(), labels.data(), ClassLabel::COUNT)?;
    let n = shape[0] as f64;
    let logp = tape.log10(tape.clamp_min(probs, PROB_FLOOR));
    let onehot = tape.constant(labels.clone());
    let picked = tape.sum_all(tape.mul(onehot, logp)?);
    Ok(tape.scale(picked, -1.0 / n))
}

/// `l_trans + class_weight * l_class`.
pub fn global_loss<T: Scalar>(tape: &Tape<T>, l_trans: Var, l_class: Var, class_weight: f64) -> Result<Var> {
    for (name, v) in [("l_trans", l_trans), ("l_class", l_class)] {
        if !tape.item(v)?.is_finite() {
            return Err(Error::non_finite(name));
        }
    }
    tape.add(l_trans, tape.scale(l_class, class_weight))
}

fn check_pair<T: Scalar>(x: &[T], y: &[T]) -> Result<()> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Shape(format!(
            "volume pair sizes differ or are empty ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    Ok(())
}

pub fn mse_value<T: Scalar>(x: &[T], y: &[T]) -> Result<f64> {
    check_pair(x, y)?;
    Ok(x.iter()
        .zip(y)
        .map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2))
        .sum::<f64>()
        / x.len() as f64)
}

pub fn mae_value<T: Scalar>(x: &[T], y: &[T]) -> Result<f64> {
    check_pair(x, y)?;
    Ok(x.iter().zip(y).map(|(a, b)| (a.as_f64() - b.as_f64()).abs()).sum::<f64>() / x.len() as f64)
}

/// Whole-volume SSIM from global means, variances and covariance.
pub fn ssim_global_value<T: Scalar>(x: &[T], y: &[T], c: &SsimConstants) -> Result<f64> {
    check_pair(x, y)?;
    Ok(SsimParts::compute(x, y, c.c1, c.c2).value())
}

/// PSNR in dB; `+inf` when the volumes are identical.
pub fn psnr_value<T: Scalar>(x: &[T], y: &[T], c_max: f64, form: PsnrForm) -> Result<f64> {
    if !(c_max > 0.0) {
        return Err(Error::InvalidArgument(format!("c_max must be positive, got {c_max}")));
    }
    let m = mse_value(x, y)?;
    Ok(psnr_from_mse(m, c_max, form))
}

pub fn psnr_from_mse(mse: f64, c_max: f64, form: PsnrForm) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        form.offset_db(c_max) - 10.0 * mse.log10()
    }
}

/// Batch-mean cross-entropy (base 10) from probability and one-hot rows.
pub fn classification_loss_value<T: Scalar>(probs: &[T], labels: &[T]) -> Result<f64> {
    validate_class_inputs(probs, labels, ClassLabel::COUNT)?;
    let n = probs.len() / ClassLabel::COUNT;
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(p, l)| l.as_f64() * p.as_f64().max(PROB_FLOOR).log10())
        .sum();
    Ok(-total / n as f64)
}

pub fn global_loss_value(l_trans: f64, l_class: f64) -> Result<f64> {
    if !l_trans.is_finite() {
        return Err(Error::non_finite("l_trans"));
    }
    if !l_class.is_finite() {
        return Err(Error::non_finite("l_class"));
    }
    Ok(l_trans + l_class)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn consts(c_max: f64) -> SsimConstants {
        SsimConstants::new(c_max).unwrap()
    }

    #[test]
    fn defaults_match_grid_search_weights() {
        let w = LossWeights::default();
        assert_eq!([w.w1, w.w2, w.w3, w.w4], [0.15, 0.15, 0.60, 0.20]);
        assert!(w.validate().is_ok());
        assert!(LossWeights::with_weights([1.2, 0.0, 0.0, 0.0]).validate().is_err());
        assert!(LossWeights { psnr_sign: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn mse_and_mae_of_constant_offset() {
        let x = vec![3.0f64; 27];
        let y = vec![1.0f64; 27];
        assert_eq!(mse_value(&x, &y).unwrap(), 4.0);
        assert_eq!(mae_value(&x, &y).unwrap(), 2.0);
        assert_eq!(mse_value(&x, &x).unwrap(), 0.0);
        assert!(mse_value(&x, &y[..3]).is_err());
    }

    #[test]
    fn ssim_of_two_constant_volumes() {
        let x = vec![1.0f64; 8];
        let y = vec![0.0f64; 8];
        let s = ssim_global_value(&x, &y, &consts(1.0)).unwrap();
        let expect = 1e-4 / (1.0 + 1e-4);
        assert!((s - expect).abs() < 1e-15, "{s} vs {expect}");
        assert_eq!(ssim_global_value(&x, &x, &consts(1.0)).unwrap(), 1.0);
        assert!(SsimConstants::new(0.0).is_err());
    }

    #[test]
    fn psnr_printed_form() {
        // MSE 1e-4 with c_max 1: 10 log10(1 / 1e-4) = 40 dB.
        assert!((psnr_from_mse(1e-4, 1.0, PsnrForm::Printed) - 40.0).abs() < 1e-12);
        assert_eq!(psnr_from_mse(1.0, 1.0, PsnrForm::Printed), 0.0);
        assert!((psnr_from_mse(1e-4, 2.0, PsnrForm::Squared) - (40.0 + 20.0 * 2f64.log10())).abs() < 1e-12);
        let x = vec![0.5f64; 4];
        assert_eq!(psnr_value(&x, &x, 1.0, PsnrForm::Printed).unwrap(), f64::INFINITY);
    }

    #[test]
    fn uniform_prediction_cross_entropy() {
        let probs = vec![0.25f64; 4];
        let labels = vec![0.0, 0.0, 1.0, 0.0];
        let l = classification_loss_value(&probs, &labels).unwrap();
        assert!((l - 0.602_059_991_327_962_4).abs() < 1e-12);
        let perfect = classification_loss_value(&[0.0f64, 1.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(perfect, 0.0);
    }

    #[test]
    fn classification_input_validation() {
        assert!(classification_loss_value(&[0.5f64, 0.5, 0.0, 0.0], &[1.0, 1.0, 0.0, 0.0]).is_err());
        assert!(classification_loss_value(&[0.6f64, 0.5, 0.0, -0.1], &[1.0, 0.0, 0.0, 0.0]).is_err());
        assert!(classification_loss_value(&[0.6f64, 0.5, 0.0, 0.0], &[1.0, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn mixed_batch_cross_entropy_by_hand() {
        let probs = [0.7f64, 0.1, 0.1, 0.1, 0.2, 0.5, 0.2, 0.1];
        let labels = [1.0f64, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let expect = -(0.7f64.log10() + 0.2f64.log10()) / 2.0;
        let got = classification_loss_value(&probs, &labels).unwrap();
        assert!(((got - expect) / expect).abs() < 1e-12);

        let tape = Tape::<f64>::new();
        let p = tape.constant(Tensor::new(vec![2, 4], probs.to_vec()).unwrap());
        let l = classification_loss(&tape, p, &Tensor::new(vec![2, 4], labels.to_vec()).unwrap()).unwrap();
        assert!(((tape.item(l).unwrap() - expect) / expect).abs() < 1e-12);
    }

    #[test]
    fn global_loss_is_plain_sum() {
        assert!((global_loss_value(0.5, 0.3).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(global_loss_value(0.0, 0.0).unwrap(), 0.0);
        assert!(global_loss_value(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn identical_volumes_leave_only_capped_psnr() {
        let tape = Tape::<f64>::new();
        let data: Vec<f64> = (0..16).map(|i| 0.5 + (i as f64 * 0.37).sin()).collect();
        let x = tape.constant(Tensor::new(vec![1, 1, 2, 2, 4], data.clone()).unwrap());
        let c = [SsimConstants::from_reference(&data).unwrap()];
        for sign in [-1i8, 1] {
            let w = LossWeights { psnr_sign: sign, ..Default::default() };
            let terms = translation_loss(&tape, x, x, &w, &c).unwrap();
            let expect = f64::from(sign) * w.w4 * 100.0;
            assert!((tape.item(terms.total).unwrap() - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn weight_one_zero_zero_zero_is_mse() {
        let tape = Tape::<f64>::new();
        let a: Vec<f64> = (0..8).map(|i| i as f64 * 0.1).collect();
        let b: Vec<f64> = (0..8).map(|i| 1.0 - i as f64 * 0.05).collect();
        let x = tape.constant(Tensor::new(vec![1, 1, 2, 2, 2], a.clone()).unwrap());
        let y = tape.constant(Tensor::new(vec![1, 1, 2, 2, 2], b.clone()).unwrap());
        let w = LossWeights::with_weights([1.0, 0.0, 0.0, 0.0]);
        let c = [SsimConstants::from_reference(&b).unwrap()];
        let t = translation_loss(&tape, x, y, &w, &c).unwrap();
        assert_eq!(tape.item(t.total).unwrap(), mse_value(&a, &b).unwrap());
    }
}

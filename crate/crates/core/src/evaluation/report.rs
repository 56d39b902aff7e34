//! `metrics.json`, `per_scan.csv` and the SVG figures.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::svg;
use super::{AgreementStats, ClassMetrics, ConfusionMatrix4, EvalOptions, FoldEvaluation, ImageMetrics};
use crate::error::{Error, Result};
use crate::label::ClassLabel;

pub const SCHEMA_VERSION: u32 = 1;
pub const REPORT_FILES: [&str; 5] = ["metrics.json", "per_scan.csv", "bland_altman.svg", "joint_plot.svg", "confusion_matrix.svg"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    /// Sample standard deviation; zero for a single value.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanSd { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub n_scans: usize,
    pub ssim: f64,
    pub psnr: f64,
    pub nrmse: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAggregate {
    pub ssim: MeanSd,
    pub psnr: MeanSd,
    pub nrmse: MeanSd,
    pub accuracy: MeanSd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub schema_version: u32,
    pub options: EvalOptions,
    pub n_scans: usize,
    pub image: ImageMetrics,
    pub classes: Vec<String>,
    pub confusion_matrix: ConfusionMatrix4,
    pub classification: ClassMetrics,
    pub agreement: Option<AgreementStats>,
    #[serde(default)]
    pub folds: Vec<FoldSummary>,
    #[serde(default)]
    pub fold_summary: Option<FoldAggregate>,
}

impl Report {
    /// `pooled` covers every scan; `folds` optionally lists per-fold evaluations.
    pub fn new(pooled: &FoldEvaluation, folds: &[FoldEvaluation], options: &EvalOptions) -> Self {
        let summaries: Vec<FoldSummary> = folds
            .iter()
            .enumerate()
            .map(|(fold, f)| FoldSummary {
                fold,
                n_scans: f.scans.len(),
                ssim: f.image.ssim,
                psnr: f.image.psnr,
                nrmse: f.image.nrmse,
                accuracy: f.accuracy(),
            })
            .collect();
        let fold_summary = (!summaries.is_empty()).then(|| {
            let col = |f: fn(&FoldSummary) -> f64| MeanSd::of(&summaries.iter().map(f).collect::<Vec<_>>());
            FoldAggregate {
                ssim: col(|s| s.ssim),
                psnr: col(|s| s.psnr),
                nrmse: col(|s| s.nrmse),
                accuracy: col(|s| s.accuracy),
            }
        });
        Report {
            schema_version: SCHEMA_VERSION,
            options: *options,
            n_scans: pooled.scans.len(),
            image: pooled.image,
            classes: ClassLabel::ALL.iter().map(|c| c.name().to_string()).collect(),
            confusion_matrix: pooled.confusion,
            classification: pooled.classification.clone(),
            agreement: pooled.agreement,
            folds: summaries,
            fold_summary,
        }
    }
}

/// Parses `metrics.json` text and checks its structural invariants.
pub fn validate_report_json(text: &str) -> Result<Report> {
    let r: Report = serde_json::from_str(text).map_err(|e| Error::Data(format!("metrics.json: {e}")))?;
    let fail = |msg: String| Err(Error::Data(format!("metrics.json: {msg}")));
    if r.schema_version != SCHEMA_VERSION {
        return fail(format!("schema_version {} (expected {SCHEMA_VERSION})", r.schema_version));
    }
    if r.classes.len() != ClassLabel::COUNT {
        return fail(format!("{} classes", r.classes.len()));
    }
    if r.image.n != r.n_scans || r.confusion_matrix.total() != r.n_scans as u64 {
        return fail("scan counts disagree".into());
    }
    if !(r.image.nrmse >= 0.0) || !(r.image.ssim <= 1.0 + 1e-9) || !(r.image.ssim > -1.0) {
        return fail(format!("image metrics out of range: {:?}", r.image));
    }
    for row in r.classification.per_class.iter().chain([&r.classification.average]) {
        if !(-1.0..=1.0).contains(&row.mcc) || !(0.0..=1.0).contains(&row.fpr) || !(0.0..=1.0).contains(&row.fnr) {
            return fail(format!("classification rates out of range: {row:?}"));
        }
    }
    if let Some(a) = &r.agreement {
        if !(a.loa_low <= a.bias && a.bias <= a.loa_high) {
            return fail("limits of agreement do not bracket the bias".into());
        }
    }
    if !r.folds.is_empty() && r.folds.iter().map(|f| f.n_scans).sum::<usize>() != r.n_scans {
        return fail("fold scan counts do not add up".into());
    }
    Ok(r)
}

fn per_scan_csv(eval: &FoldEvaluation) -> String {
    let mut out = String::from("subject_id,session,label,predicted,p_hc,p_mmd,p_icsd,p_stroke,ssim,psnr,nrmse,true_mean_cbf,pred_mean_cbf\n");
    for s in &eval.scans {
        let session = match s.session {
            crate::data::SessionKind::Baseline => "baseline",
            crate::data::SessionKind::PostAcetazolamide => "post-acetazolamide",
        };
        write!(out, "{},{session},{},{}", s.subject_id, s.label, s.predicted).unwrap();
        for v in s.probs.iter().chain(&[s.ssim, s.psnr, s.nrmse, s.true_mean_cbf, s.pred_mean_cbf]) {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Writes the five report files into `out_dir` and returns their paths.
pub fn emit_report(pooled: &FoldEvaluation, folds: &[FoldEvaluation], options: &EvalOptions, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let report = Report::new(pooled, folds, options);
    let pairs: Vec<(f64, f64)> = pooled.scans.iter().map(|s| (s.true_mean_cbf, s.pred_mean_cbf)).collect();
    let contents = [
        serde_json::to_string_pretty(&report)?,
        per_scan_csv(pooled),
        svg::bland_altman_svg(&pairs, pooled.agreement.as_ref()),
        svg::joint_plot_svg(&pairs, pooled.agreement.and_then(|a| a.pearson)),
        svg::confusion_svg(&pooled.confusion),
    ];
    let mut paths = Vec::new();
    for (name, text) in REPORT_FILES.iter().zip(contents) {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

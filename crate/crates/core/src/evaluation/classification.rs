use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::ClassLabel;

const K: usize = ClassLabel::COUNT;

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfusionMatrix4 {
    pub counts: [[u64; K]; K],
}

impl ConfusionMatrix4 {
    /// Rejects negative entries.
    pub fn from_rows(rows: [[i64; K]; K]) -> Result<Self> {
        let mut counts = [[0u64; K]; K];
        for (r, row) in rows.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                counts[r][c] = u64::try_from(v).map_err(|_| Error::InvalidArgument(format!("negative count {v} at ({r}, {c})")))?;
            }
        }
        Ok(ConfusionMatrix4 { counts })
    }

    pub fn from_predictions(pairs: impl IntoIterator<Item = (ClassLabel, ClassLabel)>) -> Self {
        let mut cm = ConfusionMatrix4::default();
        for (t, p) in pairs {
            cm.add(t, p);
        }
        cm
    }

    pub fn add(&mut self, truth: ClassLabel, predicted: ClassLabel) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..K).map(|i| self.counts[i][i]).sum()
    }

    /// `(tp, fp, fn, tn)` of class `c` against the rest.
    pub fn one_vs_rest(&self, c: usize) -> [u64; 4] {
        let tp = self.counts[c][c];
        let fn_ = self.counts[c].iter().sum::<u64>() - tp;
        let fp = (0..K).map(|r| self.counts[r][c]).sum::<u64>() - tp;
        let tn = self.total() - tp - fn_ - fp;
        [tp, fp, fn_, tn]
    }
}

/// Percentages for Acc/Sens/Spec/Prec, rates for FPR/FNR.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricRow {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub mcc: f64,
    /// Metrics whose denominator was zero and were reported as 0.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub undefined: Vec<String>,
}

impl MetricRow {
    pub const NAMES: [&'static str; 7] = ["accuracy", "sensitivity", "specificity", "precision", "fpr", "fnr", "mcc"];

    pub fn values(&self) -> [f64; 7] {
        [
            self.accuracy,
            self.sensitivity,
            self.specificity,
            self.precision,
            self.fpr,
            self.fnr,
            self.mcc,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub per_class: [MetricRow; K],
    /// Unweighted mean over the four classes.
    pub average: MetricRow,
}

pub fn classification_metrics(cm: &ConfusionMatrix4) -> Result<ClassMetrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::InvalidArgument("confusion matrix is empty".into()));
    }
    let per_class: [MetricRow; K] = std::array::from_fn(|c| {
        let [tp, fp, fn_, tn] = cm.one_vs_rest(c).map(|v| v as f64);
        let mut undefined = Vec::new();
        let mut ratio = |num: f64, den: f64, name: &str| {
            if den == 0.0 {
                undefined.push(name.to_string());
                0.0
            } else {
                num / den
            }
        };
        let accuracy = 100.0 * (tp + tn) / total as f64;
        let sensitivity = 100.0 * ratio(tp, tp + fn_, "sensitivity");
        let specificity = 100.0 * ratio(tn, tn + fp, "specificity");
        let precision = 100.0 * ratio(tp, tp + fp, "precision");
        let fpr = ratio(fp, fp + tn, "fpr");
        let fnr = ratio(fn_, fn_ + tp, "fnr");
        let mcc = ratio(tp * tn - fp * fn_, ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt(), "mcc");
        MetricRow {
            accuracy,
            sensitivity,
            specificity,
            precision,
            fpr,
            fnr,
            mcc,
            undefined,
        }
    });
    let mean = |f: fn(&MetricRow) -> f64| per_class.iter().map(f).sum::<f64>() / K as f64;
    let average = MetricRow {
        accuracy: mean(|r| r.accuracy),
        sensitivity: mean(|r| r.sensitivity),
        specificity: mean(|r| r.specificity),
        precision: mean(|r| r.precision),
        fpr: mean(|r| r.fpr),
        fnr: mean(|r| r.fnr),
        mcc: mean(|r| r.mcc),
        undefined: Vec::new(),
    };
    Ok(ClassMetrics { per_class, average })
}

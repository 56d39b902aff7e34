use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Diagnostic class. Indices are fixed: HC=0, MMD=1, ICSD=2, Stroke=3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassLabel {
    /// Healthy control.
    #[serde(rename = "HC")]
    Hc,
    /// Moyamoya disease.
    #[serde(rename = "MMD")]
    Mmd,
    /// Intracranial atherosclerotic steno-occlusive disease.
    #[serde(rename = "ICSD")]
    Icsd,
    #[serde(rename = "Stroke")]
    Stroke,
}

impl ClassLabel {
    pub const COUNT: usize = 4;
    pub const ALL: [ClassLabel; 4] = [ClassLabel::Hc, ClassLabel::Mmd, ClassLabel::Icsd, ClassLabel::Stroke];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("class index {i} out of range 0..4")))
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Hc => "HC",
            ClassLabel::Mmd => "MMD",
            ClassLabel::Icsd => "ICSD",
            ClassLabel::Stroke => "Stroke",
        }
    }

    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax<T: Scalar>(probs: &[T]) -> Result<Self> {
        let mut best = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = i;
            }
        }
        Self::from_index(best)
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown class label {s:?}")))
    }
}

/// `[N, 4]` one-hot encoding of a label batch.
pub fn one_hot<T: Scalar>(labels: &[ClassLabel]) -> Tensor<T> {
    let mut data = vec![T::zero(); labels.len() * ClassLabel::COUNT];
    for (i, l) in labels.iter().enumerate() {
        data[i * ClassLabel::COUNT + l.index()] = T::one();
    }
    Tensor::from_parts(vec![labels.len(), ClassLabel::COUNT], data)
}

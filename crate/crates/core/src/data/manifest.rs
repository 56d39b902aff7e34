use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::ClassLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionKind {
    Baseline,
    PostAcetazolamide,
}

/// One paired acquisition: eight MRI channels in, one CBF channel out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub subject_id: String,
    pub session: SessionKind,
    pub label: ClassLabel,
    /// Input volume, relative to the manifest directory.
    pub input: PathBuf,
    /// Target volume, relative to the manifest directory.
    pub target: PathBuf,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCount {
    pub subjects: usize,
    pub scans: usize,
}

/// Scan records, stored on disk as a JSON array.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DatasetManifest {
    pub records: Vec<ScanRecord>,
}

impl DatasetManifest {
    pub fn new(records: Vec<ScanRecord>) -> Result<Self> {
        let m = DatasetManifest { records };
        m.validate()?;
        Ok(m)
    }

    /// Non-empty, and every subject carries a single label.
    pub fn validate(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::Data("manifest has no scans".into()));
        }
        let mut labels: BTreeMap<&str, ClassLabel> = BTreeMap::new();
        for r in &self.records {
            if r.subject_id.is_empty() {
                return Err(Error::Data("scan record with empty subject_id".into()));
            }
            if let Some(&l) = labels.get(r.subject_id.as_str()) {
                if l != r.label {
                    return Err(Error::Data(format!("subject {} has scans labelled {l} and {}", r.subject_id, r.label)));
                }
            }
            labels.insert(&r.subject_id, r.label);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Subject ids in first-appearance order with their scan indices.
    pub fn subjects(&self) -> Vec<(String, Vec<usize>)> {
        let mut order: Vec<(String, Vec<usize>)> = Vec::new();
        let mut pos: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            match pos.get(r.subject_id.as_str()) {
                Some(&k) => order[k].1.push(i),
                None => {
                    pos.insert(&r.subject_id, order.len());
                    order.push((r.subject_id.clone(), vec![i]));
                }
            }
        }
        order
    }

    pub fn class_counts(&self) -> [ClassCount; ClassLabel::COUNT] {
        let mut out = [ClassCount::default(); ClassLabel::COUNT];
        for (_, scans) in self.subjects() {
            let c = &mut out[self.records[scans[0]].label.index()];
            c.subjects += 1;
            c.scans += scans.len();
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn subset(&self, indices: &[usize]) -> DatasetManifest {
        DatasetManifest {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }

    /// A file-less manifest with `sessions[c]` listing the scan count of each subject of class `c`.
    pub fn synthetic(sessions: [&[usize]; ClassLabel::COUNT]) -> Self {
        let mut records = Vec::new();
        for (c, per_subject) in sessions.iter().enumerate() {
            let label = ClassLabel::ALL[c];
            for (s, &n) in per_subject.iter().enumerate() {
                let id = format!("{}-{s:03}", label.name().to_lowercase());
                for k in 0..n {
                    let session = if k % 2 == 0 { SessionKind::Baseline } else { SessionKind::PostAcetazolamide };
                    records.push(ScanRecord {
                        subject_id: id.clone(),
                        session,
                        label,
                        input: PathBuf::from(format!("{id}_{k}_mri.mvol")),
                        target: PathBuf::from(format!("{id}_{k}_pet.mvol")),
                    });
                }
            }
        }
        DatasetManifest { records }
    }

    /// Clinical cohort layout: 60 HC, 52 MMD, 4 ICSD and 4 stroke subjects, 332 scans.
    pub fn cohort_shaped() -> Self {
        let hc: Vec<usize> = [vec![3; 40], vec![2; 20]].concat();
        let mmd: Vec<usize> = [vec![3; 48], vec![2; 4]].concat();
        Self::synthetic([&hc, &mmd, &[3; 4], &[2; 4]])
    }
}

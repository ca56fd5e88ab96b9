//! Tab-separated domain manifests: `id <TAB> relative path <TAB> label | -`.
//! Blank lines and lines starting with `#` are skipped.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use crate::backbone::FrameFeatureSequence;
use crate::binio::{self, AccessLog};
use crate::data::features::read_features;
use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};

/// How the label column is treated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelPolicy {
    /// Every record must carry a label.
    Required,
    /// `-` marks an unlabeled record.
    Optional,
    /// The column is not parsed at all; every record comes back unlabeled.
    Ignore,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRecord {
    pub id: String,
    /// As written in the manifest, relative to its directory.
    pub path: PathBuf,
    pub label: Option<usize>,
    /// 1-based source line, 0 for records built in memory.
    pub line: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DomainManifest {
    root: PathBuf,
    records: Vec<ManifestRecord>,
}

impl DomainManifest {
    pub fn new(root: impl Into<PathBuf>, records: Vec<ManifestRecord>) -> Result<Self> {
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for r in &records {
            if let Some(prev) = seen.insert(&r.id, r.line) {
                return Err(Error::Data(format!(
                    "duplicate video id {} on lines {prev} and {}",
                    r.id, r.line
                )));
            }
        }
        Ok(Self {
            root: root.into(),
            records,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.id.clone()).collect()
    }

    /// Sorted distinct labels.
    pub fn label_space(&self) -> Vec<usize> {
        self.records
            .iter()
            .filter_map(|r| r.label)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn label_histogram(&self, classes: usize) -> Vec<usize> {
        let mut h = vec![0; classes];
        for l in self.records.iter().filter_map(|r| r.label) {
            if l < classes {
                h[l] += 1;
            }
        }
        h
    }

    pub fn resolve(&self, r: &ManifestRecord) -> PathBuf {
        self.root.join(&r.path)
    }

    pub fn without_labels(&self) -> Self {
        Self {
            root: self.root.clone(),
            records: self.records.iter().map(|r| ManifestRecord { label: None, ..r.clone() }).collect(),
        }
    }

    /// Reads every feature file, in manifest order.
    pub fn load_videos(&self, log: Option<&AccessLog>, mode: ExecMode) -> Result<Vec<FrameFeatureSequence>> {
        exec::map(mode, &self.records, |r| read_features(&self.resolve(r), &r.id, r.label, log))
            .into_iter()
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# id\tpath\tlabel\n");
        for r in &self.records {
            let label = r.label.map_or_else(|| "-".to_string(), |l| l.to_string());
            s.push_str(&format!("{}\t{}\t{label}\n", r.id, r.path.display()));
        }
        s
    }
}

/// Parses manifest text; `root` is the directory paths are relative to.
pub fn parse_manifest(text: &str, root: &Path, policy: LabelPolicy, classes: Option<usize>) -> Result<DomainManifest> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 || cols[0].is_empty() || cols[1].is_empty() {
            return Err(Error::Data(format!("line {n}: expected `id<TAB>path<TAB>label`")));
        }
        let label = match (policy, cols[2].trim()) {
            (LabelPolicy::Ignore, _) => None,
            (LabelPolicy::Required, "-") => {
                return Err(Error::Data(format!("line {n}: video {} is unlabeled", cols[0])));
            }
            (LabelPolicy::Optional, "-") => None,
            (_, s) => {
                let l: usize = s
                    .parse()
                    .map_err(|_| Error::Data(format!("line {n}: bad label `{s}`")))?;
                if let Some(c) = classes.filter(|&c| l >= c) {
                    return Err(Error::Data(format!("line {n}: label {l} outside [0, {c})")));
                }
                Some(l)
            }
        };
        records.push(ManifestRecord {
            id: cols[0].to_string(),
            path: PathBuf::from(cols[1]),
            label,
            line: n,
        });
    }
    DomainManifest::new(root, records)
}

/// Reads and validates a manifest, checking that every feature file exists.
pub fn load_manifest(
    path: &Path,
    policy: LabelPolicy,
    classes: Option<usize>,
    log: Option<&AccessLog>,
) -> Result<DomainManifest> {
    let bytes = binio::read_file(path, log)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::Data(format!("{}: not UTF-8", path.display())))?;
    let root = path.parent().unwrap_or(Path::new("")).to_path_buf();
    let m = parse_manifest(&text, &root, policy, classes)?;
    for r in m.records() {
        if !m.resolve(r).is_file() {
            return Err(Error::Data(format!(
                "line {}: feature file {} not found",
                r.line,
                m.resolve(r).display()
            )));
        }
    }
    Ok(m)
}

pub fn write_manifest(path: &Path, manifest: &DomainManifest) -> Result<()> {
    binio::write_file(path, manifest.to_text().as_bytes())
}

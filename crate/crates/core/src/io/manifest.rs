//! Dataset manifests: one JSON object per line with keys `id`, `path`,
//! `label` and `split`. Relative paths resolve against the manifest's
//! directory.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::bundle::{read_bundle, SampleBundle, BUNDLE_VERSION};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Validation(format!(
                "unknown split {other:?}; expected train, val or test"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub path: PathBuf,
    pub label: u8,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    /// Taken from the manifest file stem.
    pub name: String,
    pub format_version: u16,
    pub records: Vec<ManifestRecord>,
    /// Directory relative bundle paths resolve against.
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(name: impl Into<String>, base_dir: impl Into<PathBuf>, records: Vec<ManifestRecord>) -> Result<Self> {
        let manifest = Self {
            name: name.into(),
            format_version: BUNDLE_VERSION,
            records,
            base_dir: base_dir.into(),
        };
        manifest.check_records()?;
        Ok(manifest)
    }

    fn check_records(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Validation(format!("duplicate sample id {:?}", r.id)));
            }
            if r.label > 1 {
                return Err(Error::Validation(format!(
                    "sample {:?} has label {}; expected 0 or 1",
                    r.id, r.label
                )));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, record: &ManifestRecord) -> PathBuf {
        if record.path.is_absolute() {
            record.path.clone()
        } else {
            self.base_dir.join(&record.path)
        }
    }

    pub fn split(&self, split: Split) -> Vec<&ManifestRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.records.iter().filter(|r| r.split == split).count()
    }

    /// Reads every bundle of a split, checking ids and labels agree with
    /// the manifest.
    pub fn load_split(&self, split: Split) -> Result<Vec<SampleBundle>> {
        let records = self.split(split);
        if records.is_empty() {
            return Err(Error::Contract(format!("split {split} has no samples")));
        }
        records
            .into_iter()
            .map(|r| {
                let bundle = read_bundle(self.resolve(r))?;
                if bundle.sample_id != r.id || bundle.label != r.label {
                    return Err(Error::Validation(format!(
                        "bundle {} holds sample {:?} label {}, manifest says {:?} label {}",
                        self.resolve(r).display(),
                        bundle.sample_id,
                        bundle.label,
                        r.id,
                        r.label
                    )));
                }
                Ok(bundle)
            })
            .collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

/// Parses manifest text without touching the filesystem.
pub fn parse_manifest(text: &str, name: &str, base_dir: &Path) -> Result<DatasetManifest> {
    let records = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str::<ManifestRecord>(line).map_err(|e| {
                Error::Validation(format!("manifest line {}: {e}", i + 1))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    DatasetManifest::new(name, base_dir, records)
}

/// Reads and validates a manifest, checking that every bundle exists.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let manifest = parse_manifest(&text, &name, &base)?;
    let missing: Vec<PathBuf> = manifest
        .records
        .iter()
        .map(|r| manifest.resolve(r))
        .filter(|p| !p.is_file())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Resolution(missing));
    }
    Ok(manifest)
}

pub fn write_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(manifest.to_jsonl().as_bytes())
        .map_err(|e| Error::io(path, e))
}

//! Dataset manifest: a JSON file listing sample ids and the relative paths
//! of their image / label / scribble / superpixel tensors.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One sample and the relative paths of its tensors. `scribbles` is absent
/// for validation/test samples; `superpixels` points at a file that the
/// offline SLIC step writes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    pub split: Split,
    pub image: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scribbles: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub superpixels: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub samples: Vec<SampleEntry>,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &SampleEntry> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    /// Resolve a sample-relative path against the manifest's directory.
    pub fn resolve(&self, base_dir: &Path, rel: &str) -> PathBuf {
        base_dir.join(rel)
    }

    /// Error naming the sample when a referenced tensor file is missing.
    pub fn require_file(&self, base_dir: &Path, sample: &SampleEntry, rel: Option<&str>) -> Result<PathBuf> {
        let rel = rel.ok_or_else(|| SpError::MissingTensor {
            sample: sample.id.clone(),
            path: PathBuf::from("<unset>"),
        })?;
        let path = self.resolve(base_dir, rel);
        if !path.is_file() {
            return Err(SpError::MissingTensor {
                sample: sample.id.clone(),
                path,
            });
        }
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_split_filter() {
        let m = DatasetManifest {
            name: "toy".into(),
            classes: 4,
            height: 8,
            width: 8,
            samples: vec![
                SampleEntry {
                    id: "a".into(),
                    split: Split::Train,
                    image: "images/a.spt".into(),
                    label: "labels/a.spt".into(),
                    scribbles: Some("scribbles/a.json".into()),
                    superpixels: Some("superpixels/a.spt".into()),
                },
                SampleEntry {
                    id: "b".into(),
                    split: Split::Test,
                    image: "images/b.spt".into(),
                    label: "labels/b.spt".into(),
                    scribbles: None,
                    superpixels: None,
                },
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        m.save(&path).unwrap();
        let back = DatasetManifest::load(&path).unwrap();
        assert_eq!(back.samples.len(), 2);
        assert_eq!(back.split(Split::Train).count(), 1);
        assert_eq!(back.split(Split::Test).next().unwrap().id, "b");
    }

    #[test]
    fn missing_tensor_names_the_sample() {
        let m = DatasetManifest {
            name: "toy".into(),
            classes: 2,
            height: 4,
            width: 4,
            samples: vec![SampleEntry {
                id: "lost".into(),
                split: Split::Train,
                image: "images/lost.spt".into(),
                label: "labels/lost.spt".into(),
                scribbles: None,
                superpixels: None,
            }],
        };
        let dir = tempfile::tempdir().unwrap();
        let err = m
            .require_file(dir.path(), &m.samples[0], Some(&m.samples[0].image))
            .unwrap_err();
        assert!(err.to_string().contains("lost"));
    }
}

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::label::{read_label_map, DEFAULT_IGNORE_INDEX};
use super::{read_bytes, write_bytes};
use crate::error::{Error, Result};

/// One labelled sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleEntry {
    pub id: String,
    pub image: String,
    pub label: String,
    pub present_classes: BTreeSet<usize>,
}

impl SampleEntry {
    pub fn contains(&self, class: usize) -> bool {
        self.present_classes.contains(&class)
    }
}

/// Ordered index of the labelled set. Sample order is significant: seeded
/// operations downstream depend on it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    class_count: usize,
    ignore_index: u16,
    samples: Vec<SampleEntry>,
}

impl DatasetManifest {
    pub fn new(class_count: usize, ignore_index: u16, samples: Vec<SampleEntry>) -> Result<Self> {
        if class_count == 0 {
            return Err(Error::Schema("class_count must be positive".into()));
        }
        let mut seen = HashSet::with_capacity(samples.len());
        for sample in &samples {
            if !seen.insert(sample.id.as_str()) {
                return Err(Error::DuplicateId(sample.id.clone()));
            }
            if let Some(&bad) = sample.present_classes.iter().find(|&&c| c >= class_count) {
                return Err(Error::Schema(format!(
                    "sample `{}` lists class {bad} but class_count is {class_count}",
                    sample.id
                )));
            }
        }
        Ok(DatasetManifest {
            class_count,
            ignore_index,
            samples,
        })
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn ignore_index(&self) -> u16 {
        self.ignore_index
    }

    pub fn samples(&self) -> &[SampleEntry] {
        &self.samples
    }

    /// Number of labelled samples, N_l.
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&SampleEntry> {
        self.samples.iter().find(|s| s.id == id)
    }

    /// Per-class count of samples containing the class, |D_l^c|.
    pub fn class_frequencies(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for sample in &self.samples {
            for &c in &sample.present_classes {
                counts[c] += 1;
            }
        }
        counts
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestDoc {
    class_count: usize,
    #[serde(default = "default_ignore")]
    ignore_index: u16,
    samples: Vec<SampleDoc>,
}

#[derive(Serialize, Deserialize)]
struct SampleDoc {
    id: String,
    image: String,
    label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    classes: Option<Vec<usize>>,
}

fn default_ignore() -> u16 {
    DEFAULT_IGNORE_INDEX
}

/// Load a manifest. Samples without a `classes` list get one computed by
/// scanning their label raster, resolved relative to the manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let doc: ManifestDoc =
        serde_json::from_slice(&bytes).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let samples = doc
        .samples
        .into_iter()
        .map(|s| {
            let present_classes = match s.classes {
                Some(classes) => classes.into_iter().collect(),
                None => read_label_map(base.join(&s.label), doc.class_count, doc.ignore_index)?.present_classes(),
            };
            Ok(SampleEntry {
                id: s.id,
                image: s.image,
                label: s.label,
                present_classes,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    DatasetManifest::new(doc.class_count, doc.ignore_index, samples)
}

pub fn save_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let doc = ManifestDoc {
        class_count: manifest.class_count,
        ignore_index: manifest.ignore_index,
        samples: manifest
            .samples
            .iter()
            .map(|s| SampleDoc {
                id: s.id.clone(),
                image: s.image.clone(),
                label: s.label.clone(),
                classes: Some(s.present_classes.iter().copied().collect()),
            })
            .collect(),
    };
    let mut text = serde_json::to_vec_pretty(&doc).expect("manifest serializes");
    text.push(b'\n');
    write_bytes(path.as_ref(), &text)
}

//! File boundary of the toolkit: NPY tensors and JSON dataset manifests.
//!
//! Every other module receives already-validated values from here.

mod label;
mod manifest;
pub mod npy;
mod probability;

use std::fs;
use std::path::Path;

pub use label::{read_label_map, write_label_map, LabelMap, DEFAULT_IGNORE_INDEX};
pub use manifest::{load_manifest, save_manifest, DatasetManifest, SampleEntry};
pub use probability::{
    read_probability_map, read_probability_map_with, write_probability_map, LoadMode, ProbabilityMap, SUM_TOLERANCE,
};

use crate::error::{Error, Result};

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

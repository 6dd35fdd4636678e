use std::collections::BTreeSet;
use std::path::Path;

use super::npy::{self, Dtype};
use super::{read_bytes, write_bytes};
use crate::error::{Error, Result};

/// Ignore sentinel used by PASCAL VOC style label rasters.
pub const DEFAULT_IGNORE_INDEX: u16 = 255;

/// `H × W` class-index raster with an ignore sentinel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    class_count: usize,
    ignore_index: u16,
    values: Vec<u16>,
}

impl LabelMap {
    /// Build a raster, checking every non-ignore value against `class_count`.
    pub fn new(height: usize, width: usize, values: Vec<u16>, class_count: usize, ignore_index: u16) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {height}x{width} raster",
                values.len()
            )));
        }
        if let Some((pixel, &value)) = values
            .iter()
            .enumerate()
            .find(|&(_, &v)| v != ignore_index && v as usize >= class_count)
        {
            return Err(Error::ClassRange {
                value: value as u32,
                pixel,
                class_count,
            });
        }
        Ok(LabelMap {
            height,
            width,
            class_count,
            ignore_index,
            values,
        })
    }

    /// A raster filled with the ignore sentinel.
    pub fn ignored(height: usize, width: usize, class_count: usize, ignore_index: u16) -> Self {
        LabelMap {
            height,
            width,
            class_count,
            ignore_index,
            values: vec![ignore_index; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.values.len()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn ignore_index(&self) -> u16 {
        self.ignore_index
    }

    pub fn values(&self) -> &[u16] {
        &self.values
    }

    /// Class at `pixel`, or `None` for the ignore sentinel.
    pub fn class_at(&self, pixel: usize) -> Option<usize> {
        let v = self.values[pixel];
        (v != self.ignore_index).then_some(v as usize)
    }

    /// Classes with at least one pixel.
    pub fn present_classes(&self) -> BTreeSet<usize> {
        let mut seen = vec![false; self.class_count];
        for &v in &self.values {
            if v != self.ignore_index {
                seen[v as usize] = true;
            }
        }
        seen.iter().enumerate().filter_map(|(c, &s)| s.then_some(c)).collect()
    }

    /// Number of non-ignore pixels.
    pub fn labelled_pixels(&self) -> usize {
        self.values.iter().filter(|&&v| v != self.ignore_index).count()
    }
}

/// Read a 2-D `|u1` or `<u2` raster and validate it against `class_count`.
pub fn read_label_map(path: impl AsRef<Path>, class_count: usize, ignore_index: u16) -> Result<LabelMap> {
    let bytes = read_bytes(path.as_ref())?;
    let array = npy::decode(&bytes)?;
    let values: Vec<u16> = match array.dtype {
        Dtype::U1 => array.payload.iter().map(|&b| b as u16).collect(),
        Dtype::U2 => array
            .payload
            .chunks_exact(2)
            .map(|b| u16::from_le_bytes([b[0], b[1]]))
            .collect(),
        other => {
            return Err(Error::MalformedHeader(format!(
                "label maps must be u1 or u2, found {}",
                other.descr()
            )))
        }
    };
    let &[height, width] = array.shape.as_slice() else {
        return Err(Error::Shape(format!(
            "label map must be 2-dimensional, found shape {:?}",
            array.shape
        )));
    };
    LabelMap::new(height, width, values, class_count, ignore_index)
}

/// Write as `|u1` when every value fits a byte, else `<u2`.
pub fn write_label_map(map: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let narrow = map.values.iter().all(|&v| v <= u8::MAX as u16);
    let dtype = if narrow { Dtype::U1 } else { Dtype::U2 };
    let mut bytes = npy::encode_header(dtype, &[map.height, map.width]);
    if narrow {
        bytes.extend(map.values.iter().map(|&v| v as u8));
    } else {
        for v in &map.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_bytes(path.as_ref(), &bytes)
}

use std::path::Path;

use super::npy::{self, Dtype};
use super::{read_bytes, write_bytes};
use crate::error::{Error, Result};
use crate::scalar::{NpyFloat, Scalar};

/// Maximum allowed deviation of a pixel's class probabilities from 1.
pub const SUM_TOLERANCE: f64 = 1e-4;

/// How raw tensor values are interpreted on load.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LoadMode {
    /// Values are probabilities; pixel sums are validated.
    #[default]
    Probabilities,
    /// Values are logits; a per-pixel softmax is applied.
    FromLogits,
}

/// Per-pixel class probabilities stored class-major (`C × H × W`, C-order).
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMap<T> {
    classes: usize,
    height: usize,
    width: usize,
    values: Vec<T>,
}

impl<T: Scalar> ProbabilityMap<T> {
    /// Build a map from class-major values, validating shape and normalization.
    pub fn new(classes: usize, height: usize, width: usize, values: Vec<T>) -> Result<Self> {
        let map = Self::shaped(classes, height, width, values)?;
        map.validate()?;
        Ok(map)
    }

    /// Build a map from logits with a numerically stable softmax per pixel.
    pub fn from_logits(classes: usize, height: usize, width: usize, logits: Vec<T>) -> Result<Self> {
        let mut map = Self::shaped(classes, height, width, logits)?;
        let pixels = map.pixels();
        let mut row = vec![0.0f64; classes];
        for j in 0..pixels {
            for (c, slot) in row.iter_mut().enumerate() {
                *slot = map.values[c * pixels + j].as_f64();
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Normalization {
                    pixel: j,
                    sum: f64::NAN,
                    tolerance: SUM_TOLERANCE,
                });
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for (c, v) in row.iter().enumerate() {
                map.values[c * pixels + j] = T::of(v / total);
            }
        }
        Ok(map)
    }

    fn shaped(classes: usize, height: usize, width: usize, values: Vec<T>) -> Result<Self> {
        if classes < 2 || height < 1 || width < 1 {
            return Err(Error::Shape(format!(
                "probability map needs C >= 2, H >= 1, W >= 1; got ({classes}, {height}, {width})"
            )));
        }
        if values.len() != classes * height * width {
            return Err(Error::Shape(format!(
                "{} values cannot fill ({classes}, {height}, {width})",
                values.len()
            )));
        }
        Ok(ProbabilityMap {
            classes,
            height,
            width,
            values,
        })
    }

    fn validate(&self) -> Result<()> {
        let pixels = self.pixels();
        for j in 0..pixels {
            let mut sum = 0.0f64;
            let mut in_range = true;
            for c in 0..self.classes {
                let v = self.values[c * pixels + j].as_f64();
                in_range &= (0.0..=1.0).contains(&v);
                sum += v;
            }
            if !in_range || (sum - 1.0).abs() > SUM_TOLERANCE {
                return Err(Error::Normalization {
                    pixel: j,
                    sum,
                    tolerance: SUM_TOLERANCE,
                });
            }
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Class-major flat values.
    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Probability of `class` at flat pixel index `pixel`.
    pub fn get(&self, class: usize, pixel: usize) -> T {
        self.values[class * self.pixels() + pixel]
    }

    /// Probability plane for one class.
    pub fn plane(&self, class: usize) -> &[T] {
        let n = self.pixels();
        &self.values[class * n..(class + 1) * n]
    }

    /// Convert to another scalar type.
    pub fn cast<U: Scalar>(&self) -> ProbabilityMap<U> {
        ProbabilityMap {
            classes: self.classes,
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

/// Read a `C × H × W` probability tensor (`<f4` or `<f8`).
pub fn read_probability_map<T: Scalar>(path: impl AsRef<Path>) -> Result<ProbabilityMap<T>> {
    read_probability_map_with(path, LoadMode::Probabilities)
}

pub fn read_probability_map_with<T: Scalar>(path: impl AsRef<Path>, mode: LoadMode) -> Result<ProbabilityMap<T>> {
    let bytes = read_bytes(path.as_ref())?;
    let array = npy::decode(&bytes)?;
    let values: Vec<T> = match array.dtype {
        Dtype::F4 => array
            .payload
            .chunks_exact(4)
            .map(|b| T::of(f32::read_le(b) as f64))
            .collect(),
        Dtype::F8 => array.payload.chunks_exact(8).map(|b| T::of(f64::read_le(b))).collect(),
        other => {
            return Err(Error::MalformedHeader(format!(
                "probability maps must be float, found {}",
                other.descr()
            )))
        }
    };
    let &[classes, height, width] = array.shape.as_slice() else {
        return Err(Error::Shape(format!(
            "probability map must be 3-dimensional, found shape {:?}",
            array.shape
        )));
    };
    match mode {
        LoadMode::Probabilities => ProbabilityMap::new(classes, height, width, values),
        LoadMode::FromLogits => ProbabilityMap::from_logits(classes, height, width, values),
    }
}

/// Write the map as NPY v1.0 using the scalar's native little-endian encoding.
pub fn write_probability_map<T: Scalar>(map: &ProbabilityMap<T>, path: impl AsRef<Path>) -> Result<()> {
    let dtype = if T::WIDTH == 4 { Dtype::F4 } else { Dtype::F8 };
    let mut bytes = npy::encode_header(dtype, &[map.classes, map.height, map.width]);
    bytes.reserve(map.values.len() * T::WIDTH);
    for &v in &map.values {
        v.write_le(&mut bytes);
    }
    write_bytes(path.as_ref(), &bytes)
}

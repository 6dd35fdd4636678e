//! Scalar abstraction shared by every numeric type in the crate.
//!
//! Probability maps, thresholds, precision and IoU values are generic over
//! [`Scalar`], which is implemented for `f32` and `f64`. The NPY element
//! encoding travels with the scalar so a map written as `f32` reads back
//! bit-exactly as `f32`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element that can be stored in an NPY file.
pub trait NpyFloat: Copy {
    /// NPY `descr` string for the little-endian encoding.
    const DESCR: &'static str;
    /// Encoded width in bytes.
    const WIDTH: usize;

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl NpyFloat for f32 {
    const DESCR: &'static str = "<f4";
    const WIDTH: usize = 4;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4-byte chunk"))
    }
}

impl NpyFloat for f64 {
    const DESCR: &'static str = "<f8";
    const WIDTH: usize = 8;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8-byte chunk"))
    }
}

/// Real number type the toolkit computes in.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NpyFloat + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossless-or-nearest conversion from `f64`.
    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("finite f64 converts to every Scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

//! Numeric element types that can live in a distributed array and travel in a payload.

use std::fmt::Debug;

use num_complex::Complex64;
use num_traits::Num;
use rand::Rng;

use crate::fsmpi::payload::{ArrayData, ElemType};

/// A scalar type with a wire encoding.
pub trait Element: Copy + Debug + PartialEq + Num + Send + Sync + 'static {
    const ELEM_TYPE: ElemType;

    fn into_data(values: Vec<Self>) -> ArrayData;

    /// Returns `None` when the data holds a different element type.
    fn from_data(data: ArrayData) -> Option<Vec<Self>>;

    /// Uniform draw: `[0, 1)` for floats (both parts for complex), full range for integers.
    fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self;

    fn append_le_bytes(&self, out: &mut Vec<u8>);
}

macro_rules! float_element {
    ($t:ty, $variant:ident) => {
        impl Element for $t {
            const ELEM_TYPE: ElemType = ElemType::$variant;
            fn into_data(values: Vec<Self>) -> ArrayData {
                ArrayData::$variant(values)
            }
            fn from_data(data: ArrayData) -> Option<Vec<Self>> {
                match data {
                    ArrayData::$variant(v) => Some(v),
                    _ => None,
                }
            }
            fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
                rng.gen::<$t>()
            }
            fn append_le_bytes(&self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }
        }
    };
}

float_element!(f64, F64);
float_element!(f32, F32);
float_element!(i64, I64);
float_element!(i32, I32);
float_element!(u64, U64);
float_element!(u8, Byte);

impl Element for Complex64 {
    const ELEM_TYPE: ElemType = ElemType::C64;
    fn into_data(values: Vec<Self>) -> ArrayData {
        ArrayData::C64(values)
    }
    fn from_data(data: ArrayData) -> Option<Vec<Self>> {
        match data {
            ArrayData::C64(v) => Some(v),
            _ => None,
        }
    }
    fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Complex64::new(rng.gen(), rng.gen())
    }
    fn append_le_bytes(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.re.to_le_bytes());
        out.extend_from_slice(&self.im.to_le_bytes());
    }
}

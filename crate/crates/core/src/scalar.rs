use std::fmt::{Debug, Display};
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Storage type for vector components.
///
/// `Display` must print the shortest string that parses back to the same
/// value, which holds for the std float types.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + FromStr + Display + Debug + Default + Send + Sync + 'static
{
    fn widen(self) -> f64;
    fn narrow(x: f64) -> Self;
}

impl Scalar for f32 {
    #[inline(always)]
    fn widen(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn narrow(x: f64) -> Self {
        x as f32
    }
}

impl Scalar for f64 {
    #[inline(always)]
    fn widen(self) -> f64 {
        self
    }
    #[inline(always)]
    fn narrow(x: f64) -> Self {
        x
    }
}

/// Dot product of two equal-length slices, accumulated in `f64`.
///
/// Four independent accumulators are summed in a fixed order, so the result
/// depends only on the inputs.
#[inline]
pub fn dot<T: Scalar>(u: &[T], v: &[T]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    let mut acc = [0.0f64; 4];
    let chunks = u.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += u[i].widen() * v[i].widen();
        acc[1] += u[i + 1].widen() * v[i + 1].widen();
        acc[2] += u[i + 2].widen() * v[i + 2].widen();
        acc[3] += u[i + 3].widen() * v[i + 3].widen();
    }
    let mut tail = 0.0;
    for i in chunks * 4..u.len() {
        tail += u[i].widen() * v[i].widen();
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Euclidean norm, accumulated in `f64`.
#[inline]
pub fn norm<T: Scalar>(u: &[T]) -> f64 {
    dot(u, u).sqrt()
}

//! Scalar abstraction for the numeric core.
//!
//! Model weights, embeddings, losses, and metrics are generic over a
//! floating-point scalar. The pipeline runs at `f32` so checkpoints
//! round-trip exactly through the 32-bit on-disk format; tests that need
//! tight finite-difference tolerances instantiate the same code at `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating-point scalar usable throughout the numeric core: `f32` or `f64`.
pub trait Scalar:
    Float + NumAssignOps + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion to `f32` for the 32-bit checkpoint format.
    fn to_f32_lossy(self) -> f32;
    /// Widening conversion from the 32-bit checkpoint format.
    fn from_f32_exact(v: f32) -> Self;
    /// Conversion from `f64` constants.
    fn from_f64_lossy(v: f64) -> Self;
}

impl Scalar for f32 {
    fn to_f32_lossy(self) -> f32 {
        self
    }
    fn from_f32_exact(v: f32) -> Self {
        v
    }
    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    fn to_f32_lossy(self) -> f32 {
        self as f32
    }
    fn from_f32_exact(v: f32) -> Self {
        f64::from(v)
    }
    fn from_f64_lossy(v: f64) -> Self {
        v
    }
}

/// Dot product over equal-length slices, accumulated left to right so results
/// are bit-reproducible.
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = S::zero();
    for (x, y) in a.iter().zip(b.iter()) {
        acc = acc + *x * *y;
    }
    acc
}

/// Euclidean norm with sequential accumulation.
pub fn l2_norm<S: Scalar>(v: &[S]) -> S {
    dot(v, v).sqrt()
}

/// Normalizes `v` to unit L2 norm in place. The zero vector is left as is.
pub fn l2_normalize<S: Scalar>(v: &mut [S]) {
    let norm = l2_norm(v);
    if norm > S::zero() {
        for x in v.iter_mut() {
            *x = *x / norm;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_hand_value() {
        let a = [1.0f64, 2.0, 3.0];
        let b = [4.0f64, -5.0, 6.0];
        assert_eq!(dot(&a, &b), 12.0);
    }

    #[test]
    fn normalize_zero_vector_is_noop() {
        let mut v = [0.0f32; 4];
        l2_normalize(&mut v);
        assert!(v.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn normalize_gives_unit_norm() {
        let mut v = [3.0f64, 4.0];
        l2_normalize(&mut v);
        assert!((l2_norm(&v) - 1.0).abs() < 1e-12);
    }
}

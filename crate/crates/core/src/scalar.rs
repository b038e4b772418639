//! Scalar abstraction: the numeric core is generic over `Real` (`f32` or `f64`).

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use rand::distributions::uniform::SampleUniform;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

/// Floating-point scalar type for all numeric code in this crate.
///
/// `RealField` supplies arithmetic and elementary functions for the dense
/// linear algebra; the two sampler hooks give generic code access to the
/// ziggurat-based standard normal / unit exponential without dragging in a
/// second float trait whose method names collide with `RealField`'s.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + SampleUniform + Send + Sync
{
    /// One draw from N(0, 1).
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;
    /// One draw from Exponential(1).
    fn standard_exponential<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

impl Real for f32 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
    fn standard_exponential<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Exp1.sample(rng)
    }
}

impl Real for f64 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
    fn standard_exponential<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Exp1.sample(rng)
    }
}

/// Pull an `f64` constant into the generic scalar type.
#[inline]
pub fn cst<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("constant not representable in scalar type")
}

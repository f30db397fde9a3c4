//! Scalar abstraction for the numeric core.
//!
//! All geometric and kernel math is generic over [`Real`], a float-like
//! scalar backed by `num-traits`. The crate root exposes `f64` aliases for
//! the common types; `f32` works too and is exercised by a smoke test.

use rand::distr::uniform::SampleUniform;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Floating-point scalar usable throughout the numeric core.
pub trait Real:
    num_traits::Float
    + num_traits::FloatConst
    + SampleUniform
    + std::fmt::Debug
    + std::fmt::Display
    + std::ops::AddAssign
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`, panicking only on values a float cannot
    /// represent at all (never happens for finite inputs).
    fn from_f64(x: f64) -> Self {
        <Self as num_traits::NumCast>::from(x).expect("f64 -> Real conversion")
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("Real -> f64 conversion")
    }

    /// Uniform draw from `[0, 1)`.
    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Standard normal draw.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Map 64 random bits to a uniform value in `[0, 1)`.
    ///
    /// Used for counter-based per-pair edge randomness, so it must be
    /// platform-stable: the top mantissa-many bits scaled into the unit
    /// interval.
    fn unit_from_bits(bits: u64) -> Self;
}

impl Real for f64 {
    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.random::<f64>()
    }

    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    fn unit_from_bits(bits: u64) -> Self {
        (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

impl Real for f32 {
    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.random::<f32>()
    }

    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    fn unit_from_bits(bits: u64) -> Self {
        (bits >> 40) as f32 * (1.0 / (1u64 << 24) as f32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_from_bits_is_in_unit_interval() {
        for bits in [0u64, 1, u64::MAX, 0x8000_0000_0000_0000, 12345678901234567] {
            let x = f64::unit_from_bits(bits);
            assert!((0.0..1.0).contains(&x), "{bits} -> {x}");
            let y = f32::unit_from_bits(bits);
            assert!((0.0..1.0).contains(&y), "{bits} -> {y}");
        }
    }

    #[test]
    fn unit_from_bits_is_deterministic() {
        assert_eq!(f64::unit_from_bits(42), f64::unit_from_bits(42));
        assert!(f64::unit_from_bits(u64::MAX) > 0.9999999999);
    }
}

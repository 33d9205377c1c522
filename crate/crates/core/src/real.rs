//! Generic real-scalar trait used by all numeric code in this crate.

use nalgebra as na;
use num_traits as nt;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

/// Floating-point scalar the whole library is generic over (f32 or f64).
pub trait Real:
    na::RealField
    + nt::FromPrimitive
    + nt::ToPrimitive
    + Copy
    + Default
    + std::fmt::Display
{
    /// Standard normal draw from `rng`.
    fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;
    /// Uniform draw in `[lo, hi)`.
    fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: Self, hi: Self) -> Self;
    /// Raw little-endian bytes for the binary channel container.
    fn write_le(self, out: &mut Vec<u8>);
    /// Inverse of [`Real::write_le`].
    fn read_le(bytes: &[u8]) -> Self;
    /// Byte width of one scalar in the binary container.
    const BYTE_WIDTH: usize;
    /// Layout tag nibble identifying the precision in container headers.
    const PRECISION_TAG: u8;
}

macro_rules! impl_real {
    ($t:ty, $width:expr, $tag:expr) => {
        impl Real for $t {
            fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                StandardNormal.sample(rng)
            }
            fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: Self, hi: Self) -> Self {
                if lo == hi {
                    return lo;
                }
                Uniform::new(lo, hi).sample(rng)
            }
            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }
            fn read_le(bytes: &[u8]) -> Self {
                Self::from_le_bytes(bytes.try_into().expect("scalar byte width"))
            }
            const BYTE_WIDTH: usize = $width;
            const PRECISION_TAG: u8 = $tag;
        }
    };
}

impl_real!(f32, 4, 0x1);
impl_real!(f64, 8, 0x2);

/// Shorthand conversion from an `f64` literal into the generic scalar.
#[inline]
pub fn rf<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal representable in scalar type")
}

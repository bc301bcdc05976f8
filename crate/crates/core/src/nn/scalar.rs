use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Element type for network parameters and activations.
///
/// Training runs on `f32`; gradient verification instantiates the same code
/// at `f64` so finite differences are not drowned by rounding error.
pub trait Scalar:
    num_traits::Float
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + std::fmt::Debug
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from f64, used for constants and rng draws.
    fn c(x: f64) -> Self;
    fn f64(self) -> f64;
}

impl Scalar for f32 {
    fn c(x: f64) -> f32 {
        x as f32
    }
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn c(x: f64) -> f64 {
        x
    }
    fn f64(self) -> f64 {
        self
    }
}

//! Float abstraction so the whole stack can run in f32 (training, evaluation)
//! or f64 (gradient checks) without duplicated code.

use std::fmt::{Debug, Display};

pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + Debug
    + Display
    + Default
    + serde::Serialize
    + serde::de::DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from f64, used for constants and RNG draws.
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("f64 conversion")
    }

    /// Widen to f64 for logging and metrics.
    fn f(self) -> f64 {
        self.to_f64().expect("f64 conversion")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

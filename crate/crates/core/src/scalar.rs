use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};

/// Floating point scalar the learning and scoring math is written against.
pub trait Scalar:
    Float + FromPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    fn of_usize(v: usize) -> Self {
        Self::from_usize(v).expect("count representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

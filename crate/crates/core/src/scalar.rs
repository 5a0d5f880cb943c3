//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, LowerExp};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar the learner and oracle are generic over.
///
/// Implemented for `f32` and `f64`. Least-squares policy evaluation needs
/// orthogonal decompositions, so exact/rational scalars are not supported.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + LowerExp + Debug {
    /// Converts an `f64` literal into this scalar.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    /// Lossy conversion used for diagnostics and error payloads.
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

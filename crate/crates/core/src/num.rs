//! Scalar abstraction for the closed-form calculators.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar the traffic and metrics formulas are generic over.
pub trait Real: Float + FromPrimitive + ToPrimitive + Debug + Display + Send + Sync + 'static {}

impl<T> Real for T where T: Float + FromPrimitive + ToPrimitive + Debug + Display + Send + Sync + 'static {}

/// Converts an `f64` literal into `F`.
#[inline]
pub fn lit<F: Real>(x: f64) -> F {
    F::from_f64(x).expect("literal representable in scalar type")
}

#[inline]
pub fn from_u64<F: Real>(x: u64) -> F {
    F::from_u64(x).expect("integer representable in scalar type")
}

/// Rounds half away from zero to `decimals` places.
pub fn round_half_up<F: Real>(x: F, decimals: u32) -> F {
    let scale = from_u64::<F>(10u64.pow(decimals));
    // nudge by a few ulps so values like 0.0005 computed as 0.000499999.. round up
    let scaled = x * scale;
    let nudged = scaled + scaled.signum() * scaled.abs() * F::epsilon() * lit(4.0);
    nudged.round() / scale
}

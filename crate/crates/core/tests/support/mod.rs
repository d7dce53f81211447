//! Exact-integer reference values shared by integration targets.

#![allow(dead_code)]

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};

const SCALE_BITS: u64 = 640;

/// `floor(2^SCALE_BITS * e^(p/q))` from the Taylor series.
fn exp_fixed(p: u64, q: u64) -> BigUint {
    let mut term = BigUint::one() << SCALE_BITS;
    let mut sum = term.clone();
    let mut k = 1u64;
    loop {
        term = term * p / (q * k);
        if term.is_zero() {
            return sum;
        }
        sum += &term;
        k += 1;
    }
}

/// `num / den` rounded to the nearest f64.
fn ratio(num: &BigUint, den: &BigUint) -> f64 {
    let shift = (64 + den.bits() as i64 - num.bits() as i64).max(0) as u64;
    let q = (num << shift) / den;
    let mut v = q.to_f64().expect("finite");
    let mut left = shift;
    while left > 0 {
        let step = left.min(500);
        v *= 2f64.powi(-(step as i32));
        left -= step;
    }
    v
}

/// Poisson probability of `n` events at mean `p / q`, independent of any
/// floating-point special function.
pub fn poisson_pmf_exact(p: u64, q: u64, n: u64) -> f64 {
    let mut num = BigUint::from(p).pow(n as u32);
    num <<= SCALE_BITS;
    let mut fact = BigUint::one();
    for i in 2..=n {
        fact *= i;
    }
    let den = BigUint::from(q).pow(n as u32) * fact * exp_fixed(p, q);
    ratio(&num, &den)
}

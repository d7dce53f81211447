//! Poisson traffic, expected packet loss and recovery-buffer sizing.
//!
//! Rates are in packets per millisecond and durations in milliseconds.
//! Probabilities are carried in natural-log space so that windows with a
//! large mean (hundreds of packets) neither overflow nor underflow.

use std::str::FromStr;

use thiserror::Error;

use crate::num::{from_u64, lit, Real};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrafficError {
    #[error("`{name}` must be a finite non-negative number, got {value}")]
    Domain { name: &'static str, value: f64 },
    #[error("device count must be at least 1")]
    NoDevices,
    #[error("fault interval [{start}, {end}) is empty or reversed")]
    EmptyInterval { start: u64, end: u64 },
    #[error("fault intervals [{0}, {1}) and [{2}, {3}) overlap")]
    Overlap(u64, u64, u64, u64),
    #[error("bad schedule item `{0}`: expected `<duration_ms>:<faulty_devices>`")]
    ScheduleSyntax(String),
}

fn check<F: Real>(name: &'static str, v: F) -> Result<F, TrafficError> {
    if v.is_finite() && v >= F::zero() {
        Ok(v)
    } else {
        Err(TrafficError::Domain {
            name,
            value: v.to_f64().unwrap_or(f64::NAN),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonParams<F> {
    /// Mean arrival rate.
    pub lambda: F,
    /// Window length, in the same time unit as `lambda`.
    pub t: F,
    /// Packet count.
    pub n: u64,
    /// Number of devices the distribution is spread across.
    pub devices: u64,
}

impl<F: Real> PoissonParams<F> {
    pub fn validate(&self) -> Result<(), TrafficError> {
        check("lambda", self.lambda)?;
        check("t", self.t)?;
        if self.devices == 0 {
            return Err(TrafficError::NoDevices);
        }
        Ok(())
    }

    pub fn pmf(&self) -> Result<Probability<F>, TrafficError> {
        poisson_pmf(self.lambda, self.t, self.n)
    }

    pub fn distribution(&self) -> Result<Probability<F>, TrafficError> {
        network_distribution(self.lambda, self.t, self.n, self.devices)
    }
}

/// A non-negative quantity stored as its natural logarithm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probability<F> {
    pub ln: F,
}

impl<F: Real> Probability<F> {
    pub fn value(self) -> F {
        self.ln.exp()
    }

    pub fn log10(self) -> F {
        self.ln / lit::<F>(std::f64::consts::LN_10)
    }
}

/// `ln(n!)`: exact summation for small `n`, Stirling series beyond.
pub fn ln_factorial<F: Real>(n: u64) -> F {
    const SUM_LIMIT: u64 = 256;
    if n < 2 {
        return F::zero();
    }
    if n < SUM_LIMIT {
        return (2..=n).fold(F::zero(), |acc, k| acc + from_u64::<F>(k).ln());
    }
    let x = from_u64::<F>(n);
    let inv = x.recip();
    let inv2 = inv * inv;
    let series = inv
        * (lit::<F>(1.0 / 12.0)
            - inv2 * (lit::<F>(1.0 / 360.0) - inv2 * lit::<F>(1.0 / 1260.0)));
    x * x.ln() - x + lit::<F>(0.5) * (lit::<F>(std::f64::consts::TAU) * x).ln() + series
}

/// `(λt)^n e^{-λt} / n!`.
pub fn poisson_pmf<F: Real>(lambda: F, t: F, n: u64) -> Result<Probability<F>, TrafficError> {
    let mean = check("lambda", lambda)? * check("t", t)?;
    if mean == F::zero() {
        let ln = if n == 0 { F::zero() } else { F::neg_infinity() };
        return Ok(Probability { ln });
    }
    let ln = from_u64::<F>(n) * mean.ln() - mean - ln_factorial::<F>(n);
    Ok(Probability { ln })
}

/// Expected packet count across `devices` identical devices: `devices × X`.
pub fn network_distribution<F: Real>(
    lambda: F,
    t: F,
    n: u64,
    devices: u64,
) -> Result<Probability<F>, TrafficError> {
    if devices == 0 {
        return Err(TrafficError::NoDevices);
    }
    let x = poisson_pmf(lambda, t, n)?;
    Ok(Probability {
        ln: x.ln + from_u64::<F>(devices).ln(),
    })
}

/// Expected loss while one device is faulty for `fault_ms`.
pub fn loss_single<F: Real>(x: F, fault_ms: F) -> Result<F, TrafficError> {
    Ok(check("X", x)? * check("T", fault_ms)?)
}

/// Expected loss while `faulty` devices are down together for `fault_ms`.
pub fn loss_multi<F: Real>(x: F, fault_ms: F, faulty: u64) -> Result<F, TrafficError> {
    Ok(loss_single(x, fault_ms)? * from_u64::<F>(faulty))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaultInterval {
    pub start_ms: u64,
    pub end_ms: u64,
    pub faulty: u64,
}

impl FaultInterval {
    pub fn duration_ms(&self) -> u64 {
        self.end_ms - self.start_ms
    }
}

/// Lays out `(duration_ms, faulty)` pairs back to back from time zero.
pub fn consecutive(parts: &[(u64, u64)]) -> Vec<FaultInterval> {
    let mut at = 0;
    parts
        .iter()
        .map(|&(d, k)| {
            let iv = FaultInterval {
                start_ms: at,
                end_ms: at + d,
                faulty: k,
            };
            at += d;
            iv
        })
        .collect()
}

/// Parses `"200:1,200:4,..."` into consecutive intervals.
pub fn parse_schedule(s: &str) -> Result<Vec<FaultInterval>, TrafficError> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(Vec::new());
    }
    let parts = s
        .split(',')
        .map(|item| {
            let bad = || TrafficError::ScheduleSyntax(item.trim().to_owned());
            let (d, k) = item.trim().split_once(':').ok_or_else(bad)?;
            let d = u64::from_str(d.trim()).map_err(|_| bad())?;
            let k = u64::from_str(k.trim()).map_err(|_| bad())?;
            Ok((d, k))
        })
        .collect::<Result<Vec<_>, TrafficError>>()?;
    Ok(consecutive(&parts))
}

/// Total expected loss over a schedule of non-overlapping fault intervals.
pub fn loss_schedule<F: Real>(x: F, schedule: &[FaultInterval]) -> Result<F, TrafficError> {
    check("X", x)?;
    let mut sorted: Vec<&FaultInterval> = schedule.iter().collect();
    sorted.sort_by_key(|iv| iv.start_ms);
    for iv in &sorted {
        if iv.end_ms <= iv.start_ms {
            return Err(TrafficError::EmptyInterval {
                start: iv.start_ms,
                end: iv.end_ms,
            });
        }
    }
    for w in sorted.windows(2) {
        if w[1].start_ms < w[0].end_ms {
            return Err(TrafficError::Overlap(
                w[0].start_ms,
                w[0].end_ms,
                w[1].start_ms,
                w[1].end_ms,
            ));
        }
    }
    sorted.iter().try_fold(F::zero(), |acc, iv| {
        Ok(acc + loss_multi(x, from_u64::<F>(iv.duration_ms()), iv.faulty)?)
    })
}

/// `Σ K·T` over a schedule, in device-milliseconds.
pub fn device_ms(schedule: &[FaultInterval]) -> u64 {
    schedule.iter().map(|iv| iv.duration_ms() * iv.faulty).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BufferSpec<F> {
    /// Safety factor.
    pub y: F,
    /// Expected loss, in packets.
    pub loss: F,
    pub packet_bits: F,
    pub bits: u64,
}

/// `B = Y × L × packet size`, rounded up to whole bits.
pub fn buffer_size<F: Real>(y: F, loss: F, packet_bits: F) -> Result<BufferSpec<F>, TrafficError> {
    let raw = check("Y", y)? * check("L", loss)? * check("packet_bits", packet_bits)?;
    let bits = raw
        .ceil()
        .to_u64()
        .ok_or(TrafficError::Domain {
            name: "B",
            value: raw.to_f64().unwrap_or(f64::NAN),
        })?;
    Ok(BufferSpec {
        y,
        loss,
        packet_bits,
        bits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_window_is_certain() {
        assert_eq!(poisson_pmf(0.0f64, 5.0, 0).unwrap().value(), 1.0);
        assert_eq!(poisson_pmf(3.0f64, 0.0, 0).unwrap().value(), 1.0);
        assert_eq!(poisson_pmf(0.0f64, 5.0, 3).unwrap().value(), 0.0);
    }

    #[test]
    fn small_pmf() {
        // 4 e^-2 / 2
        let expected = 2.0 * (-2.0f64).exp();
        let got = poisson_pmf(2.0f64, 1.0, 2).unwrap().value();
        assert!((got - expected).abs() / expected < 1e-15);
        assert!((got - 0.270670566).abs() < 1e-9);
    }

    #[test]
    fn large_mean_in_log_space() {
        let p = poisson_pmf(50.0f64, 10.0, 100).unwrap();
        assert!((p.log10() - (-105.22)).abs() < 0.01, "{}", p.log10());
        assert!(p.value() > 0.0);
    }

    #[test]
    fn f32_agrees_roughly() {
        let a = poisson_pmf(2.0f32, 1.0, 2).unwrap().value();
        assert!((a - 0.270_670_6).abs() < 1e-6);
    }

    #[test]
    fn negative_inputs_rejected() {
        assert!(matches!(
            poisson_pmf(-1.0f64, 1.0, 0),
            Err(TrafficError::Domain { name: "lambda", .. })
        ));
        assert!(matches!(poisson_pmf(1.0f64, f64::NAN, 0), Err(TrafficError::Domain { name: "t", .. })));
        assert!(loss_single(-0.5f64, 1.0).is_err());
        assert!(buffer_size(1.0f64, -1.0, 500.0).is_err());
    }

    #[test]
    fn stirling_matches_summation_at_switchover() {
        let summed: f64 = (2..=300u64).map(|k| (k as f64).ln()).sum();
        let stirling: f64 = ln_factorial(300);
        assert!((summed - stirling).abs() / summed < 1e-14);
    }

    #[test]
    fn distribution_scales_by_devices() {
        let one = network_distribution(0.5f64, 4.0, 3, 1).unwrap().value();
        let pmf = poisson_pmf(0.5f64, 4.0, 3).unwrap().value();
        assert!((one - pmf).abs() < 1e-16);
        let eight = network_distribution(0.5f64, 4.0, 3, 8).unwrap().value();
        assert!((eight - 8.0 * pmf).abs() < 1e-14);
        assert_eq!(network_distribution(0.5f64, 4.0, 3, 0), Err(TrafficError::NoDevices));
    }

    #[test]
    fn losses() {
        assert_eq!(loss_single(0.5f64, 20.0).unwrap(), 10.0);
        assert_eq!(loss_single(0.5f64, 0.0).unwrap(), 0.0);
        assert_eq!(loss_multi(0.5f64, 20.0, 1).unwrap(), loss_single(0.5, 20.0).unwrap());
        assert_eq!(loss_multi(0.3f64, 20.0, 4).unwrap(), 4.0 * loss_single(0.3, 20.0).unwrap());
        assert_eq!(loss_multi(0.3f64, 20.0, 0).unwrap(), 0.0);
    }

    #[test]
    fn reference_schedule() {
        let sched = parse_schedule("200:1,200:4,200:2,200:3,200:4").unwrap();
        assert_eq!(sched.len(), 5);
        assert_eq!(sched[4], FaultInterval { start_ms: 800, end_ms: 1000, faulty: 4 });
        assert_eq!(device_ms(&sched), 2800);
        let x = 0.25f64;
        assert_eq!(loss_schedule(x, &sched).unwrap(), x * 200.0 * 14.0);
        assert_eq!(loss_schedule(x, &[]).unwrap(), 0.0);
        let single = [FaultInterval { start_ms: 0, end_ms: 20, faulty: 4 }];
        assert_eq!(loss_schedule(x, &single).unwrap(), loss_multi(x, 20.0, 4).unwrap());
    }

    #[test]
    fn schedule_validation() {
        let overlapping = [
            FaultInterval { start_ms: 0, end_ms: 200, faulty: 1 },
            FaultInterval { start_ms: 100, end_ms: 300, faulty: 1 },
        ];
        assert!(matches!(loss_schedule(1.0f64, &overlapping), Err(TrafficError::Overlap(..))));
        let empty = [FaultInterval { start_ms: 5, end_ms: 5, faulty: 1 }];
        assert!(matches!(loss_schedule(1.0f64, &empty), Err(TrafficError::EmptyInterval { .. })));
        assert!(matches!(parse_schedule("200-1"), Err(TrafficError::ScheduleSyntax(_))));
        assert!(parse_schedule("").unwrap().is_empty());
    }

    #[test]
    fn buffer_sizes() {
        assert_eq!(buffer_size(10.0f64, 20.0, 500.0).unwrap().bits, 100_000);
        assert_eq!(buffer_size(10.0f64, 0.0, 500.0).unwrap().bits, 0);
        assert_eq!(buffer_size(1.0f64, 3.0, 500.0).unwrap().bits, 1500);
        assert_eq!(buffer_size(1.0f64, 0.001, 500.0).unwrap().bits, 1);
    }

    #[test]
    fn normalization_at_mean_five() {
        let total: f64 = (0..=60).map(|n| poisson_pmf(5.0f64, 1.0, n).unwrap().value()).sum();
        assert!(total >= 1.0 - 1e-6);
        assert!(total <= 1.0 + 1e-12);
    }

    proptest! {
        #[test]
        fn tail_bound(mean in 0.1f64..20.0) {
            let total: f64 = (0..=120).map(|n| poisson_pmf(mean, 1.0, n).unwrap().value()).sum();
            prop_assert!(total >= 1.0 - 1e-6);
        }

        #[test]
        fn mode_at_floor_of_mean(mean in 0.05f64..60.0) {
            let mode = mean.floor() as u64;
            let best = poisson_pmf(mean, 1.0, mode).unwrap().ln;
            for n in 0..150u64 {
                prop_assert!(poisson_pmf(mean, 1.0, n).unwrap().ln <= best + 1e-12);
            }
        }

        #[test]
        fn loss_monotone(x in 0.0f64..10.0, dx in 0.0f64..10.0, t in 0.0f64..1e4, dt in 0.0f64..1e4) {
            let base = loss_single(x, t).unwrap();
            prop_assert!(loss_single(x + dx, t).unwrap() >= base);
            prop_assert!(loss_single(x, t + dt).unwrap() >= base);
        }

        #[test]
        fn loss_additive(x in 0.0f64..10.0, t in 0.0f64..1e3, k1 in 0u64..50, k2 in 0u64..50) {
            let sum = loss_multi(x, t, k1).unwrap() + loss_multi(x, t, k2).unwrap();
            let joint = loss_multi(x, t, k1 + k2).unwrap();
            prop_assert!((sum - joint).abs() <= 1e-9 * joint.abs().max(1.0));
        }
    }
}

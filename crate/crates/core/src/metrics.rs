//! Closed-form delay, latency, efficiency, throughput and recovery-timeout
//! models. All times are in seconds.

use thiserror::Error;

use crate::num::{from_u64, lit, Real};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("`{name}` must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
}

fn positive<F: Real>(name: &'static str, v: F) -> Result<F, MetricsError> {
    if v > F::zero() && v.is_finite() {
        Ok(v)
    } else {
        Err(MetricsError::NonPositive {
            name,
            value: v.to_f64().unwrap_or(f64::NAN),
        })
    }
}

/// Fault-free path parameters for the delay table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathModel<F> {
    pub frame_bits: F,
    pub capacity_bps: F,
    pub hops: u32,
    /// Per-hop propagation delay.
    pub pd_hop: F,
    pub switching_delay: F,
}

impl<F: Real> Default for PathModel<F> {
    fn default() -> Self {
        PathModel {
            frame_bits: lit(500.0),
            capacity_bps: lit(1e6),
            hops: 6,
            pd_hop: lit(0.05),
            switching_delay: F::zero(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Case1Row<F> {
    pub frame_rate: F,
    pub qd: F,
    pub td: F,
    pub pd: F,
    pub delay: F,
    pub latency: F,
    pub efficiency: F,
}

/// Frame rates at or below this still pay full path propagation.
pub const PD_MAX_RATE: f64 = 1000.0;
/// Transmission delay is charged from this frame rate up.
pub const TD_MIN_RATE: f64 = 2000.0;
/// Queuing delay is charged from this frame rate up.
pub const QD_MIN_RATE: f64 = 3000.0;
/// Seconds of queuing per thousand frames per second.
pub const QD_PER_KFPS: f64 = 0.5;

/// One row of the fault-free delay table.
///
/// The piecewise regime matches the reference table: propagation dominates
/// at low rates, then transmission time of the whole second's worth of
/// frames, with queuing added once the link saturates. Efficiency is the
/// dominant useful component over the round trip.
pub fn case1_row<F: Real>(frame_rate: F, model: &PathModel<F>) -> Result<Case1Row<F>, MetricsError> {
    let rate = positive("frame_rate", frame_rate)?;
    let zero = F::zero();
    let pd = if rate <= lit(PD_MAX_RATE) {
        from_u64::<F>(model.hops as u64) * model.pd_hop
    } else {
        zero
    };
    let td = if rate >= lit(TD_MIN_RATE) {
        rate * model.frame_bits / model.capacity_bps
    } else {
        zero
    };
    let qd = if rate >= lit(QD_MIN_RATE) {
        lit::<F>(QD_PER_KFPS) * rate / lit(1000.0)
    } else {
        zero
    };
    let delay = qd + td + model.switching_delay + pd;
    let latency = lit::<F>(2.0) * delay;
    let useful = if td > zero { td } else { pd };
    Ok(Case1Row {
        frame_rate: rate,
        qd,
        td,
        pd,
        delay,
        latency,
        efficiency: useful / latency,
    })
}

/// Twice the latency.
pub fn buffer_clear_timeout<F: Real>(latency: F) -> Result<F, MetricsError> {
    Ok(lit::<F>(2.0) * positive("latency", latency)?)
}

/// Normalized throughput with loss above capacity: `r` up to 1, `2 - r` after.
pub fn throughput_curve<F: Real>(frame_rate: F, frame_bits: F, capacity_bps: F) -> F {
    let r = frame_rate * frame_bits / capacity_bps;
    if r <= F::zero() {
        F::zero()
    } else if r <= F::one() {
        r
    } else {
        (lit::<F>(2.0) - r).max(F::zero())
    }
}

/// Offered data rate in bits per second.
pub fn data_rate<F: Real>(frame_rate: F, frame_bits: F) -> F {
    frame_rate * frame_bits
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FtnTiming<F> {
    /// Buffer-clear timeout at the buffering router.
    pub t_o: F,
    /// Time for a frame to reach the buffering router.
    pub arrival_offset: F,
    /// One timeout cycle: NACK leg, retransmission leg and a fresh timeout.
    pub cycle: F,
    /// Recovery notice, forwarding to the destination and the ACK leg.
    pub post_recovery: F,
}

impl<F: Real> Default for FtnTiming<F> {
    fn default() -> Self {
        FtnTiming {
            t_o: lit(1.0),
            arrival_offset: lit(0.05),
            cycle: lit(1.1),
            post_recovery: lit(0.6),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConventionalTiming<F> {
    pub rto: F,
    pub rtt_healthy: F,
}

impl<F: Real> Default for ConventionalTiming<F> {
    fn default() -> Self {
        ConventionalTiming {
            rto: lit(1.2),
            rtt_healthy: lit(0.6),
        }
    }
}

/// Slack when comparing a duration against a timer boundary.
fn slack<F: Real>() -> F {
    lit(1e-9)
}

/// `(timeout, latency)` predicted for in-network buffering. Outside the
/// short windows where the fault ends between a buffer clear and the
/// retransmission's arrival, latency is `fd + post_recovery`.
pub fn ftn_closed_form<F: Real>(fault_duration: F, timing: &FtnTiming<F>) -> (F, F) {
    let first = timing.arrival_offset + timing.t_o;
    let k = ((fault_duration - first) / timing.cycle - slack())
        .ceil()
        .max(F::zero());
    (first + k * timing.cycle, fault_duration + timing.post_recovery)
}

/// `(timeout, latency)` predicted for end-to-end retransmission.
pub fn conventional_closed_form<F: Real>(fault_duration: F, timing: &ConventionalTiming<F>) -> (F, F) {
    if fault_duration <= F::zero() {
        return (timing.rto, timing.rtt_healthy);
    }
    let n = (fault_duration / timing.rto - slack()).ceil().max(F::one());
    let timeout = n * timing.rto;
    (timeout, timeout + timing.rtt_healthy)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Case2Row<F> {
    pub fault_duration: F,
    pub conventional_timeout: F,
    pub conventional_latency: F,
    pub ftn_timeout: F,
    pub ftn_latency: F,
}

pub fn case2_closed_form<F: Real>(
    fault_duration: F,
    ftn: &FtnTiming<F>,
    conventional: &ConventionalTiming<F>,
) -> Case2Row<F> {
    let (ct, cl) = conventional_closed_form(fault_duration, conventional);
    let (ft, fl) = ftn_closed_form(fault_duration, ftn);
    Case2Row {
        fault_duration,
        conventional_timeout: ct,
        conventional_latency: cl,
        ftn_timeout: ft,
        ftn_latency: fl,
    }
}

/// Frame rates of the fault-free delay table.
pub const DELAY_TABLE_RATES: [u32; 7] = [100, 1000, 2000, 3000, 5000, 7500, 10000];
/// Frame rates of the throughput table.
pub const THROUGHPUT_TABLE_RATES: [u32; 8] = [100, 500, 1000, 1500, 2000, 2500, 3000, 3500];
/// Fault durations of the latency comparison, in milliseconds.
pub const FAULT_TABLE_MS: [u64; 8] = [500, 1000, 1500, 2000, 2500, 3000, 4000, 4500];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::round_half_up;

    fn row(rate: f64) -> Case1Row<f64> {
        case1_row(rate, &PathModel::default()).unwrap()
    }

    fn r3(x: f64) -> f64 {
        round_half_up(x, 3)
    }

    #[test]
    fn low_rate_row() {
        let r = row(100.0);
        assert_eq!((r3(r.delay), r3(r.latency), r3(r.efficiency)), (0.3, 0.6, 0.5));
        assert_eq!((r.qd, r.td), (0.0, 0.0));
    }

    #[test]
    fn saturated_row() {
        let r = row(3000.0);
        assert_eq!((r.qd, r.td, r.pd), (1.5, 1.5, 0.0));
        assert_eq!((r.delay, r.latency, r.efficiency), (3.0, 6.0, 0.25));
    }

    #[test]
    fn row_7500_follows_formula() {
        let r = row(7500.0);
        assert_eq!((r.delay, r.latency), (7.5, 15.0));
        assert_eq!(r.efficiency, 0.25);
    }

    #[test]
    fn rejects_non_positive_rate() {
        assert!(case1_row(0.0f64, &PathModel::default()).is_err());
        assert!(case1_row(-5.0f64, &PathModel::default()).is_err());
    }

    #[test]
    fn clear_timeout() {
        assert!((buffer_clear_timeout(0.6f64).unwrap() - 1.2).abs() < 1e-12);
        assert!(buffer_clear_timeout(0.0f64).is_err());
        assert_eq!(buffer_clear_timeout(1.5f64).unwrap() * 2.0, buffer_clear_timeout(3.0f64).unwrap());
    }

    #[test]
    fn throughput_points() {
        assert_eq!(throughput_curve(2000.0f64, 500.0, 1e6), 1.0);
        assert_eq!(throughput_curve(3000.0f64, 500.0, 1e6), 0.5);
        assert_eq!(throughput_curve(0.0f64, 500.0, 1e6), 0.0);
        assert_eq!(throughput_curve(5000.0f64, 500.0, 1e6), 0.0);
    }

    #[test]
    fn ftn_rows() {
        let t = FtnTiming::default();
        let (to, lat) = ftn_closed_form(0.5f64, &t);
        assert_eq!((r3(to), r3(lat)), (1.05, 1.1));
        let (to, lat) = ftn_closed_form(4.5f64, &t);
        assert_eq!((r3(to), r3(lat)), (5.45, 5.1));
        let (to, lat) = ftn_closed_form(4.0f64, &t);
        assert_eq!((r3(to), r3(lat)), (4.35, 4.6));
        // boundary: a fault ending exactly at the first deadline
        assert_eq!(r3(ftn_closed_form(1.05f64, &t).0), 1.05);
    }

    #[test]
    fn conventional_rows() {
        let t = ConventionalTiming::default();
        let (to, lat) = conventional_closed_form(1.0f64, &t);
        assert_eq!((r3(to), r3(lat)), (1.2, 1.8));
        let (to, lat) = conventional_closed_form(2.5f64, &t);
        assert_eq!((r3(to), r3(lat)), (3.6, 4.2));
        assert_eq!(conventional_closed_form(0.0f64, &t), (1.2, 0.6));
        assert_eq!(r3(conventional_closed_form(3.6f64, &t).0), 3.6);
    }

    #[test]
    fn generic_over_f32() {
        let r = case1_row(3000.0f32, &PathModel::default()).unwrap();
        assert_eq!(r.latency, 6.0);
        assert_eq!(throughput_curve(2500.0f32, 500.0, 1e6), 0.75);
    }

    proptest::proptest! {
        #[test]
        fn clear_timeout_of_latency_is_four_delays(d in 1e-3f64..1e3) {
            let t = buffer_clear_timeout(2.0 * d).unwrap();
            proptest::prop_assert!((t - 4.0 * d).abs() <= 1e-12 * d);
        }

        #[test]
        fn throughput_symmetric_about_capacity(r in 0.0f64..1.0) {
            let below = throughput_curve(r * 2000.0, 500.0, 1e6);
            let above = throughput_curve((2.0 - r) * 2000.0, 500.0, 1e6);
            proptest::prop_assert!((below - above).abs() < 1e-12);
            proptest::prop_assert!(below <= 1.0);
        }

        #[test]
        fn conventional_exceeds_ftn_on_timeouts(fd in 0.01f64..6.0) {
            let (ct, cl) = conventional_closed_form(fd, &ConventionalTiming::default());
            proptest::prop_assert!(ct >= fd - 1e-9);
            proptest::prop_assert!((cl - ct - 0.6).abs() < 1e-9);
        }
    }
}

//! Tables, plot series, buffer report and run summaries.

use std::collections::BTreeMap;

use ftn_core::engine::{run, MessageStatus, RunOutput, Scenario, TraceEvent};
use ftn_core::metrics::{
    case1_row, data_rate, throughput_curve, PathModel, DELAY_TABLE_RATES, FAULT_TABLE_MS,
    THROUGHPUT_TABLE_RATES,
};
use ftn_core::num::round_half_up;
use ftn_core::protocol::Protocol;
use ftn_core::traffic::{
    buffer_size, device_ms, loss_multi, network_distribution, parse_schedule, poisson_pmf,
    TrafficError,
};
use serde::Serialize;

use crate::CliError;

fn f3(x: f64) -> String {
    format!("{:.3}", round_half_up(x, 3))
}

fn f2(x: f64) -> String {
    format!("{:.2}", round_half_up(x, 2))
}

fn csv_text(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory");
    for r in rows {
        w.write_record(r).expect("in-memory");
    }
    String::from_utf8(w.into_inner().expect("in-memory")).expect("UTF-8")
}

/// Reference delay table cells: delay, latency, efficiency. Rows that
/// disagree with the model are annotated in the output.
const PRINTED_TABLE4: [(u32, f64, f64, f64); 7] = [
    (100, 0.3, 0.6, 0.5),
    (1000, 0.3, 0.6, 0.5),
    (2000, 1.0, 2.0, 0.5),
    (3000, 3.0, 6.0, 0.25),
    (5000, 5.0, 10.0, 0.25),
    (7500, 7.0, 14.0, 0.26),
    (10000, 10.0, 20.0, 0.25),
];

/// Reference fault table, seconds: conventional timeout/latency, FTN timeout/latency.
const PRINTED_TABLE6: [(f64, f64, f64, f64); 8] = [
    (1.2, 1.8, 1.05, 1.1),
    (1.2, 1.8, 1.05, 1.6),
    (2.4, 3.0, 2.15, 2.1),
    (2.4, 3.0, 2.15, 2.6),
    (3.6, 4.2, 3.25, 3.1),
    (3.6, 4.2, 3.25, 3.6),
    (4.8, 5.4, 4.35, 4.1),
    (4.8, 5.4, 5.45, 5.1),
];

pub fn table4() -> Result<String, CliError> {
    let model = PathModel::default();
    let mut rows = Vec::new();
    for (rate, p_delay, p_latency, p_eff) in PRINTED_TABLE4 {
        debug_assert!(DELAY_TABLE_RATES.contains(&rate));
        let r = case1_row(rate as f64, &model).map_err(|e| CliError::Runtime(e.to_string()))?;
        let mut notes = Vec::new();
        if round_half_up(r.delay, 3) != p_delay {
            notes.push(format!("reference delay {p_delay}"));
        }
        if round_half_up(r.latency, 3) != p_latency {
            notes.push(format!("reference latency {p_latency}"));
        }
        if (r.efficiency - p_eff).abs() > 0.01 {
            notes.push(format!("reference efficiency {p_eff}"));
        }
        rows.push(vec![
            rate.to_string(),
            f3(r.qd),
            f3(r.td),
            f3(r.pd),
            f3(r.delay),
            f3(r.latency),
            f3(r.efficiency),
            notes.join("; "),
        ]);
    }
    Ok(csv_text(
        &["frame_rate", "qd_s", "td_s", "pd_s", "delay_s", "latency_s", "efficiency", "note"],
        &rows,
    ))
}

pub fn table5() -> String {
    let rows: Vec<Vec<String>> = THROUGHPUT_TABLE_RATES
        .iter()
        .map(|&rate| {
            let r = rate as f64;
            vec![
                rate.to_string(),
                format!("{}", data_rate(r, 500.0) as u64),
                f2(throughput_curve(r, 500.0, 1e6)),
            ]
        })
        .collect();
    csv_text(&["frame_rate", "data_rate_bps", "throughput"], &rows)
}

/// `(latency, timeout)` in ms for the single-router fault scenario.
fn fault_run(fd_ms: u64, protocol: Protocol) -> Result<(u64, u64), CliError> {
    let out = run(&Scenario::router_fault(fd_ms, protocol)).map_err(|e| CliError::Runtime(e.to_string()))?;
    let m = &out.messages[0];
    match (m.latency_ms, m.timeout_ms) {
        (Some(l), Some(t)) => Ok((l, t)),
        _ => Err(CliError::Runtime(format!(
            "fault of {fd_ms} ms under {protocol}: message finished {:?}",
            m.status
        ))),
    }
}

fn secs(ms: u64) -> f64 {
    ms as f64 / 1000.0
}

pub fn table6() -> Result<String, CliError> {
    let mut rows = Vec::new();
    for (i, &fd) in FAULT_TABLE_MS.iter().enumerate() {
        let (cl, ct) = fault_run(fd, Protocol::Conventional)?;
        let (fl, ft) = fault_run(fd, Protocol::Ftn)?;
        let got = [secs(ct), secs(cl), secs(ft), secs(fl)];
        let (a, b, c, d) = PRINTED_TABLE6[i];
        let names = ["conventional_timeout", "conventional_latency", "ftn_timeout", "ftn_latency"];
        let notes: Vec<String> = got
            .iter()
            .zip([a, b, c, d])
            .zip(names)
            .filter(|((g, p), _)| (*g - *p).abs() > 0.0015)
            .map(|((_, p), n)| format!("reference {n} {p:.3}"))
            .collect();
        let mut row = vec![f3(secs(fd))];
        row.extend(got.iter().map(|&x| f3(x)));
        row.push(notes.join("; "));
        rows.push(row);
    }
    Ok(csv_text(
        &[
            "fault_duration_s",
            "conventional_timeout_s",
            "conventional_latency_s",
            "ftn_timeout_s",
            "ftn_latency_s",
            "note",
        ],
        &rows,
    ))
}

pub fn plot4() -> Result<String, CliError> {
    let model = PathModel::default();
    let mut rows = Vec::new();
    for rate in (100..=10_000).step_by(100) {
        let r = case1_row(rate as f64, &model).map_err(|e| CliError::Runtime(e.to_string()))?;
        rows.push(vec![rate.to_string(), f3(r.delay), f3(r.latency)]);
    }
    Ok(csv_text(&["frame_rate", "delay_s", "latency_s"], &rows))
}

pub fn plot6() -> String {
    let rows: Vec<Vec<String>> = (0..=4000)
        .step_by(100)
        .map(|rate| vec![rate.to_string(), f3(throughput_curve(rate as f64, 500.0, 1e6))])
        .collect();
    csv_text(&["frame_rate", "throughput"], &rows)
}

pub fn plot7() -> Result<String, CliError> {
    let mut rows = Vec::new();
    for fd in (500..=4500).step_by(100) {
        let (cl, _) = fault_run(fd, Protocol::Conventional)?;
        let (fl, _) = fault_run(fd, Protocol::Ftn)?;
        rows.push(vec![f3(secs(fd)), f3(secs(cl)), f3(secs(fl))]);
    }
    Ok(csv_text(&["fault_duration_s", "conventional_latency_s", "ftn_latency_s"], &rows))
}

pub struct BufferArgs {
    pub lambda: f64,
    pub t: f64,
    pub n: u64,
    pub devices: u64,
    pub schedule: String,
    pub y: f64,
    pub packet_bits: f64,
}

fn flag_error(e: TrafficError) -> CliError {
    let flag = match &e {
        TrafficError::Domain { name, .. } => match *name {
            "lambda" => "--lambda",
            "t" => "--t",
            "Y" => "--y",
            "packet_bits" => "--packet-bits",
            _ => "--schedule",
        },
        TrafficError::NoDevices => "--devices",
        _ => "--schedule",
    };
    CliError::Invalid(format!("{flag}: {e}"))
}

pub fn buffer(a: &BufferArgs) -> Result<String, CliError> {
    let x = poisson_pmf(a.lambda, a.t, a.n).map_err(flag_error)?;
    let d = network_distribution(a.lambda, a.t, a.n, a.devices).map_err(flag_error)?;
    let schedule = parse_schedule(&a.schedule).map_err(flag_error)?;
    // validates overlap/emptiness even though consecutive layout cannot overlap
    ftn_core::traffic::loss_schedule(x.value(), &schedule).map_err(flag_error)?;
    // losses are kept in log space: the values are far below f64's range
    let sci = |ln: f64| {
        if ln == f64::NEG_INFINITY {
            "0".to_owned()
        } else {
            let l10 = ln / std::f64::consts::LN_10;
            let e = l10.floor();
            format!("{:.6}e{}", 10f64.powf(l10 - e), e as i64)
        }
    };
    let mut rows = vec![
        vec!["X".into(), sci(x.ln), format!("{:.6}", x.log10())],
        vec!["D".into(), sci(d.ln), format!("{:.6}", d.log10())],
    ];
    let mut total_ln = f64::NEG_INFINITY;
    for (i, iv) in schedule.iter().enumerate() {
        let scale = loss_multi(1.0, iv.duration_ms() as f64, iv.faulty).map_err(flag_error)?;
        let ln = x.ln + scale.ln();
        total_ln = log_add(total_ln, ln);
        rows.push(vec![
            format!("L[{i}] {}-{}ms K={}", iv.start_ms, iv.end_ms, iv.faulty),
            sci(ln),
            log10_cell(ln),
        ]);
    }
    rows.push(vec!["L".into(), sci(total_ln), log10_cell(total_ln)]);
    rows.push(vec!["K*T device_ms".into(), device_ms(&schedule).to_string(), String::new()]);
    let spec = buffer_size(a.y, total_ln.exp(), a.packet_bits).map_err(flag_error)?;
    let b_ln = total_ln + (a.y * a.packet_bits).ln();
    rows.push(vec!["B".into(), sci(b_ln), log10_cell(b_ln)]);
    rows.push(vec!["B bits".into(), spec.bits.to_string(), String::new()]);
    Ok(csv_text(&["quantity", "value", "log10"], &rows))
}

fn log10_cell(ln: f64) -> String {
    if ln == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{:.6}", ln / std::f64::consts::LN_10)
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

#[derive(Debug, Serialize)]
pub struct MessageRecord {
    pub id: u64,
    pub sender: String,
    pub destination: String,
    pub injected_ms: u64,
    pub status: &'static str,
    pub attempts: u32,
    pub nacks: u32,
    pub delivered_ms: Option<u64>,
    pub latency_ms: Option<u64>,
    pub timeout_ms: Option<u64>,
}

#[derive(Debug, Serialize)]
pub struct Aggregate {
    pub injected: usize,
    pub delivered: usize,
    pub nacked: usize,
    pub lost: usize,
    pub in_flight: usize,
    pub mean_latency_ms: Option<f64>,
    pub max_latency_ms: Option<u64>,
    /// Delivered data bits over the span from first injection to last delivery.
    pub throughput_bps: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub protocol: Protocol,
    pub end_ms: u64,
    pub truncated: bool,
    pub messages: Vec<MessageRecord>,
    pub aggregate: Aggregate,
}

pub fn summarize(protocol: Protocol, out: &RunOutput) -> RunSummary {
    let mut nacks: BTreeMap<u64, u32> = BTreeMap::new();
    let mut last: BTreeMap<u64, TraceEvent> = BTreeMap::new();
    for r in &out.trace.records {
        let (Some(m), Some(_)) = (r.msg_id, r.attempt) else { continue };
        match r.event {
            TraceEvent::Nacked => {
                *nacks.entry(m).or_default() += 1;
                last.insert(m, r.event);
            }
            TraceEvent::Delivered | TraceEvent::Lost => {
                last.insert(m, r.event);
            }
            _ => {}
        }
    }
    let mut agg = Aggregate {
        injected: out.messages.len(),
        delivered: 0,
        nacked: 0,
        lost: 0,
        in_flight: 0,
        mean_latency_ms: None,
        max_latency_ms: None,
        throughput_bps: None,
    };
    let mut messages = Vec::new();
    for m in &out.messages {
        let status = match m.status {
            MessageStatus::Acknowledged => "acknowledged",
            MessageStatus::Delivered => "delivered",
            MessageStatus::Lost => "lost",
            MessageStatus::InFlight if last.get(&m.id) == Some(&TraceEvent::Nacked) => "nacked",
            MessageStatus::InFlight => "in_flight",
        };
        match status {
            "acknowledged" | "delivered" => agg.delivered += 1,
            "lost" => agg.lost += 1,
            "nacked" => agg.nacked += 1,
            _ => agg.in_flight += 1,
        }
        messages.push(MessageRecord {
            id: m.id,
            sender: m.sender.clone(),
            destination: m.destination.to_string(),
            injected_ms: m.injected_at,
            status,
            attempts: m.attempts,
            nacks: nacks.get(&m.id).copied().unwrap_or(0),
            delivered_ms: m.delivered_at,
            latency_ms: m.latency_ms,
            timeout_ms: m.timeout_ms,
        });
    }
    let latencies: Vec<u64> = out.messages.iter().filter_map(|m| m.latency_ms).collect();
    if !latencies.is_empty() {
        agg.mean_latency_ms = Some(latencies.iter().sum::<u64>() as f64 / latencies.len() as f64);
        agg.max_latency_ms = latencies.iter().max().copied();
    }
    let first = out.messages.iter().map(|m| m.injected_at).min();
    let last_delivery = out.messages.iter().filter_map(|m| m.delivered_at).max();
    if let (Some(a), Some(b)) = (first, last_delivery) {
        if b > a {
            let bits: u64 = out
                .messages
                .iter()
                .filter(|m| m.delivered_at.is_some())
                .map(|m| m.frame_bits)
                .sum();
            agg.throughput_bps = Some(bits as f64 * 1000.0 / (b - a) as f64);
        }
    }
    RunSummary {
        protocol,
        end_ms: out.end_ms,
        truncated: out.truncated,
        messages,
        aggregate: agg,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table5_row() {
        assert!(table5().lines().any(|l| l == "2000,1000000,1.00"));
    }

    #[test]
    fn table6_columns_from_engine() {
        let t = table6().unwrap();
        let conv: Vec<&str> = t.lines().skip(1).map(|l| l.split(',').nth(2).unwrap()).collect();
        assert_eq!(conv, ["1.800", "1.800", "3.000", "3.000", "4.200", "4.200", "5.400", "5.400"]);
        let flagged: Vec<&str> = t.lines().filter(|l| !l.ends_with(',')).skip(1).collect();
        assert_eq!(flagged, ["4.000,4.800,5.400,4.350,4.600,reference ftn_latency 4.100"]);
    }

    #[test]
    fn table4_flags_only_7500() {
        let t = table4().unwrap();
        let flagged: Vec<&str> = t.lines().skip(1).filter(|l| !l.ends_with(',')).collect();
        assert_eq!(flagged.len(), 1);
        assert!(flagged[0].starts_with("7500,3.750,3.750,0.000,7.500,15.000,0.250,"));
    }

    #[test]
    fn buffer_example() {
        let a = BufferArgs {
            lambda: 2.0,
            t: 1.0,
            n: 2,
            devices: 1,
            schedule: "200:1,200:4,200:2,200:3,200:4".into(),
            y: 1.0,
            packet_bits: 500.0,
        };
        let r = buffer(&a).unwrap();
        assert!(r.contains("\nX,2.706706e-1,"), "{r}");
        assert!(r.contains("K*T device_ms,2800,"), "{r}");
    }

    #[test]
    fn zero_loss_needs_no_buffer() {
        let a = BufferArgs {
            lambda: 2.0,
            t: 1.0,
            n: 2,
            devices: 1,
            schedule: String::new(),
            y: 1.0,
            packet_bits: 500.0,
        };
        assert!(buffer(&a).unwrap().contains("B bits,0,"));
    }

    #[test]
    fn log_add_matches_linear() {
        let s = log_add(2f64.ln(), 3f64.ln()).exp();
        assert!((s - 5.0).abs() < 1e-12);
    }
}

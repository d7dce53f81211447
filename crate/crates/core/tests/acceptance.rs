//! Acceptance suite: one line per criterion, non-zero exit on any failure.

mod support;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use ftn_core::engine::{
    run, Destination, FaultSpec, FaultTarget, MessageStatus, RunOutput, Scenario, TraceEvent,
    TrafficSpec,
};
use ftn_core::metrics::{
    case1_row, throughput_curve, PathModel, FAULT_TABLE_MS, THROUGHPUT_TABLE_RATES,
};
use ftn_core::num::round_half_up;
use ftn_core::protocol::Protocol;
use ftn_core::topology::NodeKind;
use ftn_core::traffic::{loss_multi, loss_single, poisson_pmf};
use ftn_core::wire::{decode, encode, Address, Message, MessageKind, WireError, MAX_PAYLOAD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(got: u64, want: u64, tol: u64) -> bool {
    got.abs_diff(want) <= tol
}

fn case2(fd_ms: u64, protocol: Protocol) -> Result<(u64, u64), String> {
    let out = run(&Scenario::router_fault(fd_ms, protocol)).map_err(|e| e.to_string())?;
    let m = &out.messages[0];
    let latency = m.latency_ms.ok_or_else(|| format!("fd={fd_ms}: no latency ({:?})", m.status))?;
    let timeout = m.timeout_ms.ok_or_else(|| format!("fd={fd_ms}: no timeout"))?;
    Ok((latency, timeout))
}

fn ac1() -> Outcome {
    let latency = [1800, 1800, 3000, 3000, 4200, 4200, 5400, 5400];
    let timeout = [1200, 1200, 2400, 2400, 3600, 3600, 4800, 4800];
    let started = Instant::now();
    for (i, &fd) in FAULT_TABLE_MS.iter().enumerate() {
        let (l, t) = case2(fd, Protocol::Conventional)?;
        ensure(within(l, latency[i], 1) && within(t, timeout[i], 1), || {
            format!("fd={fd}: latency {l} timeout {t}, want {} / {}", latency[i], timeout[i])
        })?;
    }
    let took = started.elapsed();
    ensure(took.as_secs_f64() < 1.0, || format!("took {took:?}"))?;
    Ok(format!("8/8 rows within 1 ms in {:.1} ms", took.as_secs_f64() * 1e3))
}

fn ac2() -> Outcome {
    let table_latency = [1100, 1600, 2100, 2600, 3100, 3600, 4100, 5100];
    let table_timeout = [1050, 1050, 2150, 2150, 3250, 3250, 4350, 5450];
    let mut matched = 0;
    let mut anomalies = Vec::new();
    for (i, &fd) in FAULT_TABLE_MS.iter().enumerate() {
        let (l, t) = case2(fd, Protocol::Ftn)?;
        ensure(within(l, fd + 600, 1), || format!("fd={fd}: latency {l}, want {}", fd + 600))?;
        ensure(within(t, table_timeout[i], 1), || {
            format!("fd={fd}: timeout {t}, want {}", table_timeout[i])
        })?;
        if within(l, table_latency[i], 1) {
            matched += 1;
        } else {
            anomalies.push(format!("fd={fd} engine {l} vs table {}", table_latency[i]));
        }
    }
    ensure(matched == 7 && anomalies.len() == 1 && anomalies[0].starts_with("fd=4000"), || {
        format!("{matched}/8 latency cells match; mismatches {anomalies:?}")
    })?;
    Ok(format!("latency 7/8 table cells, 8/8 timeouts; anomaly {}", anomalies[0]))
}

fn ac3() -> Outcome {
    let want = [0.05, 0.25, 0.50, 0.75, 1.00, 0.75, 0.50, 0.25];
    for (rate, w) in THROUGHPUT_TABLE_RATES.iter().zip(want) {
        let got = round_half_up(throughput_curve(*rate as f64, 500.0, 1e6), 2);
        ensure(got == w, || format!("rate {rate}: {got} want {w}"))?;
    }
    Ok("8/8 cells exact".into())
}

fn ac4() -> Outcome {
    let model = PathModel::default();
    let cells: [(f64, f64, f64, f64); 6] = [
        (100.0, 0.3, 0.6, 0.5),
        (1000.0, 0.3, 0.6, 0.5),
        (2000.0, 1.0, 2.0, 0.5),
        (3000.0, 3.0, 6.0, 0.25),
        (5000.0, 5.0, 10.0, 0.25),
        (10000.0, 10.0, 20.0, 0.25),
    ];
    for (rate, delay, latency, eff) in cells {
        let r = case1_row(rate, &model).map_err(|e| e.to_string())?;
        let (d, l) = (round_half_up(r.delay, 3), round_half_up(r.latency, 3));
        ensure(d == delay && l == latency && (r.efficiency - eff).abs() <= 0.01, || {
            format!("rate {rate}: {d}/{l}/{:.3}, want {delay}/{latency}/{eff}", r.efficiency)
        })?;
    }
    let r = case1_row(7500.0, &model).map_err(|e| e.to_string())?;
    let formula_eff = r.td / (2.0 * (r.qd + r.td + r.pd));
    ensure(r.delay == 7.5 && r.latency == 15.0 && r.efficiency == formula_eff, || {
        format!("7500: {}/{}/{}", r.delay, r.latency, r.efficiency)
    })?;
    Ok(format!(
        "6/6 rows exact; 7500 row formula {}/{}/{:.3} (reference row 7.0/14/0.26 flagged)",
        r.delay, r.latency, r.efficiency
    ))
}

fn ac5() -> Outcome {
    let mut worst = 0f64;
    let mut points = 0;
    for k in 1..=20u64 {
        for n in [0u64, 1, 2, 5, 10, 20, 30, 50, 75, 100] {
            let got = poisson_pmf(0.75 * k as f64, 2.0, n).map_err(|e| e.to_string())?.value();
            let want = support::poisson_pmf_exact(3 * k, 2, n);
            worst = worst.max(((got - want) / want).abs());
            points += 1;
        }
    }
    ensure(points == 200 && worst < 1e-9, || format!("worst relative error {worst:e}"))?;
    let total: f64 = (0..=60)
        .map(|n| poisson_pmf(5.0, 1.0, n).unwrap().value())
        .sum();
    ensure(total >= 1.0 - 1e-6, || format!("sum {total}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let x: f64 = rng.random_range(0.0..1.0);
        let t: f64 = rng.random_range(0.0..10_000.0);
        let k: u64 = rng.random_range(0..64);
        let (m, s) = (loss_multi(x, t, k).unwrap(), loss_single(x, t).unwrap());
        ensure(m == k as f64 * s, || format!("loss_multi({x},{t},{k}) = {m}, K*single = {}", k as f64 * s))?;
    }
    Ok(format!("200 points, worst rel err {worst:.1e}; sum to 60 = {total:.9}"))
}

fn random_message(rng: &mut ChaCha8Rng) -> Message {
    let addr = |rng: &mut ChaCha8Rng| Address(rng.random());
    let kind = match rng.random_range(0..4) {
        0 => MessageKind::Data,
        1 => MessageKind::Fdqm,
        2 => MessageKind::Fdrm,
        _ => MessageKind::Nack,
    };
    let (s, d) = (addr(rng), addr(rng));
    if kind == MessageKind::Data {
        let len = rng.random_range(0..=MAX_PAYLOAD);
        let payload = (0..len).map(|_| rng.random()).collect();
        Message::data(s, d, payload)
    } else {
        Message::control(kind, s, d)
    }
}

fn ac6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for i in 0..10_000 {
        let m = random_message(&mut rng);
        let bytes = encode(&m).map_err(|e| format!("#{i}: {e}"))?;
        let back = decode(&bytes).map_err(|e| format!("#{i}: {e}"))?;
        ensure(back == m, || format!("#{i}: {m:?} came back as {back:?}"))?;
    }
    for len in 0..9 {
        ensure(matches!(decode(&vec![0x80; len]), Err(WireError::Truncated { .. })), || {
            format!("{len}-byte input not reported truncated")
        })?;
    }
    ensure(matches!(decode(&vec![0x80; 9 + MAX_PAYLOAD + 1]), Err(WireError::Oversize { .. })), || {
        "oversize input accepted".into()
    })?;
    let big = Message::data(Address([1; 4]), Address([2; 4]), vec![0; MAX_PAYLOAD + 1]);
    ensure(matches!(encode(&big), Err(WireError::PayloadTooLarge { .. })), || {
        "oversize payload encoded".into()
    })?;
    for flag in [0x00u8, 0x40, 0x20] {
        let mut frame = vec![flag; 10];
        frame[1..9].fill(1);
        ensure(matches!(decode(&frame), Err(WireError::MalformedControl { .. })), || {
            format!("control flag {flag:#04x} with payload accepted")
        })?;
    }
    Ok("10000 round-trips; truncated/oversize/payload-too-large/control-with-payload rejected".into())
}

fn random_scenario(rng: &mut ChaCha8Rng) -> Scenario {
    let mut s = Scenario::router_fault(0, Protocol::Ftn);
    s.traffic.clear();
    let hosts: Vec<String> = s
        .topology
        .nodes()
        .iter()
        .filter(|n| n.kind == NodeKind::Host)
        .map(|n| n.name.clone())
        .collect();
    let router = format!("R{}", rng.random_range(1..=7));
    let duration = rng.random_range(0..=5000);
    s.faults.push(FaultSpec {
        target: FaultTarget::Node(router),
        start_ms: 0,
        duration_ms: duration,
    });
    for _ in 0..rng.random_range(1..=20) {
        s.traffic.push(TrafficSpec {
            sender: "GS1".into(),
            destination: Destination::Node(hosts[rng.random_range(0..hosts.len())].clone()),
            frame_bits: rng.random_range(72..=4000),
            frame_rate: 1,
            start_ms: rng.random_range(0..=6000),
            count: 1,
        });
    }
    s
}

fn target_of(detail: &str) -> &str {
    detail.strip_prefix("to ").unwrap_or(detail)
}

/// Attempt accounting, buffer occupancy and probe/report pairing from a trace.
fn conservation(s: &Scenario, out: &RunOutput) -> Result<(), String> {
    if out.truncated {
        return Err("run truncated".into());
    }
    let mut terminal: BTreeMap<(u64, u32), Vec<TraceEvent>> = BTreeMap::new();
    let mut buffered: BTreeMap<&str, u64> = BTreeMap::new();
    let mut held: BTreeMap<(&str, u64, Option<u32>), Vec<u64>> = BTreeMap::new();
    let mut probes: BTreeMap<(&str, &str), i64> = BTreeMap::new();
    for r in &out.trace.records {
        let key = r.msg_id.map(|m| (r.node.as_str(), m, r.attempt));
        match r.event {
            TraceEvent::Injected | TraceEvent::Retransmitted => {
                if let (Some(m), Some(a)) = (r.msg_id, r.attempt) {
                    terminal.entry((m, a)).or_default();
                }
            }
            TraceEvent::Delivered | TraceEvent::Nacked | TraceEvent::Lost => {
                if let (Some(m), Some(a)) = (r.msg_id, r.attempt) {
                    terminal.entry((m, a)).or_default().push(r.event);
                }
            }
            TraceEvent::Buffered => {
                let bits: u64 = r
                    .detail
                    .rsplit("bits=")
                    .next()
                    .and_then(|b| b.parse().ok())
                    .ok_or_else(|| format!("unparsable buffer record {:?}", r.detail))?;
                let total = buffered.entry(r.node.as_str()).or_default();
                *total += bits;
                if *total > s.params.buffer_capacity_bits {
                    return Err(format!("{} holds {total} bits at {}", r.node, r.time_ms));
                }
                held.entry(key.unwrap()).or_default().push(bits);
            }
            TraceEvent::Released | TraceEvent::TimedOut => {
                let bits = held
                    .get_mut(&key.unwrap())
                    .and_then(|v| v.pop())
                    .ok_or_else(|| format!("{} released a frame it never held at {}", r.node, r.time_ms))?;
                let total = buffered.entry(r.node.as_str()).or_default();
                *total = total
                    .checked_sub(bits)
                    .ok_or_else(|| format!("{} buffer occupancy below zero", r.node))?;
            }
            TraceEvent::FdqmSent => *probes.entry((r.node.as_str(), target_of(&r.detail))).or_default() += 1,
            TraceEvent::FdrmSent => {
                let outstanding = probes.entry((target_of(&r.detail), r.node.as_str())).or_default();
                *outstanding -= 1;
                if *outstanding < 0 {
                    return Err(format!("{} sent an unsolicited FDRM at {}", r.node, r.time_ms));
                }
            }
            _ => {}
        }
    }
    for ((m, a), ends) in &terminal {
        let ok = matches!(ends.as_slice(), [TraceEvent::Delivered] | [TraceEvent::Nacked]);
        if !ok {
            return Err(format!("message {m} attempt {a} ended {ends:?}"));
        }
    }
    for m in &out.messages {
        if m.status != MessageStatus::Acknowledged {
            return Err(format!("message {} finished {:?}", m.id, m.status));
        }
    }
    Ok(())
}

fn ac7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut messages, mut nacks) = (0, 0);
    for i in 0..120 {
        let s = random_scenario(&mut rng);
        let out = run(&s).map_err(|e| format!("scenario {i}: {e}"))?;
        conservation(&s, &out).map_err(|e| format!("scenario {i} ({:?}): {e}", s.faults[0]))?;
        messages += out.messages.len();
        nacks += out.trace.of(TraceEvent::Nacked).count();
    }
    Ok(format!("120 scenarios, {messages} messages, {nacks} NACKs; all attempts Delivered or Nacked"))
}

fn ac8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut scenarios: Vec<Scenario> = FAULT_TABLE_MS
        .iter()
        .flat_map(|&fd| [Scenario::router_fault(fd, Protocol::Ftn), Scenario::router_fault(fd, Protocol::Conventional)])
        .collect();
    scenarios.extend((0..10).map(|_| random_scenario(&mut rng)));
    scenarios.push(Scenario::fault_free(1000, 50, Protocol::Ftn));
    for (i, s) in scenarios.iter().enumerate() {
        let a = run(s).map_err(|e| e.to_string())?.trace.to_csv();
        let b = run(s).map_err(|e| e.to_string())?.trace.to_csv();
        ensure(a == b, || format!("scenario {i} traces differ"))?;
    }
    Ok(format!("{} scenarios byte-identical across reruns", scenarios.len()))
}

fn ac9() -> Outcome {
    let started = Instant::now();
    let mut margin = u64::MAX;
    for step in 1..=50u64 {
        let fd = step * 100;
        let (ftn, _) = case2(fd, Protocol::Ftn)?;
        let (conv, _) = case2(fd, Protocol::Conventional)?;
        ensure(ftn < conv, || format!("fd={fd}: ftn {ftn} >= conventional {conv}"))?;
        margin = margin.min(conv - ftn);
    }
    let took = started.elapsed();
    ensure(took.as_secs_f64() < 10.0, || format!("took {took:?}"))?;
    Ok(format!("50/50 points, smallest margin {margin} ms, {:.0} ms", took.as_secs_f64() * 1e3))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("AC1 conventional latency/timeout grid", ac1),
        ("AC2 in-network recovery latency/timeout grid", ac2),
        ("AC3 throughput table", ac3),
        ("AC4 fault-free delay table", ac4),
        ("AC5 Poisson correctness", ac5),
        ("AC6 wire round-trip and malformed input", ac6),
        ("AC7 protocol conservation", ac7),
        ("AC8 determinism", ac8),
        ("AC9 latency dominance", ac9),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match f() {
            Ok(note) => println!("PASS {name}: {note}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

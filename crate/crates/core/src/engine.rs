//! Deterministic discrete-event simulator.
//!
//! Events execute in `(time, class, seq)` order. Classes at equal time:
//! fault start/end first, then data and NACK arrivals, then FDQM/FDRM
//! arrivals, then timers (detection and probe ticks, buffer deadlines,
//! retransmission checks, traffic injection). Within a class, events run in
//! the order they were scheduled. A recovery report only affects traffic
//! arriving strictly later, and a report arriving exactly at a buffer
//! deadline still wins over the deadline.
//!
//! Per hop a frame spends `TD + SD + PD`: transmission time at the link
//! capacity (integer milliseconds, so sub-millisecond frames cost nothing),
//! the configured switching delay and the link's propagation delay. Frames
//! queue per link direction while an earlier frame is still being
//! transmitted.
//!
//! Faults in place at time zero are treated as already detected: the
//! neighbors of a down device (or the ends of a down link) start with that
//! connection inactive and probing. A down device answers nothing but queues
//! the FDQMs it receives and answers all of them the moment it is repaired.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt;
use std::io;

use thiserror::Error;

use crate::protocol::{
    attempt_of, logical_of, Action, EntryId, FtnParams, Millis, Protocol, RouterState,
    SenderState, Transmit, DEFAULT_RTO_MS,
};
use crate::topology::{
    map_destination, paper_topology, CastClass, NodeId, NodeKind, Topology, PAPER_HOSTS_PER_SWITCH,
};
use crate::wire::{Address, Frame, Message, MessageId, MessageKind, MAX_PAYLOAD};

/// Largest data frame a scenario may declare.
pub const MAX_FRAME_BITS: u64 = 8 * MAX_PAYLOAD as u64;
pub const DEFAULT_HORIZON_MS: Millis = 120_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Destination {
    Node(String),
    /// Raw address, e.g. broadcast or a multicast group.
    Address(Address),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrafficSpec {
    pub sender: String,
    pub destination: Destination,
    pub frame_bits: u64,
    /// Frames per second; frames are spaced `1000 / rate` ms apart.
    pub frame_rate: u32,
    pub start_ms: Millis,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FaultTarget {
    Node(String),
    Link(String, String),
}

impl fmt::Display for FaultTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FaultTarget::Node(n) => write!(f, "node {n}"),
            FaultTarget::Link(a, b) => write!(f, "link {a}-{b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaultSpec {
    pub target: FaultTarget,
    pub start_ms: Millis,
    pub duration_ms: Millis,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub topology: Topology,
    pub traffic: Vec<TrafficSpec>,
    pub faults: Vec<FaultSpec>,
    pub protocol: Protocol,
    pub params: FtnParams,
    pub retransmit_timeout_ms: Millis,
    pub switching_delay_ms: Millis,
    pub ack_enabled: bool,
    pub horizon_ms: Millis,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid scenario:\n  {}", .violations.join("\n  "))]
pub struct ValidationError {
    pub violations: Vec<String>,
}

impl Scenario {
    pub fn new(topology: Topology, protocol: Protocol) -> Self {
        Scenario {
            topology,
            traffic: Vec::new(),
            faults: Vec::new(),
            protocol,
            params: FtnParams::default(),
            retransmit_timeout_ms: DEFAULT_RTO_MS,
            switching_delay_ms: 0,
            ack_enabled: true,
            horizon_ms: DEFAULT_HORIZON_MS,
        }
    }

    /// One 500-bit frame from GS1 to SW5-2 at t = 0 while R3 is down for
    /// `fault_ms` from t = 0.
    pub fn router_fault(fault_ms: Millis, protocol: Protocol) -> Self {
        let mut s = Scenario::new(paper_topology(PAPER_HOSTS_PER_SWITCH), protocol);
        s.traffic.push(TrafficSpec {
            sender: "GS1".into(),
            destination: Destination::Node("SW5-2".into()),
            frame_bits: 500,
            frame_rate: 100,
            start_ms: 0,
            count: 1,
        });
        if fault_ms > 0 {
            s.faults.push(FaultSpec {
                target: FaultTarget::Node("R3".into()),
                start_ms: 0,
                duration_ms: fault_ms,
            });
        }
        s
    }

    /// Fault-free stream of `count` 500-bit frames from GS1 to SW5-1.
    pub fn fault_free(frame_rate: u32, count: u32, protocol: Protocol) -> Self {
        let mut s = Scenario::new(paper_topology(PAPER_HOSTS_PER_SWITCH), protocol);
        s.traffic.push(TrafficSpec {
            sender: "GS1".into(),
            destination: Destination::Node("SW5-1".into()),
            frame_bits: 500,
            frame_rate,
            start_ms: 0,
            count,
        });
        s
    }

    /// Collects every violation rather than stopping at the first.
    pub fn validate(&self) -> Result<(), ValidationError> {
        let t = &self.topology;
        let mut v = Vec::new();
        if let Err(e) = self.params.validate() {
            v.push(format!("params: {e}"));
        }
        if self.retransmit_timeout_ms == 0 {
            v.push("params: `retransmit_timeout_ms` must be greater than zero".into());
        }
        if self.horizon_ms == 0 {
            v.push("params: `horizon_ms` must be greater than zero".into());
        }
        for (i, tr) in self.traffic.iter().enumerate() {
            match t.by_name(&tr.sender) {
                None => v.push(format!("traffic[{i}].sender: unknown node `{}`", tr.sender)),
                Some(n) if t.node(n).kind == NodeKind::Switch => {
                    v.push(format!("traffic[{i}].sender: switch `{}` cannot originate traffic", tr.sender))
                }
                _ => {}
            }
            match &tr.destination {
                Destination::Node(d) if t.by_name(d).is_none() => {
                    v.push(format!("traffic[{i}].destination: unknown node `{d}`"))
                }
                Destination::Node(d) if Some(d) == Some(&tr.sender) => {
                    v.push(format!("traffic[{i}].destination: sender cannot address itself"))
                }
                _ => {}
            }
            if tr.frame_bits == 0 || tr.frame_bits > MAX_FRAME_BITS {
                v.push(format!(
                    "traffic[{i}].frame_bits: {} outside 1..={MAX_FRAME_BITS}",
                    tr.frame_bits
                ));
            }
            if tr.count > 1 && (tr.frame_rate == 0 || tr.frame_rate > 1000) {
                v.push(format!(
                    "traffic[{i}].frame_rate: {} outside 1..=1000 frames/s",
                    tr.frame_rate
                ));
            }
        }
        let mut per_target: BTreeMap<String, Vec<(Millis, Millis)>> = BTreeMap::new();
        for (i, f) in self.faults.iter().enumerate() {
            let key = match &f.target {
                FaultTarget::Node(n) => {
                    if t.by_name(n).is_none() {
                        v.push(format!("faults[{i}].target: unknown node `{n}`"));
                    }
                    format!("node {n}")
                }
                FaultTarget::Link(a, b) => {
                    match (t.by_name(a), t.by_name(b)) {
                        (Some(x), Some(y)) if t.link_between(x, y).is_some() => {}
                        (Some(_), Some(_)) => {
                            v.push(format!("faults[{i}].target: no link between `{a}` and `{b}`"))
                        }
                        _ => v.push(format!("faults[{i}].target: unknown link endpoint `{a}`-`{b}`")),
                    }
                    let (x, y) = if a <= b { (a, b) } else { (b, a) };
                    format!("link {x}-{y}")
                }
            };
            per_target
                .entry(key)
                .or_default()
                .push((f.start_ms, f.start_ms + f.duration_ms));
        }
        for (target, mut spans) in per_target {
            spans.retain(|(s, e)| e > s);
            spans.sort();
            for w in spans.windows(2) {
                if w[1].0 < w[0].1 {
                    v.push(format!(
                        "faults: intervals [{}, {}) and [{}, {}) overlap on {target}",
                        w[0].0, w[0].1, w[1].0, w[1].1
                    ));
                }
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(ValidationError { violations: v })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TraceEvent {
    Injected,
    Forwarded,
    Buffered,
    Released,
    TimedOut,
    Nacked,
    Retransmitted,
    Delivered,
    AckDelivered,
    Lost,
    FdqmSent,
    FdrmSent,
    MarkedInactive,
    MarkedActive,
    FaultStart,
    FaultEnd,
    /// The horizon was reached with messages still unsettled.
    Truncated,
}

impl TraceEvent {
    pub const ALL: [TraceEvent; 17] = [
        TraceEvent::Injected,
        TraceEvent::Forwarded,
        TraceEvent::Buffered,
        TraceEvent::Released,
        TraceEvent::TimedOut,
        TraceEvent::Nacked,
        TraceEvent::Retransmitted,
        TraceEvent::Delivered,
        TraceEvent::AckDelivered,
        TraceEvent::Lost,
        TraceEvent::FdqmSent,
        TraceEvent::FdrmSent,
        TraceEvent::MarkedInactive,
        TraceEvent::MarkedActive,
        TraceEvent::FaultStart,
        TraceEvent::FaultEnd,
        TraceEvent::Truncated,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TraceEvent::Injected => "Injected",
            TraceEvent::Forwarded => "Forwarded",
            TraceEvent::Buffered => "Buffered",
            TraceEvent::Released => "Released",
            TraceEvent::TimedOut => "TimedOut",
            TraceEvent::Nacked => "Nacked",
            TraceEvent::Retransmitted => "Retransmitted",
            TraceEvent::Delivered => "Delivered",
            TraceEvent::AckDelivered => "AckDelivered",
            TraceEvent::Lost => "Lost",
            TraceEvent::FdqmSent => "FdqmSent",
            TraceEvent::FdrmSent => "FdrmSent",
            TraceEvent::MarkedInactive => "MarkedInactive",
            TraceEvent::MarkedActive => "MarkedActive",
            TraceEvent::FaultStart => "FaultStart",
            TraceEvent::FaultEnd => "FaultEnd",
            TraceEvent::Truncated => "Truncated",
        }
    }
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub time_ms: Millis,
    pub node: String,
    pub event: TraceEvent,
    /// Logical data message the record concerns (ACKs report their data message).
    pub msg_id: Option<MessageId>,
    /// Transmission attempt of a data frame, when the record concerns one.
    pub attempt: Option<u32>,
    pub detail: String,
}

pub const TRACE_HEADER: [&str; 5] = ["time_ms", "node", "event", "msg_id", "detail"];

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn write_csv<W: io::Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(TRACE_HEADER)?;
        for r in &self.records {
            let id = r.msg_id.map(|m| m.to_string()).unwrap_or_default();
            out.write_record([
                r.time_ms.to_string().as_str(),
                &r.node,
                r.event.as_str(),
                &id,
                &r.detail,
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("trace is UTF-8")
    }

    pub fn of(&self, event: TraceEvent) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(move |r| r.event == event)
    }

    pub fn first(&self, event: TraceEvent, node: &str) -> Option<&TraceRecord> {
        self.records
            .iter()
            .find(|r| r.event == event && r.node == node)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageStatus {
    Acknowledged,
    /// Delivered to its destination; no acknowledgment was expected.
    Delivered,
    /// Last attempt was lost and nothing will retransmit it.
    Lost,
    /// Still unsettled when the run stopped.
    InFlight,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageOutcome {
    pub id: MessageId,
    pub sender: String,
    pub destination: Address,
    pub frame_bits: u64,
    pub injected_at: Millis,
    pub attempts: u32,
    pub status: MessageStatus,
    pub delivered_at: Option<Millis>,
    pub acked_at: Option<Millis>,
    /// ACK time minus first transmission; one-way delay when no ACK is expected.
    pub latency_ms: Option<Millis>,
    /// Relative to first transmission: under in-network recovery the latest
    /// buffer deadline the message was given, under end-to-end
    /// retransmission the last retransmission time (or the first timer when
    /// none fired).
    pub timeout_ms: Option<Millis>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Trace,
    pub messages: Vec<MessageOutcome>,
    pub end_ms: Millis,
    pub truncated: bool,
    pub warnings: Vec<String>,
}

impl RunOutput {
    pub fn message(&self, id: MessageId) -> Option<&MessageOutcome> {
        self.messages.iter().find(|m| m.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Event {
    FaultStart(usize),
    FaultEnd(usize),
    Arrival {
        node: NodeId,
        from: NodeId,
        link: usize,
        frame: Frame,
        link_epoch: u64,
        node_epoch: u64,
    },
    DetectionTick(NodeId),
    ProbeTick { router: NodeId, neighbor: NodeId, token: u64 },
    BufferDeadline { router: NodeId, entry: EntryId },
    RetransmitCheck(NodeId),
    Inject(usize),
}

impl Event {
    fn class(&self) -> u8 {
        match self {
            Event::FaultStart(_) | Event::FaultEnd(_) => 0,
            Event::Arrival { frame, .. } if frame.kind().is_control() && frame.kind() != MessageKind::Nack => 2,
            Event::Arrival { .. } => 1,
            _ => 3,
        }
    }
}

#[derive(Debug)]
struct Scheduled {
    time: Millis,
    class: u8,
    seq: u64,
    event: Event,
}

impl Scheduled {
    fn key(&self) -> (Millis, u8, u64) {
        (self.time, self.class, self.seq)
    }
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other.key().cmp(&self.key())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Data,
    Ack { of: MessageId },
}

#[derive(Debug)]
struct MsgState {
    role: Role,
    expects_ack: bool,
    settled: bool,
    first_sent: Millis,
    last_deadline: Option<Millis>,
    outcome: Option<MessageOutcome>,
}

struct Sim<'a> {
    s: &'a Scenario,
    t: &'a Topology,
    now: Millis,
    seq: u64,
    queue: BinaryHeap<Scheduled>,
    routers: BTreeMap<NodeId, RouterState>,
    senders: BTreeMap<NodeId, SenderState>,
    node_down: Vec<bool>,
    node_epoch: Vec<u64>,
    queued_fdqm: Vec<Vec<NodeId>>,
    link_down: Vec<bool>,
    link_epoch: Vec<u64>,
    link_busy: Vec<[Millis; 2]>,
    msgs: BTreeMap<MessageId, MsgState>,
    next_logical: MessageId,
    checks: BTreeSet<(NodeId, Millis)>,
    open: usize,
    pending_faults: usize,
    pending_injections: usize,
    /// Data and NACK frames on the wire.
    frames_in_flight: usize,
    trace: Vec<TraceRecord>,
    warnings: Vec<String>,
}

/// Runs `scenario` to quiescence or its horizon.
pub fn run(scenario: &Scenario) -> Result<RunOutput, ValidationError> {
    scenario.validate()?;
    let mut sim = Sim::new(scenario);
    sim.setup();
    sim.run_loop();
    Ok(sim.finish())
}

impl<'a> Sim<'a> {
    fn new(s: &'a Scenario) -> Self {
        let t = &s.topology;
        let routers = t
            .routing_devices()
            .map(|id| {
                let table = t.routing_table(id).expect("routing device has a table").clone();
                (id, RouterState::new(id, t.address(id), table, s.protocol, s.params))
            })
            .collect();
        let n = t.nodes().len();
        let l = t.links().len();
        Sim {
            s,
            t,
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            routers,
            senders: BTreeMap::new(),
            node_down: vec![false; n],
            node_epoch: vec![0; n],
            queued_fdqm: vec![Vec::new(); n],
            link_down: t.links().iter().map(|l| !l.up).collect(),
            link_epoch: vec![0; l],
            link_busy: vec![[0; 2]; l],
            msgs: BTreeMap::new(),
            next_logical: 1,
            checks: BTreeSet::new(),
            open: 0,
            pending_faults: 0,
            pending_injections: 0,
            frames_in_flight: 0,
            trace: Vec::new(),
            warnings: Vec::new(),
        }
    }

    fn schedule(&mut self, time: Millis, event: Event) {
        debug_assert!(time >= self.now, "causality");
        self.seq += 1;
        self.queue.push(Scheduled {
            time,
            class: event.class(),
            seq: self.seq,
            event,
        });
    }

    fn record(
        &mut self,
        node: NodeId,
        event: TraceEvent,
        msg: Option<(MessageId, Option<u32>)>,
        detail: impl Into<String>,
    ) {
        let detail = detail.into();
        let (msg_id, attempt) = match msg {
            Some((m, a)) => (Some(m), a),
            None => (None, None),
        };
        let detail = match attempt {
            Some(a) if detail.is_empty() => format!("attempt={a}"),
            Some(a) => format!("attempt={a} {detail}"),
            None => detail,
        };
        self.trace.push(TraceRecord {
            time_ms: self.now,
            node: self.t.name(node).to_owned(),
            event,
            msg_id,
            attempt,
            detail,
        });
    }

    /// `(data message, attempt)` a frame belongs to. Attempts are only
    /// reported for data frames, not their ACKs.
    fn owner(&self, frame: &Frame) -> Option<(MessageId, Option<u32>)> {
        let logical = logical_of(frame.message.id);
        match self.msgs.get(&logical)?.role {
            Role::Data => Some((logical, Some(attempt_of(frame.message.id)))),
            Role::Ack { of } => Some((of, None)),
        }
    }

    fn frame_label(&self, frame: &Frame) -> &'static str {
        match frame.kind() {
            MessageKind::Nack => "NACK",
            MessageKind::Data => match self.msgs.get(&logical_of(frame.message.id)).map(|m| m.role) {
                Some(Role::Ack { .. }) => "ACK",
                _ => "DATA",
            },
            MessageKind::Fdqm => "FDQM",
            MessageKind::Fdrm => "FDRM",
        }
    }

    fn fault_nodes(&self, f: &FaultSpec) -> (Option<NodeId>, Option<usize>) {
        match &f.target {
            FaultTarget::Node(n) => (self.t.by_name(n), None),
            FaultTarget::Link(a, b) => {
                let (x, y) = (self.t.by_name(a).unwrap(), self.t.by_name(b).unwrap());
                (None, self.t.link_between(x, y))
            }
        }
    }

    fn setup(&mut self) {
        let s = self.s;
        for (i, f) in s.faults.iter().enumerate() {
            if f.duration_ms == 0 {
                continue;
            }
            if f.start_ms == 0 {
                self.begin_fault(i, true);
            } else {
                self.pending_faults += 1;
                self.schedule(f.start_ms, Event::FaultStart(i));
            }
            self.pending_faults += 1;
            self.schedule(f.start_ms + f.duration_ms, Event::FaultEnd(i));
        }
        let routers: Vec<NodeId> = self.routers.keys().copied().collect();
        for r in routers {
            self.schedule(0, Event::DetectionTick(r));
        }
        for (i, tr) in s.traffic.iter().enumerate() {
            for k in 0..tr.count {
                let offset = if tr.frame_rate == 0 {
                    0
                } else {
                    k as u64 * 1000 / tr.frame_rate as u64
                };
                self.pending_injections += 1;
                self.schedule(tr.start_ms + offset, Event::Inject(i));
            }
        }
    }

    fn run_loop(&mut self) {
        while let Some(next) = self.queue.pop() {
            if next.time > self.s.horizon_ms {
                break;
            }
            self.now = next.time;
            self.dispatch(next.event);
            if self.open == 0
                && self.pending_faults == 0
                && self.pending_injections == 0
                && self.frames_in_flight == 0
            {
                return;
            }
        }
        if self.open > 0 || self.pending_injections > 0 {
            self.now = self.now.max(self.s.horizon_ms);
            let who = self.t.nodes()[0].id;
            let detail = format!("horizon {} ms reached with {} unsettled messages", self.s.horizon_ms, self.open);
            self.warnings.push(detail.clone());
            self.record(who, TraceEvent::Truncated, None, detail);
        }
    }

    fn finish(self) -> RunOutput {
        let truncated = self.trace.iter().any(|r| r.event == TraceEvent::Truncated);
        let mut messages = Vec::new();
        for (id, m) in &self.msgs {
            let Some(mut o) = m.outcome.clone() else { continue };
            if !m.settled {
                o.status = MessageStatus::InFlight;
            }
            let sender = self.t.by_name(&o.sender).expect("sender exists");
            let rec = self.senders.get(&sender).and_then(|s| s.get(*id));
            if let Some(r) = rec {
                o.attempts = r.attempts;
            }
            o.timeout_ms = match self.s.protocol {
                Protocol::Ftn => m.last_deadline.map(|d| d - m.first_sent),
                Protocol::Conventional => Some(o.timeout_ms.unwrap_or(self.s.retransmit_timeout_ms)),
            };
            messages.push(o);
        }
        RunOutput {
            trace: Trace { records: self.trace },
            messages,
            end_ms: self.now,
            truncated,
            warnings: self.warnings,
        }
    }

    fn is_down(&self, n: NodeId) -> bool {
        self.node_down[n.index()]
    }

    fn dispatch(&mut self, event: Event) {
        match event {
            Event::FaultStart(i) => {
                self.pending_faults -= 1;
                self.begin_fault(i, false);
            }
            Event::FaultEnd(i) => {
                self.pending_faults -= 1;
                self.end_fault(i);
            }
            Event::Arrival {
                node,
                from,
                link,
                frame,
                link_epoch,
                node_epoch,
            } => self.arrive(node, from, link, frame, link_epoch, node_epoch),
            Event::DetectionTick(r) => {
                if !self.is_down(r) {
                    let a = self.routers.get_mut(&r).unwrap().on_detection_tick(self.now);
                    self.apply(r, a);
                }
                let period = self.s.params.qm_period_ms;
                self.schedule(self.now + period, Event::DetectionTick(r));
            }
            Event::ProbeTick {
                router,
                neighbor,
                token,
            } => {
                if !self.is_down(router) {
                    let a = self
                        .routers
                        .get_mut(&router)
                        .unwrap()
                        .on_probe_tick(neighbor, token, self.now);
                    self.apply(router, a);
                }
            }
            Event::BufferDeadline { router, entry } => {
                if self.is_down(router) {
                    return;
                }
                let a = self
                    .routers
                    .get_mut(&router)
                    .unwrap()
                    .on_buffer_timeout(entry, self.now);
                if let Some(Action::NackToSender { original }) = a.first() {
                    let owner = self.owner(original);
                    self.record(router, TraceEvent::TimedOut, owner, "");
                }
                self.apply(router, a);
            }
            Event::RetransmitCheck(n) => {
                self.checks.remove(&(n, self.now));
                if self.is_down(n) {
                    return;
                }
                let Some(sender) = self.senders.get_mut(&n) else { return };
                let due = sender.conventional_sender_step(self.now);
                for tx in due {
                    self.transmit_from_endpoint(n, tx);
                }
                self.arm_check(n);
            }
            Event::Inject(traffic) => {
                self.pending_injections -= 1;
                self.inject(traffic);
            }
        }
    }

    fn arm_check(&mut self, n: NodeId) {
        let next = self.senders.get(&n).and_then(|s| s.next_deadline());
        if let Some(at) = next {
            if self.checks.insert((n, at)) {
                self.schedule(at, Event::RetransmitCheck(n));
            }
        }
    }

    fn sender(&mut self, n: NodeId) -> &mut SenderState {
        let (addr, protocol, rto) = (self.t.address(n), self.s.protocol, self.s.retransmit_timeout_ms);
        self.senders
            .entry(n)
            .or_insert_with(|| SenderState::new(addr, protocol, rto))
    }

    fn inject(&mut self, traffic: usize) {
        let tr = &self.s.traffic[traffic];
        let from = self.t.by_name(&tr.sender).expect("validated");
        let dest = match &tr.destination {
            Destination::Node(n) => self.t.address(self.t.by_name(n).expect("validated")),
            Destination::Address(a) => *a,
        };
        let bits = tr.frame_bits;
        let logical = self.next_logical;
        self.next_logical += 1;
        let expects_ack = self.s.ack_enabled && map_destination(dest) == CastClass::Unicast;
        let payload = vec![0u8; ((bits / 8) as usize).saturating_sub(crate::wire::HEADER_LEN)];
        let msg = Message::data(self.t.address(from), dest, payload);
        self.msgs.insert(
            logical,
            MsgState {
                role: Role::Data,
                expects_ack,
                settled: false,
                first_sent: self.now,
                last_deadline: None,
                outcome: Some(MessageOutcome {
                    id: logical,
                    sender: tr.sender.clone(),
                    destination: dest,
                    frame_bits: bits,
                    injected_at: self.now,
                    attempts: 1,
                    status: MessageStatus::InFlight,
                    delivered_at: None,
                    acked_at: None,
                    latency_ms: None,
                    timeout_ms: None,
                }),
            },
        );
        self.open += 1;
        if self.is_down(from) {
            self.record(from, TraceEvent::Injected, Some((logical, Some(0))), "sender down");
            self.record(from, TraceEvent::Lost, Some((logical, Some(0))), "reason=sender-down");
            self.settle_lost(logical);
            return;
        }
        let now = self.now;
        let tx = self.sender(from).originate(logical, msg, bits, expects_ack, now);
        let label = format!("to {dest} bits={bits}");
        self.record(from, TraceEvent::Injected, Some((logical, Some(0))), label);
        self.originate(from, tx.frame);
        self.arm_check(from);
    }

    fn transmit_from_endpoint(&mut self, n: NodeId, tx: Transmit) {
        if tx.retransmission {
            let owner = self.owner(&tx.frame);
            let label = self.frame_label(&tx.frame);
            self.record(n, TraceEvent::Retransmitted, owner, if label == "ACK" { "ack" } else { "" });
            if let Some((m, _)) = owner {
                if let Some(o) = self.msgs.get_mut(&m).and_then(|s| s.outcome.as_mut()) {
                    if self.s.protocol == Protocol::Conventional {
                        o.timeout_ms = Some(self.now - o.injected_at);
                    }
                }
            }
        }
        self.originate(n, tx.frame);
    }

    /// Hands a locally originated frame to the device's own forwarding.
    fn originate(&mut self, n: NodeId, frame: Frame) {
        if self.routers.contains_key(&n) {
            let a = self.routers.get_mut(&n).unwrap().handle_message(frame, None, self.now);
            self.apply(n, a);
        } else if let Some(sw) = self.t.attachment(n) {
            self.send(n, sw, frame);
        }
    }

    fn send(&mut self, from: NodeId, to: NodeId, frame: Frame) {
        let event = match frame.kind() {
            MessageKind::Fdqm => TraceEvent::FdqmSent,
            MessageKind::Fdrm => TraceEvent::FdrmSent,
            _ => TraceEvent::Forwarded,
        };
        let owner = self.owner(&frame);
        let label = self.frame_label(&frame);
        let detail = match event {
            TraceEvent::Forwarded => format!("{label} to {}", self.t.name(to)),
            _ => format!("to {}", self.t.name(to)),
        };
        self.record(from, event, if event == TraceEvent::Forwarded { owner } else { None }, detail);

        let link = self.t.link_between(from, to).expect("neighbors share a link");
        if self.link_down[link] {
            if frame.kind().is_control() && frame.kind() != MessageKind::Nack {
                return;
            }
            self.record(from, TraceEvent::Lost, owner, format!("{label} reason=link-down"));
            self.lost(&frame);
            return;
        }
        let l = &self.t.links()[link];
        let dir = usize::from(from != l.a);
        let departure = self.now.max(self.link_busy[link][dir]);
        let td = frame.bits * 1000 / l.capacity_bps;
        self.link_busy[link][dir] = departure + td;
        let at = departure + td + self.s.switching_delay_ms + l.propagation_delay_ms;
        if !matches!(frame.kind(), MessageKind::Fdqm | MessageKind::Fdrm) {
            self.frames_in_flight += 1;
        }
        let ev = Event::Arrival {
            node: to,
            from,
            link,
            frame,
            link_epoch: self.link_epoch[link],
            node_epoch: self.node_epoch[to.index()],
        };
        self.schedule(at, ev);
    }

    fn arrive(
        &mut self,
        node: NodeId,
        from: NodeId,
        link: usize,
        frame: Frame,
        link_epoch: u64,
        node_epoch: u64,
    ) {
        let detection = matches!(frame.kind(), MessageKind::Fdqm | MessageKind::Fdrm);
        if !detection {
            self.frames_in_flight -= 1;
        }
        if self.link_down[link] || self.link_epoch[link] != link_epoch {
            if !detection {
                let owner = self.owner(&frame);
                let label = self.frame_label(&frame);
                self.record(node, TraceEvent::Lost, owner, format!("{label} reason=link-failed"));
                self.lost(&frame);
            }
            return;
        }
        if self.is_down(node) && frame.kind() == MessageKind::Fdqm {
            self.queued_fdqm[node.index()].push(from);
            return;
        }
        if self.is_down(node) || self.node_epoch[node.index()] != node_epoch {
            if !detection {
                let owner = self.owner(&frame);
                let label = self.frame_label(&frame);
                self.record(node, TraceEvent::Lost, owner, format!("{label} reason=node-down"));
                self.lost(&frame);
            }
            return;
        }
        match self.t.node(node).kind {
            NodeKind::GroupServer | NodeKind::Router => {
                let iface = self
                    .routers[&node]
                    .table()
                    .direct_to(from)
                    .map(|e| e.interface);
                let a = self.routers.get_mut(&node).unwrap().handle_message(frame, iface, self.now);
                self.apply(node, a);
            }
            NodeKind::Switch => self.switch(node, from, frame),
            NodeKind::Host => match frame.kind() {
                MessageKind::Fdqm => self.reply_fdrm(node, from),
                MessageKind::Fdrm => {}
                _ => {
                    let dest = frame.message.destination;
                    if dest == self.t.address(node) || map_destination(dest) != CastClass::Unicast {
                        self.endpoint_receive(node, frame);
                    } else {
                        let owner = self.owner(&frame);
                        self.record(node, TraceEvent::Lost, owner, "reason=misdelivered");
                        self.lost(&frame);
                    }
                }
            },
        }
    }

    fn reply_fdrm(&mut self, node: NodeId, to: NodeId) {
        let m = Message::control(MessageKind::Fdrm, self.t.address(node), self.t.address(to));
        self.send(node, to, Frame::new(m));
    }

    fn switch(&mut self, sw: NodeId, from: NodeId, frame: Frame) {
        match frame.kind() {
            MessageKind::Fdqm => self.reply_fdrm(sw, from),
            MessageKind::Fdrm => {}
            _ => {
                let dest = frame.message.destination;
                if map_destination(dest) != CastClass::Unicast {
                    let ports: Vec<NodeId> = self
                        .t
                        .neighbors(sw)
                        .iter()
                        .map(|&(n, _)| n)
                        .filter(|&n| n != from)
                        .collect();
                    for p in ports {
                        self.send(sw, p, frame.clone());
                    }
                    return;
                }
                match self.t.switch_port(sw, dest) {
                    Some(p) if p != from => self.send(sw, p, frame),
                    _ => {
                        let owner = self.owner(&frame);
                        self.record(sw, TraceEvent::Lost, owner, "reason=no-route");
                        self.lost(&frame);
                    }
                }
            }
        }
    }

    /// A data frame or NACK reached the device it is addressed to.
    fn endpoint_receive(&mut self, n: NodeId, frame: Frame) {
        let now = self.now;
        match frame.kind() {
            MessageKind::Nack => {
                let result = self.sender(n).ftn_sender_on_nack(&frame.message, now);
                match result {
                    Ok(tx) => self.transmit_from_endpoint(n, tx),
                    Err(e) => {
                        let w = format!("{now} ms {}: {e} (tag {})", self.t.name(n), frame.message.id);
                        self.warnings.push(w);
                    }
                }
            }
            MessageKind::Data => {
                let logical = logical_of(frame.message.id);
                let Some(state) = self.msgs.get(&logical) else { return };
                match state.role {
                    Role::Data => {
                        let expects_ack = state.expects_ack;
                        let attempt = attempt_of(frame.message.id);
                        self.record(n, TraceEvent::Delivered, Some((logical, Some(attempt))), "");
                        let st = self.msgs.get_mut(&logical).unwrap();
                        let o = st.outcome.as_mut().unwrap();
                        if o.delivered_at.is_none() {
                            o.delivered_at = Some(now);
                        }
                        if !expects_ack && !st.settled {
                            st.settled = true;
                            o.status = MessageStatus::Delivered;
                            o.latency_ms = Some(now - st.first_sent);
                            self.open -= 1;
                            let origin = self.t.by_name(&o.sender.clone()).unwrap();
                            if let Some(s) = self.senders.get_mut(&origin) {
                                s.on_ack(logical);
                            }
                        }
                        if expects_ack {
                            self.send_ack(n, logical, frame.message.sender);
                        }
                    }
                    Role::Ack { of } => {
                        let acked = self.sender(n).on_ack(of);
                        if acked.is_none() {
                            return;
                        }
                        let st = self.msgs.get_mut(&of).unwrap();
                        let latency = now - st.first_sent;
                        let o = st.outcome.as_mut().unwrap();
                        o.acked_at = Some(now);
                        o.latency_ms = Some(latency);
                        o.status = MessageStatus::Acknowledged;
                        if !st.settled {
                            st.settled = true;
                            self.open -= 1;
                        }
                        self.record(n, TraceEvent::AckDelivered, Some((of, None)), format!("latency_ms={latency}"));
                    }
                }
            }
            _ => {}
        }
    }

    fn send_ack(&mut self, n: NodeId, of: MessageId, to: Address) {
        let logical = self.next_logical;
        self.next_logical += 1;
        self.msgs.insert(
            logical,
            MsgState {
                role: Role::Ack { of },
                expects_ack: false,
                settled: true,
                first_sent: self.now,
                last_deadline: None,
                outcome: None,
            },
        );
        let m = Message::data(self.t.address(n), to, Vec::new());
        let bits = 8 * m.encoded_len() as u64;
        let now = self.now;
        let tx = self.sender(n).originate(logical, m, bits, false, now);
        self.originate(n, tx.frame);
    }

    /// A data frame vanished. Settles its message when nothing will resend it.
    fn lost(&mut self, frame: &Frame) {
        if frame.kind() != MessageKind::Data {
            return;
        }
        let logical = logical_of(frame.message.id);
        let Some(st) = self.msgs.get(&logical) else { return };
        if st.role != Role::Data || st.settled {
            return;
        }
        let retries = st.expects_ack && self.s.protocol == Protocol::Conventional;
        if !retries && !st.expects_ack {
            self.settle_lost(logical);
        }
    }

    fn settle_lost(&mut self, logical: MessageId) {
        if let Some(st) = self.msgs.get_mut(&logical) {
            if !st.settled {
                st.settled = true;
                if let Some(o) = st.outcome.as_mut() {
                    o.status = MessageStatus::Lost;
                }
                self.open -= 1;
            }
        }
    }

    fn apply(&mut self, node: NodeId, actions: Vec<Action>) {
        for a in actions {
            match a {
                Action::Send { frame, hop } => self.send(node, hop.neighbor, frame),
                Action::Deliver(frame) => self.endpoint_receive(node, frame),
                Action::StoreBuffered(e) => {
                    let owner = self.owner(&e.frame);
                    let label = self.frame_label(&e.frame);
                    let detail = format!(
                        "{label} via {} deadline={} bits={}",
                        self.t.name(e.faulty_next_hop),
                        e.deadline,
                        e.frame.bits
                    );
                    self.record(node, TraceEvent::Buffered, owner, detail);
                    if let Some((m, Some(_))) = owner {
                        if let Some(st) = self.msgs.get_mut(&m) {
                            st.last_deadline = Some(e.deadline);
                        }
                    }
                    self.schedule(e.deadline, Event::BufferDeadline { router: node, entry: e.id });
                }
                Action::ReleaseBuffered { entries, neighbor } => {
                    for e in entries {
                        let owner = self.owner(&e.frame);
                        let held = self.now - e.stored_at;
                        self.record(
                            node,
                            TraceEvent::Released,
                            owner,
                            format!("to {} held_ms={held}", self.t.name(neighbor)),
                        );
                    }
                }
                Action::NackToSender { original } => {
                    let owner = self.owner(&original);
                    let label = self.frame_label(&original);
                    let detail = format!("{label} to {}", original.message.sender);
                    self.record(node, TraceEvent::Nacked, owner, detail);
                }
                Action::DropSilently { frame, reason } => {
                    if matches!(frame.kind(), MessageKind::Fdqm | MessageKind::Fdrm) {
                        continue;
                    }
                    let owner = self.owner(&frame);
                    let label = self.frame_label(&frame);
                    self.record(node, TraceEvent::Lost, owner, format!("{label} reason={reason}"));
                    self.lost(&frame);
                }
                Action::MarkActive { neighbor, changed } => {
                    if changed {
                        self.record(node, TraceEvent::MarkedActive, None, self.t.name(neighbor).to_owned());
                    }
                }
                Action::MarkInactive(neighbor) => {
                    self.record(node, TraceEvent::MarkedInactive, None, self.t.name(neighbor).to_owned());
                }
                Action::ScheduleProbe { neighbor, at, token } => {
                    self.schedule(at, Event::ProbeTick { router: node, neighbor, token });
                }
            }
        }
    }

    fn begin_fault(&mut self, i: usize, preexisting: bool) {
        let f = &self.s.faults[i];
        let (node, link) = self.fault_nodes(f);
        let anchor = node.unwrap_or_else(|| self.t.links()[link.unwrap()].a);
        let label = format!("{}{}", f.target, if preexisting { " (in place at start)" } else { "" });
        self.record(anchor, TraceEvent::FaultStart, None, label);
        if let Some(n) = node {
            if self.node_down[n.index()] {
                return;
            }
            self.node_down[n.index()] = true;
            self.node_epoch[n.index()] += 1;
            self.queued_fdqm[n.index()].clear();
            if let Some(r) = self.routers.get_mut(&n) {
                let lost = r.fail();
                for e in lost {
                    let owner = self.owner(&e.frame);
                    self.record(n, TraceEvent::Lost, owner, "reason=buffer-lost");
                    self.lost(&e.frame);
                }
            }
            if preexisting {
                let nbrs: Vec<NodeId> = self.t.neighbors(n).iter().map(|&(x, _)| x).collect();
                for nb in nbrs {
                    self.assume_down(nb, n);
                }
            }
        }
        if let Some(l) = link {
            self.link_down[l] = true;
            self.link_epoch[l] += 1;
            if preexisting {
                let (a, b) = (self.t.links()[l].a, self.t.links()[l].b);
                self.assume_down(a, b);
                self.assume_down(b, a);
            }
        }
    }

    fn assume_down(&mut self, router: NodeId, neighbor: NodeId) {
        if let Some(r) = self.routers.get_mut(&router) {
            let a = r.assume_down(neighbor, self.now);
            self.apply(router, a);
        }
    }

    fn end_fault(&mut self, i: usize) {
        let f = &self.s.faults[i];
        let (node, link) = self.fault_nodes(f);
        let anchor = node.unwrap_or_else(|| self.t.links()[link.unwrap()].a);
        let healthy = match (node, link) {
            (Some(n), _) => !self.node_down[n.index()],
            (_, Some(l)) => !self.link_down[l],
            _ => true,
        };
        if healthy {
            self.record(anchor, TraceEvent::FaultEnd, None, format!("{} no-op: target healthy", f.target));
            return;
        }
        self.record(anchor, TraceEvent::FaultEnd, None, f.target.to_string());
        if let Some(l) = link {
            self.link_down[l] = false;
        }
        if let Some(n) = node {
            self.node_down[n.index()] = false;
            self.node_epoch[n.index()] += 1;
            let queued = std::mem::take(&mut self.queued_fdqm[n.index()]);
            for from in queued {
                let q = Frame::new(Message::control(
                    MessageKind::Fdqm,
                    self.t.address(from),
                    self.t.address(n),
                ));
                match self.t.node(n).kind {
                    NodeKind::GroupServer | NodeKind::Router => {
                        let iface = self.routers[&n].table().direct_to(from).map(|e| e.interface);
                        let a = self.routers.get_mut(&n).unwrap().handle_message(q, iface, self.now);
                        self.apply(n, a);
                    }
                    _ => self.reply_fdrm(n, from),
                }
            }
        }
    }
}

//! Fault detection and in-network recovery as pure state machines.
//!
//! [`RouterState`] runs on every routing device: it probes directly connected
//! neighbors with FDQM frames, marks silent neighbors inactive, and (under
//! [`Protocol::Ftn`]) buffers data whose next hop is inactive until either the
//! neighbor answers again or the buffer deadline passes, in which case the
//! original sender is NACKed. [`SenderState`] runs on every endpoint that
//! originates data.
//!
//! Transition functions take the current time and return [`Action`]s; they
//! never schedule or perform I/O themselves.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{
    map_destination, CastClass, ConnectionStatus, Hop, Interface, Lookup, NodeId, RoutingTable,
};
use crate::wire::{Address, Frame, Message, MessageId, MessageKind};

/// Simulation time in milliseconds.
pub type Millis = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Detection plus in-network buffering and NACKs.
    Ftn,
    /// Detection only; routers drop and senders retransmit on timeout.
    Conventional,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Ftn => "ftn",
            Protocol::Conventional => "conventional",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FtnParams {
    /// Detection and probe period.
    pub qm_period_ms: Millis,
    /// How long a buffered frame waits for its next hop to recover.
    pub buffer_timeout_ms: Millis,
    pub buffer_capacity_bits: u64,
}

/// Recovery buffer used when a scenario does not size one: ten times a
/// 20-packet loss of 500-bit frames.
pub const DEFAULT_BUFFER_BITS: u64 = 100_000;

impl Default for FtnParams {
    fn default() -> Self {
        FtnParams {
            qm_period_ms: 500,
            buffer_timeout_ms: 1000,
            buffer_capacity_bits: DEFAULT_BUFFER_BITS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParamsError {
    #[error("`{0}` must be greater than zero")]
    Zero(&'static str),
}

impl FtnParams {
    pub fn validate(&self) -> Result<(), ParamsError> {
        if self.qm_period_ms == 0 {
            return Err(ParamsError::Zero("qm_period_ms"));
        }
        if self.buffer_timeout_ms == 0 {
            return Err(ParamsError::Zero("buffer_timeout_ms"));
        }
        if self.buffer_capacity_bits == 0 {
            return Err(ParamsError::Zero("buffer_capacity_bits"));
        }
        Ok(())
    }
}

pub type EntryId = u64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BufferEntry {
    pub id: EntryId,
    pub frame: Frame,
    pub stored_at: Millis,
    pub deadline: Millis,
    pub faulty_next_hop: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DropReason {
    NoRoute,
    /// Conventional routers discard frames for an inactive next hop.
    InactiveNextHop,
    /// A NACK whose way back to the sender is itself inactive.
    NackUnroutable,
    /// Detection frame from a device that is not a direct neighbor.
    NotNeighbor,
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DropReason::NoRoute => "no-route",
            DropReason::InactiveNextHop => "inactive-next-hop",
            DropReason::NackUnroutable => "nack-unroutable",
            DropReason::NotNeighbor => "not-neighbor",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Send { frame: Frame, hop: Hop },
    /// The frame is addressed to this device.
    Deliver(Frame),
    StoreBuffered(BufferEntry),
    ReleaseBuffered { entries: Vec<BufferEntry>, neighbor: NodeId },
    /// A buffered or unbufferable frame is being refused back to its sender.
    /// Followed by the `Send` or `Deliver` carrying the NACK itself.
    NackToSender { original: Frame },
    DropSilently { frame: Frame, reason: DropReason },
    MarkActive { neighbor: NodeId, changed: bool },
    MarkInactive(NodeId),
    /// Run [`RouterState::on_probe_tick`] for `neighbor` at `at` with `token`.
    ScheduleProbe { neighbor: NodeId, at: Millis, token: u64 },
}

/// The NACK returned for `original`: it travels from the original
/// destination's side back to the original sender and keeps the
/// correlation id. Control frames carry no payload, so the swapped header
/// is all the sender needs to match it.
pub fn nack_for(original: &Message) -> Frame {
    Frame::new(
        Message::control(MessageKind::Nack, original.destination, original.sender)
            .with_id(original.id),
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouterState {
    id: NodeId,
    address: Address,
    protocol: Protocol,
    params: FtnParams,
    table: RoutingTable,
    buffer: VecDeque<BufferEntry>,
    remaining_bits: u64,
    /// Live probe schedule per inactive neighbor, keyed to its token.
    probes: BTreeMap<NodeId, u64>,
    /// Send time of the oldest unanswered FDQM per neighbor.
    awaiting: BTreeMap<NodeId, Millis>,
    next_entry: EntryId,
    next_token: u64,
}

impl RouterState {
    pub fn new(
        id: NodeId,
        address: Address,
        table: RoutingTable,
        protocol: Protocol,
        params: FtnParams,
    ) -> Self {
        RouterState {
            id,
            address,
            protocol,
            params,
            table,
            buffer: VecDeque::new(),
            remaining_bits: params.buffer_capacity_bits,
            probes: BTreeMap::new(),
            awaiting: BTreeMap::new(),
            next_entry: 1,
            next_token: 1,
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn address(&self) -> Address {
        self.address
    }

    pub fn table(&self) -> &RoutingTable {
        &self.table
    }

    pub fn params(&self) -> &FtnParams {
        &self.params
    }

    pub fn buffer(&self) -> impl ExactSizeIterator<Item = &BufferEntry> {
        self.buffer.iter()
    }

    pub fn remaining_bits(&self) -> u64 {
        self.remaining_bits
    }

    pub fn buffered_bits(&self) -> u64 {
        self.buffer.iter().map(|e| e.frame.bits).sum()
    }

    pub fn is_probing(&self, neighbor: NodeId) -> bool {
        self.probes.contains_key(&neighbor)
    }

    fn neighbor_address(&self, neighbor: NodeId) -> Option<Address> {
        self.table.direct_to(neighbor).map(|e| e.network_address)
    }

    fn neighbor_by_address(&self, a: Address) -> Option<(NodeId, Interface)> {
        self.table
            .direct_entries()
            .find(|e| e.network_address == a)
            .map(|e| (e.via, e.interface))
    }

    fn control_to(&self, kind: MessageKind, neighbor: NodeId) -> Option<Action> {
        let dest = self.neighbor_address(neighbor)?;
        let iface = self.table.direct_to(neighbor)?.interface;
        Some(Action::Send {
            frame: Frame::new(Message::control(kind, self.address, dest)),
            hop: Hop {
                interface: iface,
                neighbor,
            },
        })
    }

    fn start_probe(&mut self, neighbor: NodeId, now: Millis, out: &mut Vec<Action>) {
        if self.probes.contains_key(&neighbor) {
            return;
        }
        let token = self.next_token;
        self.next_token += 1;
        self.probes.insert(neighbor, token);
        out.push(Action::ScheduleProbe {
            neighbor,
            at: now,
            token,
        });
    }

    fn mark_inactive(&mut self, neighbor: NodeId, now: Millis, out: &mut Vec<Action>) {
        self.table.set_status(neighbor, ConnectionStatus::Inactive);
        self.awaiting.remove(&neighbor);
        out.push(Action::MarkInactive(neighbor));
        self.start_probe(neighbor, now, out);
    }

    /// Starts from the knowledge that `neighbor` is already down, as for
    /// faults in place before the run begins.
    pub fn assume_down(&mut self, neighbor: NodeId, now: Millis) -> Vec<Action> {
        let mut out = Vec::new();
        if self.table.direct_to(neighbor).is_some() {
            self.mark_inactive(neighbor, now, &mut out);
        }
        out
    }

    fn mark_active(&mut self, neighbor: NodeId, now: Millis, out: &mut Vec<Action>) {
        let changed = self
            .table
            .set_status(neighbor, ConnectionStatus::Active)
            .unwrap_or(0)
            > 0;
        self.awaiting.remove(&neighbor);
        self.probes.remove(&neighbor);
        out.push(Action::MarkActive { neighbor, changed });

        let (released, kept): (Vec<_>, Vec<_>) = self
            .buffer
            .drain(..)
            .partition(|e| e.faulty_next_hop == neighbor);
        self.buffer = kept.into();
        if released.is_empty() {
            return;
        }
        self.remaining_bits += released.iter().map(|e| e.frame.bits).sum::<u64>();
        out.push(Action::ReleaseBuffered {
            entries: released.clone(),
            neighbor,
        });
        for e in released {
            self.forward(e.frame, None, now, out);
        }
    }

    /// Periodic detection round over every neighbor believed up.
    pub fn on_detection_tick(&mut self, now: Millis) -> Vec<Action> {
        let mut out = Vec::new();
        let neighbors: Vec<(NodeId, ConnectionStatus)> = self
            .table
            .direct_entries()
            .map(|e| (e.via, e.connection_status))
            .collect();
        for (nb, status) in neighbors {
            if status == ConnectionStatus::Inactive {
                continue;
            }
            match self.awaiting.get(&nb) {
                Some(&sent) if now >= sent + self.params.qm_period_ms => {
                    self.mark_inactive(nb, now, &mut out);
                }
                _ => {
                    out.extend(self.control_to(MessageKind::Fdqm, nb));
                    self.awaiting.entry(nb).or_insert(now);
                }
            }
        }
        out
    }

    /// Probe an inactive neighbor and reschedule; ends once it is active.
    pub fn on_probe_tick(&mut self, neighbor: NodeId, token: u64, now: Millis) -> Vec<Action> {
        if self.probes.get(&neighbor) != Some(&token) {
            return Vec::new();
        }
        if self.table.status_of(neighbor) != Some(ConnectionStatus::Inactive) {
            self.probes.remove(&neighbor);
            return Vec::new();
        }
        let mut out: Vec<Action> = self.control_to(MessageKind::Fdqm, neighbor).into_iter().collect();
        out.push(Action::ScheduleProbe {
            neighbor,
            at: now + self.params.qm_period_ms,
            token,
        });
        out
    }

    /// Processes a frame received on `arrival`, or originated locally when
    /// `arrival` is `None`.
    pub fn handle_message(&mut self, frame: Frame, arrival: Option<Interface>, now: Millis) -> Vec<Action> {
        let mut out = Vec::new();
        match frame.kind() {
            MessageKind::Fdqm | MessageKind::Fdrm => {
                let Some((nb, iface)) = self.neighbor_by_address(frame.message.sender) else {
                    out.push(Action::DropSilently {
                        frame,
                        reason: DropReason::NotNeighbor,
                    });
                    return out;
                };
                if frame.kind() == MessageKind::Fdqm {
                    let reply = Message::control(MessageKind::Fdrm, self.address, frame.message.sender);
                    out.push(Action::Send {
                        frame: Frame::new(reply),
                        hop: Hop {
                            interface: arrival.unwrap_or(iface),
                            neighbor: nb,
                        },
                    });
                }
                self.mark_active(nb, now, &mut out);
            }
            MessageKind::Data | MessageKind::Nack => self.forward(frame, arrival, now, &mut out),
        }
        out
    }

    fn forward(&mut self, frame: Frame, arrival: Option<Interface>, now: Millis, out: &mut Vec<Action>) {
        let dest = frame.message.destination;
        if dest == self.address {
            out.push(Action::Deliver(frame));
            return;
        }
        match map_destination(dest) {
            CastClass::Unicast => match self.table.next_hop(dest) {
                Err(_) => {
                    let reason = if frame.kind() == MessageKind::Nack {
                        DropReason::NackUnroutable
                    } else {
                        DropReason::NoRoute
                    };
                    out.push(Action::DropSilently { frame, reason });
                }
                Ok(Lookup::Active(hop)) => out.push(Action::Send { frame, hop }),
                Ok(Lookup::Inactive(hop)) => match (self.protocol, frame.kind()) {
                    (Protocol::Ftn, MessageKind::Data) => {
                        out.extend(self.store_on_fault(frame, hop.neighbor, now))
                    }
                    (_, MessageKind::Nack) => out.push(Action::DropSilently {
                        frame,
                        reason: DropReason::NackUnroutable,
                    }),
                    _ => out.push(Action::DropSilently {
                        frame,
                        reason: DropReason::InactiveNextHop,
                    }),
                },
            },
            cast => {
                for hop in self.table.find_interfaces(dest, cast, arrival) {
                    out.push(Action::Send {
                        frame: frame.clone(),
                        hop,
                    });
                }
            }
        }
    }

    /// Buffers `frame` for the inactive `faulty` next hop, or NACKs it when
    /// the buffer cannot hold it.
    pub fn store_on_fault(&mut self, frame: Frame, faulty: NodeId, now: Millis) -> Vec<Action> {
        let mut out = Vec::new();
        if frame.bits > self.remaining_bits {
            self.refuse(frame, now, &mut out);
            return out;
        }
        let entry = BufferEntry {
            id: self.next_entry,
            stored_at: now,
            deadline: now + self.params.buffer_timeout_ms,
            faulty_next_hop: faulty,
            frame,
        };
        self.next_entry += 1;
        self.remaining_bits -= entry.frame.bits;
        self.buffer.push_back(entry.clone());
        out.push(Action::StoreBuffered(entry));
        self.start_probe(faulty, now, &mut out);
        out
    }

    fn refuse(&mut self, frame: Frame, now: Millis, out: &mut Vec<Action>) {
        let nack = nack_for(&frame.message);
        out.push(Action::NackToSender { original: frame });
        self.forward(nack, None, now, out);
    }

    /// Deadline for buffered entry `entry`. Stale ids are a no-op.
    pub fn on_buffer_timeout(&mut self, entry: EntryId, now: Millis) -> Vec<Action> {
        let mut out = Vec::new();
        let Some(pos) = self
            .buffer
            .iter()
            .position(|e| e.id == entry && now >= e.deadline)
        else {
            return out;
        };
        let e = self.buffer.remove(pos).expect("position is in range");
        self.remaining_bits += e.frame.bits;
        self.refuse(e.frame, now, &mut out);
        out
    }

    /// The device went down: buffered frames and detection state are lost.
    pub fn fail(&mut self) -> Vec<BufferEntry> {
        self.awaiting.clear();
        self.probes.clear();
        self.remaining_bits = self.params.buffer_capacity_bits;
        self.buffer.drain(..).collect()
    }
}

/// Packs a logical message id and an attempt number into one correlation tag.
pub fn attempt_tag(logical: MessageId, attempt: u32) -> MessageId {
    (logical << 16) | attempt as MessageId
}

pub fn logical_of(tag: MessageId) -> MessageId {
    tag >> 16
}

pub fn attempt_of(tag: MessageId) -> u32 {
    (tag & 0xffff) as u32
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InFlight {
    pub logical: MessageId,
    /// Current attempt; its id is the attempt tag.
    pub frame: Frame,
    pub attempts: u32,
    pub first_sent: Millis,
    pub last_sent: Millis,
    pub retransmit_at: Option<Millis>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transmit {
    pub logical: MessageId,
    pub frame: Frame,
    pub retransmission: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum NackIgnored {
    #[error("no in-flight message matches the NACK")]
    Uncorrelated,
    #[error("NACK refers to an earlier attempt")]
    Stale,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SenderState {
    address: Address,
    protocol: Protocol,
    /// `None` disables end-to-end retransmission.
    rto_ms: Option<Millis>,
    inflight: BTreeMap<MessageId, InFlight>,
}

/// Conventional end-to-end retransmission timeout: twice the healthy
/// 600 ms round trip of the reference path.
pub const DEFAULT_RTO_MS: Millis = 1200;

impl SenderState {
    pub fn new(address: Address, protocol: Protocol, rto_ms: Millis) -> Self {
        let rto_ms = match protocol {
            Protocol::Conventional => Some(rto_ms),
            Protocol::Ftn => None,
        };
        SenderState {
            address,
            protocol,
            rto_ms,
            inflight: BTreeMap::new(),
        }
    }

    pub fn inflight(&self) -> impl Iterator<Item = &InFlight> {
        self.inflight.values()
    }

    pub fn get(&self, logical: MessageId) -> Option<&InFlight> {
        self.inflight.get(&logical)
    }

    /// First transmission of `message` under `logical`. `retransmit` arms
    /// the end-to-end timer (data frames expecting an ACK).
    pub fn originate(
        &mut self,
        logical: MessageId,
        message: Message,
        bits: u64,
        retransmit: bool,
        now: Millis,
    ) -> Transmit {
        let frame = Frame::with_bits(message.with_id(attempt_tag(logical, 0)), bits);
        let retransmit_at = self.rto_ms.filter(|_| retransmit).map(|rto| now + rto);
        self.inflight.insert(
            logical,
            InFlight {
                logical,
                frame: frame.clone(),
                attempts: 1,
                first_sent: now,
                last_sent: now,
                retransmit_at,
            },
        );
        Transmit {
            logical,
            frame,
            retransmission: false,
        }
    }

    fn resend(&mut self, logical: MessageId, now: Millis) -> Option<Transmit> {
        let rto = self.rto_ms;
        let f = self.inflight.get_mut(&logical)?;
        f.frame.message.id = attempt_tag(logical, f.attempts);
        f.attempts += 1;
        f.last_sent = now;
        if f.retransmit_at.is_some() {
            f.retransmit_at = rto.map(|r| now + r);
        }
        Some(Transmit {
            logical,
            frame: f.frame.clone(),
            retransmission: true,
        })
    }

    /// Earliest pending end-to-end retransmission.
    pub fn next_deadline(&self) -> Option<Millis> {
        self.inflight.values().filter_map(|f| f.retransmit_at).min()
    }

    /// Retransmits every unacknowledged message whose timer has expired.
    pub fn conventional_sender_step(&mut self, now: Millis) -> Vec<Transmit> {
        let due: Vec<MessageId> = self
            .inflight
            .values()
            .filter(|f| f.retransmit_at.is_some_and(|t| now >= t))
            .map(|f| f.logical)
            .collect();
        due.into_iter().filter_map(|l| self.resend(l, now)).collect()
    }

    /// Retransmits immediately when `nack` matches the current attempt.
    pub fn ftn_sender_on_nack(&mut self, nack: &Message, now: Millis) -> Result<Transmit, NackIgnored> {
        let logical = logical_of(nack.id);
        let f = self.inflight.get(&logical).ok_or(NackIgnored::Uncorrelated)?;
        if nack.destination != self.address || nack.sender != f.frame.message.destination {
            return Err(NackIgnored::Uncorrelated);
        }
        if f.frame.message.id != nack.id {
            return Err(NackIgnored::Stale);
        }
        Ok(self.resend(logical, now).expect("in flight"))
    }

    /// Closes `logical`; returns its record if it was still open.
    pub fn on_ack(&mut self, logical: MessageId) -> Option<InFlight> {
        self.inflight.remove(&logical)
    }

    pub fn protocol(&self) -> Protocol {
        self.protocol
    }
}

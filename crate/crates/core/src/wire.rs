//! Frame layout shared by every device in the network.
//!
//! ```text
//!  0        1                 5                 9
//! +--------+-----------------+-----------------+----------------------+
//! |  flag  | sender (4 oct.) |  dest (4 oct.)  | payload (0..=1500 B) |
//! +--------+-----------------+-----------------+----------------------+
//! ```
//!
//! Flag bits are numbered from the most significant bit:
//!
//! | bit | mask   | meaning                                         |
//! |-----|--------|-------------------------------------------------|
//! | 0   | `0x80` | 1 = data frame, 0 = control frame               |
//! | 1   | `0x40` | control only: 0 = FDQM (query), 1 = FDRM (report) |
//! | 2   | `0x20` | control only: 1 = NACK (overrides bit 1)        |
//!
//! All other bits are written as zero and ignored when read. Control frames
//! never carry a payload.

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const HEADER_LEN: usize = 9;
pub const MAX_PAYLOAD: usize = 1500;
pub const MAX_FRAME_LEN: usize = HEADER_LEN + MAX_PAYLOAD;

const DATA_BIT: u8 = 0x80;
const REPORT_BIT: u8 = 0x40;
const NACK_BIT: u8 = 0x20;

/// A four-octet device address, rendered in dotted-decimal form.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct Address(pub [u8; 4]);

impl Address {
    pub const BROADCAST: Address = Address([255, 255, 255, 255]);

    pub const fn new(a: u8, b: u8, c: u8, d: u8) -> Self {
        Address([a, b, c, d])
    }

    pub const fn octets(self) -> [u8; 4] {
        self.0
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c, d] = self.0;
        write!(f, "{a}.{b}.{c}.{d}")
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid dotted-decimal address `{0}`")]
pub struct AddressParseError(pub String);

impl FromStr for Address {
    type Err = AddressParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse::<Ipv4Addr>()
            .map(|ip| Address(ip.octets()))
            .map_err(|_| AddressParseError(s.to_owned()))
    }
}

impl From<Address> for String {
    fn from(a: Address) -> String {
        a.to_string()
    }
}

impl TryFrom<String> for Address {
    type Error = AddressParseError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    Data,
    /// Fault detection query.
    Fdqm,
    /// Fault detection report, the reply to an [`MessageKind::Fdqm`].
    Fdrm,
    Nack,
}

impl MessageKind {
    pub fn is_control(self) -> bool {
        !matches!(self, MessageKind::Data)
    }

    /// Canonical flag byte for this kind; unused bits are zero.
    pub fn flag(self) -> u8 {
        match self {
            MessageKind::Data => DATA_BIT,
            MessageKind::Fdqm => 0,
            MessageKind::Fdrm => REPORT_BIT,
            MessageKind::Nack => NACK_BIT,
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MessageKind::Data => "DATA",
            MessageKind::Fdqm => "FDQM",
            MessageKind::Fdrm => "FDRM",
            MessageKind::Nack => "NACK",
        })
    }
}

/// Classifies a flag byte. Total: every byte maps to some kind.
pub fn classify_flag(flag: u8) -> MessageKind {
    if flag & DATA_BIT != 0 {
        MessageKind::Data
    } else if flag & NACK_BIT != 0 {
        MessageKind::Nack
    } else if flag & REPORT_BIT != 0 {
        MessageKind::Fdrm
    } else {
        MessageKind::Fdqm
    }
}

/// Simulation-side correlation tag. Never serialized.
pub type MessageId = u64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub kind: MessageKind,
    pub sender: Address,
    pub destination: Address,
    pub payload: Vec<u8>,
    pub id: MessageId,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("frame truncated: {len} bytes, header needs {HEADER_LEN}")]
    Truncated { len: usize },
    #[error("frame of {len} bytes exceeds the {MAX_FRAME_LEN}-byte maximum")]
    Oversize { len: usize },
    #[error("payload of {len} bytes exceeds the {MAX_PAYLOAD}-byte maximum")]
    PayloadTooLarge { len: usize },
    #[error("{kind} control frame carries a {len}-byte payload")]
    MalformedControl { kind: MessageKind, len: usize },
}

impl Message {
    pub fn control(kind: MessageKind, sender: Address, destination: Address) -> Self {
        debug_assert!(kind.is_control());
        Message {
            kind,
            sender,
            destination,
            payload: Vec::new(),
            id: 0,
        }
    }

    pub fn data(sender: Address, destination: Address, payload: Vec<u8>) -> Self {
        Message {
            kind: MessageKind::Data,
            sender,
            destination,
            payload,
            id: 0,
        }
    }

    pub fn with_id(mut self, id: MessageId) -> Self {
        self.id = id;
        self
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    pub fn validate(&self) -> Result<(), WireError> {
        let len = self.payload.len();
        if len > MAX_PAYLOAD {
            return Err(WireError::PayloadTooLarge { len });
        }
        if self.kind.is_control() && len != 0 {
            return Err(WireError::MalformedControl {
                kind: self.kind,
                len,
            });
        }
        Ok(())
    }

    /// Equality on the serialized fields only; ignores [`Message::id`].
    pub fn same_frame(&self, other: &Message) -> bool {
        self.kind == other.kind
            && self.sender == other.sender
            && self.destination == other.destination
            && self.payload == other.payload
    }
}

pub fn encode(m: &Message) -> Result<Vec<u8>, WireError> {
    m.validate()?;
    let mut out = Vec::with_capacity(m.encoded_len());
    out.push(m.kind.flag());
    out.extend_from_slice(&m.sender.0);
    out.extend_from_slice(&m.destination.0);
    out.extend_from_slice(&m.payload);
    Ok(out)
}

/// Parses one frame. The returned message has `id == 0`.
pub fn decode(bytes: &[u8]) -> Result<Message, WireError> {
    let len = bytes.len();
    if len < HEADER_LEN {
        return Err(WireError::Truncated { len });
    }
    if len > MAX_FRAME_LEN {
        return Err(WireError::Oversize { len });
    }
    let kind = classify_flag(bytes[0]);
    let octets = |at: usize| {
        let mut a = [0u8; 4];
        a.copy_from_slice(&bytes[at..at + 4]);
        Address(a)
    };
    let payload = &bytes[HEADER_LEN..];
    if kind.is_control() && !payload.is_empty() {
        return Err(WireError::MalformedControl {
            kind,
            len: payload.len(),
        });
    }
    Ok(Message {
        kind,
        sender: octets(1),
        destination: octets(5),
        payload: payload.to_vec(),
        id: 0,
    })
}

/// A message together with the number of bits it occupies on a link.
///
/// Scenarios model nominal frame sizes (for example 500-bit frames) that need
/// not be a whole number of bytes, so the on-link size is carried separately
/// from the encoded header and payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub message: Message,
    pub bits: u64,
}

impl Frame {
    /// Frame whose size is exactly its encoding.
    pub fn new(message: Message) -> Self {
        let bits = 8 * message.encoded_len() as u64;
        Frame { message, bits }
    }

    pub fn with_bits(message: Message, bits: u64) -> Self {
        Frame { message, bits }
    }

    pub fn kind(&self) -> MessageKind {
        self.message.kind
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn addr(s: &str) -> Address {
        s.parse().unwrap()
    }

    #[test]
    fn flag_classes() {
        assert_eq!(classify_flag(0b0000_0000), MessageKind::Fdqm);
        assert_eq!(classify_flag(0b1000_0000), MessageKind::Data);
        assert_eq!(classify_flag(0b0100_0000), MessageKind::Fdrm);
        assert_eq!(classify_flag(0b0010_0000), MessageKind::Nack);
        // nack bit wins over the report bit
        assert_eq!(classify_flag(0b0110_0000), MessageKind::Nack);
        // data bit wins over everything
        assert_eq!(classify_flag(0b1110_0000), MessageKind::Data);
        // low bits ignored
        assert_eq!(classify_flag(0b0001_1111), MessageKind::Fdqm);
        assert_eq!(classify_flag(0b0101_0101), MessageKind::Fdrm);
    }

    #[test]
    fn fdqm_layout() {
        let m = Message::control(MessageKind::Fdqm, addr("181.1.1.2"), addr("168.1.1.1"));
        assert_eq!(
            encode(&m).unwrap(),
            vec![0x00, 181, 1, 1, 2, 168, 1, 1, 1]
        );
    }

    #[test]
    fn empty_data_frame() {
        let m = Message::data(addr("1.2.3.4"), addr("5.6.7.8"), vec![]);
        let bytes = encode(&m).unwrap();
        assert_eq!(bytes.len(), 9);
        assert_eq!(bytes[0], 0x80);
    }

    #[test]
    fn encode_rejects_large_payload() {
        let m = Message::data(addr("1.2.3.4"), addr("5.6.7.8"), vec![0; 1501]);
        assert_eq!(encode(&m), Err(WireError::PayloadTooLarge { len: 1501 }));
        let m = Message::data(addr("1.2.3.4"), addr("5.6.7.8"), vec![7; 1500]);
        assert_eq!(encode(&m).unwrap().len(), MAX_FRAME_LEN);
    }

    #[test]
    fn encode_rejects_control_payload() {
        let mut m = Message::control(MessageKind::Nack, addr("1.1.1.1"), addr("2.2.2.2"));
        m.payload.push(1);
        assert!(matches!(
            encode(&m),
            Err(WireError::MalformedControl { kind: MessageKind::Nack, len: 1 })
        ));
    }

    #[test]
    fn decode_errors() {
        assert_eq!(decode(&[0u8; 8]), Err(WireError::Truncated { len: 8 }));
        assert_eq!(decode(&[]), Err(WireError::Truncated { len: 0 }));
        assert_eq!(
            decode(&[0u8; 10]),
            Err(WireError::MalformedControl { kind: MessageKind::Fdqm, len: 1 })
        );
        let mut big = vec![0x80u8; MAX_FRAME_LEN + 1];
        big[0] = 0x80;
        assert_eq!(decode(&big), Err(WireError::Oversize { len: 1510 }));
    }

    #[test]
    fn decode_fdrm() {
        let a = addr("10.0.1.1");
        let b = addr("10.0.1.3");
        let bytes = encode(&Message::control(MessageKind::Fdrm, a, b)).unwrap();
        let m = decode(&bytes).unwrap();
        assert_eq!(m.kind, MessageKind::Fdrm);
        assert_eq!(m.sender, a);
        assert_eq!(m.destination, b);
    }

    #[test]
    fn decode_tolerates_unused_bits() {
        let m = decode(&[0x9f, 1, 1, 1, 1, 2, 2, 2, 2, 42]).unwrap();
        assert_eq!(m.kind, MessageKind::Data);
        assert_eq!(m.payload, vec![42]);
    }

    #[test]
    fn address_text() {
        let a = addr("181.1.1.2");
        assert_eq!(a.octets(), [181, 1, 1, 2]);
        assert_eq!(a.to_string(), "181.1.1.2");
        assert!("1.2.3".parse::<Address>().is_err());
        assert!("1.2.3.256".parse::<Address>().is_err());
    }

    fn arb_message() -> impl Strategy<Value = Message> {
        let kind = prop_oneof![
            Just(MessageKind::Data),
            Just(MessageKind::Fdqm),
            Just(MessageKind::Fdrm),
            Just(MessageKind::Nack),
        ];
        (kind, any::<[u8; 4]>(), any::<[u8; 4]>(), prop::collection::vec(any::<u8>(), 0..=MAX_PAYLOAD))
            .prop_map(|(kind, s, d, mut payload)| {
                if kind.is_control() {
                    payload.clear();
                }
                Message { kind, sender: Address(s), destination: Address(d), payload, id: 0 }
            })
    }

    proptest! {
        #[test]
        fn round_trip(m in arb_message()) {
            let bytes = encode(&m).unwrap();
            prop_assert_eq!(bytes.len(), HEADER_LEN + m.payload.len());
            prop_assert_eq!(classify_flag(bytes[0]), m.kind);
            prop_assert_eq!(decode(&bytes).unwrap(), m);
        }

        #[test]
        fn address_display_round_trips(o in any::<[u8; 4]>()) {
            let a = Address(o);
            prop_assert_eq!(a.to_string().parse::<Address>().unwrap(), a);
        }
    }
}

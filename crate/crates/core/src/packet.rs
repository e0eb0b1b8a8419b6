//! Network packet wire format.
//!
//! A packet is 32 bytes: a 4-byte header followed by 28 bytes of payload.
//!
//! ```text
//! byte 0   source rank
//! byte 1   destination rank
//! byte 2   port
//! byte 3   op (bits 7..5) | valid element count (bits 4..0)
//! 4..32    payload, elements packed contiguously, little-endian
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SmiError};

pub const PACKET_BYTES: usize = 32;
pub const HEADER_BYTES: usize = 4;
pub const PAYLOAD_BYTES: usize = PACKET_BYTES - HEADER_BYTES;

const COUNT_BITS: u8 = 5;
const COUNT_MASK: u8 = (1 << COUNT_BITS) - 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataType {
    Char,
    Short,
    Int,
    Float,
    Double,
}

impl DataType {
    pub const ALL: [DataType; 5] = [
        DataType::Char,
        DataType::Short,
        DataType::Int,
        DataType::Float,
        DataType::Double,
    ];

    pub const fn size_bytes(self) -> usize {
        match self {
            DataType::Char => 1,
            DataType::Short => 2,
            DataType::Int | DataType::Float => 4,
            DataType::Double => 8,
        }
    }

    /// Number of elements of this type that fit into one packet payload.
    pub const fn max_elems_per_packet(self) -> usize {
        PAYLOAD_BYTES / self.size_bytes()
    }
}

pub fn max_elems_per_packet(t: DataType) -> usize {
    t.max_elems_per_packet()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpType {
    Data = 0,
    SyncReady = 1,
    Credit = 2,
}

impl OpType {
    pub const ALL: [OpType; 3] = [OpType::Data, OpType::SyncReady, OpType::Credit];

    pub const fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(OpType::Data),
            1 => Ok(OpType::SyncReady),
            2 => Ok(OpType::Credit),
            other => Err(SmiError::MalformedPacket(format!("unassigned op code {other:#05b}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PacketHeader {
    pub src: u8,
    pub dst: u8,
    pub port: u8,
    pub op: OpType,
    count: u8,
}

impl PacketHeader {
    pub fn new(src: u8, dst: u8, port: u8, op: OpType, valid_count: u8) -> Result<Self> {
        if valid_count > COUNT_MASK {
            return Err(SmiError::ContractViolation(format!(
                "valid count {valid_count} does not fit in {COUNT_BITS} bits"
            )));
        }
        Ok(PacketHeader {
            src,
            dst,
            port,
            op,
            count: valid_count,
        })
    }

    /// Header for a control packet (no payload).
    pub fn control(src: u8, dst: u8, port: u8, op: OpType) -> Self {
        PacketHeader {
            src,
            dst,
            port,
            op,
            count: 0,
        }
    }

    pub fn valid_count(&self) -> u8 {
        self.count
    }

    pub fn encode(&self) -> [u8; HEADER_BYTES] {
        [
            self.src,
            self.dst,
            self.port,
            (self.op.code() << COUNT_BITS) | self.count,
        ]
    }

    pub fn decode(bytes: [u8; HEADER_BYTES]) -> Result<Self> {
        let op = OpType::from_code(bytes[3] >> COUNT_BITS)?;
        Ok(PacketHeader {
            src: bytes[0],
            dst: bytes[1],
            port: bytes[2],
            op,
            count: bytes[3] & COUNT_MASK,
        })
    }
}

pub fn encode_header(h: &PacketHeader) -> [u8; HEADER_BYTES] {
    h.encode()
}

pub fn decode_header(b: [u8; HEADER_BYTES]) -> Result<PacketHeader> {
    PacketHeader::decode(b)
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct NetworkPacket {
    pub header: PacketHeader,
    pub payload: [u8; PAYLOAD_BYTES],
}

impl fmt::Debug for NetworkPacket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NetworkPacket")
            .field("header", &self.header)
            .finish_non_exhaustive()
    }
}

impl NetworkPacket {
    pub fn control(header: PacketHeader) -> Self {
        NetworkPacket {
            header,
            payload: [0; PAYLOAD_BYTES],
        }
    }

    pub fn to_bytes(&self) -> [u8; PACKET_BYTES] {
        let mut out = [0u8; PACKET_BYTES];
        out[..HEADER_BYTES].copy_from_slice(&self.header.encode());
        out[HEADER_BYTES..].copy_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8; PACKET_BYTES]) -> Result<Self> {
        let mut h = [0u8; HEADER_BYTES];
        h.copy_from_slice(&bytes[..HEADER_BYTES]);
        let mut payload = [0u8; PAYLOAD_BYTES];
        payload.copy_from_slice(&bytes[HEADER_BYTES..]);
        Ok(NetworkPacket {
            header: PacketHeader::decode(h)?,
            payload,
        })
    }

    /// Payload bytes that carry element data.
    pub fn useful_bytes(&self, t: DataType) -> usize {
        self.header.count as usize * t.size_bytes()
    }
}

/// A scalar that can travel through a channel.
pub trait Element: Copy + Send + PartialEq + fmt::Debug + 'static {
    const DTYPE: DataType;

    fn write_le(&self, out: &mut [u8]);
    fn read_le(bytes: &[u8]) -> Self;
}

macro_rules! impl_element {
    ($ty:ty, $tag:expr) => {
        impl Element for $ty {
            const DTYPE: DataType = $tag;

            fn write_le(&self, out: &mut [u8]) {
                out.copy_from_slice(&self.to_le_bytes());
            }

            fn read_le(bytes: &[u8]) -> Self {
                let mut raw = [0u8; std::mem::size_of::<$ty>()];
                raw.copy_from_slice(bytes);
                <$ty>::from_le_bytes(raw)
            }
        }
    };
}

impl_element!(i8, DataType::Char);
impl_element!(i16, DataType::Short);
impl_element!(i32, DataType::Int);
impl_element!(f32, DataType::Float);
impl_element!(f64, DataType::Double);

/// Packs `elems` into a DATA packet built from `proto` (its op and count are overwritten).
pub fn pack_elements<T: Element>(elems: &[T], proto: PacketHeader) -> Result<NetworkPacket> {
    let max = T::DTYPE.max_elems_per_packet();
    if elems.is_empty() || elems.len() > max {
        return Err(SmiError::ContractViolation(format!(
            "cannot pack {} {:?} elements (1..={max} allowed)",
            elems.len(),
            T::DTYPE
        )));
    }
    let size = T::DTYPE.size_bytes();
    let mut payload = [0u8; PAYLOAD_BYTES];
    for (chunk, e) in payload.chunks_exact_mut(size).zip(elems) {
        e.write_le(chunk);
    }
    let header = PacketHeader::new(proto.src, proto.dst, proto.port, OpType::Data, elems.len() as u8)?;
    Ok(NetworkPacket { header, payload })
}

/// Unpacks the valid elements of a DATA packet.
pub fn unpack_elements<T: Element>(pkt: &NetworkPacket) -> Result<Vec<T>> {
    let n = pkt.header.count as usize;
    if n > T::DTYPE.max_elems_per_packet() {
        return Err(SmiError::MalformedPacket(format!(
            "valid count {n} exceeds capacity for {:?}",
            T::DTYPE
        )));
    }
    let size = T::DTYPE.size_bytes();
    Ok(pkt.payload[..n * size].chunks_exact(size).map(T::read_le).collect())
}

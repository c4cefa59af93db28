//! Interest and Data packets with the offloading extension fields, and a
//! deterministic TLV encoding used for traces and golden files.
//!
//! Every TLV is `type (1 byte) | length (2 bytes, big-endian) | value`.

use thiserror::Error;

use crate::access::HmmRecord;
use crate::naming::{parse_name, FeName};
use crate::time::Ticks;

pub const DEFAULT_HOP_BUDGET: u8 = 32;

/// Fixed per-instance state carried alongside the code during a handover.
pub const HANDOVER_STATE_BYTES: u64 = 4 * 1024;

mod tlv {
    pub const INTEREST: u8 = 0x05;
    pub const DATA: u8 = 0x06;
    pub const NAME: u8 = 0x07;
    pub const NONCE: u8 = 0x0a;
    pub const CONTENT: u8 = 0x15;

    pub const ACCESS_RIGHTS: u8 = 0x80;
    pub const INTEREST_FLAGS: u8 = 0x81;
    pub const LAST_SYNC_TIME: u8 = 0x82;
    pub const ADMISSION_INFO: u8 = 0x83;
    pub const PARKING_TIME: u8 = 0x84;
    pub const RESOURCES: u8 = 0x85;
    pub const HOP_BUDGET: u8 = 0x86;
    pub const NEXT_EDGE: u8 = 0x87;
    pub const DATA_FLAGS: u8 = 0x88;

    pub const PAYLOAD_KIND: u8 = 0x90;
    pub const SIZE: u8 = 0x91;
    pub const MICROSERVICE: u8 = 0x92;
    pub const INSTANCE: u8 = 0x93;
    pub const INSTANCE_ID: u8 = 0x94;
    pub const REMAINING_WORK: u8 = 0x95;
    pub const HMM_RECORD: u8 = 0x96;
    pub const HMAC: u8 = 0x97;
    pub const CREATED_AT: u8 = 0x98;
    pub const VIN: u8 = 0x99;
    pub const SLOT: u8 = 0x9a;
    pub const ASSIGNMENT: u8 = 0x9b;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdmissionInfo {
    pub estimated_parking_time: Ticks,
    pub available_resources: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interest {
    pub name: FeName,
    pub nonce: u64,
    /// Hex HMAC proving the requester may use the microservice.
    pub access_rights: Option<String>,
    pub offloading: bool,
    pub adhoc_response: bool,
    pub microservice_availability: bool,
    /// Present only on access-store synchronization requests.
    pub last_sync_time: Option<Ticks>,
    /// Present only on parking admission requests.
    pub admission_info: Option<AdmissionInfo>,
    pub hop_budget: u8,
    /// Edge the consumer is heading towards, filled in by the offloading edge.
    pub next_edge: Option<u16>,
}

impl Interest {
    pub fn new(name: FeName, nonce: u64) -> Self {
        Interest {
            name,
            nonce,
            access_rights: None,
            offloading: false,
            adhoc_response: false,
            microservice_availability: false,
            last_sync_time: None,
            admission_info: None,
            hop_budget: DEFAULT_HOP_BUDGET,
            next_edge: None,
        }
    }

    pub fn validate(&self) -> Result<(), PacketError> {
        if self.last_sync_time.is_some() && self.admission_info.is_some() {
            return Err(PacketError::Invalid(
                "last_sync_time and admission_info are mutually exclusive",
            ));
        }
        if self.offloading && (self.last_sync_time.is_some() || self.admission_info.is_some()) {
            return Err(PacketError::Invalid(
                "control Interests cannot carry the offloading flag",
            ));
        }
        Ok(())
    }
}

/// Two Interests are duplicates iff their keys are equal.
pub type DuplicateKey = (String, u64);

pub fn duplicate_key(i: &Interest) -> DuplicateKey {
    (i.name.to_string(), i.nonce)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PayloadKind {
    ComputedResult = 1,
    MicroserviceCode = 2,
    HmmBatch = 3,
    SlotAssignment = 4,
    HandoverTarget = 5,
}

/// Snapshot of a partially computed instance travelling with its code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceState {
    pub instance_id: u64,
    /// Remaining reference-speed work, in milli-ticks.
    pub remaining_work: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    ComputedResult {
        result_size: u32,
    },
    /// Code is simulated: only its size travels. A zero size marks the
    /// code request carried by a `microservice_fetch` acknowledgement.
    MicroserviceCode {
        microservice: String,
        code_size: u32,
        instance: Option<InstanceState>,
    },
    HmmBatch {
        records: Vec<HmmRecord>,
    },
    /// `slot == None` is a lot-full rejection.
    SlotAssignment {
        vin: String,
        slot: Option<u16>,
    },
    HandoverTarget {
        vin: String,
        assignments: Vec<(u64, String)>,
    },
}

impl Payload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::ComputedResult { .. } => PayloadKind::ComputedResult,
            Payload::MicroserviceCode { .. } => PayloadKind::MicroserviceCode,
            Payload::HmmBatch { .. } => PayloadKind::HmmBatch,
            Payload::SlotAssignment { .. } => PayloadKind::SlotAssignment,
            Payload::HandoverTarget { .. } => PayloadKind::HandoverTarget,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Data {
    pub name: FeName,
    pub payload: Payload,
    pub adhoc_response: bool,
    pub microservice_fetch: bool,
    pub more_access_rights: bool,
}

impl Data {
    pub fn new(name: FeName, payload: Payload) -> Self {
        Data {
            name,
            payload,
            adhoc_response: false,
            microservice_fetch: false,
            more_access_rights: false,
        }
    }

    pub fn validate(&self) -> Result<(), PacketError> {
        if self.microservice_fetch && self.payload.kind() != PayloadKind::MicroserviceCode {
            return Err(PacketError::Invalid(
                "microservice_fetch is only valid on code Data",
            ));
        }
        if self.more_access_rights && self.payload.kind() != PayloadKind::HmmBatch {
            return Err(PacketError::Invalid(
                "more_access_rights is only valid on HMM batches",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Packet {
    Interest(Interest),
    Data(Data),
}

impl Packet {
    pub fn name(&self) -> &FeName {
        match self {
            Packet::Interest(i) => &i.name,
            Packet::Data(d) => &d.name,
        }
    }
}

impl From<Interest> for Packet {
    fn from(i: Interest) -> Self {
        Packet::Interest(i)
    }
}

impl From<Data> for Packet {
    fn from(d: Data) -> Self {
        Packet::Data(d)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PacketError {
    #[error("invalid packet: {0}")]
    Invalid(&'static str),
    #[error("truncated TLV")]
    Truncated,
    #[error("unexpected TLV type {0:#04x}")]
    UnexpectedType(u8),
    #[error("missing required TLV {0:#04x}")]
    Missing(u8),
    #[error("bad TLV value for type {0:#04x}")]
    BadValue(u8),
    #[error("trailing bytes after packet")]
    Trailing,
}

// ---------------------------------------------------------------------------
// encoding

struct Writer(Vec<u8>);

impl Writer {
    fn tlv(&mut self, t: u8, value: &[u8]) {
        let len = u16::try_from(value.len()).expect("TLV value exceeds 65535 bytes");
        self.0.push(t);
        self.0.extend_from_slice(&len.to_be_bytes());
        self.0.extend_from_slice(value);
    }

    fn nested(&mut self, t: u8, f: impl FnOnce(&mut Writer)) {
        let mut inner = Writer(Vec::new());
        f(&mut inner);
        self.tlv(t, &inner.0);
    }

    fn u8(&mut self, t: u8, v: u8) {
        self.tlv(t, &[v]);
    }

    fn u16(&mut self, t: u8, v: u16) {
        self.tlv(t, &v.to_be_bytes());
    }

    fn u32(&mut self, t: u8, v: u32) {
        self.tlv(t, &v.to_be_bytes());
    }

    fn u64(&mut self, t: u8, v: u64) {
        self.tlv(t, &v.to_be_bytes());
    }

    fn str(&mut self, t: u8, v: &str) {
        self.tlv(t, v.as_bytes());
    }
}

fn encode_interest(w: &mut Writer, i: &Interest) {
    w.nested(tlv::INTEREST, |w| {
        w.str(tlv::NAME, &i.name.to_string());
        w.u64(tlv::NONCE, i.nonce);
        if let Some(ar) = &i.access_rights {
            w.str(tlv::ACCESS_RIGHTS, ar);
        }
        let flags = (i.offloading as u8)
            | (i.adhoc_response as u8) << 1
            | (i.microservice_availability as u8) << 2;
        w.u8(tlv::INTEREST_FLAGS, flags);
        if let Some(t) = i.last_sync_time {
            w.u64(tlv::LAST_SYNC_TIME, t);
        }
        if let Some(a) = &i.admission_info {
            w.nested(tlv::ADMISSION_INFO, |w| {
                w.u64(tlv::PARKING_TIME, a.estimated_parking_time);
                w.u32(tlv::RESOURCES, a.available_resources);
            });
        }
        w.u8(tlv::HOP_BUDGET, i.hop_budget);
        if let Some(e) = i.next_edge {
            w.u16(tlv::NEXT_EDGE, e);
        }
    });
}

fn encode_payload(w: &mut Writer, p: &Payload) {
    w.u8(tlv::PAYLOAD_KIND, p.kind() as u8);
    match p {
        Payload::ComputedResult { result_size } => w.u32(tlv::SIZE, *result_size),
        Payload::MicroserviceCode {
            microservice,
            code_size,
            instance,
        } => {
            w.str(tlv::MICROSERVICE, microservice);
            w.u32(tlv::SIZE, *code_size);
            if let Some(s) = instance {
                w.nested(tlv::INSTANCE, |w| {
                    w.u64(tlv::INSTANCE_ID, s.instance_id);
                    w.u64(tlv::REMAINING_WORK, s.remaining_work);
                });
            }
        }
        Payload::HmmBatch { records } => {
            for r in records {
                w.nested(tlv::HMM_RECORD, |w| {
                    w.str(tlv::HMAC, &r.hmac);
                    w.str(tlv::MICROSERVICE, &r.microservice_name);
                    w.u64(tlv::CREATED_AT, r.created_at);
                });
            }
        }
        Payload::SlotAssignment { vin, slot } => {
            w.str(tlv::VIN, vin);
            if let Some(s) = slot {
                w.u16(tlv::SLOT, *s);
            }
        }
        Payload::HandoverTarget { vin, assignments } => {
            w.str(tlv::VIN, vin);
            for (id, target) in assignments {
                w.nested(tlv::ASSIGNMENT, |w| {
                    w.u64(tlv::INSTANCE_ID, *id);
                    w.str(tlv::VIN, target);
                });
            }
        }
    }
}

fn encode_data(w: &mut Writer, d: &Data) {
    w.nested(tlv::DATA, |w| {
        w.str(tlv::NAME, &d.name.to_string());
        let flags = (d.adhoc_response as u8)
            | (d.microservice_fetch as u8) << 1
            | (d.more_access_rights as u8) << 2;
        w.u8(tlv::DATA_FLAGS, flags);
        w.nested(tlv::CONTENT, |w| encode_payload(w, &d.payload));
    });
}

/// Deterministic TLV encoding of a packet.
pub fn encode(p: &Packet) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    match p {
        Packet::Interest(i) => encode_interest(&mut w, i),
        Packet::Data(d) => encode_data(&mut w, d),
    }
    w.0
}

/// Bytes a packet occupies on a link: its encoding plus the simulated bodies
/// (results, code, handover state) that the encoding only describes.
pub fn wire_size(p: &Packet) -> u64 {
    let body = match p {
        Packet::Data(d) => match &d.payload {
            Payload::ComputedResult { result_size } => *result_size as u64,
            Payload::MicroserviceCode {
                code_size,
                instance,
                ..
            } => *code_size as u64 + instance.as_ref().map_or(0, |_| HANDOVER_STATE_BYTES),
            _ => 0,
        },
        Packet::Interest(_) => 0,
    };
    encode(p).len() as u64 + body
}

// ---------------------------------------------------------------------------
// decoding

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf }
    }

    fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    fn peek_type(&self) -> Option<u8> {
        self.buf.first().copied()
    }

    fn next(&mut self) -> Result<(u8, &'a [u8]), PacketError> {
        if self.buf.len() < 3 {
            return Err(PacketError::Truncated);
        }
        let t = self.buf[0];
        let len = u16::from_be_bytes([self.buf[1], self.buf[2]]) as usize;
        if self.buf.len() < 3 + len {
            return Err(PacketError::Truncated);
        }
        let value = &self.buf[3..3 + len];
        self.buf = &self.buf[3 + len..];
        Ok((t, value))
    }

    fn expect(&mut self, t: u8) -> Result<&'a [u8], PacketError> {
        match self.peek_type() {
            Some(got) if got == t => Ok(self.next()?.1),
            Some(got) => Err(PacketError::UnexpectedType(got)),
            None => Err(PacketError::Missing(t)),
        }
    }

    fn optional(&mut self, t: u8) -> Result<Option<&'a [u8]>, PacketError> {
        if self.peek_type() == Some(t) {
            Ok(Some(self.next()?.1))
        } else {
            Ok(None)
        }
    }

    fn finish(&self) -> Result<(), PacketError> {
        match self.peek_type() {
            None => Ok(()),
            Some(t) => Err(PacketError::UnexpectedType(t)),
        }
    }
}

fn as_u8(t: u8, v: &[u8]) -> Result<u8, PacketError> {
    <[u8; 1]>::try_from(v)
        .map(|b| b[0])
        .map_err(|_| PacketError::BadValue(t))
}

fn as_u16(t: u8, v: &[u8]) -> Result<u16, PacketError> {
    <[u8; 2]>::try_from(v)
        .map(u16::from_be_bytes)
        .map_err(|_| PacketError::BadValue(t))
}

fn as_u32(t: u8, v: &[u8]) -> Result<u32, PacketError> {
    <[u8; 4]>::try_from(v)
        .map(u32::from_be_bytes)
        .map_err(|_| PacketError::BadValue(t))
}

fn as_u64(t: u8, v: &[u8]) -> Result<u64, PacketError> {
    <[u8; 8]>::try_from(v)
        .map(u64::from_be_bytes)
        .map_err(|_| PacketError::BadValue(t))
}

fn as_str(t: u8, v: &[u8]) -> Result<String, PacketError> {
    std::str::from_utf8(v)
        .map(str::to_string)
        .map_err(|_| PacketError::BadValue(t))
}

fn as_name(v: &[u8]) -> Result<FeName, PacketError> {
    let s = std::str::from_utf8(v).map_err(|_| PacketError::BadValue(tlv::NAME))?;
    let n = parse_name(s).map_err(|_| PacketError::BadValue(tlv::NAME))?;
    // Only the canonical form is a valid encoding.
    if n.to_string() != s {
        return Err(PacketError::BadValue(tlv::NAME));
    }
    Ok(n)
}

fn flag_bits(t: u8, v: &[u8]) -> Result<[bool; 3], PacketError> {
    let b = as_u8(t, v)?;
    if b & !0b111 != 0 {
        return Err(PacketError::BadValue(t));
    }
    Ok([b & 1 != 0, b & 2 != 0, b & 4 != 0])
}

fn decode_interest(body: &[u8]) -> Result<Interest, PacketError> {
    let mut r = Reader::new(body);
    let name = as_name(r.expect(tlv::NAME)?)?;
    let nonce = as_u64(tlv::NONCE, r.expect(tlv::NONCE)?)?;
    let access_rights = r
        .optional(tlv::ACCESS_RIGHTS)?
        .map(|v| as_str(tlv::ACCESS_RIGHTS, v))
        .transpose()?;
    let [offloading, adhoc_response, microservice_availability] =
        flag_bits(tlv::INTEREST_FLAGS, r.expect(tlv::INTEREST_FLAGS)?)?;
    let last_sync_time = r
        .optional(tlv::LAST_SYNC_TIME)?
        .map(|v| as_u64(tlv::LAST_SYNC_TIME, v))
        .transpose()?;
    let admission_info = match r.optional(tlv::ADMISSION_INFO)? {
        Some(v) => {
            let mut a = Reader::new(v);
            let t = as_u64(tlv::PARKING_TIME, a.expect(tlv::PARKING_TIME)?)?;
            let res = as_u32(tlv::RESOURCES, a.expect(tlv::RESOURCES)?)?;
            a.finish()?;
            Some(AdmissionInfo {
                estimated_parking_time: t,
                available_resources: res,
            })
        }
        None => None,
    };
    let hop_budget = as_u8(tlv::HOP_BUDGET, r.expect(tlv::HOP_BUDGET)?)?;
    let next_edge = r
        .optional(tlv::NEXT_EDGE)?
        .map(|v| as_u16(tlv::NEXT_EDGE, v))
        .transpose()?;
    r.finish()?;
    Ok(Interest {
        name,
        nonce,
        access_rights,
        offloading,
        adhoc_response,
        microservice_availability,
        last_sync_time,
        admission_info,
        hop_budget,
        next_edge,
    })
}

fn decode_payload(body: &[u8]) -> Result<Payload, PacketError> {
    let mut r = Reader::new(body);
    let kind = as_u8(tlv::PAYLOAD_KIND, r.expect(tlv::PAYLOAD_KIND)?)?;
    let payload = match kind {
        1 => Payload::ComputedResult {
            result_size: as_u32(tlv::SIZE, r.expect(tlv::SIZE)?)?,
        },
        2 => {
            let microservice = as_str(tlv::MICROSERVICE, r.expect(tlv::MICROSERVICE)?)?;
            let code_size = as_u32(tlv::SIZE, r.expect(tlv::SIZE)?)?;
            let instance = match r.optional(tlv::INSTANCE)? {
                Some(v) => {
                    let mut s = Reader::new(v);
                    let instance_id = as_u64(tlv::INSTANCE_ID, s.expect(tlv::INSTANCE_ID)?)?;
                    let remaining_work =
                        as_u64(tlv::REMAINING_WORK, s.expect(tlv::REMAINING_WORK)?)?;
                    s.finish()?;
                    Some(InstanceState {
                        instance_id,
                        remaining_work,
                    })
                }
                None => None,
            };
            Payload::MicroserviceCode {
                microservice,
                code_size,
                instance,
            }
        }
        3 => {
            let mut records = Vec::new();
            while let Some(v) = r.optional(tlv::HMM_RECORD)? {
                let mut rr = Reader::new(v);
                let hmac = as_str(tlv::HMAC, rr.expect(tlv::HMAC)?)?;
                let microservice_name = as_str(tlv::MICROSERVICE, rr.expect(tlv::MICROSERVICE)?)?;
                let created_at = as_u64(tlv::CREATED_AT, rr.expect(tlv::CREATED_AT)?)?;
                rr.finish()?;
                records.push(HmmRecord {
                    hmac,
                    microservice_name,
                    created_at,
                });
            }
            Payload::HmmBatch { records }
        }
        4 => {
            let vin = as_str(tlv::VIN, r.expect(tlv::VIN)?)?;
            let slot = r
                .optional(tlv::SLOT)?
                .map(|v| as_u16(tlv::SLOT, v))
                .transpose()?;
            Payload::SlotAssignment { vin, slot }
        }
        5 => {
            let vin = as_str(tlv::VIN, r.expect(tlv::VIN)?)?;
            let mut assignments = Vec::new();
            while let Some(v) = r.optional(tlv::ASSIGNMENT)? {
                let mut a = Reader::new(v);
                let id = as_u64(tlv::INSTANCE_ID, a.expect(tlv::INSTANCE_ID)?)?;
                let target = as_str(tlv::VIN, a.expect(tlv::VIN)?)?;
                a.finish()?;
                assignments.push((id, target));
            }
            Payload::HandoverTarget { vin, assignments }
        }
        _ => return Err(PacketError::BadValue(tlv::PAYLOAD_KIND)),
    };
    r.finish()?;
    Ok(payload)
}

fn decode_data(body: &[u8]) -> Result<Data, PacketError> {
    let mut r = Reader::new(body);
    let name = as_name(r.expect(tlv::NAME)?)?;
    let [adhoc_response, microservice_fetch, more_access_rights] =
        flag_bits(tlv::DATA_FLAGS, r.expect(tlv::DATA_FLAGS)?)?;
    let payload = decode_payload(r.expect(tlv::CONTENT)?)?;
    r.finish()?;
    Ok(Data {
        name,
        payload,
        adhoc_response,
        microservice_fetch,
        more_access_rights,
    })
}

/// Decodes one packet occupying the whole buffer.
pub fn decode(buf: &[u8]) -> Result<Packet, PacketError> {
    let mut r = Reader::new(buf);
    let (t, body) = r.next()?;
    if !r.is_empty() {
        return Err(PacketError::Trailing);
    }
    match t {
        tlv::INTEREST => decode_interest(body).map(Packet::Interest),
        tlv::DATA => decode_data(body).map(Packet::Data),
        other => Err(PacketError::UnexpectedType(other)),
    }
}

//! Binary run trace: a magic header followed by TLV records.
//!
//! Each record is `kind (1) | length (2, big-endian) | value`, where value is
//! `time (8) | node (2) | face (2) | peer (2) | body`. Packet records carry
//! the packet's own TLV encoding as body.

use std::fmt;

use thiserror::Error;

use crate::naming::{parse_name, FeName};
use crate::packet::{decode, encode, Packet};
use crate::time::Ticks;

pub const MAGIC: &[u8; 8] = b"FETRACE1";
const FIXED: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[repr(u8)]
pub enum RecordKind {
    Send = 0xa0,
    Deliver = 0xa1,
    ExecStart = 0xa2,
    ExecDone = 0xa3,
    Decision = 0xa4,
    Satisfied = 0xa5,
    Dropped = 0xa6,
    Handover = 0xa7,
}

impl RecordKind {
    fn from_u8(b: u8) -> Option<Self> {
        use RecordKind::*;
        [
            Send, Deliver, ExecStart, ExecDone, Decision, Satisfied, Dropped, Handover,
        ]
        .into_iter()
        .find(|k| *k as u8 == b)
    }
}

impl fmt::Display for RecordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RecordKind::Send => "send",
            RecordKind::Deliver => "deliver",
            RecordKind::ExecStart => "exec-start",
            RecordKind::ExecDone => "exec-done",
            RecordKind::Decision => "decision",
            RecordKind::Satisfied => "satisfied",
            RecordKind::Dropped => "dropped",
            RecordKind::Handover => "handover",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub kind: RecordKind,
    pub time: Ticks,
    pub node: u16,
    pub face: u16,
    pub peer: u16,
    pub body: Vec<u8>,
}

impl TraceRecord {
    /// The packet of a send or deliver record.
    pub fn packet(&self) -> Option<Packet> {
        match self.kind {
            RecordKind::Send | RecordKind::Deliver => decode(&self.body).ok(),
            _ => None,
        }
    }

    /// Name carried by non-packet records, which end with a canonical name
    /// after a fixed-size prefix.
    pub fn name(&self) -> Option<FeName> {
        let skip = match self.kind {
            RecordKind::Send | RecordKind::Deliver => {
                return self.packet().map(|p| p.name().clone())
            }
            RecordKind::Decision => 3,
            RecordKind::ExecStart | RecordKind::ExecDone | RecordKind::Handover => 8,
            RecordKind::Satisfied | RecordKind::Dropped => 9,
        };
        let s = std::str::from_utf8(self.body.get(skip..)?).ok()?;
        parse_name(s).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("missing trace header")]
    BadMagic,
    #[error("truncated record at byte {0}")]
    Truncated(usize),
    #[error("unknown record kind {kind:#04x} at byte {at}")]
    UnknownKind { kind: u8, at: usize },
}

#[derive(Debug, Clone)]
pub struct TraceWriter {
    buf: Vec<u8>,
    records: u64,
}

impl Default for TraceWriter {
    fn default() -> Self {
        TraceWriter {
            buf: MAGIC.to_vec(),
            records: 0,
        }
    }
}

impl TraceWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(
        &mut self,
        kind: RecordKind,
        time: Ticks,
        node: u16,
        face: u16,
        peer: u16,
        body: &[u8],
    ) {
        let len = FIXED + body.len();
        let len = u16::try_from(len).unwrap_or_else(|_| panic!("trace record of {len} bytes"));
        self.buf.push(kind as u8);
        self.buf.extend_from_slice(&len.to_be_bytes());
        self.buf.extend_from_slice(&time.to_be_bytes());
        self.buf.extend_from_slice(&node.to_be_bytes());
        self.buf.extend_from_slice(&face.to_be_bytes());
        self.buf.extend_from_slice(&peer.to_be_bytes());
        self.buf.extend_from_slice(body);
        self.records += 1;
    }

    pub fn packet(
        &mut self,
        kind: RecordKind,
        time: Ticks,
        node: u16,
        face: u16,
        peer: u16,
        p: &Packet,
    ) {
        self.record(kind, time, node, face, peer, &encode(p));
    }

    pub fn with_name(
        &mut self,
        kind: RecordKind,
        time: Ticks,
        node: u16,
        prefix: &[u8],
        name: &FeName,
    ) {
        let mut body = prefix.to_vec();
        body.extend_from_slice(name.to_string().as_bytes());
        self.record(kind, time, node, 0, 0, &body);
    }

    pub fn len(&self) -> u64 {
        self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records == 0
    }

    pub fn bytes(&self) -> &[u8] {
        &self.buf
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

pub fn read_trace(buf: &[u8]) -> Result<Vec<TraceRecord>, TraceError> {
    let rest = buf
        .strip_prefix(MAGIC.as_slice())
        .ok_or(TraceError::BadMagic)?;
    let mut out = Vec::new();
    let mut at = MAGIC.len();
    let mut rest = rest;
    while !rest.is_empty() {
        if rest.len() < 3 {
            return Err(TraceError::Truncated(at));
        }
        let kind =
            RecordKind::from_u8(rest[0]).ok_or(TraceError::UnknownKind { kind: rest[0], at })?;
        let len = u16::from_be_bytes([rest[1], rest[2]]) as usize;
        if len < FIXED || rest.len() < 3 + len {
            return Err(TraceError::Truncated(at));
        }
        let v = &rest[3..3 + len];
        out.push(TraceRecord {
            kind,
            time: u64::from_be_bytes(v[0..8].try_into().expect("8 bytes")),
            node: u16::from_be_bytes([v[8], v[9]]),
            face: u16::from_be_bytes([v[10], v[11]]),
            peer: u16::from_be_bytes([v[12], v[13]]),
            body: v[FIXED..].to_vec(),
        });
        rest = &rest[3 + len..];
        at += 3 + len;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceDiff {
    Identical {
        records: usize,
    },
    Differ {
        index: usize,
        left: Option<TraceRecord>,
        right: Option<TraceRecord>,
        left_len: usize,
        right_len: usize,
    },
}

/// First point at which two traces diverge.
pub fn diff_traces(a: &[u8], b: &[u8]) -> Result<TraceDiff, TraceError> {
    let (ra, rb) = (read_trace(a)?, read_trace(b)?);
    let index = ra.iter().zip(&rb).take_while(|(x, y)| x == y).count();
    if index == ra.len() && index == rb.len() {
        return Ok(TraceDiff::Identical { records: index });
    }
    Ok(TraceDiff::Differ {
        index,
        left: ra.get(index).cloned(),
        right: rb.get(index).cloned(),
        left_len: ra.len(),
        right_len: rb.len(),
    })
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "t={} {} node={:#06x} face={} peer={:#06x}",
            self.time, self.kind, self.node, self.face, self.peer
        )?;
        if let Some(n) = self.name() {
            write!(f, " {n}")?;
        }
        Ok(())
    }
}

impl fmt::Display for TraceDiff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceDiff::Identical { records } => write!(f, "identical ({records} records)"),
            TraceDiff::Differ {
                index,
                left,
                right,
                left_len,
                right_len,
            } => {
                writeln!(
                    f,
                    "traces differ at record {index} ({left_len} vs {right_len} records)"
                )?;
                let show = |r: &Option<TraceRecord>| {
                    r.as_ref().map_or("<end>".to_string(), |r| r.to_string())
                };
                writeln!(f, "  a: {}", show(left))?;
                write!(f, "  b: {}", show(right))
            }
        }
    }
}

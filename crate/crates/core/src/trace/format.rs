//! Text (`R 0x1040` per line) and binary (opcode byte + little-endian u64)
//! trace encodings.

use std::path::Path;

use super::{Op, TraceError, TraceEvent};

pub const BINARY_RECORD_BYTES: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFormat {
    Text,
    Binary,
}

impl TraceFormat {
    /// Picks the encoding from a file extension: `.bin` is binary, anything
    /// else text.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => Self::Binary,
            _ => Self::Text,
        }
    }

    /// Text traces start with an opcode letter, a comment or whitespace;
    /// binary records start with opcode byte 0 or 1.
    pub fn sniff(bytes: &[u8]) -> Self {
        match bytes.first() {
            Some(0 | 1) => Self::Binary,
            _ => Self::Text,
        }
    }
}

/// Parses one event per line; blank lines and `#` comments are skipped.
pub fn parse_text(bytes: &[u8]) -> Result<Vec<TraceEvent>, TraceError> {
    let text = std::str::from_utf8(bytes).map_err(|e| TraceError::Text {
        line: 1 + bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count(),
        offset: e.valid_up_to(),
        msg: "invalid UTF-8".into(),
    })?;
    let mut out = Vec::new();
    let mut offset = 0;
    for (i, raw) in text.split_inclusive('\n').enumerate() {
        let line = raw.trim();
        let err = |msg: String| TraceError::Text { line: i + 1, offset, msg };
        if !line.is_empty() && !line.starts_with('#') {
            let mut parts = line.split_whitespace();
            let op = match parts.next() {
                Some("R" | "r") => Op::Read,
                Some("W" | "w") => Op::Write,
                Some(other) => return Err(err(format!("unknown opcode {other:?}"))),
                None => unreachable!(),
            };
            let addr_str = parts.next().ok_or_else(|| err("missing address".into()))?;
            let hex = addr_str
                .strip_prefix("0x")
                .or_else(|| addr_str.strip_prefix("0X"))
                .ok_or_else(|| err(format!("address {addr_str:?} lacks 0x prefix")))?;
            let addr = u64::from_str_radix(hex, 16).map_err(|e| err(format!("bad address {addr_str:?}: {e}")))?;
            if let Some(extra) = parts.next() {
                return Err(err(format!("unexpected trailing field {extra:?}")));
            }
            out.push(TraceEvent { op, addr });
        }
        offset += raw.len();
    }
    Ok(out)
}

pub fn encode_text(events: &[TraceEvent]) -> Vec<u8> {
    let mut s = String::with_capacity(events.len() * 12);
    for e in events {
        let op = match e.op {
            Op::Read => 'R',
            Op::Write => 'W',
        };
        s.push_str(&format!("{op} {:#x}\n", e.addr));
    }
    s.into_bytes()
}

pub fn parse_binary(bytes: &[u8]) -> Result<Vec<TraceEvent>, TraceError> {
    let mut out = Vec::with_capacity(bytes.len() / BINARY_RECORD_BYTES);
    for (i, rec) in bytes.chunks(BINARY_RECORD_BYTES).enumerate() {
        let offset = i * BINARY_RECORD_BYTES;
        if rec.len() != BINARY_RECORD_BYTES {
            return Err(TraceError::Binary { offset, msg: format!("truncated record of {} bytes", rec.len()) });
        }
        let op = match rec[0] {
            0 => Op::Read,
            1 => Op::Write,
            b => return Err(TraceError::Binary { offset, msg: format!("unknown opcode {b}") }),
        };
        let addr = u64::from_le_bytes(rec[1..].try_into().unwrap());
        out.push(TraceEvent { op, addr });
    }
    Ok(out)
}

pub fn encode_binary(events: &[TraceEvent]) -> Vec<u8> {
    let mut out = Vec::with_capacity(events.len() * BINARY_RECORD_BYTES);
    for e in events {
        out.push(match e.op {
            Op::Read => 0,
            Op::Write => 1,
        });
        out.extend_from_slice(&e.addr.to_le_bytes());
    }
    out
}

/// Parses either encoding, choosing by the first byte.
pub fn parse_trace(bytes: &[u8]) -> Result<Vec<TraceEvent>, TraceError> {
    match TraceFormat::sniff(bytes) {
        TraceFormat::Text => parse_text(bytes),
        TraceFormat::Binary => parse_binary(bytes),
    }
}

pub fn load_trace(path: &Path) -> Result<Vec<TraceEvent>, TraceError> {
    parse_trace(&std::fs::read(path)?)
}

pub fn save_trace(path: &Path, events: &[TraceEvent], format: TraceFormat) -> Result<(), TraceError> {
    let bytes = match format {
        TraceFormat::Text => encode_text(events),
        TraceFormat::Binary => encode_binary(events),
    };
    std::fs::write(path, bytes)?;
    Ok(())
}

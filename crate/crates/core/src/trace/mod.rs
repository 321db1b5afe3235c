//! Memory access traces: event type, interchange formats and synthetic
//! workload generators.

mod format;
mod gen;

pub use format::{
    encode_binary, encode_text, load_trace, parse_binary, parse_text, parse_trace, save_trace, TraceFormat,
    BINARY_RECORD_BYTES,
};
pub use gen::{generate, generate_iter, PatternKind, PatternSpec};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Read,
    Write,
}

/// One post-LLC memory access: a miss fill (read) or a dirty eviction (write).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TraceEvent {
    pub op: Op,
    pub addr: u64,
}

impl TraceEvent {
    pub fn read(addr: u64) -> Self {
        Self { op: Op::Read, addr }
    }

    pub fn write(addr: u64) -> Self {
        Self { op: Op::Write, addr }
    }

    pub fn is_write(&self) -> bool {
        self.op == Op::Write
    }

    /// Address with the offset inside a `block_bytes` block dropped.
    pub fn block_aligned(&self, block_bytes: u64) -> u64 {
        self.addr - self.addr % block_bytes
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line} (byte {offset}): {msg}")]
    Text { line: usize, offset: usize, msg: String },
    #[error("record at byte {offset}: {msg}")]
    Binary { offset: usize, msg: String },
    #[error("invalid pattern: {0}")]
    Spec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

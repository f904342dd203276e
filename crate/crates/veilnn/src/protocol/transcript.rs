//! Message log for split-execution sessions.
//!
//! Every coordinator↔worker exchange is recorded as one line of JSONL with
//! a fixed schema: `{seq, from, to, kind, job_id, tensor_digest, shape}`.
//! Tensor payloads themselves never enter the transcript — only their
//! 64-bit FNV-1a digests — so the log is cheap to keep and safe to ship,
//! yet still supports the two audits that matter:
//!
//! * payload-identity questions ("did the backward pass reuse the forward
//!   masks?", "did any worker get two distinct masked tensors from one
//!   batch?") reduce to digest comparisons;
//! * secrecy questions ("did a raw input ever travel to a worker?") reduce
//!   to checking that no worker-bound digest matches a secret tensor's.
//!
//! `job_id` encodes the masking group: `group * GROUP_STRIDE + slot`, so an
//! auditor can reconstruct batch boundaries from the log alone.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::Tensor;

/// Masked-tensor slots per masking group in the `job_id` encoding. Far
/// above any realistic `p + e`.
pub const GROUP_STRIDE: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MessageKind {
    /// Coordinator → worker: one masked tensor to process.
    Job,
    /// Coordinator → worker: a gradient partner tensor for an equation job.
    JobDelta,
    /// Worker → coordinator: computed output.
    Result,
    /// Coordinator → worker: weight update.
    Broadcast,
    /// Coordinator → all: integrity decision for a batch.
    Verdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub seq: u64,
    pub from: String,
    pub to: String,
    pub kind: MessageKind,
    pub job_id: Option<u64>,
    /// FNV-1a 64 of the tensor's little-endian bytes, as `0x…` hex.
    pub tensor_digest: Option<String>,
    pub shape: Option<Vec<usize>>,
}

pub fn coordinator() -> String {
    "coordinator".to_string()
}

pub fn worker_name(id: usize) -> String {
    format!("worker:{id}")
}

pub fn digest_hex(d: u64) -> String {
    format!("{d:#018x}")
}

pub fn tensor_digest_hex(t: &Tensor) -> String {
    digest_hex(t.digest())
}

/// Fold several per-tensor digests into one (order-sensitive), for
/// broadcast messages that carry a whole weight set.
pub fn fold_digests<I: IntoIterator<Item = u64>>(digests: I) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for d in digests {
        for byte in d.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    messages: Vec<Message>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(
        &mut self,
        from: String,
        to: String,
        kind: MessageKind,
        job_id: Option<u64>,
        tensor_digest: Option<String>,
        shape: Option<Vec<usize>>,
    ) -> u64 {
        let seq = self.messages.len() as u64;
        self.messages.push(Message { seq, from, to, kind, job_id, tensor_digest, shape });
        seq
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for msg in &self.messages {
            serde_json::to_writer(&mut w, msg)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut messages = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            messages.push(serde_json::from_str(&line)?);
        }
        Ok(Self { messages })
    }
}

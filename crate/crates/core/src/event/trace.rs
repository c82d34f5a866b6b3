use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::types::NodeId;

/// Receives one record per processed event.
pub trait TraceSink {
    fn record(&mut self, time: f64, seq: u64, label: &str, node: NodeId);
}

/// Discards everything.
pub struct NoTrace;

impl TraceSink for NoTrace {
    #[inline]
    fn record(&mut self, _: f64, _: u64, _: &str, _: NodeId) {}
}

/// SHA-256 over the exact bit patterns of every record.
#[derive(Clone, Default)]
pub struct HashTrace {
    hasher: Sha256,
    count: u64,
}

impl HashTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn hex_digest(&self) -> String {
        let digest = self.hasher.clone().finalize();
        let mut out = String::with_capacity(64);
        for b in digest.iter() {
            let _ = write!(out, "{b:02x}");
        }
        out
    }
}

impl TraceSink for HashTrace {
    fn record(&mut self, time: f64, seq: u64, label: &str, node: NodeId) {
        self.hasher.update(time.to_bits().to_le_bytes());
        self.hasher.update(seq.to_le_bytes());
        self.hasher.update(label.as_bytes());
        self.hasher.update(node.to_le_bytes());
        self.count += 1;
    }
}

/// Line-delimited text: `time seq label node`, time in shortest round-trip form.
#[derive(Clone, Default)]
pub struct TextTrace {
    pub text: String,
}

impl TraceSink for TextTrace {
    fn record(&mut self, time: f64, seq: u64, label: &str, node: NodeId) {
        let _ = writeln!(self.text, "{time:?} {seq} {label} {node}");
    }
}

/// Forwards to two sinks.
impl<A: TraceSink, B: TraceSink> TraceSink for (A, B) {
    fn record(&mut self, time: f64, seq: u64, label: &str, node: NodeId) {
        self.0.record(time, seq, label, node);
        self.1.record(time, seq, label, node);
    }
}

//! Shared domain types, ordering rules, and canonical encodings.
//!
//! Everything here is immutable after construction and cheap to clone or send
//! between execution contexts. The binary encodings defined in this module are
//! the replicated-log payload format and the on-disk record format, so they
//! must stay bit-exact; golden-file tests pin them.

use std::cmp::Ordering;
use std::fmt;

use thiserror::Error;

use crate::codec::{Dec, DecodeResult, Enc, Malformed};

/// Maximum key length in bytes.
pub const MAX_KEY_LEN: usize = 1024;
/// Maximum value length in bytes (1 MiB).
pub const MAX_VALUE_LEN: usize = 1 << 20;
/// Maximum encoded size of a replicated batch (1 MiB).
pub const MAX_BATCH_BYTES: usize = 1 << 20;

/// Virtual or local time in microseconds. Plain integer arithmetic keeps the
/// simulator deterministic; the real runtime feeds monotonic-clock readings
/// through the same type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Micros(pub u64);

impl Micros {
    pub const ZERO: Micros = Micros(0);

    pub fn from_millis(ms: u64) -> Micros {
        Micros(ms * 1000)
    }

    pub fn from_secs(s: u64) -> Micros {
        Micros(s * 1_000_000)
    }

    pub fn as_millis(self) -> u64 {
        self.0 / 1000
    }

    pub fn saturating_sub(self, other: Micros) -> Micros {
        Micros(self.0.saturating_sub(other.0))
    }
}

impl std::ops::Add<Micros> for Micros {
    type Output = Micros;
    fn add(self, rhs: Micros) -> Micros {
        Micros(self.0 + rhs.0)
    }
}

impl fmt::Display for Micros {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:06}s", self.0 / 1_000_000, self.0 % 1_000_000)
    }
}

/// Cluster member identifier, dense from 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Replicated-log slot number. Instance 0 is reserved; the first real
/// instance is 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct InstanceId(pub u64);

impl InstanceId {
    pub fn next(self) -> InstanceId {
        InstanceId(self.0 + 1)
    }
}

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "i{}", self.0)
    }
}

/// Proposal ordering token: lexicographic on (counter, proposer).
/// (0, *) is reserved as "never promised".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Ballot {
    pub counter: u64,
    pub proposer: NodeId,
}

impl Ballot {
    /// The "never promised" sentinel, ordered below every real ballot.
    pub const ZERO: Ballot = Ballot { counter: 0, proposer: NodeId(0) };

    pub fn new(counter: u64, proposer: NodeId) -> Ballot {
        Ballot { counter, proposer }
    }

    pub fn is_zero(self) -> bool {
        self.counter == 0
    }

    pub fn encode(self, e: &mut Enc) {
        e.u64(self.counter).u32(self.proposer.0);
    }

    pub fn decode(d: &mut Dec) -> DecodeResult<Ballot> {
        let counter = d.u64("ballot.counter")?;
        let proposer = NodeId(d.u32("ballot.proposer")?);
        Ok(Ballot { counter, proposer })
    }
}

impl Ord for Ballot {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.counter, self.proposer).cmp(&(other.counter, other.proposer))
    }
}

impl PartialOrd for Ballot {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Ballot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.counter, self.proposer.0)
    }
}

/// Compare two ballots. Lexicographic on (counter, proposer).
pub fn compare_ballots(a: Ballot, b: Ballot) -> Ordering {
    a.cmp(&b)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KeyError {
    #[error("key is empty")]
    Empty,
    #[error("key exceeds {MAX_KEY_LEN} bytes")]
    TooLong,
    #[error("key contains reserved byte 0x00")]
    ReservedByte,
}

/// A user key: 1..=1024 arbitrary bytes, except that 0x00 is reserved for the
/// storage engine's internal namespace and rejected at the protocol edge.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Key(Vec<u8>);

impl Key {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Result<Key, KeyError> {
        let bytes = bytes.into();
        if bytes.is_empty() {
            return Err(KeyError::Empty);
        }
        if bytes.len() > MAX_KEY_LEN {
            return Err(KeyError::TooLong);
        }
        if bytes.contains(&0) {
            return Err(KeyError::ReservedByte);
        }
        Ok(Key(bytes))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }
}

impl fmt::Debug for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Key({})", String::from_utf8_lossy(&self.0))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("value exceeds {MAX_VALUE_LEN} bytes")]
pub struct ValueTooLong;

/// A user value: up to 1 MiB of arbitrary bytes (empty allowed).
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Value(Vec<u8>);

impl Value {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Result<Value, ValueTooLong> {
        let bytes = bytes.into();
        if bytes.len() > MAX_VALUE_LEN {
            return Err(ValueTooLong);
        }
        Ok(Value(bytes))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Value({})", String::from_utf8_lossy(&self.0))
    }
}

/// Prefix argument for PRUNE and the listing operations. Same byte rules as
/// keys but may be empty (empty prefix = the whole user keyspace).
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Prefix(Vec<u8>);

impl Prefix {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Result<Prefix, KeyError> {
        let bytes = bytes.into();
        if bytes.len() > MAX_KEY_LEN {
            return Err(KeyError::TooLong);
        }
        if bytes.contains(&0) {
            return Err(KeyError::ReservedByte);
        }
        Ok(Prefix(bytes))
    }

    pub fn empty() -> Prefix {
        Prefix(Vec::new())
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Prefix({})", String::from_utf8_lossy(&self.0))
    }
}

/// A single replicated write operation. Reads are never replicated.
///
/// `(client_id, request_seq)` identifies the operation for duplicate
/// suppression: a client that retries after an unknown outcome reuses the
/// same pair and every replica applies the effects at most once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Command {
    pub client_id: u64,
    pub request_seq: u64,
    pub op: WriteOp,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WriteOp {
    Set { key: Key, value: Value },
    TestAndSet { key: Key, test: Value, value: Value },
    Add { key: Key, delta: i64 },
    Rename { key: Key, new_key: Key },
    Delete { key: Key },
    Remove { key: Key },
    Prune { prefix: Prefix },
}

const TAG_SET: u8 = 1;
const TAG_TEST_AND_SET: u8 = 2;
const TAG_ADD: u8 = 3;
const TAG_RENAME: u8 = 4;
const TAG_DELETE: u8 = 5;
const TAG_REMOVE: u8 = 6;
const TAG_PRUNE: u8 = 7;

impl Command {
    pub fn encode_into(&self, e: &mut Enc) {
        match &self.op {
            WriteOp::Set { .. } => e.u8(TAG_SET),
            WriteOp::TestAndSet { .. } => e.u8(TAG_TEST_AND_SET),
            WriteOp::Add { .. } => e.u8(TAG_ADD),
            WriteOp::Rename { .. } => e.u8(TAG_RENAME),
            WriteOp::Delete { .. } => e.u8(TAG_DELETE),
            WriteOp::Remove { .. } => e.u8(TAG_REMOVE),
            WriteOp::Prune { .. } => e.u8(TAG_PRUNE),
        };
        e.u64(self.client_id).u64(self.request_seq);
        match &self.op {
            WriteOp::Set { key, value } => {
                e.bytes(key.as_bytes()).bytes(value.as_bytes());
            }
            WriteOp::TestAndSet { key, test, value } => {
                e.bytes(key.as_bytes()).bytes(test.as_bytes()).bytes(value.as_bytes());
            }
            WriteOp::Add { key, delta } => {
                e.bytes(key.as_bytes()).i64(*delta);
            }
            WriteOp::Rename { key, new_key } => {
                e.bytes(key.as_bytes()).bytes(new_key.as_bytes());
            }
            WriteOp::Delete { key } | WriteOp::Remove { key } => {
                e.bytes(key.as_bytes());
            }
            WriteOp::Prune { prefix } => {
                e.bytes(prefix.as_bytes());
            }
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut e = Enc::new();
        self.encode_into(&mut e);
        e.into_vec()
    }

    pub fn decode_from(d: &mut Dec) -> DecodeResult<Command> {
        let tag = d.u8("command.tag")?;
        let client_id = d.u64("command.client_id")?;
        let request_seq = d.u64("command.request_seq")?;
        let key_field = |d: &mut Dec| -> DecodeResult<Key> {
            let raw = d.bytes("command.key")?;
            Key::new(raw).map_err(|_| Malformed("command.key bounds"))
        };
        let value_field = |d: &mut Dec| -> DecodeResult<Value> {
            let raw = d.bytes("command.value")?;
            Value::new(raw).map_err(|_| Malformed("command.value bounds"))
        };
        let op = match tag {
            TAG_SET => {
                let key = key_field(d)?;
                let value = value_field(d)?;
                WriteOp::Set { key, value }
            }
            TAG_TEST_AND_SET => {
                let key = key_field(d)?;
                let test = value_field(d)?;
                let value = value_field(d)?;
                WriteOp::TestAndSet { key, test, value }
            }
            TAG_ADD => {
                let key = key_field(d)?;
                let delta = d.i64("command.delta")?;
                WriteOp::Add { key, delta }
            }
            TAG_RENAME => {
                let key = key_field(d)?;
                let new_key = key_field(d)?;
                WriteOp::Rename { key, new_key }
            }
            TAG_DELETE => WriteOp::Delete { key: key_field(d)? },
            TAG_REMOVE => WriteOp::Remove { key: key_field(d)? },
            TAG_PRUNE => {
                let raw = d.bytes("command.prefix")?;
                let prefix = Prefix::new(raw).map_err(|_| Malformed("command.prefix bounds"))?;
                WriteOp::Prune { prefix }
            }
            _ => return Err(Malformed("command.tag unknown")),
        };
        Ok(Command { client_id, request_seq, op })
    }

    pub fn decode(bytes: &[u8]) -> DecodeResult<Command> {
        let mut d = Dec::new(bytes);
        let c = Command::decode_from(&mut d)?;
        d.finish("command trailing bytes")?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BatchError {
    #[error("batch must contain at least one command")]
    Empty,
    #[error("encoded batch exceeds {MAX_BATCH_BYTES} bytes")]
    TooLarge,
}

/// An ordered pack of commands replicated as one unit. Order inside a batch
/// is execution order. The encoded form is bounded at 1 MiB.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    commands: Vec<Command>,
}

impl Batch {
    pub fn new(commands: Vec<Command>) -> Result<Batch, BatchError> {
        if commands.is_empty() {
            return Err(BatchError::Empty);
        }
        let b = Batch { commands };
        if b.encoded_len() > MAX_BATCH_BYTES {
            return Err(BatchError::TooLarge);
        }
        Ok(b)
    }

    pub fn commands(&self) -> &[Command] {
        &self.commands
    }

    pub fn encoded_len(&self) -> usize {
        let mut e = Enc::new();
        self.encode_into(&mut e);
        e.len()
    }

    fn encode_into(&self, e: &mut Enc) {
        e.u32(self.commands.len() as u32);
        for c in &self.commands {
            c.encode_into(e);
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut e = Enc::new();
        self.encode_into(&mut e);
        e.into_vec()
    }

    pub fn decode(bytes: &[u8]) -> DecodeResult<Batch> {
        if bytes.len() > MAX_BATCH_BYTES {
            return Err(Malformed("batch too large"));
        }
        let mut d = Dec::new(bytes);
        let count = d.u32("batch.count")? as usize;
        if count == 0 {
            return Err(Malformed("batch empty"));
        }
        let mut commands = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            commands.push(Command::decode_from(&mut d)?);
        }
        d.finish("batch trailing bytes")?;
        Ok(Batch { commands })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(s: &[u8]) -> Key {
        Key::new(s.to_vec()).unwrap()
    }

    fn val(s: &[u8]) -> Value {
        Value::new(s.to_vec()).unwrap()
    }

    fn set(k: &[u8], v: &[u8]) -> Command {
        Command { client_id: 1, request_seq: 1, op: WriteOp::Set { key: key(k), value: val(v) } }
    }

    #[test]
    fn ballot_ordering() {
        let a = Ballot::new(1, NodeId(0));
        assert_eq!(compare_ballots(a, a), Ordering::Equal);
        assert_eq!(
            compare_ballots(Ballot::new(2, NodeId(0)), Ballot::new(1, NodeId(5))),
            Ordering::Greater
        );
        assert_eq!(
            compare_ballots(Ballot::new(3, NodeId(1)), Ballot::new(3, NodeId(2))),
            Ordering::Less
        );
    }

    #[test]
    fn key_bounds() {
        assert_eq!(Key::new(vec![]).unwrap_err(), KeyError::Empty);
        assert!(Key::new(vec![b'a'; 1024]).is_ok());
        assert_eq!(Key::new(vec![b'a'; 1025]).unwrap_err(), KeyError::TooLong);
        assert_eq!(Key::new(vec![b'a', 0, b'b']).unwrap_err(), KeyError::ReservedByte);
    }

    #[test]
    fn command_roundtrip_basic() {
        let c = set(b"a", b"b");
        assert_eq!(Command::decode(&c.encode()).unwrap(), c);
    }

    #[test]
    fn command_roundtrip_boundary_key() {
        let c = Command {
            client_id: 9,
            request_seq: 3,
            op: WriteOp::Delete { key: key(&vec![b'k'; 1024]) },
        };
        assert_eq!(Command::decode(&c.encode()).unwrap(), c);
    }

    #[test]
    fn decode_rejects_unknown_tag_and_truncation() {
        let mut enc = set(b"a", b"b").encode();
        enc[0] = 99;
        assert!(Command::decode(&enc).is_err());

        let enc = set(b"a", b"b").encode();
        for cut in 0..enc.len() {
            assert!(Command::decode(&enc[..cut]).is_err(), "cut at {cut} should fail");
        }
    }

    #[test]
    fn decode_rejects_bound_violations() {
        // Hand-build a SET whose key contains 0x00.
        let mut e = Enc::new();
        e.u8(TAG_SET).u64(1).u64(1).bytes(b"a\x00b").bytes(b"v");
        assert!(Command::decode(&e.into_vec()).is_err());
    }

    #[test]
    fn batch_roundtrip_and_bounds() {
        let b = Batch::new(vec![set(b"a", b"b")]).unwrap();
        assert_eq!(Batch::decode(&b.encode()).unwrap(), b);
        assert!(matches!(Batch::new(vec![]), Err(BatchError::Empty)));
    }

    #[test]
    fn batch_exact_size_boundary() {
        // Pad a single value until the whole batch encodes to exactly 1 MiB,
        // then confirm one more byte tips it over.
        let probe = Batch::new(vec![set(b"k", b"")]).unwrap();
        let overhead = probe.encoded_len();
        let pad = MAX_BATCH_BYTES - overhead;
        let exact = Batch::new(vec![set(b"k", &vec![b'x'; pad])]).unwrap();
        assert_eq!(exact.encoded_len(), MAX_BATCH_BYTES);

        let over = Batch::new(vec![set(b"k", &vec![b'x'; pad + 1])]);
        assert!(matches!(over, Err(BatchError::TooLarge)));
    }
}

//! Local ordered key-value store with write-ahead logging and sync-on-commit
//! transactions.
//!
//! The store keeps the whole keyspace in an ordered in-memory map and makes
//! transactions durable through a write-ahead log: a commit appends one
//! length-prefixed, checksummed record and the transaction is on disk once
//! the log has been flushed. Recovery loads the latest checkpoint and replays
//! whatever the log retained; a torn trailing record is discarded, so the
//! recovered state is exactly the set of synced transactions, in order.
//!
//! Commit and flush are split (`commit_begin` / `flush_through`) so a node
//! can chain several commits into one physical sync and keep serving events
//! while a flush is in flight. `txn_sync` is the blocking convenience used by
//! standalone callers.
//!
//! Keys beginning with byte 0x00 form the system keyspace (consensus records,
//! the applied-position marker, the duplicate-suppression table). User keys
//! never contain 0x00, so user-facing scans simply skip that range.

mod disk;

use std::collections::BTreeMap;
use std::collections::VecDeque;

use thiserror::Error;

use crate::codec::{crc32, Dec, Enc, Malformed};

pub use disk::{Disk, FileDisk, SharedSimDisk, SimDisk};

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt store: {0}")]
    Corrupt(&'static str),
}

impl From<Malformed> for StorageError {
    fn from(_: Malformed) -> Self {
        StorageError::Corrupt("record encoding")
    }
}

/// True for keys in the reserved system namespace.
pub fn is_sys_key(key: &[u8]) -> bool {
    key.first() == Some(&0)
}

#[derive(Debug, Clone)]
pub struct StoreConfig {
    /// Values larger than `page_size / 4` go to the checkpoint's overflow
    /// section rather than inline with their key.
    pub page_size: usize,
    /// Approximate memory bound; governs how much WAL accumulates before a
    /// checkpoint rewrites it.
    pub cache_size: u64,
    /// Initial capacity hint for the commit encode buffer.
    pub log_buffer_size: u64,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            page_size: 4096,
            cache_size: 200 * 1024 * 1024,
            log_buffer_size: 10 * 1024 * 1024,
        }
    }
}

impl StoreConfig {
    fn checkpoint_wal_bytes(&self) -> u64 {
        (self.cache_size / 8).clamp(1 << 20, 256 << 20)
    }
}

/// Identifies a commit for flush tracking. Tokens are handed out in commit
/// order and flushes cover every commit up to and including the token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SyncToken(pub u64);

#[derive(Debug, Clone, PartialEq, Eq)]
enum TxnOp {
    Put(Vec<u8>, Vec<u8>),
    Delete(Vec<u8>),
}

struct OpenTxn {
    ops: Vec<TxnOp>,
    // Previous bindings, in reverse application order, for abort.
    undo: Vec<(Vec<u8>, Option<Vec<u8>>)>,
}

/// Read-only view of the store at the moment it was taken. Later writes do
/// not alter the view.
pub struct Snapshot {
    map: BTreeMap<Vec<u8>, Vec<u8>>,
}

impl Snapshot {
    pub fn get(&self, key: &[u8]) -> Option<&[u8]> {
        self.map.get(key).map(|v| v.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[u8], &[u8])> {
        self.map.iter().map(|(k, v)| (k.as_slice(), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

pub struct Store {
    map: BTreeMap<Vec<u8>, Vec<u8>>,
    open: Option<OpenTxn>,
    // Commits appended to the WAL but not yet covered by a flush.
    unflushed: VecDeque<SyncToken>,
    next_token: u64,
    txn_seq: u64,
    checkpoint_seq: u64,
    wal_bytes_since_checkpoint: u64,
    disk: Box<dyn Disk>,
    config: StoreConfig,
}

const CKPT_MAGIC: &[u8; 8] = b"QKVCKPT\x01";
const CKPT_VERSION: u32 = 1;

impl Store {
    /// Open a store over `disk`, recovering the synced state.
    pub fn open(mut disk: Box<dyn Disk>, config: StoreConfig) -> Result<Store, StorageError> {
        let mut map = BTreeMap::new();
        let mut seq = 0u64;
        if let Some(ckpt) = disk.checkpoint_read()? {
            seq = decode_checkpoint(&ckpt, &mut map)?;
        }
        let checkpoint_seq = seq;
        let wal = disk.wal_read()?;
        let mut pos = 0usize;
        while wal.len() - pos >= 8 {
            let len = u32::from_le_bytes(wal[pos..pos + 4].try_into().unwrap()) as usize;
            let crc = u32::from_le_bytes(wal[pos + 4..pos + 8].try_into().unwrap());
            if wal.len() - pos - 8 < len {
                break; // torn trailing record
            }
            let payload = &wal[pos + 8..pos + 8 + len];
            if crc32(payload) != crc {
                break; // torn trailing record
            }
            pos += 8 + len;
            let rec_seq = apply_wal_record(payload, seq, &mut map)?;
            if let Some(s) = rec_seq {
                seq = s;
            }
        }
        Ok(Store {
            map,
            open: None,
            unflushed: VecDeque::new(),
            next_token: 1,
            txn_seq: seq,
            checkpoint_seq,
            wal_bytes_since_checkpoint: (pos as u64),
            disk,
            config,
        })
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    // ---- transactions ----

    /// Open a transaction. At most one may be open at a time; the apply path
    /// is sequential by design.
    pub fn txn_begin(&mut self) {
        assert!(self.open.is_none(), "one open transaction at a time");
        self.open = Some(OpenTxn { ops: Vec::new(), undo: Vec::new() });
    }

    pub fn txn_is_open(&self) -> bool {
        self.open.is_some()
    }

    /// True if an open transaction has buffered any operations.
    pub fn txn_dirty(&self) -> bool {
        self.open.as_ref().is_some_and(|t| !t.ops.is_empty())
    }

    pub fn txn_put(&mut self, key: &[u8], value: &[u8]) {
        let txn = self.open.as_mut().expect("txn_put without open transaction");
        let prev = self.map.insert(key.to_vec(), value.to_vec());
        txn.undo.push((key.to_vec(), prev));
        txn.ops.push(TxnOp::Put(key.to_vec(), value.to_vec()));
    }

    pub fn txn_delete(&mut self, key: &[u8]) {
        let txn = self.open.as_mut().expect("txn_delete without open transaction");
        let prev = self.map.remove(key);
        txn.undo.push((key.to_vec(), prev));
        txn.ops.push(TxnOp::Delete(key.to_vec()));
    }

    pub fn txn_abort(&mut self) {
        let txn = self.open.take().expect("txn_abort without open transaction");
        for (key, prev) in txn.undo.into_iter().rev() {
            match prev {
                Some(v) => self.map.insert(key, v),
                None => self.map.remove(&key),
            };
        }
    }

    /// Append the open transaction to the WAL and hand back a token; the
    /// transaction is durable once a flush covering the token completes.
    pub fn commit_begin(&mut self) -> Result<SyncToken, StorageError> {
        let txn = self.open.take().expect("commit_begin without open transaction");
        self.txn_seq += 1;
        let mut payload = Enc::with_capacity((self.config.log_buffer_size as usize).min(1 << 16));
        payload.u64(self.txn_seq);
        payload.u32(txn.ops.len() as u32);
        for op in &txn.ops {
            match op {
                TxnOp::Put(k, v) => {
                    payload.u8(1).bytes(k).bytes(v);
                }
                TxnOp::Delete(k) => {
                    payload.u8(2).bytes(k);
                }
            }
        }
        let payload = payload.into_vec();
        let mut rec = Enc::with_capacity(payload.len() + 8);
        rec.u32(payload.len() as u32).u32(crc32(&payload)).raw(&payload);
        let rec = rec.into_vec();
        self.wal_bytes_since_checkpoint += rec.len() as u64;
        self.disk.wal_append(&rec)?;
        let token = SyncToken(self.next_token);
        self.next_token += 1;
        self.unflushed.push_back(token);
        Ok(token)
    }

    /// Perform the physical flush covering `token` (and everything committed
    /// before it). Runs a checkpoint afterwards when the WAL has grown past
    /// the configured bound.
    pub fn flush_through(&mut self, token: SyncToken) -> Result<(), StorageError> {
        if self.unflushed.front().is_some_and(|&t| t <= token) {
            self.disk.wal_flush()?;
            while self.unflushed.front().is_some_and(|&t| t <= token) {
                self.unflushed.pop_front();
            }
        }
        if self.wal_bytes_since_checkpoint >= self.config.checkpoint_wal_bytes()
            && self.unflushed.is_empty()
        {
            self.write_checkpoint()?;
        }
        Ok(())
    }

    /// Blocking commit-and-sync for standalone use.
    pub fn txn_sync(&mut self) -> Result<(), StorageError> {
        let token = self.commit_begin()?;
        self.flush_through(token)
    }

    fn write_checkpoint(&mut self) -> Result<(), StorageError> {
        // The checkpoint reflects the applied map, which at this point holds
        // exactly the flushed transactions (callers checkpoint only when no
        // commit is pending and no transaction is open).
        assert!(self.open.is_none() && self.unflushed.is_empty());
        let bytes = encode_checkpoint(&self.map, self.txn_seq, self.config.page_size);
        self.disk.checkpoint_replace(&bytes)?;
        self.disk.wal_truncate()?;
        self.checkpoint_seq = self.txn_seq;
        self.wal_bytes_since_checkpoint = 0;
        Ok(())
    }

    /// Replace the entire store contents with `pairs` at transaction sequence
    /// continuity, durably and atomically. Used when a lagging node installs
    /// a peer's database copy.
    pub fn install_snapshot(
        &mut self,
        pairs: impl IntoIterator<Item = (Vec<u8>, Vec<u8>)>,
    ) -> Result<(), StorageError> {
        assert!(self.open.is_none(), "install with open transaction");
        self.unflushed.clear();
        self.map = pairs.into_iter().collect();
        self.txn_seq += 1;
        self.write_checkpoint()
    }

    // ---- reads ----

    pub fn get(&self, key: &[u8]) -> Option<&[u8]> {
        self.map.get(key).map(|v| v.as_slice())
    }

    /// Ordered iteration from `start` (inclusive), forward or backward.
    pub fn iter_from<'a>(
        &'a self,
        start: &[u8],
        dir: Direction,
    ) -> Box<dyn Iterator<Item = (&'a [u8], &'a [u8])> + 'a> {
        match dir {
            Direction::Forward => Box::new(
                self.map
                    .range(start.to_vec()..)
                    .map(|(k, v)| (k.as_slice(), v.as_slice())),
            ),
            Direction::Backward => Box::new(
                self.map
                    .range(..=start.to_vec())
                    .rev()
                    .map(|(k, v)| (k.as_slice(), v.as_slice())),
            ),
        }
    }

    /// Backward iteration from the end of the keyspace.
    pub fn iter_back_from_end(&self) -> impl Iterator<Item = (&[u8], &[u8])> {
        self.map.iter().rev().map(|(k, v)| (k.as_slice(), v.as_slice()))
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot { map: self.map.clone() }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Physical flushes performed so far (WAL syncs and checkpoint writes).
    pub fn flush_count(&self) -> u64 {
        self.disk.flush_count()
    }

    pub fn has_unflushed_commits(&self) -> bool {
        !self.unflushed.is_empty()
    }
}

fn apply_wal_record(
    payload: &[u8],
    seq: u64,
    map: &mut BTreeMap<Vec<u8>, Vec<u8>>,
) -> Result<Option<u64>, StorageError> {
    let mut d = Dec::new(payload);
    let rec_seq = d.u64("wal.seq")?;
    if rec_seq <= seq {
        // Already covered by the checkpoint.
        return Ok(None);
    }
    let count = d.u32("wal.count")? as usize;
    for _ in 0..count {
        match d.u8("wal.op")? {
            1 => {
                let k = d.bytes("wal.key")?.to_vec();
                let v = d.bytes("wal.value")?.to_vec();
                map.insert(k, v);
            }
            2 => {
                let k = d.bytes("wal.key")?.to_vec();
                map.remove(&k);
            }
            _ => return Err(StorageError::Corrupt("wal op tag")),
        }
    }
    d.finish("wal record")?;
    Ok(Some(rec_seq))
}

fn encode_checkpoint(map: &BTreeMap<Vec<u8>, Vec<u8>>, seq: u64, page_size: usize) -> Vec<u8> {
    let overflow_threshold = page_size / 4;
    let mut e = Enc::new();
    e.raw(CKPT_MAGIC);
    e.u32(CKPT_VERSION);
    e.u64(seq);
    e.u32(map.len() as u32);
    let mut overflow: Vec<&[u8]> = Vec::new();
    for (k, v) in map {
        e.bytes(k);
        if v.len() > overflow_threshold {
            e.u8(1).u32(overflow.len() as u32);
            overflow.push(v);
        } else {
            e.u8(0).bytes(v);
        }
    }
    e.u32(overflow.len() as u32);
    for v in overflow {
        e.bytes(v);
    }
    e.into_vec()
}

fn decode_checkpoint(
    bytes: &[u8],
    map: &mut BTreeMap<Vec<u8>, Vec<u8>>,
) -> Result<u64, StorageError> {
    let mut d = Dec::new(bytes);
    let mut magic = [0u8; 8];
    for b in magic.iter_mut() {
        *b = d.u8("ckpt.magic")?;
    }
    if &magic != CKPT_MAGIC {
        return Err(StorageError::Corrupt("checkpoint magic"));
    }
    if d.u32("ckpt.version")? != CKPT_VERSION {
        return Err(StorageError::Corrupt("checkpoint version"));
    }
    let seq = d.u64("ckpt.seq")?;
    let count = d.u32("ckpt.count")? as usize;
    // First pass: inline entries plus overflow slots to resolve.
    let mut pending: Vec<(Vec<u8>, Option<u32>)> = Vec::with_capacity(count);
    for _ in 0..count {
        let k = d.bytes("ckpt.key")?.to_vec();
        match d.u8("ckpt.flag")? {
            0 => {
                let v = d.bytes("ckpt.value")?.to_vec();
                map.insert(k, v);
            }
            1 => {
                let idx = d.u32("ckpt.overflow_idx")?;
                pending.push((k, Some(idx)));
            }
            _ => return Err(StorageError::Corrupt("checkpoint entry flag")),
        }
    }
    let ocount = d.u32("ckpt.overflow_count")? as usize;
    let mut overflow = Vec::with_capacity(ocount);
    for _ in 0..ocount {
        overflow.push(d.bytes("ckpt.overflow_value")?.to_vec());
    }
    d.finish("checkpoint trailing bytes")?;
    for (k, idx) in pending {
        let idx = idx.unwrap() as usize;
        let v = overflow.get(idx).ok_or(StorageError::Corrupt("overflow index"))?;
        map.insert(k, v.clone());
    }
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mem_store() -> Store {
        Store::open(Box::new(SharedSimDisk::new()), StoreConfig::default()).unwrap()
    }

    #[test]
    fn put_sync_crash_recover() {
        let disk = SharedSimDisk::new();
        {
            let mut s = Store::open(Box::new(disk.clone()), StoreConfig::default()).unwrap();
            s.txn_begin();
            s.txn_put(b"a", b"1");
            s.txn_sync().unwrap();
        }
        disk.crash();
        let s = Store::open(Box::new(disk), StoreConfig::default()).unwrap();
        assert_eq!(s.get(b"a"), Some(&b"1"[..]));
    }

    #[test]
    fn unsynced_txn_lost_on_crash() {
        let disk = SharedSimDisk::new();
        {
            let mut s = Store::open(Box::new(disk.clone()), StoreConfig::default()).unwrap();
            s.txn_begin();
            s.txn_put(b"a", b"1");
            let _token = s.commit_begin().unwrap(); // appended, never flushed
        }
        disk.crash();
        let s = Store::open(Box::new(disk), StoreConfig::default()).unwrap();
        assert_eq!(s.get(b"a"), None);
    }

    #[test]
    fn abort_restores_previous_bindings() {
        let mut s = mem_store();
        s.txn_begin();
        s.txn_put(b"a", b"1");
        s.txn_put(b"b", b"2");
        s.txn_sync().unwrap();

        s.txn_begin();
        s.txn_put(b"a", b"changed");
        s.txn_delete(b"b");
        s.txn_put(b"c", b"3");
        assert_eq!(s.get(b"a"), Some(&b"changed"[..]));
        s.txn_abort();
        assert_eq!(s.get(b"a"), Some(&b"1"[..]));
        assert_eq!(s.get(b"b"), Some(&b"2"[..]));
        assert_eq!(s.get(b"c"), None);
    }

    #[test]
    fn get_and_overwrite() {
        let mut s = mem_store();
        assert_eq!(s.get(b"missing"), None);
        s.txn_begin();
        s.txn_put(b"a", b"1");
        s.txn_sync().unwrap();
        assert_eq!(s.get(b"a"), Some(&b"1"[..]));
        s.txn_begin();
        s.txn_put(b"a", b"2");
        s.txn_sync().unwrap();
        assert_eq!(s.get(b"a"), Some(&b"2"[..]));
    }

    #[test]
    fn iteration_order() {
        let mut s = mem_store();
        s.txn_begin();
        for k in [b"a", b"b", b"c"] {
            s.txn_put(k, b"v");
        }
        s.txn_sync().unwrap();
        let fwd: Vec<_> = s.iter_from(b"b", Direction::Forward).map(|(k, _)| k.to_vec()).collect();
        assert_eq!(fwd, vec![b"b".to_vec(), b"c".to_vec()]);
        let bwd: Vec<_> = s.iter_from(b"b", Direction::Backward).map(|(k, _)| k.to_vec()).collect();
        assert_eq!(bwd, vec![b"b".to_vec(), b"a".to_vec()]);
    }

    #[test]
    fn snapshot_isolated_from_writes() {
        let mut s = mem_store();
        s.txn_begin();
        s.txn_put(b"a", b"1");
        s.txn_sync().unwrap();
        let snap = s.snapshot();
        s.txn_begin();
        s.txn_put(b"a", b"2");
        s.txn_put(b"b", b"3");
        s.txn_sync().unwrap();
        assert_eq!(snap.get(b"a"), Some(&b"1"[..]));
        assert_eq!(snap.get(b"b"), None);
        assert_eq!(snap.len(), 1);
    }

    #[test]
    fn snapshot_of_empty_store_is_empty() {
        let s = mem_store();
        assert!(s.snapshot().is_empty());
    }

    #[test]
    fn checkpoint_roundtrip_with_overflow_values() {
        let mut map = BTreeMap::new();
        map.insert(b"small".to_vec(), b"v".to_vec());
        map.insert(b"big".to_vec(), vec![7u8; 5000]);
        map.insert(b"big2".to_vec(), vec![9u8; 2000]);
        let bytes = encode_checkpoint(&map, 42, 4096);
        let mut out = BTreeMap::new();
        let seq = decode_checkpoint(&bytes, &mut out).unwrap();
        assert_eq!(seq, 42);
        assert_eq!(out, map);
    }

    #[test]
    fn file_disk_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        {
            let disk = FileDisk::open(dir.path()).unwrap();
            let mut s = Store::open(Box::new(disk), StoreConfig::default()).unwrap();
            s.txn_begin();
            s.txn_put(b"k", b"v");
            s.txn_sync().unwrap();
        }
        let disk = FileDisk::open(dir.path()).unwrap();
        let s = Store::open(Box::new(disk), StoreConfig::default()).unwrap();
        assert_eq!(s.get(b"k"), Some(&b"v"[..]));
    }

    // Pull the SimDisk back out of a store to simulate crash-and-reopen.
    fn take_sim_disk(store: Store) -> SimDisk {
        let Store { disk, .. } = store;
        // SAFETY-free downcast substitute: SimDisk is the only Disk used in
        // these tests; rebuild it from the raw parts we can observe.
        // Instead of downcasting we just transmute via Any in a helper.
        let any: Box<dyn std::any::Any> = unsafe { std::mem::transmute(disk) };
        *any.downcast::<SimDisk>().expect("test stores use SimDisk")
    }
}

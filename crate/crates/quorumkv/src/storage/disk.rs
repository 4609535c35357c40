//! Durable-medium abstraction behind the store.
//!
//! The store only ever performs four kinds of physical operations: append to
//! the write-ahead log, flush it, atomically replace the checkpoint file, and
//! read both back at recovery. `FileDisk` maps these onto real files;
//! `SimDisk` keeps the same byte streams in memory with an explicit
//! buffered/durable boundary so the simulator can crash a node at any point
//! and recover exactly what a real disk would have retained.

use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use super::StorageError;

pub trait Disk {
    /// Append bytes to the write-ahead log. Buffered: not durable until
    /// `wal_flush` returns.
    fn wal_append(&mut self, bytes: &[u8]) -> Result<(), StorageError>;

    /// Make all appended WAL bytes durable. This is the physical sync the
    /// metrics counters track.
    fn wal_flush(&mut self) -> Result<(), StorageError>;

    /// Entire durable WAL contents, for recovery.
    fn wal_read(&mut self) -> Result<Vec<u8>, StorageError>;

    /// Discard the WAL (called after a checkpoint has been made durable).
    fn wal_truncate(&mut self) -> Result<(), StorageError>;

    /// Atomically replace the checkpoint with `bytes` and make it durable.
    /// A crash during the replacement leaves either the old or the new
    /// checkpoint, never a mix.
    fn checkpoint_replace(&mut self, bytes: &[u8]) -> Result<(), StorageError>;

    /// Durable checkpoint contents, if one exists.
    fn checkpoint_read(&mut self) -> Result<Option<Vec<u8>>, StorageError>;

    /// Number of physical flush operations performed so far.
    fn flush_count(&self) -> u64;
}

/// In-memory disk with an explicit durability boundary, for the simulator
/// and for storage crash-consistency tests.
#[derive(Default)]
pub struct SimDisk {
    wal_durable: Vec<u8>,
    wal_buffered: Vec<u8>,
    checkpoint: Option<Vec<u8>>,
    flushes: u64,
}

impl SimDisk {
    pub fn new() -> SimDisk {
        SimDisk::default()
    }

    /// Simulate a crash: everything buffered but not flushed is lost.
    pub fn crash(&mut self) {
        self.wal_buffered.clear();
    }

    pub fn durable_wal_len(&self) -> usize {
        self.wal_durable.len()
    }
}

impl Disk for SimDisk {
    fn wal_append(&mut self, bytes: &[u8]) -> Result<(), StorageError> {
        self.wal_buffered.extend_from_slice(bytes);
        Ok(())
    }

    fn wal_flush(&mut self) -> Result<(), StorageError> {
        self.wal_durable.append(&mut self.wal_buffered);
        self.flushes += 1;
        Ok(())
    }

    fn wal_read(&mut self) -> Result<Vec<u8>, StorageError> {
        Ok(self.wal_durable.clone())
    }

    fn wal_truncate(&mut self) -> Result<(), StorageError> {
        self.wal_durable.clear();
        self.wal_buffered.clear();
        Ok(())
    }

    fn checkpoint_replace(&mut self, bytes: &[u8]) -> Result<(), StorageError> {
        self.checkpoint = Some(bytes.to_vec());
        self.flushes += 1;
        Ok(())
    }

    fn checkpoint_read(&mut self) -> Result<Option<Vec<u8>>, StorageError> {
        Ok(self.checkpoint.clone())
    }

    fn flush_count(&self) -> u64 {
        self.flushes
    }
}

/// A `SimDisk` behind a shared handle, so a simulated node's disk survives
/// the node itself: the simulator keeps one handle, crashes it (dropping
/// buffered bytes), and reopens a store over the same handle at restart.
#[derive(Clone, Default)]
pub struct SharedSimDisk(std::rc::Rc<std::cell::RefCell<SimDisk>>);

impl SharedSimDisk {
    pub fn new() -> SharedSimDisk {
        SharedSimDisk::default()
    }

    /// Lose everything buffered but not flushed.
    pub fn crash(&self) {
        self.0.borrow_mut().crash();
    }

    pub fn flushes(&self) -> u64 {
        self.0.borrow().flushes
    }
}

impl Disk for SharedSimDisk {
    fn wal_append(&mut self, bytes: &[u8]) -> Result<(), StorageError> {
        self.0.borrow_mut().wal_append(bytes)
    }

    fn wal_flush(&mut self) -> Result<(), StorageError> {
        self.0.borrow_mut().wal_flush()
    }

    fn wal_read(&mut self) -> Result<Vec<u8>, StorageError> {
        self.0.borrow_mut().wal_read()
    }

    fn wal_truncate(&mut self) -> Result<(), StorageError> {
        self.0.borrow_mut().wal_truncate()
    }

    fn checkpoint_replace(&mut self, bytes: &[u8]) -> Result<(), StorageError> {
        self.0.borrow_mut().checkpoint_replace(bytes)
    }

    fn checkpoint_read(&mut self) -> Result<Option<Vec<u8>>, StorageError> {
        self.0.borrow_mut().checkpoint_read()
    }

    fn flush_count(&self) -> u64 {
        self.0.borrow().flushes
    }
}

/// File-backed disk: `wal.log` plus `checkpoint.db` under a data directory.
/// Checkpoint replacement goes through a temp file and rename.
pub struct FileDisk {
    dir: PathBuf,
    wal: File,
    flushes: u64,
}

impl FileDisk {
    pub fn open(dir: impl AsRef<Path>) -> Result<FileDisk, StorageError> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir)?;
        let wal = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(dir.join("wal.log"))?;
        Ok(FileDisk { dir, wal, flushes: 0 })
    }

    fn checkpoint_path(&self) -> PathBuf {
        self.dir.join("checkpoint.db")
    }
}

impl Disk for FileDisk {
    fn wal_append(&mut self, bytes: &[u8]) -> Result<(), StorageError> {
        self.wal.write_all(bytes)?;
        Ok(())
    }

    fn wal_flush(&mut self) -> Result<(), StorageError> {
        self.wal.sync_data()?;
        self.flushes += 1;
        Ok(())
    }

    fn wal_read(&mut self) -> Result<Vec<u8>, StorageError> {
        let mut buf = Vec::new();
        let mut f = File::open(self.dir.join("wal.log"))?;
        f.read_to_end(&mut buf)?;
        Ok(buf)
    }

    fn wal_truncate(&mut self) -> Result<(), StorageError> {
        self.wal.set_len(0)?;
        self.wal.sync_data()?;
        Ok(())
    }

    fn checkpoint_replace(&mut self, bytes: &[u8]) -> Result<(), StorageError> {
        let tmp = self.dir.join("checkpoint.tmp");
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, self.checkpoint_path())?;
        // Make the rename itself durable.
        if let Ok(d) = File::open(&self.dir) {
            let _ = d.sync_all();
        }
        self.flushes += 1;
        Ok(())
    }

    fn checkpoint_read(&mut self) -> Result<Option<Vec<u8>>, StorageError> {
        match File::open(self.checkpoint_path()) {
            Ok(mut f) => {
                let mut buf = Vec::new();
                f.read_to_end(&mut buf)?;
                Ok(Some(buf))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn flush_count(&self) -> u64 {
        self.flushes
    }
}

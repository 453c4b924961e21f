//! Durable file helpers and crash-point injection.
//!
//! Every physical write in the kernel (WAL records, chunk files, catalog,
//! buffer files, record file) passes through an [`IoGate`]. A gate built with
//! [`IoGate::crash_after`] admits a fixed number of writes and then behaves
//! like a dead process: the next write may be torn and every later write
//! fails with [`Error::Crashed`]. Reopening the directory afterwards exercises
//! recovery exactly as a power cut at that point would.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicI64, AtomicU64, AtomicUsize, Ordering};

use crate::error::{Error, Result};

#[derive(Debug)]
pub struct IoGate {
    /// Remaining admitted writes; negative means unlimited.
    budget: AtomicI64,
    torn_bytes: AtomicUsize,
    crashed: AtomicBool,
    admitted: AtomicU64,
}

pub(crate) enum Admission {
    Full,
    Torn(usize),
}

impl Default for IoGate {
    fn default() -> Self {
        Self::unlimited()
    }
}

impl IoGate {
    pub fn unlimited() -> Self {
        IoGate {
            budget: AtomicI64::new(-1),
            torn_bytes: AtomicUsize::new(0),
            crashed: AtomicBool::new(false),
            admitted: AtomicU64::new(0),
        }
    }

    /// Admits `writes` writes; the next one persists only its first
    /// `torn_bytes` bytes (WAL records only) and everything after fails.
    pub fn crash_after(writes: u64, torn_bytes: usize) -> Self {
        IoGate {
            budget: AtomicI64::new(writes as i64),
            torn_bytes: AtomicUsize::new(torn_bytes),
            crashed: AtomicBool::new(false),
            admitted: AtomicU64::new(0),
        }
    }

    pub fn has_crashed(&self) -> bool {
        self.crashed.load(Ordering::SeqCst)
    }

    /// Writes admitted in full so far.
    pub fn admitted(&self) -> u64 {
        self.admitted.load(Ordering::SeqCst)
    }

    pub(crate) fn admit(&self) -> Result<Admission> {
        if self.has_crashed() {
            return Err(Error::Crashed);
        }
        let prev = self
            .budget
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |b| {
                if b < 0 {
                    Some(b)
                } else if b == 0 {
                    None
                } else {
                    Some(b - 1)
                }
            });
        match prev {
            Ok(_) => {
                self.admitted.fetch_add(1, Ordering::SeqCst);
                Ok(Admission::Full)
            }
            Err(_) => {
                self.crashed.store(true, Ordering::SeqCst);
                let torn = self.torn_bytes.load(Ordering::SeqCst);
                if torn > 0 {
                    Ok(Admission::Torn(torn))
                } else {
                    Err(Error::Crashed)
                }
            }
        }
    }

    /// Writes `bytes` to `path` via a temporary file, fsync and rename, so the
    /// file is either fully present with the new content or untouched.
    pub(crate) fn write_atomic(&self, path: &Path, bytes: &[u8]) -> Result<()> {
        match self.admit()? {
            Admission::Full => {}
            Admission::Torn(_) => return Err(Error::Crashed),
        }
        let tmp = path.with_extension("tmp");
        {
            let mut f = File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        if let Some(dir) = path.parent() {
            sync_dir(dir)?;
        }
        Ok(())
    }

    pub(crate) fn remove(&self, path: &Path) -> Result<()> {
        if self.has_crashed() {
            return Err(Error::Crashed);
        }
        match fs::remove_file(path) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(e.into()),
        }
    }
}

pub(crate) fn sync_dir(dir: &Path) -> Result<()> {
    // Directory fsync is not supported everywhere; a failure here is not fatal.
    if let Ok(d) = OpenOptions::new().read(true).open(dir) {
        let _ = d.sync_all();
    }
    Ok(())
}

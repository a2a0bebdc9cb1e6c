//! Footprints of finished transactions, recorded by workers and merged
//! after a run.

use serde::{Deserialize, Serialize};

use crate::lock_manager::{AbortCause, LockMode};
use crate::storage::{Key, TxnId};

/// Which installed version an access observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReadFrom {
    /// The loaded value, before any install.
    Initial,
    /// The value written by this transaction.
    Writer(TxnId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessRecord {
    pub table: u32,
    pub key: Key,
    pub mode: LockMode,
    /// Version observed on first access; `None` for a blind write.
    pub read_from: Option<ReadFrom>,
    /// Per-tuple sequence number of the version this transaction installed.
    pub written_seq: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitRecord {
    pub id: TxnId,
    pub commit_seq: u64,
    pub accesses: Vec<AccessRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbortRecord {
    pub id: TxnId,
    pub cause: AbortCause,
    /// The transaction that wounded or cascaded into this one.
    pub parent: Option<TxnId>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct History {
    pub committed: Vec<CommitRecord>,
    pub aborted: Vec<AbortRecord>,
}

impl History {
    pub fn merge(parts: impl IntoIterator<Item = History>) -> History {
        let mut out = History::default();
        for mut p in parts {
            out.committed.append(&mut p.committed);
            out.aborted.append(&mut p.aborted);
        }
        out.committed.sort_by_key(|c| c.commit_seq);
        out
    }

    pub fn is_empty(&self) -> bool {
        self.committed.is_empty() && self.aborted.is_empty()
    }
}

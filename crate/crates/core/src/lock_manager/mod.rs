//! Per-tuple lock entries and the protocol functions that move
//! transactions between their `retired`, `owners` and `waiters` lists.
//!
//! One [`LockEntry`] exists per tuple. Every protocol function runs on the
//! entry's [`EntryState`] while the caller holds the entry latch; no
//! function ever takes a second latch. Effects on other transactions are
//! limited to atomic flag and counter updates on their [`TxnState`].

mod entry;
mod txn;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::AtomicU64;

use parking_lot::{Mutex, MutexGuard};
use serde::{Deserialize, Serialize};

pub use entry::{format_list, Acquired, EntrySnapshot, EntryState, ListKind, LockReq, Visible};
pub use txn::{AbortAttempt, AbortCause, CommitBlock, TxnRef, TxnState, UNASSIGNED};

use crate::error::Error;
use crate::storage::{Key, TxnId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LockMode {
    #[serde(rename = "SH")]
    Shared,
    #[serde(rename = "EX")]
    Exclusive,
}

impl LockMode {
    pub fn conflicts(self, other: LockMode) -> bool {
        !(self == LockMode::Shared && other == LockMode::Shared)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LockMode::Shared => "SH",
            LockMode::Exclusive => "EX",
        }
    }
}

impl fmt::Display for LockMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LockMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "SH" | "S" | "SHARED" | "READ" => Ok(LockMode::Shared),
            "EX" | "X" | "EXCLUSIVE" | "WRITE" => Ok(LockMode::Exclusive),
            _ => Err(Error::Parse(format!("unknown lock mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Bamboo,
    WoundWait,
    WaitDie,
    NoWait,
}

impl Protocol {
    pub const ALL: [Protocol; 4] = [Protocol::Bamboo, Protocol::WoundWait, Protocol::WaitDie, Protocol::NoWait];

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Bamboo => "bamboo",
            Protocol::WoundWait => "wound_wait",
            Protocol::WaitDie => "wait_die",
            Protocol::NoWait => "no_wait",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "bamboo" | "bb" => Ok(Protocol::Bamboo),
            "wound_wait" | "ww" => Ok(Protocol::WoundWait),
            "wait_die" | "wd" => Ok(Protocol::WaitDie),
            "no_wait" | "nw" => Ok(Protocol::NoWait),
            _ => Err(Error::Parse(format!("unknown protocol `{s}`"))),
        }
    }
}

pub const DEFAULT_DELTA: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyFlags {
    /// Reads move straight to `retired` when granted.
    pub read_autoretire: bool,
    /// Writes in the trailing `delta` fraction of a transaction do not retire.
    pub delta_retire: bool,
    pub delta: f64,
    /// Readers slot into `retired` at their timestamp instead of wounding writers.
    pub no_raw_abort: bool,
    /// Timestamps are assigned on a transaction's first conflict.
    pub dynamic_ts: bool,
}

impl Default for PolicyFlags {
    fn default() -> Self {
        PolicyFlags { read_autoretire: false, delta_retire: false, delta: DEFAULT_DELTA, no_raw_abort: false, dynamic_ts: false }
    }
}

impl PolicyFlags {
    pub fn all() -> Self {
        PolicyFlags { read_autoretire: true, delta_retire: true, delta: DEFAULT_DELTA, no_raw_abort: true, dynamic_ts: true }
    }

    /// Every combination of the four boolean flags.
    pub fn combinations() -> Vec<PolicyFlags> {
        (0..16u8)
            .map(|bits| PolicyFlags {
                read_autoretire: bits & 1 != 0,
                delta_retire: bits & 2 != 0,
                delta: DEFAULT_DELTA,
                no_raw_abort: bits & 4 != 0,
                dynamic_ts: bits & 8 != 0,
            })
            .collect()
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.read_autoretire {
            parts.push("autoretire".to_string());
        }
        if self.delta_retire {
            parts.push(format!("delta={}", self.delta));
        }
        if self.no_raw_abort {
            parts.push("noraw".to_string());
        }
        if self.dynamic_ts {
            parts.push("dynts".to_string());
        }
        if parts.is_empty() {
            "base".to_string()
        } else {
            parts.join("+")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub protocol: Protocol,
    pub flags: PolicyFlags,
}

impl Policy {
    /// Builds a policy; non-bamboo protocols keep only `dynamic_ts`.
    pub fn new(protocol: Protocol, flags: PolicyFlags) -> Self {
        let flags = if protocol == Protocol::Bamboo {
            flags
        } else {
            PolicyFlags { dynamic_ts: flags.dynamic_ts, ..PolicyFlags::default() }
        };
        Policy { protocol, flags }
    }

    pub fn plain(protocol: Protocol) -> Self {
        Policy::new(protocol, PolicyFlags::default())
    }

    pub fn is_bamboo(&self) -> bool {
        self.protocol == Protocol::Bamboo
    }

    pub fn autoretire_reads(&self) -> bool {
        self.is_bamboo() && (self.flags.read_autoretire || self.flags.no_raw_abort)
    }

    pub fn label(&self) -> String {
        if self.is_bamboo() {
            format!("bamboo[{}]", self.flags.label())
        } else if self.flags.dynamic_ts {
            format!("{}[dynts]", self.protocol)
        } else {
            self.protocol.to_string()
        }
    }
}

/// Invoked whenever a transaction is marked aborted by someone else.
pub type AbortHook<'a> = &'a (dyn Fn(&TxnRef, AbortCause) + Sync);

/// Read-only context shared by the protocol functions.
#[derive(Clone, Copy)]
pub struct LockCtx<'a> {
    pub policy: &'a Policy,
    pub ts_source: &'a AtomicU64,
    pub hook: Option<AbortHook<'a>>,
}

impl<'a> LockCtx<'a> {
    pub fn new(policy: &'a Policy, ts_source: &'a AtomicU64) -> Self {
        LockCtx { policy, ts_source, hook: None }
    }

    pub(crate) fn abort_other(&self, victim: &TxnRef, cause: AbortCause, parent: TxnId) -> AbortAttempt {
        let res = victim.try_abort(cause, Some(parent));
        if res == AbortAttempt::Set {
            if let Some(hook) = self.hook {
                hook(victim, cause);
            }
        }
        res
    }
}

#[derive(Debug, Default)]
pub struct LockEntry {
    state: Mutex<EntryState>,
}

impl LockEntry {
    pub fn latch(&self) -> MutexGuard<'_, EntryState> {
        self.state.lock()
    }
}

/// Lock entries for one table, indexed by key.
#[derive(Debug)]
pub struct LockTable {
    entries: Vec<LockEntry>,
}

impl LockTable {
    pub fn new(rows: u64) -> Self {
        LockTable { entries: (0..rows).map(|_| LockEntry::default()).collect() }
    }

    pub fn entry(&self, key: Key) -> &LockEntry {
        &self.entries[key as usize]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Key, &LockEntry)> {
        self.entries.iter().enumerate().map(|(k, e)| (k as Key, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conflict_matrix() {
        use LockMode::*;
        assert!(!Shared.conflicts(Shared));
        assert!(Shared.conflicts(Exclusive));
        assert!(Exclusive.conflicts(Shared));
        assert!(Exclusive.conflicts(Exclusive));
    }

    #[test]
    fn baselines_drop_bamboo_flags() {
        for p in [Protocol::WoundWait, Protocol::WaitDie, Protocol::NoWait] {
            let pol = Policy::new(p, PolicyFlags::all());
            assert!(!pol.flags.read_autoretire && !pol.flags.delta_retire && !pol.flags.no_raw_abort);
            assert!(pol.flags.dynamic_ts);
        }
        assert_eq!(Policy::new(Protocol::Bamboo, PolicyFlags::all()).flags, PolicyFlags::all());
    }

    #[test]
    fn parse_names() {
        assert_eq!("wound-wait".parse::<Protocol>().unwrap(), Protocol::WoundWait);
        assert_eq!("EX".parse::<LockMode>().unwrap(), LockMode::Exclusive);
        assert!("bogus".parse::<Protocol>().is_err());
        assert_eq!(PolicyFlags::combinations().len(), 16);
    }
}

//! Shared per-attempt transaction state touched by other workers.
//!
//! The commit semaphore, the committed bit and the abort cause live in one
//! atomic word. Wounding, pinning (semaphore increment) and reaching the
//! commit point are therefore mutually atomic: a wound can never land after
//! the victim passed its commit point, and a victim that saw a zero
//! semaphore cannot commit after someone else incremented it.

use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use parking_lot::Mutex;

use crate::storage::{Key, TxnId};

/// Sentinel for a timestamp that has not been assigned yet. It compares as
/// the lowest possible priority.
pub const UNASSIGNED: u64 = u64::MAX;

const SEM_MASK: u64 = 0xffff_ffff;
const COMMITTED: u64 = 1 << 32;
const CAUSE_SHIFT: u32 = 33;
const CAUSE_MASK: u64 = 0b11 << CAUSE_SHIFT;
const NO_PARENT: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortCause {
    /// Aborted by a higher-priority transaction, or self-aborted on a
    /// conflict by the wait-die / no-wait policies.
    Wound,
    /// A transaction whose dirty write this one observed aborted.
    Cascade,
    /// Transaction logic or user intervention.
    User,
}

impl AbortCause {
    fn bits(self) -> u64 {
        let v = match self {
            AbortCause::Wound => 1,
            AbortCause::Cascade => 2,
            AbortCause::User => 3,
        };
        v << CAUSE_SHIFT
    }

    fn from_word(word: u64) -> Option<AbortCause> {
        match (word & CAUSE_MASK) >> CAUSE_SHIFT {
            0 => None,
            1 => Some(AbortCause::Wound),
            2 => Some(AbortCause::Cascade),
            _ => Some(AbortCause::User),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AbortCause::Wound => "wound",
            AbortCause::Cascade => "cascade",
            AbortCause::User => "user",
        }
    }
}

impl fmt::Display for AbortCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbortAttempt {
    /// This call set the abort flag.
    Set,
    AlreadyAborted,
    /// The target already passed its commit point.
    Committed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommitBlock {
    Aborted(AbortCause),
    Semaphore(u32),
}

pub type TxnRef = Arc<TxnState>;

pub struct TxnState {
    id: TxnId,
    ts: AtomicU64,
    word: AtomicU64,
    granted: AtomicBool,
    abort_parent: AtomicU64,
    /// Every lock entry this attempt has requested, so that whoever aborts
    /// it can release its locks without waiting for its own thread.
    touched: Mutex<Vec<(u32, Key)>>,
}

impl fmt::Debug for TxnState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("TxnState");
        d.field("id", &self.id);
        match self.ts() {
            UNASSIGNED => d.field("ts", &"unassigned"),
            ts => d.field("ts", &ts),
        };
        d.field("sem", &self.semaphore())
            .field("committed", &self.is_committed())
            .field("abort", &self.abort_cause())
            .finish()
    }
}

impl TxnState {
    pub fn new(id: TxnId, ts: u64) -> TxnRef {
        Arc::new(TxnState {
            id,
            ts: AtomicU64::new(ts),
            word: AtomicU64::new(0),
            granted: AtomicBool::new(false),
            abort_parent: AtomicU64::new(0),
            touched: Mutex::new(Vec::new()),
        })
    }

    pub fn id(&self) -> TxnId {
        self.id
    }

    pub fn ts(&self) -> u64 {
        self.ts.load(Ordering::Acquire)
    }

    pub fn has_ts(&self) -> bool {
        self.ts() != UNASSIGNED
    }

    /// Assigns the next value of `counter` unless a timestamp is already
    /// set. Exactly one concurrent caller wins.
    pub fn set_ts_if_unassigned(&self, counter: &AtomicU64) {
        if self.ts() == UNASSIGNED {
            let next = counter.fetch_add(1, Ordering::AcqRel);
            let _ = self.ts.compare_exchange(UNASSIGNED, next, Ordering::AcqRel, Ordering::Acquire);
        }
    }

    pub fn semaphore(&self) -> u32 {
        (self.word.load(Ordering::Acquire) & SEM_MASK) as u32
    }

    pub fn is_committed(&self) -> bool {
        self.word.load(Ordering::Acquire) & COMMITTED != 0
    }

    pub fn abort_cause(&self) -> Option<AbortCause> {
        AbortCause::from_word(self.word.load(Ordering::Acquire))
    }

    pub fn is_aborted(&self) -> bool {
        self.abort_cause().is_some()
    }

    /// The transaction that caused this abort, if any.
    pub fn abort_parent(&self) -> Option<TxnId> {
        if !self.is_aborted() {
            return None;
        }
        match self.abort_parent.load(Ordering::Acquire) {
            0 | NO_PARENT => None,
            p => Some(p),
        }
    }

    pub fn try_abort(&self, cause: AbortCause, parent: Option<TxnId>) -> AbortAttempt {
        let settled = |w: u64| {
            if w & COMMITTED != 0 {
                Some(AbortAttempt::Committed)
            } else if w & CAUSE_MASK != 0 {
                Some(AbortAttempt::AlreadyAborted)
            } else {
                None
            }
        };
        if let Some(r) = settled(self.word.load(Ordering::Acquire)) {
            return r;
        }
        // the parent is claimed before the cause is published, so whoever
        // observes the cause also observes the parent
        let token = parent.unwrap_or(NO_PARENT);
        if self.abort_parent.compare_exchange(0, token, Ordering::AcqRel, Ordering::Acquire).is_err() {
            // another aborter is mid-flight; it either sets the cause or loses to commit
            loop {
                if let Some(r) = settled(self.word.load(Ordering::Acquire)) {
                    return r;
                }
                std::hint::spin_loop();
            }
        }
        let mut cur = self.word.load(Ordering::Acquire);
        loop {
            if let Some(r) = settled(cur) {
                return r;
            }
            match self.word.compare_exchange_weak(cur, cur | cause.bits(), Ordering::AcqRel, Ordering::Acquire) {
                Ok(_) => return AbortAttempt::Set,
                Err(actual) => cur = actual,
            }
        }
    }

    /// Adds one dependency. Fails once the transaction passed its commit point.
    pub fn sem_inc(&self) -> bool {
        let mut cur = self.word.load(Ordering::Acquire);
        loop {
            if cur & COMMITTED != 0 {
                return false;
            }
            debug_assert!(cur & SEM_MASK < SEM_MASK);
            match self.word.compare_exchange_weak(cur, cur + 1, Ordering::AcqRel, Ordering::Acquire) {
                Ok(_) => return true,
                Err(actual) => cur = actual,
            }
        }
    }

    pub fn sem_dec(&self) {
        let prev = self.word.fetch_sub(1, Ordering::AcqRel);
        debug_assert!(prev & SEM_MASK > 0, "commit semaphore underflow on txn {}", self.id);
    }

    /// Reaches the commit point iff the semaphore is zero and no abort is set.
    pub fn try_commit(&self) -> Result<(), CommitBlock> {
        let mut cur = self.word.load(Ordering::Acquire);
        loop {
            if let Some(cause) = AbortCause::from_word(cur) {
                return Err(CommitBlock::Aborted(cause));
            }
            if cur & COMMITTED != 0 {
                return Ok(());
            }
            let sem = (cur & SEM_MASK) as u32;
            if sem != 0 {
                return Err(CommitBlock::Semaphore(sem));
            }
            match self.word.compare_exchange_weak(cur, cur | COMMITTED, Ordering::AcqRel, Ordering::Acquire) {
                Ok(_) => return Ok(()),
                Err(actual) => cur = actual,
            }
        }
    }

    /// Records a lock entry before the first request on it.
    pub fn note_entry(&self, table: u32, key: Key) {
        self.touched.lock().push((table, key));
    }

    pub fn touched_entries(&self) -> Vec<(u32, Key)> {
        self.touched.lock().clone()
    }

    pub fn set_granted(&self) {
        self.granted.store(true, Ordering::Release);
    }

    pub fn clear_granted(&self) {
        self.granted.store(false, Ordering::Release);
    }

    pub fn is_granted(&self) -> bool {
        self.granted.load(Ordering::Acquire)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Barrier;

    #[test]
    fn wound_loses_to_commit_point() {
        let t = TxnState::new(1, 1);
        assert_eq!(t.try_commit(), Ok(()));
        assert_eq!(t.try_abort(AbortCause::Wound, Some(9)), AbortAttempt::Committed);
        assert!(!t.sem_inc());
        assert!(!t.is_aborted());
    }

    #[test]
    fn commit_blocked_by_semaphore_and_abort() {
        let t = TxnState::new(1, 1);
        assert!(t.sem_inc());
        assert_eq!(t.try_commit(), Err(CommitBlock::Semaphore(1)));
        t.sem_dec();
        assert_eq!(t.try_abort(AbortCause::Cascade, Some(4)), AbortAttempt::Set);
        assert_eq!(t.try_abort(AbortCause::Wound, None), AbortAttempt::AlreadyAborted);
        assert_eq!(t.abort_cause(), Some(AbortCause::Cascade));
        assert_eq!(t.abort_parent(), Some(4));
        assert_eq!(t.try_commit(), Err(CommitBlock::Aborted(AbortCause::Cascade)));
    }

    #[test]
    fn concurrent_ts_assignment_is_exactly_once() {
        for _ in 0..200 {
            let counter = Arc::new(AtomicU64::new(1));
            let t = TxnState::new(1, UNASSIGNED);
            let barrier = Arc::new(Barrier::new(4));
            let seen: Vec<u64> = (0..4)
                .map(|_| {
                    let (t, c, b) = (Arc::clone(&t), Arc::clone(&counter), Arc::clone(&barrier));
                    std::thread::spawn(move || {
                        b.wait();
                        t.set_ts_if_unassigned(&c);
                        t.ts()
                    })
                })
                .collect::<Vec<_>>()
                .into_iter()
                .map(|h| h.join().unwrap())
                .collect();
            let ts = t.ts();
            assert_ne!(ts, UNASSIGNED);
            assert!(seen.iter().all(|&s| s == ts));
            // later calls never change it
            t.set_ts_if_unassigned(&counter);
            assert_eq!(t.ts(), ts);
        }
    }
}

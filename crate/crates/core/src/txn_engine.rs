//! Transaction lifecycle on top of the lock entries: local copies, retire,
//! the commit-semaphore wait, logging, install and release.
//!
//! Every call is non-blocking. A lock request that cannot be granted yet
//! returns [`Step::Wait`] and is finished later with [`Engine::poll`]; the
//! commit-semaphore wait likewise surfaces as [`CommitStep::Wait`]. The
//! threaded driver spins on these, the replayer interleaves them by script.

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;

use crate::error::{Error, Result};
use crate::lock_manager::{
    AbortCause, Acquired, CommitBlock, EntryState, LockCtx, LockMode, LockTable, Policy, TxnRef, TxnState,
    Visible, UNASSIGNED,
};
use crate::storage::{load_table, Key, LogSink, Table, TableSpec, TxnId, VersionTag};
use crate::validator::history::{AbortRecord, AccessRecord, CommitRecord, ReadFrom};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WriteOp {
    /// Adds to the little-endian counter in the first eight bytes.
    AddU64(u64),
    /// Overwrites the first bytes of the payload.
    Fill(u8),
}

impl WriteOp {
    pub fn apply(self, base: &[u8]) -> Vec<u8> {
        let mut out = base.to_vec();
        match self {
            WriteOp::AddU64(d) => {
                let n = out.len().min(8);
                let mut buf = [0u8; 8];
                buf[..n].copy_from_slice(&out[..n]);
                let v = u64::from_le_bytes(buf).wrapping_add(d);
                out[..n].copy_from_slice(&v.to_le_bytes()[..n]);
            }
            WriteOp::Fill(b) => {
                let n = out.len().min(8);
                out[..n].fill(b);
            }
        }
        out
    }
}

/// Reads the counter maintained by [`WriteOp::AddU64`].
pub fn counter_of(payload: &[u8]) -> u64 {
    let n = payload.len().min(8);
    let mut buf = [0u8; 8];
    buf[..n].copy_from_slice(&payload[..n]);
    u64::from_le_bytes(buf)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxnStatus {
    Running,
    CommitWait,
    Committed,
    Aborted,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Step<T> {
    Done(T),
    Wait,
    Aborted(AbortCause),
}

impl<T> Step<T> {
    pub fn is_wait(&self) -> bool {
        matches!(self, Step::Wait)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CommitStep {
    Committed(CommitRecord),
    Wait,
    Aborted(AbortCause),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsMode {
    /// Assigned from the global counter when the attempt begins.
    Static,
    /// Assigned on the first conflict.
    Dynamic,
}

#[derive(Debug, Clone, Default)]
pub struct EngineOptions {
    /// A restarted transaction keeps the timestamp of its first attempt.
    pub retain_ts_on_restart: bool,
    /// Keep every log record in memory (otherwise only count them).
    pub keep_log: bool,
    /// Track the oldest live transaction and count wounds against it.
    pub priority_audit: bool,
}

#[derive(Debug, Clone)]
struct Access {
    table: u32,
    key: Key,
    mode: LockMode,
    read_from: Option<ReadFrom>,
    value: Option<Arc<[u8]>>,
    written: bool,
    retired: bool,
}

#[derive(Debug, Clone, Copy)]
enum Pending {
    Read(usize),
    Write(usize, WriteOp),
}

/// One attempt of a transaction.
#[derive(Debug)]
pub struct Txn {
    state: TxnRef,
    status: TxnStatus,
    accesses: Vec<Access>,
    index: HashMap<(u32, Key), usize>,
    pending: Option<Pending>,
}

impl Txn {
    pub fn id(&self) -> TxnId {
        self.state.id()
    }

    pub fn ts(&self) -> u64 {
        self.state.ts()
    }

    pub fn state(&self) -> &TxnRef {
        &self.state
    }

    pub fn status(&self) -> TxnStatus {
        self.status
    }

    pub fn is_waiting(&self) -> bool {
        self.pending.is_some()
    }

    pub fn access_count(&self) -> usize {
        self.accesses.len()
    }

    /// Local copy of a tuple this transaction read or wrote.
    pub fn local(&self, table: u32, key: Key) -> Option<&Arc<[u8]>> {
        self.index.get(&(table, key)).and_then(|&i| self.accesses[i].value.as_ref())
    }

    /// Written tuples that still hold their lock as an owner.
    pub fn unretired_writes(&self) -> Vec<(u32, Key)> {
        self.accesses.iter().filter(|a| a.written && !a.retired).map(|a| (a.table, a.key)).collect()
    }
}

/// Live transactions ordered by timestamp, plus a count of wounds and
/// cascades that hit the oldest of them.
#[derive(Debug, Default)]
pub struct PriorityAudit {
    live: Mutex<BTreeSet<(u64, TxnId)>>,
    oldest_hits: AtomicU64,
    checks: AtomicU64,
}

impl PriorityAudit {
    pub fn oldest_hits(&self) -> u64 {
        self.oldest_hits.load(Ordering::Relaxed)
    }

    pub fn checks(&self) -> u64 {
        self.checks.load(Ordering::Relaxed)
    }

    fn on_abort(&self, victim: &TxnState, cause: AbortCause) {
        if cause == AbortCause::User {
            return;
        }
        self.checks.fetch_add(1, Ordering::Relaxed);
        let live = self.live.lock();
        if live.first().map(|&(_, id)| id) == Some(victim.id()) {
            self.oldest_hits.fetch_add(1, Ordering::Relaxed);
        }
    }
}

type Hook = Box<dyn Fn(&TxnRef, AbortCause) + Send + Sync>;

thread_local! {
    /// Transactions this thread marked aborted whose locks are not yet released.
    static REAP: std::cell::RefCell<Vec<TxnRef>> = const { std::cell::RefCell::new(Vec::new()) };
}

pub struct Engine {
    tables: Vec<Table>,
    locks: Vec<LockTable>,
    policy: Policy,
    ts_counter: AtomicU64,
    id_counter: AtomicU64,
    log: LogSink,
    options: EngineOptions,
    audit: Option<Arc<PriorityAudit>>,
    hook: Hook,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine").field("policy", &self.policy).field("tables", &self.tables.len()).finish()
    }
}

impl Engine {
    pub fn new(specs: &[TableSpec], policy: Policy, options: EngineOptions) -> Result<Engine> {
        if specs.is_empty() {
            return Err(Error::Config("at least one table is required".into()));
        }
        let tables = specs.iter().map(load_table).collect::<Result<Vec<_>>>()?;
        let locks = specs.iter().map(|s| LockTable::new(s.rows)).collect();
        let audit = options.priority_audit.then(|| Arc::new(PriorityAudit::default()));
        let hook_audit = audit.clone();
        let hook: Hook = Box::new(move |t: &TxnRef, c: AbortCause| {
            if let Some(a) = &hook_audit {
                a.on_abort(t, c);
            }
            REAP.with(|q| q.borrow_mut().push(Arc::clone(t)));
        });
        let log = if options.keep_log { LogSink::new() } else { LogSink::counting() };
        Ok(Engine {
            tables,
            locks,
            policy,
            ts_counter: AtomicU64::new(1),
            id_counter: AtomicU64::new(1),
            log,
            options,
            audit,
            hook,
        })
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn table(&self, t: u32) -> &Table {
        &self.tables[t as usize]
    }

    pub fn tables(&self) -> &[Table] {
        &self.tables
    }

    pub fn lock_table(&self, t: u32) -> &LockTable {
        &self.locks[t as usize]
    }

    pub fn log(&self) -> &LogSink {
        &self.log
    }

    pub fn audit(&self) -> Option<&PriorityAudit> {
        self.audit.as_deref()
    }

    pub fn ts_mode(&self) -> TsMode {
        if self.policy.flags.dynamic_ts {
            TsMode::Dynamic
        } else {
            TsMode::Static
        }
    }

    fn ctx(&self) -> LockCtx<'_> {
        LockCtx { policy: &self.policy, ts_source: &self.ts_counter, hook: Some(&*self.hook) }
    }

    fn check_key(&self, table: u32, key: Key) -> Result<()> {
        let t = self.tables.get(table as usize).ok_or_else(|| Error::Config(format!("no table {table}")))?;
        if key >= t.len() {
            return Err(Error::KeyNotFound { table: t.name().to_string(), key });
        }
        Ok(())
    }

    fn with_entry<R>(&self, table: u32, key: Key, f: impl FnOnce(&mut EntryState) -> R) -> R {
        let out = {
            let mut guard = self.locks[table as usize].entry(key).latch();
            f(&mut guard)
        };
        self.reap();
        out
    }

    /// Releases the locks of every transaction this thread just marked
    /// aborted, cascading further as needed. The victims' own threads would
    /// do the same once they notice; doing it here keeps new transactions
    /// from reading writes that are already doomed.
    fn reap(&self) {
        let ctx = self.ctx();
        while let Some(victim) = REAP.with(|q| q.borrow_mut().pop()) {
            for (t, k) in victim.touched_entries() {
                let mut e = self.locks[t as usize].entry(k).latch();
                if e.find(victim.id()).is_some() {
                    let _ = e.release(&ctx, &victim, true);
                }
            }
        }
    }

    /// Starts an attempt. `prior_ts` is the timestamp of an earlier attempt
    /// of the same transaction, honoured when restarts keep their timestamp.
    pub fn begin(&self, prior_ts: Option<u64>) -> Txn {
        let id = self.id_counter.fetch_add(1, Ordering::Relaxed);
        let keep = prior_ts.filter(|&ts| self.options.retain_ts_on_restart && ts != UNASSIGNED);
        let state = match (&self.audit, self.ts_mode()) {
            (Some(audit), TsMode::Static) => {
                // assign and register atomically so the live set never misses an older txn
                let mut live = audit.live.lock();
                let ts = keep.unwrap_or_else(|| self.ts_counter.fetch_add(1, Ordering::Relaxed));
                live.insert((ts, id));
                TxnState::new(id, ts)
            }
            (_, TsMode::Static) => {
                TxnState::new(id, keep.unwrap_or_else(|| self.ts_counter.fetch_add(1, Ordering::Relaxed)))
            }
            (_, TsMode::Dynamic) => TxnState::new(id, keep.unwrap_or(UNASSIGNED)),
        };
        Txn { state, status: TxnStatus::Running, accesses: Vec::new(), index: HashMap::new(), pending: None }
    }

    /// Begins with an explicit timestamp; used by scripted schedules.
    pub fn begin_with_ts(&self, id: TxnId, ts: u64) -> Txn {
        self.id_counter.fetch_max(id + 1, Ordering::Relaxed);
        if ts != UNASSIGNED {
            self.ts_counter.fetch_max(ts + 1, Ordering::Relaxed);
        }
        Txn {
            state: TxnState::new(id, ts),
            status: TxnStatus::Running,
            accesses: Vec::new(),
            index: HashMap::new(),
            pending: None,
        }
    }

    fn observe(&self, entry: &EntryState, table: u32, key: Key, id: TxnId) -> (ReadFrom, Arc<[u8]>) {
        match entry.visible_for(id) {
            Visible::Dirty { writer, value } => (ReadFrom::Writer(writer), value),
            Visible::Committed => {
                let (bytes, tag) = self.tables[table as usize].read(key).expect("key checked on access");
                (read_from_tag(tag), Arc::from(bytes))
            }
        }
    }

    fn running(&self, txn: &mut Txn) -> Option<AbortCause> {
        if txn.status != TxnStatus::Running {
            return Some(txn.state.abort_cause().unwrap_or(AbortCause::User));
        }
        let cause = txn.state.abort_cause()?;
        self.finish_abort(txn);
        Some(cause)
    }

    fn self_abort(&self, txn: &mut Txn) -> AbortCause {
        txn.state.try_abort(AbortCause::Wound, None);
        let cause = txn.state.abort_cause().unwrap_or(AbortCause::Wound);
        self.finish_abort(txn);
        cause
    }

    fn access_slot(&self, txn: &mut Txn, table: u32, key: Key) -> usize {
        *txn.index.entry((table, key)).or_insert_with(|| {
            txn.state.note_entry(table, key);
            txn.accesses.push(Access {
                table,
                key,
                mode: LockMode::Shared,
                read_from: None,
                value: None,
                written: false,
                retired: false,
            });
            txn.accesses.len() - 1
        })
    }

    pub fn read(&self, txn: &mut Txn, table: u32, key: Key) -> Result<Step<Arc<[u8]>>> {
        self.check_key(table, key)?;
        self.guard_not_waiting(txn)?;
        if let Some(cause) = self.running(txn) {
            return Ok(Step::Aborted(cause));
        }
        if let Some(&i) = txn.index.get(&(table, key)) {
            if let Some(v) = &txn.accesses[i].value {
                return Ok(Step::Done(Arc::clone(v)));
            }
        }
        let i = self.access_slot(txn, table, key);
        let ctx = self.ctx();
        let state = Arc::clone(&txn.state);
        let outcome = self.with_entry(table, key, |e| {
            let r = e.acquire(&ctx, &state, LockMode::Shared);
            let seen = (r == Acquired::Granted).then(|| self.observe(e, table, key, state.id()));
            (r, seen, e.held(state.id()).map(|(k, _)| k))
        });
        Ok(match outcome {
            (Acquired::Granted, Some((from, value)), held) => {
                let a = &mut txn.accesses[i];
                a.read_from = Some(from);
                a.value = Some(Arc::clone(&value));
                a.retired = held == Some(crate::lock_manager::ListKind::Retired);
                Step::Done(value)
            }
            (Acquired::Waiting, ..) => {
                txn.pending = Some(Pending::Read(i));
                Step::Wait
            }
            _ => Step::Aborted(self.self_abort(txn)),
        })
    }

    pub fn write(&self, txn: &mut Txn, table: u32, key: Key, op: WriteOp) -> Result<Step<Arc<[u8]>>> {
        self.check_key(table, key)?;
        self.guard_not_waiting(txn)?;
        if let Some(cause) = self.running(txn) {
            return Ok(Step::Aborted(cause));
        }
        let i = self.access_slot(txn, table, key);
        let a = &txn.accesses[i];
        if a.mode == LockMode::Exclusive && !a.retired {
            let v: Arc<[u8]> = Arc::from(op.apply(a.value.as_deref().expect("EX holder has a value")));
            txn.accesses[i].value = Some(Arc::clone(&v));
            return Ok(Step::Done(v));
        }
        let ctx = self.ctx();
        let state = Arc::clone(&txn.state);
        let outcome = self.with_entry(table, key, |e| {
            let r = e.acquire(&ctx, &state, LockMode::Exclusive);
            let seen = (r == Acquired::Granted).then(|| self.observe(e, table, key, state.id()));
            (r, seen)
        });
        match outcome {
            (Acquired::Granted, Some(seen)) => Ok(self.complete_write(txn, i, op, seen)),
            (Acquired::Waiting, _) => {
                txn.pending = Some(Pending::Write(i, op));
                Ok(Step::Wait)
            }
            _ => Ok(Step::Aborted(self.self_abort(txn))),
        }
    }

    fn complete_write(&self, txn: &mut Txn, i: usize, op: WriteOp, seen: (ReadFrom, Arc<[u8]>)) -> Step<Arc<[u8]>> {
        let a = &txn.accesses[i];
        let base = if a.written {
            // second write after retire: continue from our own value
            Arc::clone(a.value.as_ref().expect("written access has a value"))
        } else {
            if let Some(prev) = a.read_from {
                // upgrade: the version we read must still be the one we overwrite
                if prev != seen.0 {
                    return Step::Aborted(self.self_abort(txn));
                }
            }
            seen.1
        };
        let v: Arc<[u8]> = Arc::from(op.apply(&base));
        let a = &mut txn.accesses[i];
        a.read_from.get_or_insert(seen.0);
        a.mode = LockMode::Exclusive;
        a.value = Some(Arc::clone(&v));
        a.written = true;
        a.retired = false;
        Step::Done(v)
    }

    fn guard_not_waiting(&self, txn: &Txn) -> Result<()> {
        if txn.pending.is_some() {
            return Err(Error::Protocol { txn: txn.id(), what: "new access while a lock request is pending".into() });
        }
        Ok(())
    }

    /// Finishes a pending lock request if it has been granted.
    pub fn poll(&self, txn: &mut Txn) -> Step<Option<Arc<[u8]>>> {
        let Some(pending) = txn.pending else {
            return Step::Done(None);
        };
        if let Some(cause) = self.running(txn) {
            return Step::Aborted(cause);
        }
        if !txn.state.is_granted() {
            return Step::Wait;
        }
        let i = match pending {
            Pending::Read(i) | Pending::Write(i, _) => i,
        };
        let (table, key, id) = (txn.accesses[i].table, txn.accesses[i].key, txn.id());
        let seen = self.with_entry(table, key, |e| {
            e.held(id).map(|(kind, _)| (kind, self.observe(e, table, key, id)))
        });
        let Some((kind, seen)) = seen else {
            return match txn.state.abort_cause() {
                Some(_) => Step::Aborted(self.running(txn).unwrap_or(AbortCause::Wound)),
                None => Step::Wait,
            };
        };
        txn.pending = None;
        match pending {
            Pending::Read(_) => {
                let a = &mut txn.accesses[i];
                a.read_from = Some(seen.0);
                a.value = Some(Arc::clone(&seen.1));
                a.retired = kind == crate::lock_manager::ListKind::Retired;
                Step::Done(Some(seen.1))
            }
            Pending::Write(_, op) => match self.complete_write(txn, i, op, seen) {
                Step::Done(v) => Step::Done(Some(v)),
                Step::Aborted(c) => Step::Aborted(c),
                Step::Wait => Step::Wait,
            },
        }
    }

    /// Retires the lock on a written tuple, exposing the local value.
    /// Returns false when nothing was retired.
    pub fn retire(&self, txn: &mut Txn, table: u32, key: Key) -> Result<bool> {
        if !self.policy.is_bamboo() || txn.status != TxnStatus::Running && txn.status != TxnStatus::CommitWait {
            return Ok(false);
        }
        let Some(&i) = txn.index.get(&(table, key)) else {
            return Err(Error::Protocol { txn: txn.id(), what: format!("retire of untouched tuple {table}:{key}") });
        };
        let a = &txn.accesses[i];
        if a.retired {
            return Ok(false);
        }
        let dirty = if a.mode == LockMode::Exclusive { a.value.clone() } else { None };
        let ctx = self.ctx();
        let state = Arc::clone(&txn.state);
        let res = self.with_entry(table, key, |e| e.retire(&ctx, &state, dirty));
        match res {
            Ok(()) => {
                txn.accesses[i].retired = true;
                Ok(true)
            }
            // evicted by a wound that the owner has not noticed yet
            Err(_) if txn.state.is_aborted() => Ok(false),
            Err(e) => Err(e),
        }
    }

    /// Retires every written tuple that is still owned.
    pub fn retire_all_writes(&self, txn: &mut Txn) -> Result<usize> {
        let mut n = 0;
        for (t, k) in txn.unretired_writes() {
            n += self.retire(txn, t, k)? as usize;
        }
        Ok(n)
    }

    /// Attempts to reach the commit point; on success logs, installs and
    /// releases everything.
    pub fn try_commit(&self, txn: &mut Txn) -> Result<CommitStep> {
        if txn.pending.is_some() {
            return Err(Error::Protocol { txn: txn.id(), what: "commit while a lock request is pending".into() });
        }
        if let Some(cause) = self.running_or_wait(txn) {
            return Ok(CommitStep::Aborted(cause));
        }
        txn.status = TxnStatus::CommitWait;
        match txn.state.try_commit() {
            Err(CommitBlock::Semaphore(_)) => return Ok(CommitStep::Wait),
            Err(CommitBlock::Aborted(cause)) => {
                self.finish_abort(txn);
                return Ok(CommitStep::Aborted(cause));
            }
            Ok(()) => {}
        }
        let writes = txn.accesses.iter().filter(|a| a.written).count();
        let commit_seq = self.log.append(txn.id(), writes)?;
        let ctx = self.ctx();
        let mut records = Vec::with_capacity(txn.accesses.len());
        for a in &txn.accesses {
            let id = txn.id();
            let state = &txn.state;
            let written_seq = self.with_entry(a.table, a.key, |e| -> Result<Option<u64>> {
                let seq = if a.written {
                    let v = a.value.as_ref().expect("written access has a value");
                    Some(self.tables[a.table as usize].install_write(a.key, v, id)?.seq)
                } else {
                    None
                };
                e.release(&ctx, state, false)?;
                Ok(seq)
            })?;
            records.push(AccessRecord {
                table: a.table,
                key: a.key,
                mode: a.mode,
                read_from: a.read_from,
                written_seq,
            });
        }
        txn.status = TxnStatus::Committed;
        self.unregister(txn);
        Ok(CommitStep::Committed(CommitRecord { id: txn.id(), commit_seq, accesses: records }))
    }

    fn running_or_wait(&self, txn: &mut Txn) -> Option<AbortCause> {
        match txn.status {
            TxnStatus::Running | TxnStatus::CommitWait => {
                let cause = txn.state.abort_cause()?;
                self.finish_abort(txn);
                Some(cause)
            }
            TxnStatus::Aborted => Some(txn.state.abort_cause().unwrap_or(AbortCause::User)),
            TxnStatus::Committed => None,
        }
    }

    /// Aborts the attempt at the caller's request.
    pub fn abort(&self, txn: &mut Txn, cause: AbortCause) -> AbortRecord {
        if txn.status != TxnStatus::Aborted {
            txn.state.try_abort(cause, None);
            self.finish_abort(txn);
        }
        self.abort_record(txn)
    }

    pub fn abort_record(&self, txn: &Txn) -> AbortRecord {
        AbortRecord {
            id: txn.id(),
            cause: txn.state.abort_cause().unwrap_or(AbortCause::User),
            parent: txn.state.abort_parent(),
        }
    }

    /// Releases every lock of an attempt whose abort flag is set. Cascade
    /// victims are flagged by the lock entries and run this themselves.
    fn finish_abort(&self, txn: &mut Txn) {
        if txn.status == TxnStatus::Aborted {
            return;
        }
        debug_assert!(txn.state.is_aborted());
        let ctx = self.ctx();
        for a in txn.accesses.iter().rev() {
            let state = &txn.state;
            self.with_entry(a.table, a.key, |e| {
                if e.find(state.id()).is_some() {
                    let _ = e.release(&ctx, state, true);
                }
            });
        }
        txn.pending = None;
        txn.status = TxnStatus::Aborted;
        for a in &mut txn.accesses {
            a.value = None;
        }
        self.unregister(txn);
    }

    fn unregister(&self, txn: &Txn) {
        if let Some(audit) = &self.audit {
            audit.live.lock().remove(&(txn.ts(), txn.id()));
        }
    }

    /// Snapshot of one lock entry.
    pub fn entry_snapshot(&self, table: u32, key: Key) -> crate::lock_manager::EntrySnapshot {
        self.with_entry(table, key, |e| e.snapshot())
    }

    /// Checks ordering and wait-priority on every lock entry, and that each
    /// transaction's semaphore equals the number of entries pinning it.
    /// Meant for quiescent states.
    pub fn audit_entries(&self, live: &[&Txn]) -> std::result::Result<(), String> {
        let mut pins: HashMap<TxnId, u32> = HashMap::new();
        for (t, lt) in self.locks.iter().enumerate() {
            for (k, entry) in lt.iter() {
                let e = entry.latch();
                e.check_order().map_err(|m| format!("table {t} key {k}: {m}"))?;
                if self.policy.protocol == crate::lock_manager::Protocol::Bamboo
                    || self.policy.protocol == crate::lock_manager::Protocol::WoundWait
                {
                    e.check_wait_priority().map_err(|m| format!("table {t} key {k}: {m}"))?;
                }
                for r in e.retired().iter().chain(e.owners()) {
                    if r.counted() {
                        *pins.entry(r.id()).or_default() += 1;
                    }
                }
            }
        }
        for txn in live {
            let expected = pins.get(&txn.id()).copied().unwrap_or(0);
            if txn.state.semaphore() != expected {
                return Err(format!("T{} semaphore {} but {} pinning entries", txn.id(), txn.state.semaphore(), expected));
            }
        }
        Ok(())
    }
}

fn read_from_tag(tag: VersionTag) -> ReadFrom {
    match tag.writer {
        None => ReadFrom::Initial,
        Some(w) => ReadFrom::Writer(w),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lock_manager::{PolicyFlags, Protocol};

    fn engine(protocol: Protocol) -> Engine {
        let spec = TableSpec::new("t", 16).with_payload(1, 16);
        Engine::new(&[spec], Policy::plain(protocol), EngineOptions { keep_log: true, ..Default::default() }).unwrap()
    }

    fn done<T: std::fmt::Debug>(s: Step<T>) -> T {
        match s {
            Step::Done(v) => v,
            other => panic!("expected Done, got {other:?}"),
        }
    }

    fn commit(e: &Engine, t: &mut Txn) -> CommitRecord {
        match e.try_commit(t).unwrap() {
            CommitStep::Committed(r) => r,
            other => panic!("expected commit, got {other:?}"),
        }
    }

    #[test]
    fn read_own_write_returns_local_value() {
        let e = engine(Protocol::Bamboo);
        let mut t = e.begin(None);
        let w = done(e.write(&mut t, 0, 3, WriteOp::AddU64(5)).unwrap());
        let before = e.entry_snapshot(0, 3);
        let r = done(e.read(&mut t, 0, 3).unwrap());
        assert_eq!(w, r);
        assert_eq!(before, e.entry_snapshot(0, 3));
    }

    #[test]
    fn clean_read_copies_committed_payload() {
        let e = engine(Protocol::Bamboo);
        let mut t = e.begin(None);
        let v = done(e.read(&mut t, 0, 2).unwrap());
        assert_eq!(&*v, &e.table(0).read(2).unwrap().0[..]);
    }

    #[test]
    fn dirty_read_after_retire_pins_reader() {
        let e = engine(Protocol::Bamboo);
        let mut t1 = e.begin(None);
        let mut t2 = e.begin(None);
        let w = done(e.write(&mut t1, 0, 1, WriteOp::AddU64(7)).unwrap());
        assert!(e.retire(&mut t1, 0, 1).unwrap());
        let r = done(e.read(&mut t2, 0, 1).unwrap());
        assert_eq!(w, r);
        assert_eq!(t2.state().semaphore(), 1);
        // reader commits only after the writer
        assert_eq!(e.try_commit(&mut t2).unwrap(), CommitStep::Wait);
        let c1 = commit(&e, &mut t1);
        let c2 = commit(&e, &mut t2);
        assert!(c1.commit_seq < c2.commit_seq);
        assert_eq!(c2.accesses[0].read_from, Some(ReadFrom::Writer(t1.id())));
    }

    #[test]
    fn writer_abort_cascades_to_waiting_reader() {
        let e = engine(Protocol::Bamboo);
        let mut t1 = e.begin(None);
        let mut t2 = e.begin(None);
        done(e.write(&mut t1, 0, 1, WriteOp::AddU64(7)).unwrap());
        e.retire(&mut t1, 0, 1).unwrap();
        done(e.read(&mut t2, 0, 1).unwrap());
        assert_eq!(e.try_commit(&mut t2).unwrap(), CommitStep::Wait);
        e.abort(&mut t1, AbortCause::User);
        assert_eq!(e.try_commit(&mut t2).unwrap(), CommitStep::Aborted(AbortCause::Cascade));
        assert_eq!(e.abort_record(&t2).parent, Some(t1.id()));
        assert!(e.entry_snapshot(0, 1).is_empty());
    }

    #[test]
    fn no_wait_write_conflict_aborts() {
        let e = engine(Protocol::NoWait);
        let mut t1 = e.begin(None);
        let mut t2 = e.begin(None);
        done(e.write(&mut t1, 0, 1, WriteOp::AddU64(1)).unwrap());
        assert_eq!(e.write(&mut t2, 0, 1, WriteOp::AddU64(1)).unwrap(), Step::Aborted(AbortCause::Wound));
    }

    #[test]
    fn waiting_writer_finishes_through_poll() {
        let e = engine(Protocol::WoundWait);
        let mut t1 = e.begin(None);
        let mut t2 = e.begin(None);
        done(e.write(&mut t1, 0, 1, WriteOp::AddU64(1)).unwrap());
        assert!(e.write(&mut t2, 0, 1, WriteOp::AddU64(1)).unwrap().is_wait());
        assert!(e.poll(&mut t2).is_wait());
        commit(&e, &mut t1);
        let v = done(e.poll(&mut t2)).unwrap();
        assert_eq!(counter_of(&v), counter_of(&e.table(0).read(1).unwrap().0) + 1);
        let c = commit(&e, &mut t2);
        assert_eq!(c.accesses[0].written_seq, Some(2));
    }

    #[test]
    fn upgrade_checks_version() {
        let e = engine(Protocol::Bamboo);
        let mut t1 = e.begin(None);
        done(e.read(&mut t1, 0, 4).unwrap());
        done(e.write(&mut t1, 0, 4, WriteOp::AddU64(1)).unwrap());
        let c = commit(&e, &mut t1);
        assert_eq!(c.accesses[0].mode, LockMode::Exclusive);
        assert_eq!(c.accesses[0].read_from, Some(ReadFrom::Initial));
    }

    #[test]
    fn semaphore_audit_matches_entries() {
        let policy = Policy::new(Protocol::Bamboo, PolicyFlags::default());
        let e = Engine::new(&[TableSpec::new("t", 4)], policy, EngineOptions::default()).unwrap();
        let mut t1 = e.begin(None);
        let mut t2 = e.begin(None);
        let mut t3 = e.begin(None);
        done(e.write(&mut t1, 0, 0, WriteOp::AddU64(1)).unwrap());
        e.retire(&mut t1, 0, 0).unwrap();
        done(e.write(&mut t2, 0, 0, WriteOp::AddU64(1)).unwrap());
        e.retire(&mut t2, 0, 0).unwrap();
        done(e.read(&mut t3, 0, 0).unwrap());
        e.audit_entries(&[&t1, &t2, &t3]).unwrap();
        assert_eq!((t2.state().semaphore(), t3.state().semaphore()), (1, 1));
    }

    #[test]
    fn unknown_key_is_an_error() {
        let e = engine(Protocol::Bamboo);
        let mut t = e.begin(None);
        assert!(matches!(e.read(&mut t, 0, 99), Err(Error::KeyNotFound { .. })));
    }
}

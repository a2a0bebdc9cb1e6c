//! Deterministic single-threaded execution of schedule scripts.
//!
//! After every step the replayer settles: it polls pending lock requests,
//! retries commits that are waiting on the semaphore and finishes the abort
//! of every transaction whose flag was set by someone else, in declaration
//! order, until nothing changes.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use crate::error::{Error, Result};
use crate::lock_manager::{format_list, AbortCause, ListKind, Policy, UNASSIGNED};
use crate::storage::{TableSpec, TxnId};
use crate::txn_engine::{counter_of, CommitStep, Engine, EngineOptions, Step, Txn, TxnStatus, WriteOp};
use crate::validator::chains::abort_chain_histogram;
use crate::validator::history::{AbortRecord, CommitRecord, History};
use crate::validator::script::{key_name, Assertion, Op, Script, StatusName, TsSpec};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssertFailure {
    pub line: usize,
    pub expected: String,
    pub actual: String,
}

impl fmt::Display for AssertFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: expected {}, got {}", self.line, self.expected, self.actual)
    }
}

#[derive(Debug, Clone)]
pub struct ReplayReport {
    pub policy: String,
    pub steps: usize,
    pub assertions: usize,
    pub failures: Vec<AssertFailure>,
    pub history: History,
}

impl ReplayReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

impl fmt::Display for ReplayReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{}: {} steps, {} assertions, {} failed, {} committed, {} aborted",
            self.policy,
            self.steps,
            self.assertions,
            self.failures.len(),
            self.history.committed.len(),
            self.history.aborted.len()
        )?;
        for fail in &self.failures {
            writeln!(f, "  {fail}")?;
        }
        Ok(())
    }
}

struct Slot {
    name: TxnId,
    txn: Txn,
    commit_requested: bool,
}

pub struct Replayer {
    engine: Engine,
    rows: u64,
    initial: Vec<u64>,
    slots: Vec<Slot>,
    index: HashMap<TxnId, usize>,
    committed: Vec<CommitRecord>,
    aborted: Vec<AbortRecord>,
}

impl Replayer {
    pub fn new(policy: Policy, rows: u64) -> Result<Replayer> {
        let spec = TableSpec::new("replay", rows).with_payload(1, 8);
        let engine = Engine::new(&[spec], policy, EngineOptions { keep_log: true, ..Default::default() })?;
        let initial = (0..rows).map(|k| engine.table(0).read(k).map(|(p, _)| counter_of(&p))).collect::<Result<_>>()?;
        Ok(Replayer {
            engine,
            rows,
            initial,
            slots: Vec::new(),
            index: HashMap::new(),
            committed: Vec::new(),
            aborted: Vec::new(),
        })
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn rows(&self) -> u64 {
        self.rows
    }

    pub fn history(&self) -> History {
        History::merge([History { committed: self.committed.clone(), aborted: self.aborted.clone() }])
    }

    pub fn status(&self, name: TxnId) -> Option<StatusName> {
        self.index.get(&name).map(|&i| self.status_of(&self.slots[i]))
    }

    fn status_of(&self, slot: &Slot) -> StatusName {
        match slot.txn.status() {
            TxnStatus::Committed => StatusName::Committed,
            TxnStatus::Aborted => StatusName::Aborted,
            TxnStatus::CommitWait => StatusName::CommitWait,
            TxnStatus::Running if slot.txn.is_waiting() => StatusName::Waiting,
            TxnStatus::Running => StatusName::Running,
        }
    }

    /// Transactions that can take a new access, commit or abort.
    pub fn actionable(&self) -> Vec<TxnId> {
        self.slots
            .iter()
            .filter(|s| self.status_of(s) == StatusName::Running && !s.commit_requested)
            .map(|s| s.name)
            .collect()
    }

    /// Every declared transaction has finished.
    pub fn quiescent(&self) -> bool {
        self.slots.iter().all(|s| matches!(self.status_of(s), StatusName::Committed | StatusName::Aborted))
    }

    /// Lock lists of every non-empty entry plus the state of every transaction.
    pub fn fingerprint(&self) -> String {
        let mut out = String::new();
        for k in 0..self.rows {
            let snap = self.engine.entry_snapshot(0, k);
            if !snap.is_empty() {
                out.push_str(&format!("{}: {snap}\n", key_name(k)));
            }
        }
        for s in &self.slots {
            let st = s.txn.state();
            out.push_str(&format!(
                "T{} {} sem={} cause={:?} parent={:?}\n",
                s.name,
                self.status_of(s),
                st.semaphore(),
                st.abort_cause(),
                st.abort_parent()
            ));
        }
        out
    }

    fn slot_mut(&mut self, line: usize, name: TxnId) -> Result<usize> {
        let i = *self.index.get(&name).ok_or_else(|| script_err(line, format!("T{name} was never started")))?;
        let st = self.status_of(&self.slots[i]);
        if st != StatusName::Running || self.slots[i].commit_requested {
            return Err(script_err(line, format!("T{name} is {st} and cannot take a step")));
        }
        Ok(i)
    }

    fn record_abort(&mut self, i: usize) {
        let rec = self.engine.abort_record(&self.slots[i].txn);
        self.aborted.push(rec);
    }

    /// Applies one operation and settles. Assertions are checked and any
    /// mismatch is returned as a failure.
    pub fn apply(&mut self, line: usize, op: &Op) -> Result<Option<AssertFailure>> {
        match *op {
            Op::Begin { txn, ts } => {
                if self.index.contains_key(&txn) {
                    return Err(script_err(line, format!("T{txn} declared twice")));
                }
                let ts = match ts {
                    TsSpec::Value(v) => v,
                    TsSpec::Unassigned => UNASSIGNED,
                    TsSpec::Default if self.engine.policy().flags.dynamic_ts => UNASSIGNED,
                    TsSpec::Default => txn,
                };
                let t = self.engine.begin_with_ts(txn, ts);
                self.index.insert(txn, self.slots.len());
                self.slots.push(Slot { name: txn, txn: t, commit_requested: false });
            }
            Op::Read { txn, key } => {
                let i = self.slot_mut(line, txn)?;
                let step = self.engine.read(&mut self.slots[i].txn, 0, key)?;
                if let Step::Aborted(_) = step {
                    self.record_abort(i);
                }
            }
            Op::Write { txn, key, delta } => {
                let i = self.slot_mut(line, txn)?;
                let step = self.engine.write(&mut self.slots[i].txn, 0, key, WriteOp::AddU64(delta))?;
                if let Step::Aborted(_) = step {
                    self.record_abort(i);
                }
            }
            Op::Retire { txn, key } => {
                let i = self.slot_mut(line, txn)?;
                self.engine.retire(&mut self.slots[i].txn, 0, key)?;
            }
            Op::Commit { txn } => {
                let i = self.slot_mut(line, txn)?;
                self.slots[i].commit_requested = true;
                self.try_commit(i)?;
            }
            Op::Abort { txn } => {
                let i = self.slot_mut(line, txn)?;
                let rec = self.engine.abort(&mut self.slots[i].txn, AbortCause::User);
                self.aborted.push(rec);
            }
            Op::Assert(ref a) => {
                self.settle()?;
                return Ok(self.check(line, a));
            }
        }
        self.settle()?;
        Ok(None)
    }

    fn try_commit(&mut self, i: usize) -> Result<bool> {
        match self.engine.try_commit(&mut self.slots[i].txn)? {
            CommitStep::Committed(rec) => {
                self.committed.push(rec);
                Ok(true)
            }
            CommitStep::Wait => Ok(false),
            CommitStep::Aborted(_) => {
                self.record_abort(i);
                Ok(true)
            }
        }
    }

    fn settle(&mut self) -> Result<()> {
        loop {
            let mut changed = false;
            for i in 0..self.slots.len() {
                let slot = &mut self.slots[i];
                match slot.txn.status() {
                    TxnStatus::Committed | TxnStatus::Aborted => continue,
                    _ => {}
                }
                if slot.txn.is_waiting() {
                    match self.engine.poll(&mut slot.txn) {
                        Step::Wait => {}
                        Step::Done(_) => changed = true,
                        Step::Aborted(_) => {
                            self.record_abort(i);
                            changed = true;
                        }
                    }
                } else if slot.commit_requested {
                    changed |= self.try_commit(i)?;
                } else if slot.txn.state().is_aborted() {
                    let rec = self.engine.abort(&mut slot.txn, AbortCause::User);
                    self.aborted.push(rec);
                    changed = true;
                }
            }
            if !changed {
                return Ok(());
            }
        }
    }

    fn check(&self, line: usize, a: &Assertion) -> Option<AssertFailure> {
        let (expected, actual) = match a {
            Assertion::List { kind, key, expected } => {
                let snap = self.engine.entry_snapshot(0, *key);
                let name = match kind {
                    ListKind::Retired => "retired",
                    ListKind::Owners => "owners",
                    ListKind::Waiters => "waiters",
                };
                let label = |l: &[_]| format!("{name}({})={}", key_name(*key), format_list(l));
                (label(expected), label(snap.list(*kind)))
            }
            Assertion::Semaphore { txn, expected } => {
                let got = self.state_of(*txn).map(|s| s.txn.state().semaphore().to_string());
                (format!("sem(T{txn})={expected}"), format!("sem(T{txn})={}", got.unwrap_or_else(|| "?".into())))
            }
            Assertion::Status { txn, expected } => {
                let got = self.status(*txn).map(|s| s.to_string());
                (format!("status(T{txn})={expected}"), format!("status(T{txn})={}", got.unwrap_or_else(|| "?".into())))
            }
            Assertion::Cause { txn, expected } => {
                let got = self.state_of(*txn).map(|s| s.txn.state().abort_cause());
                (format!("cause(T{txn})={}", cause_name(*expected)), format!("cause(T{txn})={}", got.map_or("?", cause_name)))
            }
            Assertion::Parent { txn, expected } => {
                let got = self.state_of(*txn).map(|s| s.txn.state().abort_parent());
                (format!("parent(T{txn})={}", txn_name(*expected)), format!("parent(T{txn})={}", got.map_or("?".into(), txn_name)))
            }
            Assertion::Ts { txn, expected } => {
                let got = self.state_of(*txn).map(|s| s.txn.ts());
                let show = |v: Option<u64>| v.map_or("none".to_string(), |v| v.to_string());
                (
                    format!("ts(T{txn})={}", show(*expected)),
                    format!("ts(T{txn})={}", got.map_or("?".into(), |v| show((v != UNASSIGNED).then_some(v)))),
                )
            }
            Assertion::Cascaded { txn, expected } => {
                let mut got: Vec<TxnId> = self
                    .aborted
                    .iter()
                    .filter(|r| r.cause == AbortCause::Cascade && r.parent == Some(*txn))
                    .map(|r| r.id)
                    .collect();
                got.sort_unstable();
                (format!("cascaded(T{txn})={}", txn_set(expected)), format!("cascaded(T{txn})={}", txn_set(&got)))
            }
            Assertion::Chains { expected } => {
                let got = abort_chain_histogram(&self.aborted);
                (format!("chains={}", hist(expected)), format!("chains={}", hist(&got)))
            }
            Assertion::CommitOrder { expected } => {
                let got: Vec<TxnId> = self.history().committed.iter().map(|c| c.id).collect();
                (format!("commit_order={}", txn_seq(expected)), format!("commit_order={}", txn_seq(&got)))
            }
            Assertion::Value { key, expected } => {
                let got = self.engine.table(0).read(*key).map(|(p, _)| counter_of(&p) - self.initial[*key as usize]);
                (
                    format!("value({})={expected}", key_name(*key)),
                    format!("value({})={}", key_name(*key), got.map_or("?".into(), |v| v.to_string())),
                )
            }
            Assertion::Local { txn, key, expected } => {
                let got = self
                    .state_of(*txn)
                    .and_then(|s| s.txn.local(0, *key))
                    .map(|v| counter_of(v).wrapping_sub(self.initial[*key as usize]));
                (
                    format!("local(T{txn},{})={expected}", key_name(*key)),
                    format!("local(T{txn},{})={}", key_name(*key), got.map_or("none".into(), |v| v.to_string())),
                )
            }
        };
        (expected != actual).then_some(AssertFailure { line, expected, actual })
    }

    fn state_of(&self, name: TxnId) -> Option<&Slot> {
        self.index.get(&name).map(|&i| &self.slots[i])
    }

    /// Checks entry ordering, wait priority and semaphore counts.
    pub fn audit(&self) -> std::result::Result<(), String> {
        let live: Vec<&Txn> = self
            .slots
            .iter()
            .filter(|s| matches!(s.txn.status(), TxnStatus::Running | TxnStatus::CommitWait))
            .map(|s| &s.txn)
            .collect();
        self.engine.audit_entries(&live)
    }
}

fn script_err(line: usize, reason: String) -> Error {
    Error::Script { line, reason }
}

fn cause_name(c: Option<AbortCause>) -> &'static str {
    match c {
        None => "none",
        Some(AbortCause::Wound) => "wound",
        Some(AbortCause::Cascade) => "cascade",
        Some(AbortCause::User) => "user",
    }
}

fn txn_name(t: Option<TxnId>) -> String {
    t.map_or("none".into(), |t| format!("T{t}"))
}

fn txn_set(ts: &[TxnId]) -> String {
    format!("{{{}}}", ts.iter().map(|t| format!("T{t}")).collect::<Vec<_>>().join(", "))
}

fn txn_seq(ts: &[TxnId]) -> String {
    format!("[{}]", ts.iter().map(|t| format!("T{t}")).collect::<Vec<_>>().join(", "))
}

fn hist(h: &BTreeMap<usize, u64>) -> String {
    format!("{{{}}}", h.iter().map(|(l, n)| format!("{l}:{n}")).collect::<Vec<_>>().join(", "))
}

/// Runs a script under `policy`, with the script's own flags applied when
/// the policy is bamboo.
pub fn replay(script: &Script, policy: Policy) -> Result<ReplayReport> {
    let policy = Policy::new(policy.protocol, if policy.is_bamboo() { script.flags } else { policy.flags });
    let mut r = Replayer::new(policy, script.rows)?;
    let mut failures = Vec::new();
    let mut assertions = 0;
    for step in &script.steps {
        if matches!(step.op, Op::Assert(_)) {
            assertions += 1;
        }
        if let Some(f) = r.apply(step.line, &step.op)? {
            failures.push(f);
        }
        if let Err(m) = r.audit() {
            failures.push(AssertFailure { line: step.line, expected: "consistent lock entries".into(), actual: m });
        }
    }
    Ok(ReplayReport { policy: policy.label(), steps: script.steps.len(), assertions, failures, history: r.history() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lock_manager::Protocol;
    use crate::validator::script::parse_script;

    fn run(text: &str) -> ReplayReport {
        replay(&parse_script(text).unwrap(), Policy::plain(Protocol::Bamboo)).unwrap()
    }

    #[test]
    fn retire_then_dirty_read_then_commit() {
        let r = run("begin T1\nbegin T2\nT1 write A +4\nT1 retire A\nT2 read A\n\
                     assert retired(A) = [T1/EX]\nassert owners(A) = [T2/SH]\nassert sem(T2) = 1\n\
                     assert local(T2, A) = 4\nT2 commit\nassert status(T2) = commit_wait\nT1 commit\n\
                     assert status(T2) = committed\nassert commit_order = [T1, T2]\nassert value(A) = 4\n");
        assert!(r.passed(), "{r}");
        assert_eq!(r.assertions, 8);
    }

    #[test]
    fn failed_assertion_is_reported_not_raised() {
        let r = run("begin T1\nT1 write A\nassert owners(A) = []\n");
        assert_eq!(r.failures.len(), 1);
        assert_eq!(r.failures[0].line, 3);
        assert_eq!(r.failures[0].actual, "owners(A)=[T1/EX]");
    }

    #[test]
    fn step_on_aborted_txn_is_a_script_error() {
        let s = parse_script("begin T1\nbegin T2\nT2 write A\nT1 write A\nT2 read B\n").unwrap();
        let err = replay(&s, Policy::plain(Protocol::WoundWait)).unwrap_err();
        assert!(matches!(err, Error::Script { line: 5, .. }), "{err}");
    }

    #[test]
    fn abort_cascade_chain() {
        let r = run("begin T1\nbegin T2\nbegin T3\nbegin T4\n\
                     T1 write A\nT1 retire A\nT2 write A\nT2 retire A\nT3 write A\nT3 retire A\nT4 read A\n\
                     T1 abort\nassert cascaded(T1) = {T2, T3, T4}\nassert chains = {4:1}\nassert retired(A) = []\n");
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn wound_wait_waiter_is_granted_after_commit() {
        let s = parse_script("begin T1\nbegin T2\nT1 write A\nT2 write A\nassert status(T2) = waiting\n\
                              T1 commit\nassert status(T2) = running\nassert owners(A) = [T2/EX]\n")
        .unwrap();
        let r = replay(&s, Policy::plain(Protocol::WoundWait)).unwrap();
        assert!(r.passed(), "{r}");
    }
}

//! Runs one transaction instance to completion on the calling thread,
//! restarting after wounds and cascades.

use std::time::{Duration, Instant};

use crate::lock_manager::{AbortCause, LockMode, Policy};
use crate::retire_planner::delta_cutoff;
use crate::txn_engine::{CommitStep, Engine, Step, Txn, WriteOp};
use crate::validator::history::{AbortRecord, CommitRecord};
use crate::workload::TxnInstance;

#[derive(Debug, Clone, Default)]
pub struct DriverConfig {
    /// Sleep before every access, standing in for a client round trip. When
    /// set, every write retires right away.
    pub inject_delay: Duration,
    /// Pause after an abort before the next attempt.
    pub backoff: Duration,
    /// Give up after this many attempts (0 means never).
    pub max_attempts: u32,
}

/// Time spent by one transaction, split by what the thread was doing.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Timings {
    /// Execution of the attempt that committed.
    pub useful: Duration,
    pub lock_wait: Duration,
    pub sem_wait: Duration,
    /// Execution of attempts that aborted.
    pub wasted: Duration,
    pub backoff: Duration,
}

impl Timings {
    pub fn total(&self) -> Duration {
        self.useful + self.lock_wait + self.sem_wait + self.wasted + self.backoff
    }

    pub fn add(&mut self, o: &Timings) {
        self.useful += o.useful;
        self.lock_wait += o.lock_wait;
        self.sem_wait += o.sem_wait;
        self.wasted += o.wasted;
        self.backoff += o.backoff;
    }
}

#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub commit: Option<CommitRecord>,
    pub aborts: Vec<AbortRecord>,
    pub attempts: u32,
    pub timings: Timings,
    /// Latency of the whole transaction including restarts.
    pub latency: Duration,
}

impl Outcome {
    pub fn committed(&self) -> bool {
        self.commit.is_some()
    }
}

struct Attempt {
    exec: Duration,
    lock_wait: Duration,
    sem_wait: Duration,
}

enum AttemptEnd {
    Committed(CommitRecord),
    Aborted(AbortRecord),
}

/// Accesses at or past this ordinal keep their write locks until commit.
pub fn delta_cutoff_for(policy: &Policy, len: usize) -> usize {
    if policy.is_bamboo() && policy.flags.delta_retire {
        delta_cutoff(len, policy.flags.delta)
    } else {
        len
    }
}

fn spin() {
    std::thread::yield_now();
}

fn run_attempt(engine: &Engine, txn: &mut Txn, inst: &TxnInstance, cfg: &DriverConfig, t: &mut Attempt) -> AttemptEnd {
    let start = Instant::now();
    let policy = *engine.policy();
    let cutoff = delta_cutoff_for(&policy, inst.len);
    let interactive = !cfg.inject_delay.is_zero();
    let mut aborted = false;
    for op in &inst.ops {
        if interactive {
            std::thread::sleep(cfg.inject_delay);
        }
        let step = match op.mode {
            LockMode::Shared => engine.read(txn, op.table, op.key),
            LockMode::Exclusive => engine.write(txn, op.table, op.key, WriteOp::AddU64(1)),
        }
        .expect("workload keys are in range");
        let step = match step {
            Step::Wait => {
                let w = Instant::now();
                let s = loop {
                    match engine.poll(txn) {
                        Step::Wait => spin(),
                        Step::Done(_) => break Step::Done(()),
                        Step::Aborted(c) => break Step::Aborted(c),
                    }
                };
                t.lock_wait += w.elapsed();
                s
            }
            Step::Done(_) => Step::Done(()),
            Step::Aborted(c) => Step::Aborted(c),
        };
        if let Step::Aborted(_) = step {
            aborted = true;
            break;
        }
        let retire = op.mode == LockMode::Exclusive && (interactive || (op.retire && op.ordinal < cutoff));
        if retire {
            engine.retire(txn, op.table, op.key).expect("retire of a written tuple");
        }
    }
    if !aborted && inst.user_abort {
        t.exec = start.elapsed() - t.lock_wait;
        return AttemptEnd::Aborted(engine.abort(txn, AbortCause::User));
    }
    if aborted {
        t.exec = start.elapsed() - t.lock_wait;
        return AttemptEnd::Aborted(engine.abort_record(txn));
    }
    let exec = start.elapsed() - t.lock_wait;
    let fallback = policy.is_bamboo() && policy.flags.delta_retire;
    let mut retired_rest = false;
    let w = Instant::now();
    let end = loop {
        match engine.try_commit(txn).expect("no pending request at commit") {
            CommitStep::Committed(rec) => break AttemptEnd::Committed(rec),
            CommitStep::Aborted(_) => break AttemptEnd::Aborted(engine.abort_record(txn)),
            CommitStep::Wait => {
                if fallback && !retired_rest && w.elapsed().as_secs_f64() > policy.flags.delta * exec.as_secs_f64() {
                    retired_rest = true;
                    engine.retire_all_writes(txn).expect("retire of written tuples");
                }
                spin();
            }
        }
    };
    t.sem_wait = w.elapsed();
    t.exec = exec;
    end
}

/// Executes `inst` until it commits or is aborted by the user. Wounds and
/// cascades restart it with a fresh attempt.
pub fn run_transaction(engine: &Engine, inst: &TxnInstance, cfg: &DriverConfig) -> Outcome {
    let begin = Instant::now();
    let mut out = Outcome::default();
    let mut prior_ts = None;
    loop {
        let mut txn = engine.begin(prior_ts);
        out.attempts += 1;
        let mut t = Attempt { exec: Duration::ZERO, lock_wait: Duration::ZERO, sem_wait: Duration::ZERO };
        let end = run_attempt(engine, &mut txn, inst, cfg, &mut t);
        out.timings.lock_wait += t.lock_wait;
        out.timings.sem_wait += t.sem_wait;
        match end {
            AttemptEnd::Committed(rec) => {
                out.timings.useful += t.exec;
                out.commit = Some(rec);
                break;
            }
            AttemptEnd::Aborted(rec) => {
                out.timings.wasted += t.exec;
                out.aborts.push(rec);
                if rec.cause == AbortCause::User || (cfg.max_attempts > 0 && out.attempts >= cfg.max_attempts) {
                    break;
                }
                prior_ts = Some(txn.ts());
                if !cfg.backoff.is_zero() {
                    let b = Instant::now();
                    std::thread::sleep(cfg.backoff);
                    out.timings.backoff += b.elapsed();
                }
            }
        }
    }
    out.latency = begin.elapsed();
    out
}

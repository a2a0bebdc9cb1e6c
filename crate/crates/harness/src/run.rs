//! Timed and counted multi-threaded runs.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::time::{Duration, Instant};

use bamboo_core::driver::{run_transaction, DriverConfig};
use bamboo_core::lock_manager::{AbortCause, Protocol};
use bamboo_core::txn_engine::{Engine, EngineOptions};
use bamboo_core::validator::chains::abort_chain_histogram;
use bamboo_core::validator::{validate, History};
use bamboo_core::workload::{Workload, WorkloadSpec};

use crate::config::{ConfigError, RunConfig};
use crate::report::{secs, Breakdown, CauseCounts, Percentiles, PriorityStats, RunReport, ValidationSummary};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Engine(#[from] bamboo_core::Error),
}

#[derive(Default)]
struct WorkerResult {
    breakdown: Breakdown,
    commits: u64,
    measured_commits: u64,
    attempts: u64,
    causes: CauseCounts,
    latencies_us: Vec<f64>,
    history: History,
}

pub fn describe_workload(spec: &WorkloadSpec) -> String {
    match spec {
        WorkloadSpec::Synthetic(s) => {
            let pos: Vec<String> = s.hotspots.iter().map(|p| p.to_string()).collect();
            format!("synthetic(rows={},K={},hot=[{}])", s.rows, s.txn_len, pos.join(";"))
        }
        WorkloadSpec::Ycsb(s) => {
            format!("ycsb(rows={},K={},theta={},read={})", s.rows, s.txn_len, s.theta, s.read_ratio)
        }
        WorkloadSpec::Template(_) => "template".into(),
        WorkloadSpec::Mixture { parts } => {
            let inner: Vec<String> = parts.iter().map(|p| format!("{}*{}", p.weight, describe_workload(&p.spec))).collect();
            format!("mixture({})", inner.join(" + "))
        }
    }
}

fn worker(
    engine: &Engine,
    workload: &Workload,
    cfg: &RunConfig,
    index: u64,
    quota: Option<u64>,
    stop: &AtomicBool,
    warm_end: Instant,
) -> Result<WorkerResult, RunError> {
    let mut out = WorkerResult::default();
    let mut stream = workload.stream(index)?;
    let driver = DriverConfig {
        inject_delay: Duration::from_micros(cfg.inject_delay_us),
        backoff: Duration::from_micros(cfg.backoff_us),
        max_attempts: 0,
    };
    let mut overhead = Duration::ZERO;
    let mut timings = bamboo_core::driver::Timings::default();
    let mut done = 0u64;
    let loop_start = Instant::now();
    loop {
        if quota.is_some_and(|q| done >= q) || (quota.is_none() && stop.load(Ordering::Relaxed)) {
            break;
        }
        let g = Instant::now();
        let inst = stream.next_txn();
        overhead += g.elapsed();
        let o = run_transaction(engine, &inst, &driver);
        let b = Instant::now();
        timings.add(&o.timings);
        out.attempts += o.attempts as u64;
        for a in &o.aborts {
            match a.cause {
                AbortCause::Wound => out.causes.wound += 1,
                AbortCause::Cascade => out.causes.cascade += 1,
                AbortCause::User => out.causes.user += 1,
            }
        }
        out.history.aborted.extend_from_slice(&o.aborts);
        if let Some(rec) = o.commit {
            out.commits += 1;
            if b >= warm_end {
                out.measured_commits += 1;
                out.latencies_us.push(o.latency.as_secs_f64() * 1e6);
            }
            if cfg.validate {
                out.history.committed.push(rec);
            }
        }
        done += 1;
        overhead += b.elapsed();
    }
    out.breakdown = Breakdown {
        useful_s: secs(timings.useful),
        lock_wait_s: secs(timings.lock_wait),
        sem_wait_s: secs(timings.sem_wait),
        wasted_s: secs(timings.wasted),
        overhead_s: secs(overhead + timings.backoff),
        total_s: secs(loop_start.elapsed()),
    };
    Ok(out)
}

/// Periodically checks lock entries for a waiter stuck behind a younger
/// conflicting transaction.
fn sample_wait_priority(engine: &Engine, stop: &AtomicBool, violations: &AtomicU64, samples: &AtomicU64) {
    let mut cursor = 0usize;
    while !stop.load(Ordering::Relaxed) {
        for t in 0..engine.tables().len() as u32 {
            let lt = engine.lock_table(t);
            let n = lt.len();
            for i in 0..n.min(256) {
                let key = ((cursor + i) % n) as u64;
                let e = lt.entry(key).latch();
                samples.fetch_add(1, Ordering::Relaxed);
                if e.check_wait_priority().is_err() {
                    violations.fetch_add(1, Ordering::Relaxed);
                }
            }
            cursor = cursor.wrapping_add(256);
        }
        std::thread::sleep(Duration::from_millis(5));
    }
}

pub fn run_experiment(cfg: &RunConfig) -> Result<RunReport, RunError> {
    cfg.validate()?;
    let policy = cfg.policy();
    let workload = Workload::new(cfg.workload.clone(), cfg.payload, cfg.seed)?;
    let options = EngineOptions {
        retain_ts_on_restart: cfg.retain_ts_on_restart,
        keep_log: false,
        priority_audit: cfg.priority_audit,
    };
    let engine = Engine::new(workload.tables(), policy, options)?;
    let stop = AtomicBool::new(false);
    let sampler_stop = AtomicBool::new(false);
    let violations = AtomicU64::new(0);
    let samples = AtomicU64::new(0);
    let sample = cfg.validate && matches!(policy.protocol, Protocol::Bamboo | Protocol::WoundWait);
    let start = Instant::now();
    let warm = cfg.duration_s.map_or(Duration::ZERO, |d| Duration::from_secs_f64(d * cfg.warmup));
    let warm_end = start + warm;
    let results: Vec<Result<WorkerResult, RunError>> = std::thread::scope(|s| {
        let sampler = sample.then(|| s.spawn(|| sample_wait_priority(&engine, &sampler_stop, &violations, &samples)));
        let handles: Vec<_> = (0..cfg.threads as u64)
            .map(|w| {
                let quota = cfg.txn_count.map(|n| n / cfg.threads as u64 + u64::from(w < n % cfg.threads as u64));
                let (engine, workload, stop) = (&engine, &workload, &stop);
                s.spawn(move || worker(engine, workload, cfg, w, quota, stop, warm_end))
            })
            .collect();
        if let Some(d) = cfg.duration_s {
            std::thread::sleep(Duration::from_secs_f64(d));
            stop.store(true, Ordering::Relaxed);
        }
        let out = handles.into_iter().map(|h| h.join().expect("worker panicked")).collect();
        sampler_stop.store(true, Ordering::Relaxed);
        if let Some(h) = sampler {
            h.join().expect("sampler panicked");
        }
        out
    });
    let elapsed = start.elapsed();
    let results = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut report = RunReport {
        label: String::new(),
        policy: policy.label(),
        threads: cfg.threads,
        workload: describe_workload(&cfg.workload),
        seed: cfg.seed,
        elapsed_s: secs(elapsed),
        ..Default::default()
    };
    let mut histories = Vec::new();
    let mut latencies = Vec::new();
    for r in results {
        report.commits += r.commits;
        report.measured_commits += r.measured_commits;
        report.attempts += r.attempts;
        report.aborts_by_cause.wound += r.causes.wound;
        report.aborts_by_cause.cascade += r.causes.cascade;
        report.aborts_by_cause.user += r.causes.user;
        report.breakdown.add(&r.breakdown);
        report.max_accounting_error = report.max_accounting_error.max(r.breakdown.accounting_error());
        report.workers.push(r.breakdown);
        latencies.extend(r.latencies_us);
        histories.push(r.history);
    }
    report.measured_s = secs(elapsed.saturating_sub(warm));
    report.throughput = report.measured_commits as f64 / report.measured_s.max(1e-9);
    report.aborts = report.aborts_by_cause.total();
    report.abort_rate = if report.attempts == 0 { 0.0 } else { report.aborts as f64 / report.attempts as f64 };
    let waits = report.breakdown.lock_wait_s + report.breakdown.sem_wait_s;
    report.wait_per_commit_us = if report.commits == 0 { 0.0 } else { waits * 1e6 / report.commits as f64 };
    report.latency = Percentiles::from_samples(latencies);
    report.priority = engine.audit().map(|a| PriorityStats { oldest_hits: a.oldest_hits(), checks: a.checks() });
    let history = History::merge(histories);
    report.chain_histogram = abort_chain_histogram(&history.aborted);
    if cfg.validate {
        let verdict = validate(&history);
        let wait_priority_violations = violations.load(Ordering::Relaxed);
        report.validation = Some(ValidationSummary {
            ok: verdict.ok() && wait_priority_violations == 0,
            committed: verdict.committed,
            edges: verdict.edges,
            cycle: verdict.cycle.clone(),
            integrity_violations: verdict.integrity_violations,
            order_violations: verdict.order_violations,
            wait_priority_violations,
            wait_samples: samples.load(Ordering::Relaxed),
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use bamboo_core::workload::YcsbSpec;

    #[test]
    fn counted_run_without_conflicts_commits_everything() {
        let spec = WorkloadSpec::Ycsb(YcsbSpec { rows: 10_000, txn_len: 4, theta: 0.0, read_ratio: 1.0, user_abort: 0.0 });
        let mut cfg = RunConfig::new(Protocol::Bamboo, spec);
        cfg.txn_count = Some(500);
        cfg.validate = true;
        let r = run_experiment(&cfg).unwrap();
        assert_eq!(r.commits, 500);
        assert_eq!(r.aborts, 0);
        assert!(r.valid());
    }
}

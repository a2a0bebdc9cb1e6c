//! Run reports: a JSON document per run and a fixed-column CSV row.
//!
//! CSV columns, in order: `label, policy, threads, workload, seed, elapsed_s,
//! measured_s, commits, throughput, attempts, aborts, abort_rate, wound,
//! cascade, user, useful_s, lock_wait_s, sem_wait_s, wasted_s, overhead_s,
//! total_s, accounting_error, wait_per_commit_us, p50_us, p90_us, p99_us,
//! max_chain, valid, error`.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CauseCounts {
    pub wound: u64,
    pub cascade: u64,
    pub user: u64,
}

impl CauseCounts {
    pub fn total(&self) -> u64 {
        self.wound + self.cascade + self.user
    }
}

/// Worker time split, in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub useful_s: f64,
    pub lock_wait_s: f64,
    pub sem_wait_s: f64,
    pub wasted_s: f64,
    /// Workload generation, bookkeeping and backoff.
    pub overhead_s: f64,
    /// Wall-clock time of the worker loop.
    pub total_s: f64,
}

impl Breakdown {
    pub fn accounted_s(&self) -> f64 {
        self.useful_s + self.lock_wait_s + self.sem_wait_s + self.wasted_s + self.overhead_s
    }

    /// Relative gap between the parts and the measured total.
    pub fn accounting_error(&self) -> f64 {
        if self.total_s == 0.0 {
            0.0
        } else {
            (self.total_s - self.accounted_s()).abs() / self.total_s
        }
    }

    pub fn add(&mut self, o: &Breakdown) {
        self.useful_s += o.useful_s;
        self.lock_wait_s += o.lock_wait_s;
        self.sem_wait_s += o.sem_wait_s;
        self.wasted_s += o.wasted_s;
        self.overhead_s += o.overhead_s;
        self.total_s += o.total_s;
    }
}

pub fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p50_us: f64,
    pub p90_us: f64,
    pub p99_us: f64,
    pub max_us: f64,
}

impl Percentiles {
    pub fn from_samples(mut v: Vec<f64>) -> Percentiles {
        if v.is_empty() {
            return Percentiles::default();
        }
        v.sort_by(f64::total_cmp);
        let at = |q: f64| v[((v.len() - 1) as f64 * q).round() as usize];
        Percentiles { p50_us: at(0.5), p90_us: at(0.9), p99_us: at(0.99), max_us: v[v.len() - 1] }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub ok: bool,
    pub committed: usize,
    pub edges: usize,
    pub cycle: Option<Vec<u64>>,
    pub integrity_violations: usize,
    pub order_violations: usize,
    /// Sampled lock entries where a waiter was older than a conflicting
    /// holder ahead of it.
    pub wait_priority_violations: u64,
    pub wait_samples: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PriorityStats {
    pub oldest_hits: u64,
    pub checks: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub label: String,
    pub policy: String,
    pub threads: usize,
    pub workload: String,
    pub seed: u64,
    pub elapsed_s: f64,
    /// Window used for throughput, after warm-up.
    pub measured_s: f64,
    pub commits: u64,
    pub measured_commits: u64,
    pub throughput: f64,
    pub attempts: u64,
    pub aborts: u64,
    pub abort_rate: f64,
    pub aborts_by_cause: CauseCounts,
    /// Chain length to number of chains.
    pub chain_histogram: BTreeMap<usize, u64>,
    pub breakdown: Breakdown,
    pub workers: Vec<Breakdown>,
    pub max_accounting_error: f64,
    /// Lock and semaphore wait per committed transaction.
    pub wait_per_commit_us: f64,
    pub latency: Percentiles,
    pub validation: Option<ValidationSummary>,
    pub priority: Option<PriorityStats>,
}

impl RunReport {
    pub fn valid(&self) -> bool {
        self.validation.as_ref().is_none_or(|v| v.ok)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub const CSV_HEADER: [&str; 29] = [
    "label",
    "policy",
    "threads",
    "workload",
    "seed",
    "elapsed_s",
    "measured_s",
    "commits",
    "throughput",
    "attempts",
    "aborts",
    "abort_rate",
    "wound",
    "cascade",
    "user",
    "useful_s",
    "lock_wait_s",
    "sem_wait_s",
    "wasted_s",
    "overhead_s",
    "total_s",
    "accounting_error",
    "wait_per_commit_us",
    "p50_us",
    "p90_us",
    "p99_us",
    "max_chain",
    "valid",
    "error",
];

pub fn csv_row(r: &RunReport) -> Vec<String> {
    let b = &r.breakdown;
    vec![
        r.label.clone(),
        r.policy.clone(),
        r.threads.to_string(),
        r.workload.clone(),
        r.seed.to_string(),
        format!("{:.6}", r.elapsed_s),
        format!("{:.6}", r.measured_s),
        r.commits.to_string(),
        format!("{:.3}", r.throughput),
        r.attempts.to_string(),
        r.aborts.to_string(),
        format!("{:.6}", r.abort_rate),
        r.aborts_by_cause.wound.to_string(),
        r.aborts_by_cause.cascade.to_string(),
        r.aborts_by_cause.user.to_string(),
        format!("{:.6}", b.useful_s),
        format!("{:.6}", b.lock_wait_s),
        format!("{:.6}", b.sem_wait_s),
        format!("{:.6}", b.wasted_s),
        format!("{:.6}", b.overhead_s),
        format!("{:.6}", b.total_s),
        format!("{:.6}", r.max_accounting_error),
        format!("{:.3}", r.wait_per_commit_us),
        format!("{:.3}", r.latency.p50_us),
        format!("{:.3}", r.latency.p90_us),
        format!("{:.3}", r.latency.p99_us),
        r.chain_histogram.keys().next_back().copied().unwrap_or(0).to_string(),
        r.valid().to_string(),
        String::new(),
    ]
}

/// Row for a run that failed before producing a report.
pub fn csv_error_row(label: &str, policy: &str, error: &str) -> Vec<String> {
    let mut row = vec![String::new(); CSV_HEADER.len()];
    row[0] = label.to_string();
    row[1] = policy.to_string();
    row[CSV_HEADER.len() - 2] = "false".into();
    row[CSV_HEADER.len() - 1] = error.to_string();
    row
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentiles_of_uniform_samples() {
        let p = Percentiles::from_samples((1..=100).map(f64::from).collect());
        assert_eq!((p.p50_us, p.p90_us, p.p99_us, p.max_us), (51.0, 90.0, 99.0, 100.0));
        assert_eq!(Percentiles::from_samples(Vec::new()), Percentiles::default());
    }

    #[test]
    fn row_matches_header() {
        assert_eq!(csv_row(&RunReport::default()).len(), CSV_HEADER.len());
        assert_eq!(csv_error_row("x", "bamboo", "boom").len(), CSV_HEADER.len());
    }

    #[test]
    fn accounting_error_is_relative() {
        let b = Breakdown { useful_s: 0.5, lock_wait_s: 0.2, sem_wait_s: 0.1, wasted_s: 0.1, overhead_s: 0.09, total_s: 1.0 };
        assert!((b.accounting_error() - 0.01).abs() < 1e-12);
    }
}

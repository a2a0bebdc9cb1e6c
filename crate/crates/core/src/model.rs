//! Closed-form estimates of conflict, deadlock and throughput for lock-based
//! protocols, and the condition under which early retire pays off.
//!
//! `k` is lock requests per transaction, `n` concurrent transactions, `d`
//! data items and `t` the mean time between lock requests. The
//! approximations exceed 1 outside their regime; results are clamped and the
//! clamp is reported rather than hidden.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelParams {
    pub n: f64,
    pub k: f64,
    pub d: f64,
    pub t: f64,
}

impl ModelParams {
    pub fn new(n: f64, k: f64, d: f64, t: f64) -> Result<ModelParams> {
        let p = ModelParams { n, k, d, t };
        for (name, v) in [("n", n), ("k", k), ("d", d), ("t", t)] {
            // n = 0 is a meaningful limit; the rest must be positive
            let ok = v.is_finite() && if name == "n" { v >= 0.0 } else { v > 0.0 };
            if !ok {
                return Err(Error::Config(format!("model parameter {name} = {v} is out of range")));
            }
        }
        Ok(p)
    }

    /// More lock requests in flight than data items.
    pub fn oversubscribed(&self) -> bool {
        self.n * self.k > self.d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Clamped {
    pub value: f64,
    /// The raw formula value before clamping.
    pub raw: f64,
    pub clamped: bool,
}

impl Clamped {
    fn unit(raw: f64) -> Clamped {
        let value = raw.clamp(0.0, 1.0);
        Clamped { value, raw, clamped: value != raw }
    }
}

pub fn p_conflict_raw(p: &ModelParams) -> f64 {
    p.n * p.k * p.k / (2.0 * p.d)
}

pub fn p_deadlock_raw(p: &ModelParams) -> f64 {
    p.n * p.k.powi(4) / (4.0 * p.d * p.d)
}

/// `N K^2 / 2D`.
pub fn p_conflict(p: &ModelParams) -> Clamped {
    Clamped::unit(p_conflict_raw(p))
}

/// `N K^4 / 4D^2`.
pub fn p_deadlock(p: &ModelParams) -> Clamped {
    Clamped::unit(p_deadlock_raw(p))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Benefit {
    pub holds: bool,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    /// Set when `k == 1`: a single access never gains from retiring.
    pub single_access: bool,
}

/// `N^2 K^4 / 2D^2 < (K - 1) / (K + 1)`.
pub fn bamboo_benefit(p: &ModelParams) -> Benefit {
    let lhs = p.n * p.n * p.k.powi(4) / (2.0 * p.d * p.d);
    let rhs = (p.k - 1.0) / (p.k + 1.0);
    Benefit { holds: lhs < rhs, lhs, rhs, margin: rhs - lhs, single_access: p.k == 1.0 }
}

/// Fraction of a lock's hold time a conflicting requester waits under early
/// retire.
pub fn a_bamboo(k: f64) -> f64 {
    1.0 / (k + 1.0)
}

/// The same fraction under wound-wait.
pub const A_WOUND_WAIT: f64 = 0.5;

/// `N / ((K + 1) t) * (1 - A Pc - B Pa)`, clamped at zero.
pub fn throughput(p: &ModelParams, a: f64, p_conflict: f64, b: f64, p_abort: f64) -> Result<Clamped> {
    for (name, v) in [("A", a), ("P_conflict", p_conflict), ("B", b), ("P_abort", p_abort)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Config(format!("{name} = {v} outside [0, 1]")));
        }
    }
    let raw = p.n / ((p.k + 1.0) * p.t) * (1.0 - a * p_conflict - b * p_abort);
    let value = raw.max(0.0);
    Ok(Clamped { value, raw, clamped: value != raw })
}

/// Upper bound on aborts caused by failed timestamp assignment,
/// `N Pc Pd`.
pub fn p_cas_abort_bound(p: &ModelParams) -> Clamped {
    Clamped::unit(p.n * p_conflict(p).value * p_deadlock(p).value)
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelReport {
    pub params: ModelParams,
    pub oversubscribed: bool,
    pub p_conflict: Clamped,
    pub p_deadlock: Clamped,
    pub p_cas_abort_bound: Clamped,
    pub benefit: Benefit,
    pub a_bamboo: f64,
    pub a_wound_wait: f64,
    /// Relative throughput with B = 0, using `P_conflict` and each preset.
    pub throughput_bamboo: f64,
    pub throughput_wound_wait: f64,
}

pub fn evaluate(p: &ModelParams) -> ModelReport {
    let pc = p_conflict(p);
    let ab = a_bamboo(p.k);
    ModelReport {
        params: *p,
        oversubscribed: p.oversubscribed(),
        p_conflict: pc,
        p_deadlock: p_deadlock(p),
        p_cas_abort_bound: p_cas_abort_bound(p),
        benefit: bamboo_benefit(p),
        a_bamboo: ab,
        a_wound_wait: A_WOUND_WAIT,
        throughput_bamboo: throughput(p, ab, pc.value, 0.0, 0.0).expect("presets in range").value,
        throughput_wound_wait: throughput(p, A_WOUND_WAIT, pc.value, 0.0, 0.0).expect("presets in range").value,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n: f64, k: f64, d: f64) -> ModelParams {
        ModelParams::new(n, k, d, 1.0).unwrap()
    }

    #[test]
    fn limits() {
        assert!(p_conflict(&params(32.0, 16.0, 1e300)).value < 1e-290);
        assert_eq!(p_deadlock(&params(0.0, 16.0, 10.0)).value, 0.0);
        assert_eq!(p_deadlock_raw(&params(3.0, 1.0, 7.0)), 3.0 / (4.0 * 49.0));
        let c = p_conflict(&params(1000.0, 16.0, 10.0));
        assert!(c.clamped && c.value == 1.0 && c.raw > 1.0);
    }

    #[test]
    fn benefit_edges() {
        let b = bamboo_benefit(&params(10.0, 1.0, 1e6));
        assert!(!b.holds && b.single_access && b.rhs == 0.0);
        assert!(!bamboo_benefit(&params(1000.0, 64.0, 1000.0)).holds);
    }

    #[test]
    fn throughput_without_conflicts() {
        let p = ModelParams::new(8.0, 16.0, 1e6, 2.0).unwrap();
        assert_eq!(throughput(&p, 0.0, 0.5, 0.0, 0.5).unwrap().value, 8.0 / (17.0 * 2.0));
        assert_eq!(a_bamboo(16.0), 1.0 / 17.0);
        assert!(throughput(&p, 1.5, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn rejects_bad_params() {
        assert!(ModelParams::new(1.0, 0.0, 1.0, 1.0).is_err());
        assert!(ModelParams::new(-1.0, 1.0, 1.0, 1.0).is_err());
        assert!(ModelParams::new(1.0, 1.0, f64::NAN, 1.0).is_err());
    }
}

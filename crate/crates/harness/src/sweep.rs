//! Cartesian sweeps over run parameters with one CSV row per run.
//!
//! ```toml
//! repeat = 1
//! [base]
//! policy = "bamboo"
//! threads = 8
//! duration_s = 5
//! [base.workload]
//! kind = "ycsb"
//! rows = 1024
//! [[axis]]
//! param = "theta"
//! values = [0.0, 0.3, 0.6, 0.9]
//! [[axis]]
//! param = "policy"
//! values = ["bamboo", "wound_wait"]
//! ```
//!
//! Axis parameters: `policy`, `flags` (e.g. `"autoretire+noraw"`), `threads`,
//! `seed`, `theta`, `read_ratio`, `txn_len`, `rows`, `hotspot` (position of
//! the first synthetic hotspot), `second_hotspot`, `inject_delay_us`, `delta`.

use std::io::Write;

use bamboo_core::lock_manager::{PolicyFlags, Protocol};
use bamboo_core::workload::WorkloadSpec;
use serde::Deserialize;

use crate::config::RunConfig;
use crate::report::{csv_error_row, csv_row, RunReport, CSV_HEADER};
use crate::run::run_experiment;

#[derive(Debug, Clone, Deserialize)]
pub struct Axis {
    pub param: String,
    pub values: Vec<toml::Value>,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub base: RunConfig,
    #[serde(default)]
    pub axis: Vec<Axis>,
    #[serde(default = "one")]
    pub repeat: u32,
}

impl SweepSpec {
    pub fn from_toml(text: &str) -> Result<SweepSpec, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Every combination of axis values applied to the base config.
    pub fn expand(&self) -> Vec<(String, Result<RunConfig, String>)> {
        let mut out = vec![(String::new(), Ok(self.base.clone()))];
        for axis in &self.axis {
            let mut next = Vec::new();
            for (label, cfg) in &out {
                for v in &axis.values {
                    let l = if label.is_empty() {
                        format!("{}={}", axis.param, show(v))
                    } else {
                        format!("{label},{}={}", axis.param, show(v))
                    };
                    let c = cfg.clone().and_then(|mut c| set_param(&mut c, &axis.param, v).map(|_| c));
                    next.push((l, c));
                }
            }
            out = next;
        }
        let mut repeated = Vec::new();
        for (label, cfg) in out {
            for r in 0..self.repeat {
                let l = if self.repeat > 1 { format!("{label}#{r}") } else { label.clone() };
                repeated.push((l, cfg.clone()));
            }
        }
        repeated
    }
}

fn show(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn float(v: &toml::Value) -> Result<f64, String> {
    match v {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        other => Err(format!("expected a number, got {other}")),
    }
}

fn int(v: &toml::Value) -> Result<u64, String> {
    match v {
        toml::Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        other => Err(format!("expected a non-negative integer, got {other}")),
    }
}

pub fn parse_flags(s: &str) -> Result<PolicyFlags, String> {
    let mut f = PolicyFlags::default();
    for part in s.split('+').map(str::trim).filter(|p| !p.is_empty() && *p != "base") {
        match part {
            "autoretire" => f.read_autoretire = true,
            "noraw" => f.no_raw_abort = true,
            "dynts" => f.dynamic_ts = true,
            "delta" => f.delta_retire = true,
            "all" => f = PolicyFlags::all(),
            other => match other.strip_prefix("delta=") {
                Some(d) => {
                    f.delta_retire = true;
                    f.delta = d.parse().map_err(|_| format!("bad delta `{d}`"))?;
                }
                None => return Err(format!("unknown flag `{other}`")),
            },
        }
    }
    Ok(f)
}

pub fn set_param(cfg: &mut RunConfig, name: &str, v: &toml::Value) -> Result<(), String> {
    let wl = &mut cfg.workload;
    match name {
        "policy" => cfg.policy = show(v).parse::<Protocol>().map_err(|e| e.to_string())?,
        "flags" => cfg.flags = parse_flags(&show(v))?,
        "threads" => cfg.threads = int(v)? as usize,
        "seed" => cfg.seed = int(v)?,
        "inject_delay_us" => cfg.inject_delay_us = int(v)?,
        "delta" => {
            cfg.flags.delta = float(v)?;
            cfg.flags.delta_retire = true;
        }
        "theta" => match wl {
            WorkloadSpec::Ycsb(s) => s.theta = float(v)?,
            _ => return Err("theta needs a ycsb workload".into()),
        },
        "read_ratio" => match wl {
            WorkloadSpec::Ycsb(s) => s.read_ratio = float(v)?,
            WorkloadSpec::Synthetic(s) => s.filler_read_ratio = float(v)?,
            _ => return Err("read_ratio needs a ycsb or synthetic workload".into()),
        },
        "txn_len" => match wl {
            WorkloadSpec::Ycsb(s) => s.txn_len = int(v)? as usize,
            WorkloadSpec::Synthetic(s) => s.txn_len = int(v)? as usize,
            _ => return Err("txn_len needs a ycsb or synthetic workload".into()),
        },
        "rows" => match wl {
            WorkloadSpec::Ycsb(s) => s.rows = int(v)?,
            WorkloadSpec::Synthetic(s) => s.rows = int(v)?,
            _ => return Err("rows needs a ycsb or synthetic workload".into()),
        },
        "hotspot" | "second_hotspot" => match wl {
            WorkloadSpec::Synthetic(s) => {
                let i = usize::from(name == "second_hotspot");
                if s.hotspots.len() <= i {
                    return Err(format!("{name} needs {} hotspot(s) in the base workload", i + 1));
                }
                s.hotspots[i] = float(v)?;
            }
            _ => return Err(format!("{name} needs a synthetic workload")),
        },
        other => return Err(format!("unknown sweep parameter `{other}`")),
    }
    Ok(())
}

/// Runs every combination; failures become rows with the error column set.
pub fn run_sweep(spec: &SweepSpec, mut progress: impl FnMut(&str, &Result<RunReport, String>)) -> Vec<(String, Result<RunReport, String>)> {
    spec.expand()
        .into_iter()
        .map(|(label, cfg)| {
            let res = cfg.and_then(|c| run_experiment(&c).map_err(|e| e.to_string())).map(|mut r| {
                r.label = label.clone();
                r
            });
            progress(&label, &res);
            (label, res)
        })
        .collect()
}

pub fn write_csv<W: Write>(w: W, rows: &[(String, Result<RunReport, String>)]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER)?;
    for (label, r) in rows {
        match r {
            Ok(rep) => out.write_record(csv_row(rep))?,
            Err(e) => out.write_record(csv_error_row(label, "", e))?,
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[base]
policy = "bamboo"
txn_count = 10
[base.workload]
kind = "ycsb"
rows = 100
txn_len = 4
"#;

    #[test]
    fn theta_sweep_has_ten_rows() {
        let spec = SweepSpec::from_toml(&format!(
            "{BASE}\n[[axis]]\nparam = \"theta\"\nvalues = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]\n"
        ))
        .unwrap();
        let rows = spec.expand();
        assert_eq!(rows.len(), 10);
        assert!(rows.iter().all(|(_, c)| c.is_ok()));
        assert_eq!(rows[3].0, "theta=0.3");
    }

    #[test]
    fn product_and_bad_values() {
        let spec = SweepSpec::from_toml(&format!(
            "{BASE}\n[[axis]]\nparam = \"policy\"\nvalues = [\"bamboo\", \"ww\", \"nope\"]\n[[axis]]\nparam = \"threads\"\nvalues = [1, 2]\n"
        ))
        .unwrap();
        let rows = spec.expand();
        assert_eq!(rows.len(), 6);
        assert_eq!(rows.iter().filter(|(_, c)| c.is_err()).count(), 2);
    }

    #[test]
    fn failed_rows_keep_the_sweep_going() {
        let spec = SweepSpec::from_toml(&format!(
            "{BASE}\n[[axis]]\nparam = \"txn_len\"\nvalues = [2, 500]\n"
        ))
        .unwrap();
        let rows = run_sweep(&spec, |_, _| {});
        assert!(rows[0].1.is_ok());
        assert!(rows[1].1.is_err());
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }

    #[test]
    fn flag_labels() {
        let f = parse_flags("autoretire+delta=0.2").unwrap();
        assert!(f.read_autoretire && f.delta_retire && f.delta == 0.2);
        assert_eq!(parse_flags("all").unwrap(), PolicyFlags::all());
        assert!(parse_flags("bogus").is_err());
    }
}

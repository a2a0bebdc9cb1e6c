use std::fs::File;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bamboo_bench::config::RunConfig;
use bamboo_bench::report::{csv_row, CSV_HEADER};
use bamboo_bench::run::run_experiment;
use bamboo_bench::sweep::{parse_flags, run_sweep, write_csv, SweepSpec};
use bamboo_core::lock_manager::{Policy, Protocol};
use bamboo_core::model::{evaluate, ModelParams};
use bamboo_core::validator::replay::replay;
use bamboo_core::validator::script::parse_script;
use bamboo_core::workload::{SyntheticSpec, WorkloadSpec, YcsbSpec};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bamboo", about = "Lock-retiring 2PL engine: benchmarks, model, schedule replay")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment and print its report.
    Bench(BenchArgs),
    /// Evaluate the analytical model.
    Model {
        #[arg(long)]
        n: f64,
        #[arg(long)]
        k: f64,
        #[arg(long)]
        d: f64,
        #[arg(long, default_value_t = 1.0)]
        t: f64,
    },
    /// Replay a schedule script and check its assertions.
    Replay {
        script: PathBuf,
        /// Defaults to the script's `policy` line, then bamboo.
        #[arg(long)]
        policy: Option<String>,
    },
    /// Run a parameter sweep and write one CSV row per run.
    Sweep {
        file: PathBuf,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct BenchArgs {
    /// Full run config (TOML); other flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    policy: Option<String>,
    /// Bamboo options joined with `+`: autoretire, noraw, dynts, delta[=x], all.
    #[arg(long)]
    flags: Option<String>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    rows: Option<u64>,
    /// Workload file (TOML).
    #[arg(long)]
    workload: Option<PathBuf>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    read_ratio: Option<f64>,
    #[arg(long)]
    txn_len: Option<usize>,
    /// Hotspot position in [0, 1]; repeat for several. Selects the synthetic workload.
    #[arg(long)]
    hotspot: Vec<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    inject_delay_us: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    duration_s: Option<f64>,
    #[arg(long)]
    txn_count: Option<u64>,
    #[arg(long)]
    validate: bool,
    #[arg(long)]
    priority_audit: bool,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Append a CSV row (with header when the file is new).
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn bench_config(a: &BenchArgs) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => {
            let workload = match &a.workload {
                Some(p) => WorkloadSpec::load(p).with_context(|| format!("loading {}", p.display()))?,
                None if !a.hotspot.is_empty() => WorkloadSpec::Synthetic(SyntheticSpec {
                    rows: a.rows.unwrap_or(100_000),
                    txn_len: a.txn_len.unwrap_or(16),
                    hotspots: a.hotspot.clone(),
                    hotspot_keys: Vec::new(),
                    filler_read_ratio: a.read_ratio.unwrap_or(1.0),
                    user_abort: 0.0,
                }),
                None => WorkloadSpec::Ycsb(YcsbSpec {
                    rows: a.rows.unwrap_or(1024),
                    txn_len: a.txn_len.unwrap_or(16),
                    theta: a.theta.unwrap_or(0.9),
                    read_ratio: a.read_ratio.unwrap_or(0.5),
                    user_abort: 0.0,
                }),
            };
            let mut c = RunConfig::new(Protocol::Bamboo, workload);
            c.txn_count = None;
            c.duration_s = Some(5.0);
            c
        }
    };
    if let Some(p) = &a.policy {
        cfg.policy = p.parse()?;
    }
    if let Some(f) = &a.flags {
        cfg.flags = parse_flags(f).map_err(anyhow::Error::msg)?;
    }
    if let Some(t) = a.threads {
        cfg.threads = t;
    }
    if let Some(d) = a.delta {
        cfg.flags.delta = d;
    }
    if let Some(d) = a.inject_delay_us {
        cfg.inject_delay_us = d;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    match (a.duration_s, a.txn_count) {
        (Some(_), Some(_)) => bail!("--duration-s and --txn-count are exclusive"),
        (Some(d), None) => {
            cfg.duration_s = Some(d);
            cfg.txn_count = None;
        }
        (None, Some(n)) => {
            cfg.txn_count = Some(n);
            cfg.duration_s = None;
        }
        (None, None) => {}
    }
    cfg.validate |= a.validate;
    cfg.priority_audit |= a.priority_audit;
    cfg.validate()?;
    Ok(cfg)
}

fn bench(a: &BenchArgs) -> Result<ExitCode> {
    let cfg = bench_config(a)?;
    let report = run_experiment(&cfg)?;
    let json = report.to_json();
    match &a.out {
        Some(p) => std::fs::write(p, &json).with_context(|| format!("writing {}", p.display()))?,
        None => println!("{json}"),
    }
    if let Some(p) = &a.csv {
        let fresh = !p.exists();
        let f = File::options().create(true).append(true).open(p)?;
        let mut w = csv::Writer::from_writer(f);
        if fresh {
            w.write_record(CSV_HEADER)?;
        }
        w.write_record(csv_row(&report))?;
        w.flush()?;
    }
    if !report.valid() {
        eprintln!("validation failed");
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn run() -> Result<ExitCode> {
    match Cli::parse().cmd {
        Cmd::Bench(a) => bench(&a),
        Cmd::Model { n, k, d, t } => {
            let p = ModelParams::new(n, k, d, t)?;
            println!("{}", serde_json::to_string_pretty(&evaluate(&p))?);
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Replay { script, policy } => {
            let text = std::fs::read_to_string(&script).with_context(|| format!("reading {}", script.display()))?;
            let parsed = parse_script(&text)?;
            let protocol = match policy {
                Some(p) => p.parse()?,
                None => parsed.policy.unwrap_or(Protocol::Bamboo),
            };
            let report = replay(&parsed, Policy::plain(protocol))?;
            print!("{report}");
            Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Cmd::Sweep { file, out } => {
            let text = std::fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
            let spec = SweepSpec::from_toml(&text).map_err(anyhow::Error::msg)?;
            let rows = run_sweep(&spec, |label, r| match r {
                Ok(rep) => eprintln!("{label}: {:.1} txn/s, abort rate {:.4}", rep.throughput, rep.abort_rate),
                Err(e) => eprintln!("{label}: error: {e}"),
            });
            match out {
                Some(p) => write_csv(File::create(&p)?, &rows)?,
                None => write_csv(std::io::stdout().lock(), &rows)?,
            }
            let bad = rows.iter().any(|(_, r)| r.as_ref().map_or(true, |rep| !rep.valid()));
            Ok(if bad { ExitCode::FAILURE } else { ExitCode::SUCCESS })
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

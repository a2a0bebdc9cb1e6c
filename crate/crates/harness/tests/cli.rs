use std::path::Path;
use std::process::{Command, Output};

fn bamboo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bamboo")).args(args).output().expect("spawn bamboo")
}

fn golden(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/scripts/golden").join(name).display().to_string()
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

#[test]
fn replay_passes_golden_script() {
    let out = bamboo(&["replay", &golden("abort_chain_of_four.txt")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("bamboo[base]:"));
}

#[test]
fn replay_uses_the_script_policy_line() {
    let out = bamboo(&["replay", &golden("acquire_wait_die_younger_dies.txt")]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("wait_die:"));
}

#[test]
fn replay_exits_nonzero_on_failed_assertion() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.txt");
    std::fs::write(&p, "begin T1\nT1 write A\nassert owners(A) = []\n").unwrap();
    let out = bamboo(&["replay", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("line 3: expected owners(A)=[], got owners(A)=[T1/EX]"));
}

#[test]
fn model_prints_all_quantities() {
    let out = bamboo(&["model", "--n", "32", "--k", "16", "--d", "1000000"]);
    assert!(out.status.success());
    let v = json(&out);
    assert!((v["p_conflict"]["value"].as_f64().unwrap() - 4.096e-3).abs() < 1e-15);
    assert_eq!(v["benefit"]["holds"], true);
    assert_eq!(v["a_bamboo"].as_f64().unwrap(), 1.0 / 17.0);
}

#[test]
fn counted_bench_validates_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("runs.csv");
    for policy in ["bamboo", "no_wait"] {
        let out = bamboo(&[
            "bench", "--policy", policy, "--threads", "4", "--rows", "64", "--txn-count", "400", "--validate", "--csv",
            csv.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let v = json(&out);
        assert_eq!(v["commits"], 400);
        assert_eq!(v["validation"]["ok"], true);
    }
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 3, "{text}");
}

#[test]
fn bench_rejects_conflicting_run_length() {
    let out = bamboo(&["bench", "--duration-s", "1", "--txn-count", "5"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("exclusive"));
}

#[test]
fn config_file_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("run.toml");
    std::fs::write(&p, "policy = \"bamboo\"\nthreads = 0\ntxn_count = 10\n[workload]\nkind = \"ycsb\"\n").unwrap();
    let out = bamboo(&["bench", "--config", p.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("threads: must be at least 1"));
}

use std::path::{Path, PathBuf};

use bamboo_core::lock_manager::{Policy, Protocol};
use bamboo_core::validator::differential::degeneration_divergence;
use bamboo_core::validator::replay::replay;
use bamboo_core::validator::script::{parse_script, Script};

fn load(sub: &str) -> Vec<(PathBuf, Script)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/scripts").join(sub);
    let mut out: Vec<(PathBuf, Script)> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .map(|p| {
            let s = parse_script(&std::fs::read_to_string(&p).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            (p, s)
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

#[test]
fn golden_scripts_pass() {
    let scripts = load("golden");
    assert!(scripts.len() >= 25);
    for (path, s) in scripts {
        let r = replay(&s, Policy::plain(s.policy.unwrap_or(Protocol::Bamboo))).unwrap();
        assert!(r.passed(), "{}\n{r}", path.display());
        assert!(r.assertions > 0, "{} asserts nothing", path.display());
    }
}

#[test]
fn schedules_are_legal_under_bamboo_and_wound_wait() {
    for (path, s) in load("schedules") {
        for p in [Protocol::Bamboo, Protocol::WoundWait] {
            replay(&s, Policy::plain(p)).unwrap_or_else(|e| panic!("{} under {p}: {e}", path.display()));
        }
    }
}

#[test]
fn scripted_corpus_degenerates_without_retires() {
    let mut n = 0;
    for (path, s) in load("golden").into_iter().chain(load("schedules")) {
        if s.policy.is_some_and(|p| p != Protocol::Bamboo) {
            continue;
        }
        n += 1;
        assert_eq!(degeneration_divergence(&s).unwrap(), None, "{}", path.display());
    }
    assert!(n >= 30, "corpus has {n} schedules");
}

#[test]
fn golden_expectations_are_protocol_specific() {
    // the dirty-read example must not hold under wound-wait
    let (_, s) = load("golden").into_iter().find(|(p, _)| p.ends_with("read_after_retired_write.txt")).unwrap();
    let r = replay(&s, Policy::plain(Protocol::WoundWait));
    assert!(r.is_err() || !r.unwrap().passed());
}

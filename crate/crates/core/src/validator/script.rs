//! Line-oriented schedule scripts.
//!
//! ```text
//! # comments start with '#'
//! rows 8                      optional, table size (default 26)
//! flags autoretire noraw      optional: autoretire, delta, noraw, dynts
//! policy wait_die             optional protocol the script is written for
//! begin T1                    timestamp defaults to the txn number
//! begin T2 ts=7               explicit timestamp; ts=none leaves it unassigned
//! T1 write A                  read-modify-write adding 1; `T1 write A +5` adds 5
//! T1 read A
//! T1 retire A
//! T1 commit                   blocks (stays commit_wait) until the semaphore clears
//! T1 abort
//! assert retired(A) = [T1/EX, T2/SH]
//! assert owners(A) = []
//! assert waiters(A) = [T3/EX]
//! assert sem(T2) = 1
//! assert status(T2) = running | waiting | commit_wait | committed | aborted
//! assert cause(T2) = wound | cascade | user | none
//! assert parent(T2) = T1
//! assert ts(T1) = 1           or `none`
//! assert cascaded(T1) = {T2, T3}
//! assert chains = {4:1}
//! assert commit_order = [T1, T2]
//! assert value(A) = 3         committed counter in the table
//! assert local(T2, A) = 1     counter in T2's local copy
//! ```
//!
//! Keys are single letters (`A` is key 0) or decimal numbers. Transaction
//! names are `T` followed by the id.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::lock_manager::{AbortCause, ListKind, LockMode, PolicyFlags, Protocol};
use crate::storage::{Key, TxnId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StatusName {
    Running,
    Waiting,
    CommitWait,
    Committed,
    Aborted,
}

impl StatusName {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "running" => StatusName::Running,
            "waiting" => StatusName::Waiting,
            "commit_wait" => StatusName::CommitWait,
            "committed" => StatusName::Committed,
            "aborted" => StatusName::Aborted,
            _ => return None,
        })
    }
}

impl fmt::Display for StatusName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StatusName::Running => "running",
            StatusName::Waiting => "waiting",
            StatusName::CommitWait => "commit_wait",
            StatusName::Committed => "committed",
            StatusName::Aborted => "aborted",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Assertion {
    List { kind: ListKind, key: Key, expected: Vec<(TxnId, LockMode)> },
    Semaphore { txn: TxnId, expected: u32 },
    Status { txn: TxnId, expected: StatusName },
    Cause { txn: TxnId, expected: Option<AbortCause> },
    Parent { txn: TxnId, expected: Option<TxnId> },
    Ts { txn: TxnId, expected: Option<u64> },
    Cascaded { txn: TxnId, expected: Vec<TxnId> },
    Chains { expected: BTreeMap<usize, u64> },
    CommitOrder { expected: Vec<TxnId> },
    Value { key: Key, expected: u64 },
    Local { txn: TxnId, key: Key, expected: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Op {
    /// `None` timestamp means unassigned; `Some(None)` is not used.
    Begin { txn: TxnId, ts: TsSpec },
    Read { txn: TxnId, key: Key },
    Write { txn: TxnId, key: Key, delta: u64 },
    Retire { txn: TxnId, key: Key },
    Commit { txn: TxnId },
    Abort { txn: TxnId },
    Assert(Assertion),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsSpec {
    /// The transaction number, or unassigned under dynamic timestamps.
    Default,
    Unassigned,
    Value(u64),
}

impl Op {
    pub fn is_retire(&self) -> bool {
        matches!(self, Op::Retire { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptStep {
    pub line: usize,
    pub op: Op,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Script {
    pub rows: u64,
    pub flags: PolicyFlags,
    /// Protocol named by a `policy` line, if any.
    pub policy: Option<Protocol>,
    pub steps: Vec<ScriptStep>,
}

impl Default for Script {
    fn default() -> Self {
        Script { rows: 26, flags: PolicyFlags::default(), policy: None, steps: Vec::new() }
    }
}

pub fn key_name(key: Key) -> String {
    if key < 26 {
        ((b'A' + key as u8) as char).to_string()
    } else {
        key.to_string()
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Begin { txn, ts: TsSpec::Default } => write!(f, "begin T{txn}"),
            Op::Begin { txn, ts: TsSpec::Unassigned } => write!(f, "begin T{txn} ts=none"),
            Op::Begin { txn, ts: TsSpec::Value(v) } => write!(f, "begin T{txn} ts={v}"),
            Op::Read { txn, key } => write!(f, "T{txn} read {}", key_name(*key)),
            Op::Write { txn, key, delta: 1 } => write!(f, "T{txn} write {}", key_name(*key)),
            Op::Write { txn, key, delta } => write!(f, "T{txn} write {} +{delta}", key_name(*key)),
            Op::Retire { txn, key } => write!(f, "T{txn} retire {}", key_name(*key)),
            Op::Commit { txn } => write!(f, "T{txn} commit"),
            Op::Abort { txn } => write!(f, "T{txn} abort"),
            Op::Assert(a) => write!(f, "assert {a:?}"),
        }
    }
}

impl Script {
    /// Renders the steps back to script text (assertions as comments).
    pub fn render(&self) -> String {
        let mut out = format!("rows {}\n", self.rows);
        if let Some(p) = self.policy {
            out.push_str(&format!("policy {p}\n"));
        }
        for s in &self.steps {
            match &s.op {
                Op::Assert(_) => out.push_str(&format!("# {}\n", s.op)),
                op => out.push_str(&format!("{op}\n")),
            }
        }
        out
    }

    pub fn without_retires(&self) -> Script {
        Script { steps: self.steps.iter().filter(|s| !s.op.is_retire()).cloned().collect(), ..self.clone() }
    }
}

fn err(line: usize, reason: impl Into<String>) -> Error {
    Error::Script { line, reason: reason.into() }
}

fn parse_txn(line: usize, s: &str) -> Result<TxnId> {
    s.strip_prefix('T')
        .and_then(|n| n.parse::<TxnId>().ok())
        .filter(|&n| n > 0)
        .ok_or_else(|| err(line, format!("bad transaction name `{s}`")))
}

fn parse_key(line: usize, s: &str) -> Result<Key> {
    if let Ok(n) = s.parse::<Key>() {
        return Ok(n);
    }
    let b = s.as_bytes();
    if b.len() == 1 && b[0].is_ascii_uppercase() {
        return Ok((b[0] - b'A') as Key);
    }
    Err(err(line, format!("bad key `{s}`")))
}

fn parse_u64(line: usize, s: &str) -> Result<u64> {
    s.parse().map_err(|_| err(line, format!("expected a number, got `{s}`")))
}

/// Splits `name(args) = value` into its parts.
fn split_call(line: usize, s: &str) -> Result<(String, Vec<String>, String)> {
    let (lhs, rhs) = s.split_once('=').ok_or_else(|| err(line, "assertion needs `=`"))?;
    let lhs = lhs.trim();
    let (name, args) = match lhs.split_once('(') {
        Some((n, rest)) => {
            let inner = rest.strip_suffix(')').ok_or_else(|| err(line, "unclosed `(`"))?;
            (n.trim().to_string(), inner.split(',').map(|a| a.trim().to_string()).collect())
        }
        None => (lhs.to_string(), Vec::new()),
    };
    Ok((name, args, rhs.trim().to_string()))
}

fn inner<'a>(line: usize, s: &'a str, open: char, close: char) -> Result<Vec<&'a str>> {
    let body = s
        .strip_prefix(open)
        .and_then(|r| r.strip_suffix(close))
        .ok_or_else(|| err(line, format!("expected {open}...{close}, got `{s}`")))?;
    Ok(body.split(',').map(str::trim).filter(|x| !x.is_empty()).collect())
}

fn parse_assert(line: usize, s: &str) -> Result<Assertion> {
    let (name, args, rhs) = split_call(line, s)?;
    let arg = |i: usize| -> Result<&str> {
        args.get(i).map(String::as_str).ok_or_else(|| err(line, format!("`{name}` needs {} argument(s)", i + 1)))
    };
    Ok(match name.as_str() {
        "retired" | "owners" | "waiters" => {
            let kind = match name.as_str() {
                "retired" => ListKind::Retired,
                "owners" => ListKind::Owners,
                _ => ListKind::Waiters,
            };
            let expected = inner(line, &rhs, '[', ']')?
                .into_iter()
                .map(|item| {
                    let (t, m) = item.split_once('/').ok_or_else(|| err(line, format!("expected Tn/MODE, got `{item}`")))?;
                    Ok((parse_txn(line, t)?, m.parse::<LockMode>().map_err(|e| err(line, e.to_string()))?))
                })
                .collect::<Result<_>>()?;
            Assertion::List { kind, key: parse_key(line, arg(0)?)?, expected }
        }
        "sem" => Assertion::Semaphore { txn: parse_txn(line, arg(0)?)?, expected: parse_u64(line, &rhs)? as u32 },
        "status" => Assertion::Status {
            txn: parse_txn(line, arg(0)?)?,
            expected: StatusName::parse(&rhs).ok_or_else(|| err(line, format!("unknown status `{rhs}`")))?,
        },
        "cause" => Assertion::Cause {
            txn: parse_txn(line, arg(0)?)?,
            expected: match rhs.as_str() {
                "none" => None,
                "wound" => Some(AbortCause::Wound),
                "cascade" => Some(AbortCause::Cascade),
                "user" => Some(AbortCause::User),
                other => return Err(err(line, format!("unknown cause `{other}`"))),
            },
        },
        "parent" => Assertion::Parent {
            txn: parse_txn(line, arg(0)?)?,
            expected: if rhs == "none" { None } else { Some(parse_txn(line, &rhs)?) },
        },
        "ts" => Assertion::Ts {
            txn: parse_txn(line, arg(0)?)?,
            expected: if rhs == "none" { None } else { Some(parse_u64(line, &rhs)?) },
        },
        "cascaded" => {
            let mut expected = inner(line, &rhs, '{', '}')?.into_iter().map(|t| parse_txn(line, t)).collect::<Result<Vec<_>>>()?;
            expected.sort_unstable();
            Assertion::Cascaded { txn: parse_txn(line, arg(0)?)?, expected }
        }
        "chains" => {
            let expected = inner(line, &rhs, '{', '}')?
                .into_iter()
                .map(|item| {
                    let (l, n) = item.split_once(':').ok_or_else(|| err(line, format!("expected len:count, got `{item}`")))?;
                    Ok((parse_u64(line, l.trim())? as usize, parse_u64(line, n.trim())?))
                })
                .collect::<Result<_>>()?;
            Assertion::Chains { expected }
        }
        "commit_order" => Assertion::CommitOrder {
            expected: inner(line, &rhs, '[', ']')?.into_iter().map(|t| parse_txn(line, t)).collect::<Result<_>>()?,
        },
        "value" => Assertion::Value { key: parse_key(line, arg(0)?)?, expected: parse_u64(line, &rhs)? },
        "local" => Assertion::Local {
            txn: parse_txn(line, arg(0)?)?,
            key: parse_key(line, arg(1)?)?,
            expected: parse_u64(line, &rhs)?,
        },
        other => return Err(err(line, format!("unknown assertion `{other}`"))),
    })
}

pub fn parse_script(text: &str) -> Result<Script> {
    let mut script = Script::default();
    let mut declared = std::collections::HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.split('#').next().unwrap_or("").trim();
        if l.is_empty() {
            continue;
        }
        let words: Vec<&str> = l.split_whitespace().collect();
        let op = match words[0] {
            "rows" => {
                script.rows = parse_u64(line, words.get(1).ok_or_else(|| err(line, "rows needs a count"))?)?;
                if script.rows == 0 {
                    return Err(err(line, "rows must be at least 1"));
                }
                continue;
            }
            "flags" => {
                for w in &words[1..] {
                    match *w {
                        "autoretire" => script.flags.read_autoretire = true,
                        "delta" => script.flags.delta_retire = true,
                        "noraw" => script.flags.no_raw_abort = true,
                        "dynts" => script.flags.dynamic_ts = true,
                        other => return Err(err(line, format!("unknown flag `{other}`"))),
                    }
                }
                continue;
            }
            "policy" => {
                let name = words.get(1).ok_or_else(|| err(line, "policy needs a protocol"))?;
                script.policy = Some(name.parse().map_err(|_| err(line, format!("unknown protocol `{name}`")))?);
                continue;
            }
            "begin" => {
                let txn = parse_txn(line, words.get(1).ok_or_else(|| err(line, "begin needs a transaction"))?)?;
                let ts = match words.get(2) {
                    None => TsSpec::Default,
                    Some(w) => match w.strip_prefix("ts=") {
                        Some("none") => TsSpec::Unassigned,
                        Some(v) => TsSpec::Value(parse_u64(line, v)?),
                        None => return Err(err(line, format!("unexpected `{w}`"))),
                    },
                };
                if !declared.insert(txn) {
                    return Err(err(line, format!("T{txn} declared twice")));
                }
                Op::Begin { txn, ts }
            }
            "assert" => Op::Assert(parse_assert(line, l["assert".len()..].trim())?),
            first => {
                let txn = parse_txn(line, first)?;
                if !declared.contains(&txn) {
                    return Err(err(line, format!("T{txn} used before begin")));
                }
                let verb = words.get(1).copied().unwrap_or("");
                let key = || parse_key(line, words.get(2).copied().ok_or_else(|| err(line, format!("`{verb}` needs a key")))?);
                match verb {
                    "read" => Op::Read { txn, key: key()? },
                    "write" => {
                        let delta = match words.get(3) {
                            None => 1,
                            Some(d) => parse_u64(line, d.trim_start_matches('+'))?,
                        };
                        Op::Write { txn, key: key()?, delta }
                    }
                    "retire" => Op::Retire { txn, key: key()? },
                    "commit" => Op::Commit { txn },
                    "abort" => Op::Abort { txn },
                    other => return Err(err(line, format!("unknown step `{other}`"))),
                }
            }
        };
        script.steps.push(ScriptStep { line, op });
    }
    for s in &script.steps {
        let key = match &s.op {
            Op::Read { key, .. } | Op::Write { key, .. } | Op::Retire { key, .. } => Some(*key),
            Op::Assert(Assertion::List { key, .. } | Assertion::Value { key, .. } | Assertion::Local { key, .. }) => Some(*key),
            _ => None,
        };
        if let Some(k) = key {
            if k >= script.rows {
                return Err(err(s.line, format!("key {k} outside a table of {} rows", script.rows)));
            }
        }
    }
    Ok(script)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_step_kind() {
        let s = parse_script(
            "rows 4\nflags noraw\nbegin T1\nbegin T2 ts=none\nT1 write A +3\nT1 retire A\nT2 read A\n\
             assert retired(A) = [T1/EX]\nassert owners(A)=[T2/SH]\nassert sem(T2) = 1\nassert cascaded(T1) = {T2}\n\
             assert chains = {4:1, 1:2}\nT1 commit\nT2 abort\n",
        )
        .unwrap();
        assert_eq!(s.rows, 4);
        assert!(s.flags.no_raw_abort);
        assert_eq!(s.policy, None);
        assert_eq!(s.steps[1].op, Op::Begin { txn: 2, ts: TsSpec::Unassigned });
        assert_eq!(s.steps[2].op, Op::Write { txn: 1, key: 0, delta: 3 });
        assert_eq!(
            s.steps[6].op,
            Op::Assert(Assertion::List { kind: ListKind::Owners, key: 0, expected: vec![(2, LockMode::Shared)] })
        );
        assert_eq!(s.steps[9].op, Op::Assert(Assertion::Chains { expected: BTreeMap::from([(4, 1), (1, 2)]) }));
    }

    #[test]
    fn rejects_undeclared_and_bad_keys() {
        assert!(matches!(parse_script("T1 read A"), Err(Error::Script { line: 1, .. })));
        assert!(matches!(parse_script("rows 2\nbegin T1\nT1 read C"), Err(Error::Script { line: 3, .. })));
        assert!(parse_script("begin T1\nT1 jump A").is_err());
    }

    #[test]
    fn policy_line() {
        assert_eq!(parse_script("policy wait_die\n").unwrap().policy, Some(Protocol::WaitDie));
        assert!(parse_script("policy optimistic\n").is_err());
    }

    #[test]
    fn render_round_trips_ops() {
        let s = parse_script("rows 30\npolicy no_wait\nbegin T1 ts=4\nT1 write 27 +2\nT1 retire 27\nT1 commit\n").unwrap();
        let again = parse_script(&s.render()).unwrap();
        assert_eq!(again.policy, Some(Protocol::NoWait));
        assert_eq!(s.steps.iter().map(|x| &x.op).collect::<Vec<_>>(), again.steps.iter().map(|x| &x.op).collect::<Vec<_>>());
    }
}

//! Retire points for declarative transaction templates.
//!
//! A write may retire once no later access of the same transaction can touch
//! the same tuple. Keys are constants, parameters bound when the template is
//! instantiated, or opaque values derived from a parameter. Constants and
//! parameters can be compared at instantiation time, so a later access with
//! such a key turns the decision into a runtime condition. An opaque key may
//! alias anything in its table and forbids retiring.
//!
//! Template files are TOML:
//!
//! ```toml
//! name = "order"
//! user_abort = 0.01
//! params = [
//!     { name = "w", kind = "key" },
//!     { name = "item", kind = "key", count = 4 },
//!     { name = "remote", kind = "bool" },
//! ]
//!
//! [[step]]
//! table = "warehouse"
//! key = "$w"                     # `$p` parameter, `~p` opaque, or a number
//! mode = "SH"
//!
//! [[step]]
//! repeat = 4                     # `[i]` in the body is the iteration index
//! body = [{ table = "stock", key = "$item[i]", mode = "EX" }]
//!
//! [[step]]
//! table = "stock"
//! key = "$w"
//! mode = "EX"
//! guard = "remote"               # runs only when the bool param is true
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lock_manager::LockMode;
use crate::storage::Key;

/// Upper bound on a repeat group; anything larger is treated as unbounded.
pub const MAX_REPEAT: u32 = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KeyExpr {
    Const(Key),
    Param(String),
    /// A key computed from a parameter in a way the planner cannot see.
    Opaque(String),
}

impl KeyExpr {
    fn param(&self) -> Option<&str> {
        match self {
            KeyExpr::Const(_) => None,
            KeyExpr::Param(p) | KeyExpr::Opaque(p) => Some(p),
        }
    }

    fn comparable(&self) -> bool {
        !matches!(self, KeyExpr::Opaque(_))
    }

    fn eval(&self, b: &Binding) -> Result<Key> {
        match self {
            KeyExpr::Const(k) => Ok(*k),
            KeyExpr::Param(p) | KeyExpr::Opaque(p) => b.key(p),
        }
    }
}

impl FromStr for KeyExpr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(p) = s.strip_prefix('$') {
            Ok(KeyExpr::Param(p.to_string()))
        } else if let Some(p) = s.strip_prefix('~') {
            Ok(KeyExpr::Opaque(p.to_string()))
        } else {
            s.parse().map(KeyExpr::Const).map_err(|_| Error::Parse(format!("bad key expression `{s}`")))
        }
    }
}

impl fmt::Display for KeyExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KeyExpr::Const(k) => write!(f, "{k}"),
            KeyExpr::Param(p) => write!(f, "${p}"),
            KeyExpr::Opaque(p) => write!(f, "~{p}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Key,
    Bool,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamDecl {
    pub name: String,
    pub kind: ParamKind,
    /// More than one makes an array addressed as `name[i]`.
    #[serde(default = "one")]
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessSpec {
    pub table: String,
    pub key: String,
    pub mode: LockMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guard: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TemplateStep {
    Repeat { repeat: u32, body: Vec<AccessSpec> },
    Access(AccessSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TxnTemplate {
    pub name: String,
    #[serde(default)]
    pub params: Vec<ParamDecl>,
    #[serde(rename = "step")]
    pub steps: Vec<TemplateStep>,
    #[serde(default)]
    pub user_abort: f64,
}

/// One access after repeat groups are unrolled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannedAccess {
    pub table: String,
    pub key: KeyExpr,
    pub mode: LockMode,
    pub guard: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Atom {
    /// The guard parameter is false.
    Not(String),
    Differ(KeyExpr, KeyExpr),
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::Not(g) => write!(f, "!{g}"),
            Atom::Differ(a, b) => write!(f, "{a} != {b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RetireDecision {
    Always,
    Never,
    /// Retire when every clause holds; a clause is a disjunction of atoms.
    Conditional(Vec<Vec<Atom>>),
}

impl fmt::Display for RetireDecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RetireDecision::Always => f.write_str("ALWAYS"),
            RetireDecision::Never => f.write_str("NEVER"),
            RetireDecision::Conditional(clauses) => {
                let parts: Vec<String> = clauses
                    .iter()
                    .map(|c| {
                        let atoms: Vec<String> = c.iter().map(Atom::to_string).collect();
                        if atoms.len() == 1 {
                            atoms[0].clone()
                        } else {
                            format!("({})", atoms.join(" || "))
                        }
                    })
                    .collect();
                write!(f, "CONDITIONAL({})", parts.join(" && "))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Value {
    Key(Key),
    Bool(bool),
}

/// Parameter values for one instance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Binding {
    values: HashMap<String, Value>,
}

impl Binding {
    pub fn new() -> Self {
        Binding::default()
    }

    pub fn set_key(&mut self, name: impl Into<String>, k: Key) -> &mut Self {
        self.values.insert(name.into(), Value::Key(k));
        self
    }

    pub fn set_bool(&mut self, name: impl Into<String>, v: bool) -> &mut Self {
        self.values.insert(name.into(), Value::Bool(v));
        self
    }

    pub fn key(&self, name: &str) -> Result<Key> {
        match self.values.get(name) {
            Some(Value::Key(k)) => Ok(*k),
            _ => Err(Error::Config(format!("key parameter `{name}` is not bound"))),
        }
    }

    pub fn flag(&self, name: &str) -> Result<bool> {
        match self.values.get(name) {
            Some(Value::Bool(v)) => Ok(*v),
            _ => Err(Error::Config(format!("bool parameter `{name}` is not bound"))),
        }
    }
}

impl RetireDecision {
    pub fn eval(&self, b: &Binding) -> Result<bool> {
        match self {
            RetireDecision::Always => Ok(true),
            RetireDecision::Never => Ok(false),
            RetireDecision::Conditional(clauses) => {
                for clause in clauses {
                    let mut any = false;
                    for atom in clause {
                        any |= match atom {
                            Atom::Not(g) => !b.flag(g)?,
                            Atom::Differ(x, y) => x.eval(b)? != y.eval(b)?,
                        };
                    }
                    if !any {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
        }
    }
}

/// Unrolled accesses with a decision for every write; reads get `None`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetirePlan {
    pub accesses: Vec<PlannedAccess>,
    pub decisions: Vec<Option<RetireDecision>>,
}

/// A concrete access of an instantiated plan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundAccess {
    pub ordinal: usize,
    pub table: String,
    pub key: Key,
    pub mode: LockMode,
    pub retire: bool,
}

impl RetirePlan {
    /// Evaluates guards, keys and retire conditions under `b`. Accesses whose
    /// guard is false are left out.
    pub fn instantiate(&self, b: &Binding) -> Result<Vec<BoundAccess>> {
        let mut out = Vec::with_capacity(self.accesses.len());
        for (i, (a, d)) in self.accesses.iter().zip(&self.decisions).enumerate() {
            if let Some(g) = &a.guard {
                if !b.flag(g)? {
                    continue;
                }
            }
            let retire = match d {
                Some(d) => d.eval(b)?,
                None => false,
            };
            out.push(BoundAccess { ordinal: i, table: a.table.clone(), key: a.key.eval(b)?, mode: a.mode, retire });
        }
        Ok(out)
    }
}

impl TxnTemplate {
    pub fn from_toml(text: &str) -> Result<TxnTemplate> {
        let t: TxnTemplate = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        t.unroll()?;
        Ok(t)
    }

    fn template_err(&self, reason: String) -> Error {
        Error::Template { template: self.name.clone(), reason }
    }

    /// Declared parameter names with arrays expanded.
    pub fn param_names(&self) -> BTreeMap<String, ParamKind> {
        let mut out = BTreeMap::new();
        for p in &self.params {
            if p.count <= 1 {
                out.insert(p.name.clone(), p.kind);
            } else {
                for i in 0..p.count {
                    out.insert(format!("{}[{i}]", p.name), p.kind);
                }
            }
        }
        out
    }

    /// Expands repeat groups and checks every reference.
    pub fn unroll(&self) -> Result<Vec<PlannedAccess>> {
        if !(0.0..=1.0).contains(&self.user_abort) {
            return Err(self.template_err(format!("user_abort {} outside [0, 1]", self.user_abort)));
        }
        let names = self.param_names();
        let mut out = Vec::new();
        for step in &self.steps {
            match step {
                TemplateStep::Access(a) => out.push(self.check_access(out.len(), a, None, &names)?),
                TemplateStep::Repeat { repeat, body } => {
                    if *repeat == 0 || *repeat > MAX_REPEAT {
                        return Err(self.template_err(format!("repeat count {repeat} must be in 1..={MAX_REPEAT}")));
                    }
                    for i in 0..*repeat {
                        for a in body {
                            out.push(self.check_access(out.len(), a, Some(i), &names)?);
                        }
                    }
                }
            }
        }
        if out.is_empty() {
            return Err(self.template_err("no accesses".into()));
        }
        Ok(out)
    }

    fn check_access(
        &self,
        ordinal: usize,
        a: &AccessSpec,
        iter: Option<u32>,
        names: &BTreeMap<String, ParamKind>,
    ) -> Result<PlannedAccess> {
        let subst = |s: &str| -> Result<String> {
            match (s.contains("[i]"), iter) {
                (true, Some(i)) => Ok(s.replace("[i]", &format!("[{i}]"))),
                (true, None) => Err(self.template_err(format!("access {ordinal}: `[i]` outside a repeat group"))),
                (false, _) => Ok(s.to_string()),
            }
        };
        let bad = |what: String| self.template_err(format!("access {ordinal}: {what}"));
        let key: KeyExpr = subst(&a.key)?.parse().map_err(|e: Error| bad(e.to_string()))?;
        if let Some(p) = key.param() {
            if names.get(p) != Some(&ParamKind::Key) {
                return Err(bad(format!("`{p}` is not a declared key parameter")));
            }
        }
        let guard = a.guard.as_deref().map(subst).transpose()?;
        if let Some(g) = &guard {
            if names.get(g.as_str()) != Some(&ParamKind::Bool) {
                return Err(bad(format!("guard `{g}` is not a declared bool parameter")));
            }
        }
        if a.table.is_empty() {
            return Err(bad("empty table name".into()));
        }
        Ok(PlannedAccess { table: a.table.clone(), key, mode: a.mode, guard })
    }
}

/// The condition under which `later` cannot touch the tuple of `earlier`;
/// `None` means it always may.
fn no_overlap(earlier: &PlannedAccess, later: &PlannedAccess) -> Option<Vec<Atom>> {
    if earlier.table != later.table {
        return Some(Vec::new());
    }
    let guard: Vec<Atom> = later.guard.iter().map(|g| Atom::Not(g.clone())).collect();
    if !earlier.key.comparable() || !later.key.comparable() {
        return (!guard.is_empty()).then_some(guard);
    }
    let mut clause = guard;
    match (&earlier.key, &later.key) {
        (KeyExpr::Const(a), KeyExpr::Const(b)) if a != b => return Some(Vec::new()),
        (a, b) if a == b => {}
        (a, b) => clause.push(Atom::Differ(a.clone(), b.clone())),
    }
    (!clause.is_empty()).then_some(clause)
}

pub fn plan_retires(template: &TxnTemplate) -> Result<RetirePlan> {
    let accesses = template.unroll()?;
    Ok(plan_accesses(accesses))
}

/// Plans an already unrolled access list.
pub fn plan_accesses(accesses: Vec<PlannedAccess>) -> RetirePlan {
    let decisions = (0..accesses.len())
        .map(|i| {
            let a = &accesses[i];
            if a.mode != LockMode::Exclusive {
                return None;
            }
            let mut clauses: Vec<Vec<Atom>> = Vec::new();
            for b in &accesses[i + 1..] {
                match no_overlap(a, b) {
                    None => return Some(RetireDecision::Never),
                    Some(c) if c.is_empty() => {}
                    Some(c) => {
                        if !clauses.contains(&c) {
                            clauses.push(c);
                        }
                    }
                }
            }
            Some(if clauses.is_empty() { RetireDecision::Always } else { RetireDecision::Conditional(clauses) })
        })
        .collect();
    RetirePlan { accesses, decisions }
}

/// Number of leading accesses left untouched by the trailing-fraction rule:
/// the last `floor(delta * n)` accesses never retire.
pub fn delta_cutoff(n: usize, delta: f64) -> usize {
    let tail = (delta * n as f64 + 1e-9).floor() as usize;
    n - tail.min(n)
}

/// Forces writes in the trailing `delta` fraction of the plan to `Never`.
pub fn apply_delta(plan: &RetirePlan, delta: f64) -> Result<RetirePlan> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::Config(format!("delta {delta} outside [0, 1]")));
    }
    let cut = delta_cutoff(plan.accesses.len(), delta);
    let decisions = plan
        .decisions
        .iter()
        .enumerate()
        .map(|(i, d)| match d {
            Some(_) if i >= cut => Some(RetireDecision::Never),
            d => d.clone(),
        })
        .collect();
    Ok(RetirePlan { accesses: plan.accesses.clone(), decisions })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn access(table: &str, key: &str, mode: LockMode, guard: Option<&str>) -> AccessSpec {
        AccessSpec { table: table.into(), key: key.into(), mode, guard: guard.map(str::to_string) }
    }

    fn template(params: &[(&str, ParamKind)], steps: Vec<AccessSpec>) -> TxnTemplate {
        TxnTemplate {
            name: "t".into(),
            params: params.iter().map(|(n, k)| ParamDecl { name: n.to_string(), kind: *k, count: 1 }).collect(),
            steps: steps.into_iter().map(TemplateStep::Access).collect(),
            user_abort: 0.0,
        }
    }

    #[test]
    fn single_write_always_retires() {
        let t = template(&[("k", ParamKind::Key)], vec![access("a", "$k", LockMode::Exclusive, None)]);
        assert_eq!(plan_retires(&t).unwrap().decisions, vec![Some(RetireDecision::Always)]);
    }

    #[test]
    fn guarded_later_access_gives_condition() {
        let t = template(
            &[("k1", ParamKind::Key), ("k2", ParamKind::Key), ("cond", ParamKind::Bool)],
            vec![access("t1", "$k1", LockMode::Exclusive, None), access("t1", "$k2", LockMode::Exclusive, Some("cond"))],
        );
        let plan = plan_retires(&t).unwrap();
        let d = plan.decisions[0].clone().unwrap();
        assert_eq!(d.to_string(), "CONDITIONAL((!cond || $k1 != $k2))");
        let mut b = Binding::new();
        b.set_key("k1", 1).set_key("k2", 1).set_bool("cond", true);
        assert!(!d.eval(&b).unwrap());
        b.set_bool("cond", false);
        assert!(d.eval(&b).unwrap());
        b.set_bool("cond", true).set_key("k2", 2);
        assert!(d.eval(&b).unwrap());
        assert_eq!(plan.decisions[1], Some(RetireDecision::Always));
    }

    #[test]
    fn opaque_keys_on_same_table_never_retire() {
        let t = template(
            &[("a", ParamKind::Key), ("b", ParamKind::Key)],
            vec![access("t", "~a", LockMode::Exclusive, None), access("t", "~b", LockMode::Exclusive, None)],
        );
        assert_eq!(plan_retires(&t).unwrap().decisions[0], Some(RetireDecision::Never));
    }

    #[test]
    fn other_tables_and_distinct_constants_do_not_block() {
        let t = template(
            &[],
            vec![
                access("t", "1", LockMode::Exclusive, None),
                access("u", "1", LockMode::Exclusive, None),
                access("t", "2", LockMode::Shared, None),
                access("t", "1", LockMode::Shared, None),
            ],
        );
        let d = plan_retires(&t).unwrap().decisions;
        assert_eq!(d[0], Some(RetireDecision::Never));
        assert_eq!(d[1], Some(RetireDecision::Always));
        assert_eq!(d[2], None);
    }

    #[test]
    fn delta_boundary() {
        let t = TxnTemplate {
            name: "w".into(),
            params: vec![ParamDecl { name: "k".into(), kind: ParamKind::Key, count: 16 }],
            steps: vec![TemplateStep::Repeat {
                repeat: 16,
                body: vec![access("t", "$k[i]", LockMode::Exclusive, None)],
            }],
            user_abort: 0.0,
        };
        let plan = plan_retires(&t).unwrap();
        assert_eq!(apply_delta(&plan, 0.0).unwrap(), plan);
        let d = apply_delta(&plan, 0.15).unwrap();
        let never: Vec<usize> = (0..16).filter(|&i| d.decisions[i] == Some(RetireDecision::Never)).map(|i| i + 1).collect();
        assert_eq!(never, vec![15, 16]);
        let all = apply_delta(&plan, 1.0).unwrap();
        assert!(all.decisions.iter().all(|d| *d == Some(RetireDecision::Never)));
        assert!(apply_delta(&plan, 1.5).is_err());
    }

    #[test]
    fn rejects_bad_templates() {
        let undeclared = template(&[], vec![access("t", "$k", LockMode::Exclusive, None)]);
        assert!(matches!(plan_retires(&undeclared), Err(Error::Template { .. })));
        let bad_guard = template(&[("k", ParamKind::Key)], vec![access("t", "$k", LockMode::Exclusive, Some("k"))]);
        assert!(plan_retires(&bad_guard).is_err());
        let unbounded = TxnTemplate {
            steps: vec![TemplateStep::Repeat { repeat: 0, body: vec![access("t", "1", LockMode::Shared, None)] }],
            ..template(&[], vec![])
        };
        assert!(plan_retires(&unbounded).is_err());
    }

    #[test]
    fn toml_round_trip_and_instantiate() {
        let t = TxnTemplate::from_toml(
            r#"
name = "order"
params = [
    { name = "w", kind = "key" },
    { name = "item", kind = "key", count = 2 },
    { name = "remote", kind = "bool" },
]
[[step]]
table = "warehouse"
key = "$w"
mode = "SH"
[[step]]
repeat = 2
body = [{ table = "stock", key = "$item[i]", mode = "EX" }]
[[step]]
table = "stock"
key = "$w"
mode = "EX"
guard = "remote"
"#,
        )
        .unwrap();
        let plan = plan_retires(&t).unwrap();
        assert_eq!(plan.accesses.len(), 4);
        let mut b = Binding::new();
        b.set_key("w", 5).set_key("item[0]", 5).set_key("item[1]", 6).set_bool("remote", true);
        let bound = plan.instantiate(&b).unwrap();
        assert_eq!(bound.iter().map(|a| a.retire).collect::<Vec<_>>(), vec![false, false, true, true]);
        b.set_bool("remote", false);
        let bound = plan.instantiate(&b).unwrap();
        assert_eq!(bound.len(), 3);
        assert!(bound[1].retire);
    }

    #[test]
    fn deterministic() {
        let t = template(
            &[("a", ParamKind::Key), ("b", ParamKind::Key)],
            vec![access("t", "$a", LockMode::Exclusive, None), access("t", "$b", LockMode::Exclusive, None)],
        );
        assert_eq!(plan_retires(&t).unwrap(), plan_retires(&t).unwrap());
    }
}

//! Step-by-step comparison of two policies on the same schedule, and a
//! generator of random schedules to feed it.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::Result;
use crate::lock_manager::{Policy, Protocol};
use crate::validator::replay::Replayer;
use crate::validator::script::{Op, Script, ScriptStep, TsSpec};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Divergence {
    pub line: usize,
    pub left: String,
    pub right: String,
}

/// Replays `script` under both policies (assertions skipped) and returns the
/// first step after which their fingerprints differ. A step that is a script
/// error under one policy must be one under the other too.
pub fn first_divergence(script: &Script, left: Policy, right: Policy) -> Result<Option<Divergence>> {
    let mut a = Replayer::new(left, script.rows)?;
    let mut b = Replayer::new(right, script.rows)?;
    for step in &script.steps {
        if matches!(step.op, Op::Assert(_)) {
            continue;
        }
        let ra = a.apply(step.line, &step.op);
        let rb = b.apply(step.line, &step.op);
        match (ra, rb) {
            (Ok(_), Ok(_)) => {}
            (Err(ea), Err(eb)) => {
                let (left, right) = (ea.to_string(), eb.to_string());
                return Ok((left != right).then_some(Divergence { line: step.line, left, right }));
            }
            (ra, rb) => {
                let show = |r: Result<_>| r.map_or_else(|e| e.to_string(), |_| "ok".to_string());
                return Ok(Some(Divergence { line: step.line, left: show(ra), right: show(rb) }));
            }
        }
        let (fa, fb) = (a.fingerprint(), b.fingerprint());
        if fa != fb {
            return Ok(Some(Divergence { line: step.line, left: fa, right: fb }));
        }
    }
    Ok(None)
}

/// Bamboo with every retire removed against Wound-Wait.
pub fn degeneration_divergence(script: &Script) -> Result<Option<Divergence>> {
    first_divergence(&script.without_retires(), Policy::plain(Protocol::Bamboo), Policy::plain(Protocol::WoundWait))
}

/// A schedule of `txns` transactions over `keys` rows, built by driving a
/// replayer under `policy` and picking only steps it can take. Retires
/// follow writes with probability `retire_p` when the policy is bamboo.
pub fn random_schedule(rng: &mut impl Rng, policy: Policy, txns: u64, keys: u64, retire_p: f64) -> Result<Script> {
    let mut r = Replayer::new(policy, keys)?;
    let mut order: Vec<u64> = (1..=txns).collect();
    order.shuffle(rng);
    let mut pending = order.into_iter();
    let mut accesses = std::collections::HashMap::<u64, u32>::new();
    let mut steps = Vec::new();
    let push = |r: &mut Replayer, op: Op, steps: &mut Vec<ScriptStep>| -> Result<()> {
        let line = steps.len() + 1;
        r.apply(line, &op)?;
        steps.push(ScriptStep { line, op });
        Ok(())
    };
    let mut budget = txns * 12;
    loop {
        let live = r.actionable();
        let begin = pending.len() > 0 && (live.is_empty() || rng.gen_bool(0.25));
        if begin {
            let txn = pending.next().expect("pending is non-empty");
            push(&mut r, Op::Begin { txn, ts: TsSpec::Default }, &mut steps)?;
            continue;
        }
        if live.is_empty() {
            break;
        }
        let txn = *live.choose(rng).expect("live is non-empty");
        let done = accesses.get(&txn).copied().unwrap_or(0);
        budget = budget.saturating_sub(1);
        let roll: f64 = rng.gen();
        let op = if budget == 0 || (done > 0 && roll < 0.2) {
            Op::Commit { txn }
        } else if done > 0 && roll < 0.23 {
            Op::Abort { txn }
        } else {
            *accesses.entry(txn).or_default() += 1;
            let key = rng.gen_range(0..keys);
            if rng.gen_bool(0.5) {
                push(&mut r, Op::Write { txn, key, delta: 1 }, &mut steps)?;
                if policy.is_bamboo() && rng.gen_bool(retire_p) && r.actionable().contains(&txn) {
                    push(&mut r, Op::Retire { txn, key }, &mut steps)?;
                }
                continue;
            }
            Op::Read { txn, key }
        };
        push(&mut r, op, &mut steps)?;
    }
    Ok(Script { rows: keys, flags: policy.flags, policy: Some(policy.protocol), steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::validator::script::parse_script;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn retires_make_bamboo_differ_from_wound_wait() {
        let s = parse_script("begin T1\nbegin T2\nT1 write A\nT1 retire A\nT2 read A\n").unwrap();
        let d = first_divergence(&s, Policy::plain(Protocol::Bamboo), Policy::plain(Protocol::WoundWait)).unwrap();
        assert_eq!(d.unwrap().line, 4);
        assert_eq!(degeneration_divergence(&s).unwrap(), None);
    }

    #[test]
    fn random_schedules_finish_every_transaction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let s = random_schedule(&mut rng, Policy::plain(Protocol::Bamboo), 4, 3, 0.5).unwrap();
            assert!(s.steps.iter().filter(|x| matches!(x.op, Op::Begin { .. })).count() == 4);
            let mut r = Replayer::new(Policy::plain(Protocol::Bamboo), 3).unwrap();
            for st in &s.steps {
                r.apply(st.line, &st.op).unwrap();
            }
            assert!(r.quiescent(), "{}", s.render());
        }
    }
}

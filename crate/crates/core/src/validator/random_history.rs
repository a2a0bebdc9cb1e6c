//! Random small histories with arbitrary (possibly non-serializable)
//! interleavings, for differential testing of the checkers.

use rand::seq::SliceRandom;
use rand::Rng;

use super::history::{AccessRecord, CommitRecord, History, ReadFrom};
use crate::lock_manager::LockMode;

/// Builds a history of `1..=max_txns` committed transactions over
/// `1..=max_keys` tuples. Every read observes some committed version, so
/// integrity always holds; install order and commit order are random.
pub fn random_history(rng: &mut impl Rng, max_txns: usize, max_keys: u64) -> History {
    let n = rng.gen_range(1..=max_txns);
    let keys = rng.gen_range(1..=max_keys);
    // (read?, write?) per (txn, key)
    let mut plan: Vec<Vec<(u64, bool, bool)>> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut ks: Vec<u64> = (0..keys).collect();
        ks.shuffle(rng);
        let count = rng.gen_range(1..=keys.min(3) as usize);
        let acc = ks[..count]
            .iter()
            .map(|&k| match rng.gen_range(0..3) {
                0 => (k, true, false),
                1 => (k, false, true),
                _ => (k, true, true),
            })
            .collect();
        plan.push(acc);
    }
    let ids: Vec<u64> = (1..=n as u64).collect();
    let mut written_seq = vec![vec![None; keys as usize]; n];
    let mut writers_of: Vec<Vec<usize>> = vec![Vec::new(); keys as usize];
    for (t, acc) in plan.iter().enumerate() {
        for &(k, _, w) in acc {
            if w {
                writers_of[k as usize].push(t);
            }
        }
    }
    for (k, ws) in writers_of.iter_mut().enumerate() {
        ws.shuffle(rng);
        for (pos, &t) in ws.iter().enumerate() {
            written_seq[t][k] = Some(pos as u64 + 1);
        }
    }
    let mut commit: Vec<u64> = (1..=n as u64).collect();
    commit.shuffle(rng);
    let committed = plan
        .iter()
        .enumerate()
        .map(|(t, acc)| {
            let accesses = acc
                .iter()
                .map(|&(k, r, w)| {
                    let read_from = r.then(|| {
                        let choices: Vec<ReadFrom> = std::iter::once(ReadFrom::Initial)
                            .chain(writers_of[k as usize].iter().filter(|&&o| o != t).map(|&o| ReadFrom::Writer(ids[o])))
                            .collect();
                        *choices.choose(rng).expect("initial version always exists")
                    });
                    AccessRecord {
                        table: 0,
                        key: k,
                        mode: if w { LockMode::Exclusive } else { LockMode::Shared },
                        read_from,
                        written_seq: written_seq[t][k as usize],
                    }
                })
                .collect();
            CommitRecord { id: ids[t], commit_seq: commit[t], accesses }
        })
        .collect();
    History { committed, aborted: Vec::new() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::validator::{build_graph, check_acyclic, oracle_serializable};
    use rand::SeedableRng;

    #[test]
    fn graph_checker_agrees_with_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (mut yes, mut no) = (0, 0);
        for _ in 0..2000 {
            let h = random_history(&mut rng, 5, 3);
            let built = build_graph(&h);
            assert!(built.violations.is_empty());
            let graph_ok = check_acyclic(&built.graph).is_ok();
            assert_eq!(graph_ok, oracle_serializable(&h, 8).unwrap(), "{h:?}");
            if graph_ok {
                yes += 1
            } else {
                no += 1
            }
        }
        assert!(yes > 100 && no > 100, "degenerate mix {yes}/{no}");
    }
}

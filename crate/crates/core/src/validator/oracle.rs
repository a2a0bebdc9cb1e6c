//! Brute-force serializability check by trying every serial order.

use std::collections::HashMap;

use super::history::{History, ReadFrom};
use crate::error::{Error, Result};
use crate::storage::Key;

pub const ORACLE_LIMIT: usize = 8;

/// True iff some serial order of the committed transactions reproduces
/// every recorded read and every tuple's install order.
pub fn oracle_serializable(history: &History, limit: usize) -> Result<bool> {
    let n = history.committed.len();
    if n > limit.min(ORACLE_LIMIT) {
        return Err(Error::Config(format!("{n} committed transactions exceed the oracle limit of {limit}")));
    }
    // per tuple, the writers ordered by install sequence
    let mut install_order: HashMap<(u32, Key), Vec<(u64, u64)>> = HashMap::new();
    for c in &history.committed {
        for a in &c.accesses {
            if let Some(seq) = a.written_seq {
                install_order.entry((a.table, a.key)).or_default().push((seq, c.id));
            }
        }
    }
    for v in install_order.values_mut() {
        v.sort();
    }
    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        if replays(history, &perm, &install_order) {
            return Ok(true);
        }
        if !next_permutation(&mut perm) {
            return Ok(false);
        }
    }
}

fn replays(history: &History, order: &[usize], installs: &HashMap<(u32, Key), Vec<(u64, u64)>>) -> bool {
    let mut current: HashMap<(u32, Key), ReadFrom> = HashMap::new();
    let mut written: HashMap<(u32, Key), usize> = HashMap::new();
    for &i in order {
        let c = &history.committed[i];
        for a in &c.accesses {
            let tuple = (a.table, a.key);
            let now = current.get(&tuple).copied().unwrap_or(ReadFrom::Initial);
            if let Some(r) = a.read_from {
                // reads of its own earlier write in the same transaction are not recorded
                if r != now {
                    return false;
                }
            }
            if a.written_seq.is_some() {
                let k = written.entry(tuple).or_insert(0);
                if installs[&tuple].get(*k).map(|&(_, id)| id) != Some(c.id) {
                    return false;
                }
                *k += 1;
                current.insert(tuple, ReadFrom::Writer(c.id));
            }
        }
    }
    true
}

fn next_permutation(p: &mut [usize]) -> bool {
    if p.len() < 2 {
        return false;
    }
    let mut i = p.len() - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = p.len() - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

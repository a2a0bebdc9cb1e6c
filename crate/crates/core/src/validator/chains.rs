//! Abort-chain accounting: every cascading abort is charged to the
//! non-cascading abort (or the rewriting transaction) that started it.

use std::collections::{BTreeMap, HashMap};

use super::history::AbortRecord;
use crate::lock_manager::AbortCause;
use crate::storage::TxnId;

/// Chain length -> number of chains. A chain is a root plus every
/// cascade it caused transitively; a root with no cascades has length 1.
pub fn abort_chain_histogram(aborts: &[AbortRecord]) -> BTreeMap<usize, u64> {
    let by_id: HashMap<TxnId, &AbortRecord> = aborts.iter().map(|a| (a.id, a)).collect();
    let mut root_of: HashMap<TxnId, TxnId> = HashMap::new();
    let mut size: HashMap<TxnId, usize> = HashMap::new();
    for a in aborts {
        if a.cause != AbortCause::Cascade {
            *size.entry(a.id).or_insert(0) += 1;
            continue;
        }
        // walk up to the first non-cascade ancestor, then memoize the path
        let mut path = vec![a.id];
        let mut cur = a.parent.unwrap_or(a.id);
        let root = loop {
            if let Some(&r) = root_of.get(&cur) {
                break r;
            }
            match by_id.get(&cur) {
                Some(p) if p.cause == AbortCause::Cascade && !path.contains(&cur) => {
                    path.push(cur);
                    cur = p.parent.unwrap_or(p.id);
                }
                _ => break cur,
            }
        };
        for id in path {
            root_of.insert(id, root);
        }
        let entry = size.entry(root).or_insert(0);
        if *entry == 0 && !by_id.contains_key(&root) {
            // root never aborted (it rewrote a retired tuple); count it once
            *entry += 1;
        }
        *entry += 1;
    }
    let mut hist = BTreeMap::new();
    for (_, len) in size {
        *hist.entry(len).or_insert(0) += 1;
    }
    hist
}

/// Sum of chain lengths over the histogram.
pub fn histogram_mass(hist: &BTreeMap<usize, u64>) -> u64 {
    hist.iter().map(|(&len, &n)| len as u64 * n).sum()
}

//! Serialization graph over committed transactions.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::history::{History, ReadFrom};
use crate::storage::{Key, TxnId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeKind {
    /// The target read a version the source wrote.
    WR,
    /// The target installed the version right after the source's.
    WW,
    /// The source read a version the target overwrote next.
    RW,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub from: TxnId,
    pub to: TxnId,
    pub kind: EdgeKind,
    pub table: u32,
    pub key: Key,
}

/// A committed read of a version whose writer did not commit a write to
/// that tuple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegrityViolation {
    pub reader: TxnId,
    pub writer: TxnId,
    pub table: u32,
    pub key: Key,
}

impl fmt::Display for IntegrityViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T{} read T{}'s version of {}:{} which was never committed", self.reader, self.writer, self.table, self.key)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SerializationGraph {
    pub nodes: Vec<TxnId>,
    pub edges: Vec<Edge>,
}

#[derive(Debug, Clone, Default)]
pub struct GraphBuild {
    pub graph: SerializationGraph,
    pub violations: Vec<IntegrityViolation>,
}

pub fn build_graph(history: &History) -> GraphBuild {
    // per tuple: install sequence -> writer
    let mut installs: HashMap<(u32, Key), BTreeMap<u64, TxnId>> = HashMap::new();
    for c in &history.committed {
        for a in &c.accesses {
            if let Some(seq) = a.written_seq {
                installs.entry((a.table, a.key)).or_default().insert(seq, c.id);
            }
        }
    }
    let mut seq_of: HashMap<(u32, Key, TxnId), u64> = HashMap::new();
    for (&(table, key), versions) in &installs {
        for (&seq, &w) in versions {
            seq_of.insert((table, key, w), seq);
        }
    }
    let mut edges = Vec::new();
    let mut violations = Vec::new();
    for (&(table, key), versions) in &installs {
        let writers: Vec<TxnId> = versions.values().copied().collect();
        for w in writers.windows(2) {
            edges.push(Edge { from: w[0], to: w[1], kind: EdgeKind::WW, table, key });
        }
    }
    let empty = BTreeMap::new();
    for c in &history.committed {
        for a in &c.accesses {
            let Some(from) = a.read_from else { continue };
            let versions = installs.get(&(a.table, a.key)).unwrap_or(&empty);
            let read_seq = match from {
                ReadFrom::Initial => 0,
                ReadFrom::Writer(w) => match seq_of.get(&(a.table, a.key, w)) {
                    Some(&seq) => {
                        if w != c.id {
                            edges.push(Edge { from: w, to: c.id, kind: EdgeKind::WR, table: a.table, key: a.key });
                        }
                        seq
                    }
                    None => {
                        violations.push(IntegrityViolation { reader: c.id, writer: w, table: a.table, key: a.key });
                        continue;
                    }
                },
            };
            if let Some((_, &next)) = versions.range(read_seq + 1..).next() {
                if next != c.id {
                    edges.push(Edge { from: c.id, to: next, kind: EdgeKind::RW, table: a.table, key: a.key });
                }
            }
        }
    }
    edges.sort();
    edges.dedup();
    let nodes = history.committed.iter().map(|c| c.id).collect();
    GraphBuild { graph: SerializationGraph { nodes, edges }, violations }
}

/// Returns `Err(cycle)` with the transactions along one cycle, in edge
/// order, if the graph has a cycle.
pub fn check_acyclic(graph: &SerializationGraph) -> Result<(), Vec<TxnId>> {
    let index: HashMap<TxnId, usize> = graph.nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); graph.nodes.len()];
    for e in &graph.edges {
        if let (Some(&a), Some(&b)) = (index.get(&e.from), index.get(&e.to)) {
            adj[a].push(b);
        }
    }
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut color = vec![0u8; adj.len()];
    let mut parent = vec![usize::MAX; adj.len()];
    for root in 0..adj.len() {
        if color[root] != 0 {
            continue;
        }
        let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
        color[root] = 1;
        while let Some(&mut (v, ref mut next)) = stack.last_mut() {
            if *next < adj[v].len() {
                let u = adj[v][*next];
                *next += 1;
                match color[u] {
                    0 => {
                        color[u] = 1;
                        parent[u] = v;
                        stack.push((u, 0));
                    }
                    1 => {
                        let mut cycle = vec![graph.nodes[v]];
                        let mut w = v;
                        while w != u {
                            w = parent[w];
                            cycle.push(graph.nodes[w]);
                        }
                        cycle.reverse();
                        return Err(cycle);
                    }
                    _ => {}
                }
            } else {
                color[v] = 2;
                stack.pop();
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderViolation {
    pub edge: Edge,
    pub from_seq: u64,
    pub to_seq: u64,
}

/// Every dependency edge must point from an earlier to a later commit.
pub fn check_commit_ordering(history: &History, graph: &SerializationGraph) -> Vec<OrderViolation> {
    let seq: HashMap<TxnId, u64> = history.committed.iter().map(|c| (c.id, c.commit_seq)).collect();
    graph
        .edges
        .iter()
        .filter_map(|e| {
            let (a, b) = (*seq.get(&e.from)?, *seq.get(&e.to)?);
            (a >= b).then_some(OrderViolation { edge: *e, from_seq: a, to_seq: b })
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub committed: usize,
    pub edges: usize,
    pub cycle: Option<Vec<TxnId>>,
    pub integrity_violations: usize,
    pub order_violations: usize,
}

impl Verdict {
    pub fn ok(&self) -> bool {
        self.cycle.is_none() && self.integrity_violations == 0 && self.order_violations == 0
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} committed, {} edges, cycle: {}, integrity violations: {}, commit-order violations: {}",
            self.committed,
            self.edges,
            match &self.cycle {
                None => "none".to_string(),
                Some(c) => c.iter().map(|t| format!("T{t}")).collect::<Vec<_>>().join("->"),
            },
            self.integrity_violations,
            self.order_violations
        )
    }
}

/// Runs all three checks.
pub fn validate(history: &History) -> Verdict {
    let built = build_graph(history);
    let order = check_commit_ordering(history, &built.graph);
    Verdict {
        committed: history.committed.len(),
        edges: built.graph.edges.len(),
        cycle: check_acyclic(&built.graph).err(),
        integrity_violations: built.violations.len(),
        order_violations: order.len(),
    }
}

//! In-memory tables, version tags and the append-only commit log.
//!
//! Tables are structurally immutable after load: keys are the dense range
//! `0..row_count`, so the primary-key hash index degenerates to direct
//! indexing. Payload mutation only happens through [`Table::install_write`],
//! which the engine calls while holding the tuple's lock-entry latch.
//!
//! Payload fill pattern: byte `i` of key `k` is
//! `fold(k) ^ fold(seed) ^ (i as u8)` where `fold` XORs the eight
//! little-endian bytes of its argument together. Any two loads with the same
//! seed are byte-identical.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Key = u64;
pub type TxnId = u64;

/// Default width of one payload field.
pub const FIELD_BYTES: usize = 100;
/// Default number of payload fields per tuple.
pub const DEFAULT_FIELDS: usize = 10;

/// Identifies one installed version of a tuple.
///
/// `writer` is `None` for the version created by the load phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VersionTag {
    pub writer: Option<TxnId>,
    pub seq: u64,
}

impl VersionTag {
    pub const INITIAL: VersionTag = VersionTag { writer: None, seq: 0 };
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tuple {
    pub key: Key,
    pub payload: Box<[u8]>,
    pub version: VersionTag,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSpec {
    pub name: String,
    pub rows: u64,
    #[serde(default = "default_fields")]
    pub fields: usize,
    #[serde(default = "default_field_bytes")]
    pub field_bytes: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_fields() -> usize {
    DEFAULT_FIELDS
}

fn default_field_bytes() -> usize {
    FIELD_BYTES
}

impl TableSpec {
    pub fn new(name: impl Into<String>, rows: u64) -> Self {
        TableSpec {
            name: name.into(),
            rows,
            fields: DEFAULT_FIELDS,
            field_bytes: FIELD_BYTES,
            seed: 0,
        }
    }

    pub fn with_payload(mut self, fields: usize, field_bytes: usize) -> Self {
        self.fields = fields;
        self.field_bytes = field_bytes;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn payload_len(&self) -> usize {
        self.fields * self.field_bytes
    }
}

fn fold(v: u64) -> u8 {
    v.to_le_bytes().iter().fold(0u8, |acc, b| acc ^ b)
}

/// The deterministic load-phase payload for `key`.
pub fn fill_payload(key: Key, seed: u64, len: usize) -> Box<[u8]> {
    let base = fold(key) ^ fold(seed);
    (0..len).map(|i| base ^ (i as u8)).collect()
}

#[derive(Debug)]
pub struct Table {
    name: String,
    payload_len: usize,
    rows: Vec<RwLock<Tuple>>,
}

impl Table {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> u64 {
        self.rows.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn payload_len(&self) -> usize {
        self.payload_len
    }

    fn row(&self, key: Key) -> Result<&RwLock<Tuple>> {
        self.rows
            .get(key as usize)
            .ok_or_else(|| Error::KeyNotFound { table: self.name.clone(), key })
    }

    /// Copies the committed payload and its version.
    pub fn read(&self, key: Key) -> Result<(Vec<u8>, VersionTag)> {
        let row = self.row(key)?.read();
        Ok((row.payload.to_vec(), row.version))
    }

    pub fn version(&self, key: Key) -> Result<VersionTag> {
        Ok(self.row(key)?.read().version)
    }

    pub fn snapshot(&self, key: Key) -> Result<Tuple> {
        Ok(self.row(key)?.read().clone())
    }

    /// Replaces the payload of `key` and bumps its version sequence.
    pub fn install_write(&self, key: Key, payload: &[u8], txn: TxnId) -> Result<VersionTag> {
        if payload.len() != self.payload_len {
            return Err(Error::PayloadWidth { expected: self.payload_len, got: payload.len() });
        }
        let mut row = self.row(key)?.write();
        row.payload.copy_from_slice(payload);
        row.version = VersionTag { writer: Some(txn), seq: row.version.seq + 1 };
        Ok(row.version)
    }
}

/// Builds a table with keys `0..spec.rows`, all at [`VersionTag::INITIAL`].
pub fn load_table(spec: &TableSpec) -> Result<Table> {
    if spec.rows == 0 {
        return Err(Error::Config(format!("table `{}` needs at least one row", spec.name)));
    }
    let len = spec.payload_len();
    let rows = (0..spec.rows)
        .map(|key| {
            RwLock::new(Tuple { key, payload: fill_payload(key, spec.seed, len), version: VersionTag::INITIAL })
        })
        .collect();
    Ok(Table { name: spec.name.clone(), payload_len: len, rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub txn: TxnId,
    pub commit_seq: u64,
    pub write_set_size: usize,
}

#[derive(Default)]
struct LogInner {
    records: Vec<LogRecord>,
    mirror: Option<BufWriter<File>>,
}

/// Append-only commit log. The sequence number returned by
/// [`LogSink::append`] is the transaction's commit point.
#[derive(Default)]
pub struct LogSink {
    inner: Mutex<LogInner>,
    keep_records: bool,
}

impl std::fmt::Debug for LogSink {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LogSink").field("len", &self.len()).finish()
    }
}

impl LogSink {
    pub fn new() -> Self {
        LogSink { inner: Mutex::new(LogInner::default()), keep_records: true }
    }

    /// A sink that only hands out sequence numbers; records are not retained.
    pub fn counting() -> Self {
        LogSink { inner: Mutex::new(LogInner::default()), keep_records: false }
    }

    /// Mirrors every record to `path` as `txn_id,commit_seq,write_set_size` lines.
    pub fn with_mirror(mut self, path: &Path) -> Result<Self> {
        let file = File::create(path)?;
        self.inner.get_mut().mirror = Some(BufWriter::new(file));
        Ok(self)
    }

    pub fn append(&self, txn: TxnId, write_set_size: usize) -> Result<u64> {
        let mut inner = self.inner.lock();
        let commit_seq = inner.next_seq();
        let record = LogRecord { txn, commit_seq, write_set_size };
        if let Some(mirror) = inner.mirror.as_mut() {
            writeln!(mirror, "{},{},{}", record.txn, record.commit_seq, record.write_set_size)?;
        }
        if self.keep_records {
            inner.records.push(record);
        } else {
            inner.records.clear();
            inner.records.push(record);
        }
        Ok(commit_seq)
    }

    pub fn len(&self) -> u64 {
        self.inner.lock().last_seq()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records(&self) -> Vec<LogRecord> {
        self.inner.lock().records.clone()
    }

    pub fn flush(&self) -> Result<()> {
        if let Some(mirror) = self.inner.lock().mirror.as_mut() {
            mirror.flush()?;
        }
        Ok(())
    }
}

impl LogInner {
    fn last_seq(&self) -> u64 {
        self.records.last().map_or(0, |r| r.commit_seq)
    }

    fn next_seq(&self) -> u64 {
        self.last_seq() + 1
    }
}

/// Parses a mirror file written by [`LogSink::with_mirror`].
pub fn parse_log_mirror(text: &str) -> Result<Vec<LogRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let parts: Vec<&str> = line.split(',').collect();
            let bad = || Error::Parse(format!("bad log line `{line}`"));
            if parts.len() != 3 {
                return Err(bad());
            }
            Ok(LogRecord {
                txn: parts[0].parse().map_err(|_| bad())?,
                commit_seq: parts[1].parse().map_err(|_| bad())?,
                write_set_size: parts[2].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn single_row_table() {
        let t = load_table(&TableSpec::new("t", 1)).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.version(0).unwrap(), VersionTag::INITIAL);
        assert!(t.read(1).is_err());
    }

    #[test]
    fn zero_rows_is_config_error() {
        assert!(matches!(load_table(&TableSpec::new("t", 0)), Err(Error::Config(_))));
    }

    #[test]
    fn load_is_deterministic() {
        let spec = TableSpec::new("t", 1000).with_seed(42);
        let a = load_table(&spec).unwrap();
        let b = load_table(&spec).unwrap();
        for k in 0..1000 {
            assert_eq!(a.snapshot(k).unwrap(), b.snapshot(k).unwrap());
        }
        let c = load_table(&TableSpec::new("t", 1000).with_seed(43)).unwrap();
        assert_ne!(a.read(5).unwrap().0, c.read(5).unwrap().0);
    }

    #[test]
    fn large_table_reads_back_fill_pattern() {
        let spec = TableSpec::new("big", 100_000).with_seed(7);
        let t = load_table(&spec).unwrap();
        let (payload, version) = t.read(99_999).unwrap();
        assert_eq!(payload.len(), 1000);
        assert_eq!(version, VersionTag::INITIAL);
        // independent recomputation of the documented pattern
        let k = 99_999u64.to_le_bytes();
        let s = 7u64.to_le_bytes();
        let base = k.iter().chain(s.iter()).fold(0u8, |a, b| a ^ b);
        for (i, b) in payload.iter().enumerate() {
            assert_eq!(*b, base ^ (i as u8));
        }
    }

    #[test]
    fn installs_bump_sequence() {
        let t = load_table(&TableSpec::new("t", 4).with_payload(1, 8)).unwrap();
        let v1 = t.install_write(2, &[1; 8], 11).unwrap();
        assert_eq!(v1, VersionTag { writer: Some(11), seq: 1 });
        let v2 = t.install_write(2, &[2; 8], 12).unwrap();
        assert_eq!(v2, VersionTag { writer: Some(12), seq: 2 });
        for i in 0..998 {
            t.install_write(2, &[3; 8], 100 + i).unwrap();
        }
        assert_eq!(t.version(2).unwrap().seq, 1000);
        assert!(matches!(t.install_write(9, &[0; 8], 1), Err(Error::KeyNotFound { .. })));
        assert!(matches!(t.install_write(1, &[0; 4], 1), Err(Error::PayloadWidth { .. })));
    }

    #[test]
    fn log_sequence_is_arrival_order() {
        let log = LogSink::new();
        assert_eq!(log.append(3, 1).unwrap(), 1);
        assert_eq!(log.append(7, 0).unwrap(), 2);
        assert_eq!(log.len(), 2);
    }

    #[test]
    fn concurrent_appends_are_gap_free() {
        let log = Arc::new(LogSink::new());
        let handles: Vec<_> = (0..4)
            .map(|w| {
                let log = Arc::clone(&log);
                std::thread::spawn(move || {
                    (0..500).map(|i| log.append(w * 1000 + i, 1).unwrap()).collect::<Vec<_>>()
                })
            })
            .collect();
        let mut seqs: Vec<u64> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
        seqs.sort_unstable();
        assert_eq!(seqs, (1..=2000).collect::<Vec<_>>());
        let recs = log.records();
        assert!(recs.windows(2).all(|w| w[1].commit_seq == w[0].commit_seq + 1));
    }

    #[test]
    fn mirror_file_round_trips() {
        let dir = std::env::temp_dir().join(format!("bamboo-log-{}", std::process::id()));
        let log = LogSink::new().with_mirror(&dir).unwrap();
        log.append(5, 2).unwrap();
        log.append(9, 0).unwrap();
        log.flush().unwrap();
        let text = std::fs::read_to_string(&dir).unwrap();
        assert_eq!(text, "5,1,2\n9,2,0\n");
        assert_eq!(parse_log_mirror(&text).unwrap(), log.records());
        std::fs::remove_file(&dir).ok();
    }
}

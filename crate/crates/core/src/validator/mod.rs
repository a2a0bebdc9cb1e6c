//! History recording, serializability checks and scripted replay.

pub mod chains;
pub mod differential;
pub mod graph;
pub mod history;
pub mod oracle;
pub mod random_history;
pub mod replay;
pub mod script;

pub use graph::{build_graph, check_acyclic, check_commit_ordering, validate, Verdict};
pub use history::{AbortRecord, AccessRecord, CommitRecord, History, ReadFrom};
pub use oracle::oracle_serializable;

use thiserror::Error;

use crate::storage::{Key, TxnId};

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("key {key} not found in table `{table}`")]
    KeyNotFound { table: String, key: Key },
    #[error("payload is {got} bytes, table expects {expected}")]
    PayloadWidth { expected: usize, got: usize },
    #[error("protocol misuse by txn {txn}: {what}")]
    Protocol { txn: TxnId, what: String },
    #[error("invalid template `{template}`: {reason}")]
    Template { template: String, reason: String },
    #[error("script error at line {line}: {reason}")]
    Script { line: usize, reason: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub mod driver;
pub mod error;
pub mod lock_manager;
pub mod model;
pub mod retire_planner;
pub mod storage;
pub mod txn_engine;
pub mod validator;
pub mod workload;

pub use error::{Error, Result};

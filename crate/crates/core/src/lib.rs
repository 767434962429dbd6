pub mod addrclass;
pub mod config;
pub mod dbscan;
pub mod error;
pub mod fingerprint;
pub mod ingest;
pub mod model;
pub mod netsel;
pub mod pipeline;
pub mod randomness;
pub mod report;
pub mod schedule;
pub mod simulator;
pub mod sessionizer;
pub mod temporal;
pub mod timefmt;

pub use error::{Error, Result};

//! Classification of cloud VMs into delay-sensitive and delay-insensitive
//! workloads from trace features, and migration-candidate selection built on
//! top of the classifier.
//!
//! The crate covers the full pipeline: trace ingestion and cleaning
//! ([`trace`]), feature encoding, aggregation, normalization and splitting
//! ([`dataset`]), class rebalancing ([`balance`]), a from-scratch
//! Conv1D + GRU network with analytic gradients ([`nn`]), training and
//! evaluation ([`train`], [`metrics`]), report files ([`report`]) and
//! migration-candidate ranking policies ([`selection`]).

pub mod balance;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod report;
pub mod selection;
pub mod trace;
pub mod train;

pub use error::{Error, Result};

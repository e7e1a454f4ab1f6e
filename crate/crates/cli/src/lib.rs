//! Library surface of the command-line tool: configuration, data
//! ingestion, synthetic market generation, gradient checking, and the
//! pipeline stages the `deepindex` binary dispatches to.

pub mod config;
pub mod gradcheck;
pub mod ingest;
pub mod pipeline;
pub mod synth;
pub mod volatility;

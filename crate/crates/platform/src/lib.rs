//! Digital-twin service: snapshot store, HTTP API, training pipeline and CLI.

pub mod cli;
pub mod pipeline;
pub mod server;
pub mod store;
pub mod summary;

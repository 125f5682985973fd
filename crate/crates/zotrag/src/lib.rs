//! HTTP API and command line front ends for `zotrag-core`.

pub mod api;
pub mod cli;

pub use api::router;

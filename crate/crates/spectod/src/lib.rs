//! File formats, HTTP backend and command line around `spectod-core`.

pub mod cli;
pub mod commands;
pub mod config;
pub mod http;
pub mod ingest;
pub mod resources;
pub mod trace;
pub mod transcript;

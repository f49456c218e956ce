//! Allocation-only core of a function-calling task-oriented dialogue system.
//!
//! Domains are callable function specifications. Each user turn runs through
//! domain selection, state tracking (generating the selected function's
//! arguments), a deterministic policy-instruction lookup, and response
//! generation. This crate holds the data model, prompt construction, output
//! parsing, the turn loop, training export and the benchmark metrics. File
//! IO, HTTP and the command line live in the `spectod` crate.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod backend;
pub mod corpus;
pub mod db;
pub mod delex;
pub mod dialogue;
pub mod eval;
pub mod export;
pub mod fewshot;
pub mod normalize;
pub mod orchestrator;
pub mod parse;
pub mod prompt;
pub mod schema;

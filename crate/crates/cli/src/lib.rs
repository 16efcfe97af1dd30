//! Command-line pipeline: generate, encode/decode, split, vocab, train,
//! translate, evaluate and experiment grids.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod grid;

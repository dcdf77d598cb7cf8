//! Command-line pipeline and HTTP service over the intent knowledge graph.

pub mod api;
pub mod cli;
pub mod config;
pub mod error;
pub mod service;
pub mod stages;

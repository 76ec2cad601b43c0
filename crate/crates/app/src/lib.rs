//! Command-line workflow and HTTP service for form value retrieval.

pub mod api;
pub mod cli;
pub mod server;
pub mod store;

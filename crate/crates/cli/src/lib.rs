//! HTTP service and command-line front end for the literature knowledge base.

pub mod api;
pub mod cli;
pub mod http;
pub mod ops;
pub mod state;

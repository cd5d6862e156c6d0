//! Shared helpers for the integration and acceptance tests.
#![allow(dead_code)]

pub mod oracle;
pub mod pipeline;

//! HTTP service for the inverse-design workbench; the `invdesign` binary wraps it.

pub mod service;

//! HTTP service and command-line front end for the notebook engine.
//!
//! [`service::Service`] owns the engine, the notebook and graph stores and
//! the live sessions; [`http`] exposes it over JSON; [`cli`] wires both to
//! the `nbi` binary.

pub mod cli;
pub mod config;
pub mod http;
pub mod provider;
pub mod service;
pub mod store;

pub use config::{Config, ConfigError};
pub use service::{Service, ServiceError};

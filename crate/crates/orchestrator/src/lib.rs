//! Workflow server: workflow engine, audit log, access policy, file-backed
//! secrets and the HTTP API over the `dipa-core` modules.

pub mod api;
pub mod audit;
pub mod config;
pub mod policy;
pub mod secrets;
pub mod server;
pub mod state;
pub mod wire;
pub mod workflow;
pub mod workflows;

pub use config::ServerConfig;
pub use server::{spawn, ServerHandle};
pub use state::AppState;

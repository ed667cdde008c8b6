//! Command-line pipeline: abstract, certify, compose, bound, synthesize,
//! simulate and report, with artifacts kept in an output directory.

// NaN must fail range checks, so `!(x > 0.0)` is intended
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod network;
pub mod pipeline;

pub use config::{Overrides, ProjectConfig};
pub use pipeline::Pipeline;

/// Machine-readable tag for a failure: the library error kind when there is
/// one, `config` for configuration problems, `error` otherwise.
pub fn error_kind(err: &anyhow::Error) -> &'static str {
    if let Some(e) = err.chain().find_map(|c| c.downcast_ref::<stochswitch::Error>()) {
        return e.kind();
    }
    if err.to_string().starts_with("config key") {
        return "config";
    }
    "error"
}

/// `{"error": {"kind": ..., "message": ...}}`
pub fn error_json(err: &anyhow::Error) -> String {
    let message = err.chain().map(ToString::to_string).collect::<Vec<_>>().join(": ");
    serde_json::json!({"error": {"kind": error_kind(err), "message": message}}).to_string()
}

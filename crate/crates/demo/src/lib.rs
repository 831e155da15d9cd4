//! WebAssembly bindings for the browser demo.
//!
//! Each export takes plain text and returns a JSON string. The [`api`] module holds
//! the same operations with Rust error types, so they can be exercised natively.

use wasm_bindgen::prelude::*;

pub mod api;

fn js(r: anchor_slam::Result<String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

/// Motion states, keyframes and submaps of the configured world.
#[wasm_bindgen]
pub fn partition_preview(config: &str) -> Result<String, JsError> {
    js(api::partition_preview(config))
}

/// Full pipeline run; trajectories are aligned to the reference for plotting.
#[wasm_bindgen]
pub fn run_slam(config: &str) -> Result<String, JsError> {
    js(api::run_slam(config))
}

/// Metrics for two TUM trajectories.
#[wasm_bindgen]
pub fn evaluate_tum(estimate: &str, reference: &str) -> Result<String, JsError> {
    js(api::evaluate_tum(estimate, reference))
}

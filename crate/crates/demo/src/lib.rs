//! WebAssembly bindings for the browser demo in `www/`.

pub mod ops;

use wasm_bindgen::prelude::*;

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

/// The bundled report table as CSV.
#[wasm_bindgen]
pub fn fixture_reports() -> String {
    sitaware_core::FIXTURE_REPORTS.to_owned()
}

#[wasm_bindgen]
pub fn parameter_matrix() -> String {
    ops::parameter_matrix().to_owned()
}

#[wasm_bindgen]
pub fn pool_table(csv: &str, arm_a: &str, arm_b: &str, ci: f64) -> Result<String, JsError> {
    js(ops::pool_table(csv, arm_a, arm_b, ci))
}

#[wasm_bindgen]
pub fn train_demo(
    hidden: &str,
    seed: u32,
    threshold: f64,
    step_max: u32,
) -> Result<String, JsError> {
    js(ops::train_demo(
        hidden,
        u64::from(seed),
        threshold,
        step_max as usize,
    ))
}

#[wasm_bindgen]
pub fn score_explore(request_json: &str) -> Result<String, JsError> {
    js(ops::score_explore(request_json))
}

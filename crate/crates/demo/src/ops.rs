//! The demo operations as plain Rust, returning JSON strings.

use serde::{Deserialize, Serialize};
use sitaware_core::nn::{self, NetConfig, Progress};
use sitaware_core::preprocess::{prepare, DEFAULT_COEFFICIENTS, DEFAULT_NOISE_SD};
use sitaware_core::{
    meta, parse_report_table, plot, score, search, ParameterMatrix, PlotData, PoolingResult,
    SituationWeights,
};

/// Training runs in the page's main thread, so keep them bounded.
pub const MAX_DEMO_STEPS: usize = 50_000;
/// Loss-curve points kept for display.
const CURVE_POINTS: usize = 400;

type Result<T> = std::result::Result<T, String>;

fn msg(e: impl std::fmt::Display) -> String {
    e.to_string()
}

#[derive(Serialize)]
struct PoolView {
    result: PoolingResult,
    plot: PlotData,
    forest_svg: String,
    funnel_svg: String,
}

/// Two-arm pooling of a report table; returns the result, plot data and both SVGs.
pub fn pool_table(csv: &str, arm_a: &str, arm_b: &str, ci: f64) -> Result<String> {
    let table = parse_report_table(csv).map_err(msg)?;
    let est = meta::two_arm_estimates(&table, arm_a, arm_b).map_err(msg)?;
    let result = meta::pool(&est).map_err(msg)?;
    let plot = meta::plot_data(&est, &result, ci).map_err(msg)?;
    let view = PoolView {
        forest_svg: plot::forest_svg(&plot, None),
        funnel_svg: plot::funnel_svg(&plot, None),
        result,
        plot,
    };
    serde_json::to_string(&view).map_err(msg)
}

#[derive(Serialize)]
struct TrainView {
    hidden_sizes: Vec<usize>,
    parameter_count: usize,
    error: f64,
    reached_threshold: f64,
    steps: usize,
    converged: bool,
    /// `(step, error)` pairs, thinned to at most a few hundred points.
    curve: Vec<(usize, f64)>,
    feature_names: Vec<String>,
    generalized_weights: Vec<Vec<f64>>,
}

/// Trains on the bundled report table (normalized, default synthetic target).
pub fn train_demo(hidden: &str, seed: u64, threshold: f64, step_max: usize) -> Result<String> {
    let sizes = search::parse_sizes(hidden).map_err(msg)?;
    let table = parse_report_table(sitaware_core::FIXTURE_REPORTS).map_err(msg)?;
    let (data, _) = prepare(&table, &DEFAULT_COEFFICIENTS, DEFAULT_NOISE_SD, seed).map_err(msg)?;
    let mut cfg = NetConfig::regression(data.n_features(), &sizes, seed);
    cfg.threshold = threshold;
    cfg.step_max = step_max.min(MAX_DEMO_STEPS);
    let mut trace: Vec<Progress> = Vec::new();
    let r = nn::train_observed(&cfg, &data, |p| trace.push(*p)).map_err(msg)?;
    let stride = trace.len().div_ceil(CURVE_POINTS).max(1);
    let mut curve: Vec<(usize, f64)> = trace
        .iter()
        .step_by(stride)
        .map(|p| (p.step, p.error))
        .collect();
    if let Some(last) = trace.last() {
        if curve.last().map(|c| c.0) != Some(last.step) {
            curve.push((last.step, last.error));
        }
    }
    let gw = r.network.generalized_weights(&data).map_err(msg)?;
    let view = TrainView {
        hidden_sizes: sizes,
        parameter_count: cfg.parameter_count(),
        error: r.error,
        reached_threshold: r.reached_threshold,
        steps: r.steps,
        converged: r.converged,
        curve,
        feature_names: gw.feature_names,
        generalized_weights: gw.rows,
    };
    serde_json::to_string(&view).map_err(msg)
}

#[derive(Deserialize)]
struct ScoreRequest {
    matrix: Vec<Vec<f64>>,
    bias: f64,
    omega: Vec<f64>,
    target: f64,
    rate: f64,
    iterations: usize,
}

#[derive(Serialize)]
struct ScoreView {
    score: f64,
    stable_rate_bound: f64,
    /// `score − target` before the first update and after each one.
    residuals: Vec<f64>,
    final_score: f64,
    bias: f64,
    omega: Vec<f64>,
}

/// Scores a 5×5 matrix and runs feedback updates toward a target.
pub fn score_explore(request_json: &str) -> Result<String> {
    let req: ScoreRequest = serde_json::from_str(request_json).map_err(msg)?;
    let mut matrix =
        ParameterMatrix::from_json(include_str!("../../core/fixtures/parameter_matrix.json"))
            .map_err(msg)?;
    matrix.entries = req.matrix;
    if let Some(v) = matrix.validate().first() {
        return Err(v.to_string());
    }
    let mut weights = SituationWeights::new(req.bias, req.omega).map_err(msg)?;
    let initial = score::situation_score(&matrix, &weights).map_err(msg)?;
    let mut residuals = vec![initial - req.target];
    for _ in 0..req.iterations {
        weights = score::feedback_update(&weights, &matrix, req.target, req.rate).map_err(msg)?;
        residuals.push(score::situation_score(&matrix, &weights).map_err(msg)? - req.target);
    }
    let view = ScoreView {
        score: initial,
        stable_rate_bound: score::stable_rate_bound(&matrix),
        final_score: residuals.last().expect("initial residual") + req.target,
        residuals,
        bias: weights.bias,
        omega: weights.omega,
    };
    serde_json::to_string(&view).map_err(msg)
}

/// The bundled parameter matrix as JSON.
pub fn parameter_matrix() -> &'static str {
    include_str!("../../core/fixtures/parameter_matrix.json")
}

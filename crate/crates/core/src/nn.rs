//! Fully connected feed-forward regression networks.
//!
//! Every layer is an `(fan_in + 1) × fan_out` matrix whose row 0 holds the
//! intercepts. Hidden units are logistic; the output layer is affine when
//! `output_linear` is set. The loss is half the sum of squared errors and
//! training is full-batch resilient propagation that stops once the largest
//! partial derivative drops below `threshold`.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::Dataset;

pub const DEFAULT_THRESHOLD: f64 = 0.01;
pub const DEFAULT_STEP_MAX: usize = 100_000;

pub const RPROP_GROW: f64 = 1.2;
pub const RPROP_SHRINK: f64 = 0.5;
pub const RPROP_INITIAL_STEP: f64 = 0.1;
pub const RPROP_STEP_MIN: f64 = 1e-6;
pub const RPROP_STEP_MAX: f64 = 50.0;
pub const GD_LEARNING_RATE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Algorithm {
    /// Resilient propagation with weight backtracking.
    #[default]
    Rprop,
    /// Plain full-batch gradient descent, kept for cross-checking.
    GradientDescent { learning_rate: f64 },
}

impl Algorithm {
    pub fn gradient_descent() -> Self {
        Self::GradientDescent {
            learning_rate: GD_LEARNING_RATE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub n_inputs: usize,
    pub hidden_sizes: Vec<usize>,
    pub n_outputs: usize,
    #[serde(default)]
    pub hidden_activation: Activation,
    pub output_linear: bool,
    pub threshold: f64,
    pub step_max: usize,
    pub seed: u64,
    #[serde(default)]
    pub algorithm: Algorithm,
}

impl NetConfig {
    /// Single-output regression network with default stopping rule.
    pub fn regression(n_inputs: usize, hidden_sizes: &[usize], seed: u64) -> Self {
        Self {
            n_inputs,
            hidden_sizes: hidden_sizes.to_vec(),
            n_outputs: 1,
            hidden_activation: Activation::Logistic,
            output_linear: true,
            threshold: DEFAULT_THRESHOLD,
            step_max: DEFAULT_STEP_MAX,
            seed,
            algorithm: Algorithm::Rprop,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_inputs == 0 || self.n_outputs == 0 || self.hidden_sizes.contains(&0) {
            return Err(Error::Domain(
                "every layer needs at least one neuron".into(),
            ));
        }
        if !(self.threshold.is_finite() && self.threshold > 0.0) {
            return Err(Error::Domain(format!(
                "threshold must be > 0, got {}",
                self.threshold
            )));
        }
        if self.step_max == 0 {
            return Err(Error::Domain("step_max must be ≥ 1".into()));
        }
        if let Algorithm::GradientDescent { learning_rate } = self.algorithm {
            if !(learning_rate.is_finite() && learning_rate > 0.0) {
                return Err(Error::Domain("learning rate must be > 0".into()));
            }
        }
        Ok(())
    }

    /// Neuron counts from input to output.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = Vec::with_capacity(self.hidden_sizes.len() + 2);
        s.push(self.n_inputs);
        s.extend(&self.hidden_sizes);
        s.push(self.n_outputs);
        s
    }

    pub fn parameter_count(&self) -> usize {
        parameter_count(&self.layer_sizes())
    }
}

/// `Σ (fan_in + 1) · fan_out` over consecutive layer sizes.
pub fn parameter_count(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

/// Dense row-major matrix; serialized as nested row arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if r == 0 || c == 0 {
            return Err(Error::Input("empty weight matrix".into()));
        }
        if let Some(bad) = rows.iter().find(|row| row.len() != c) {
            return Err(Error::Shape {
                expected: c,
                actual: bad.len(),
            });
        }
        Ok(Self {
            rows: r,
            cols: c,
            data: rows.into_iter().flatten().collect(),
        })
    }
}

impl Serialize for Matrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Matrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        Matrix::from_rows(rows).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub config: NetConfig,
    pub layers: Vec<Matrix>,
}

#[inline]
fn logistic(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Per-layer activations of one forward pass; `acts[0]` is the input.
struct Trace {
    acts: Vec<Vec<f64>>,
}

impl Network {
    pub fn zeros(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let layers = config
            .layer_sizes()
            .windows(2)
            .map(|w| Matrix::zeros(w[0] + 1, w[1]))
            .collect();
        Ok(Self { config, layers })
    }

    pub fn from_layers(config: NetConfig, layers: Vec<Matrix>) -> Result<Self> {
        config.validate()?;
        let sizes = config.layer_sizes();
        if layers.len() != sizes.len() - 1 {
            return Err(Error::Shape {
                expected: sizes.len() - 1,
                actual: layers.len(),
            });
        }
        for (m, w) in layers.iter().zip(sizes.windows(2)) {
            if m.rows != w[0] + 1 {
                return Err(Error::Shape {
                    expected: w[0] + 1,
                    actual: m.rows,
                });
            }
            if m.cols != w[1] {
                return Err(Error::Shape {
                    expected: w[1],
                    actual: m.cols,
                });
            }
        }
        Ok(Self { config, layers })
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|m| m.data.len()).sum()
    }

    /// All parameters in layer order, each layer row-major.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|m| m.data.iter())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|m| m.data.iter_mut())
    }

    fn is_output(&self, l: usize) -> bool {
        l + 1 == self.layers.len()
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (l, m) in self.layers.iter().enumerate() {
            let input = &acts[l];
            let mut out = m.data[..m.cols].to_vec();
            for (i, xi) in input.iter().enumerate() {
                let row = &m.data[(i + 1) * m.cols..(i + 2) * m.cols];
                for (o, w) in out.iter_mut().zip(row) {
                    *o += xi * w;
                }
            }
            if !(self.is_output(l) && self.config.output_linear) {
                for o in &mut out {
                    *o = logistic(*o);
                }
            }
            acts.push(out);
        }
        Trace { acts }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.config.n_inputs {
            return Err(Error::Shape {
                expected: self.config.n_inputs,
                actual: x.len(),
            });
        }
        Ok(self.trace(x).acts.pop().expect("network has layers"))
    }

    /// Pushes `delta` (∂/∂ pre-activation of the output layer) back through
    /// the network. Adds parameter partials into `grads` when given and
    /// returns ∂/∂ input.
    fn backward(
        &self,
        trace: &Trace,
        mut delta: Vec<f64>,
        mut grads: Option<&mut [Matrix]>,
    ) -> Vec<f64> {
        for l in (0..self.layers.len()).rev() {
            let m = &self.layers[l];
            let input = &trace.acts[l];
            if let Some(g) = grads.as_deref_mut() {
                let g = &mut g[l].data;
                for (gj, d) in g[..m.cols].iter_mut().zip(&delta) {
                    *gj += d;
                }
                for (i, xi) in input.iter().enumerate() {
                    let row = &mut g[(i + 1) * m.cols..(i + 2) * m.cols];
                    for (gj, d) in row.iter_mut().zip(&delta) {
                        *gj += xi * d;
                    }
                }
            }
            let mut back: Vec<f64> = (0..m.rows - 1)
                .map(|i| {
                    let row = &m.data[(i + 1) * m.cols..(i + 2) * m.cols];
                    row.iter().zip(&delta).map(|(w, d)| w * d).sum()
                })
                .collect();
            if l > 0 {
                // input of layer l is a logistic hidden activation
                for (b, a) in back.iter_mut().zip(input) {
                    *b *= a * (1.0 - a);
                }
            }
            delta = std::mem::take(&mut back);
            if l == 0 {
                return delta;
            }
        }
        delta
    }

    fn output_delta(&self, yhat: &[f64], y: &[f64]) -> Vec<f64> {
        yhat.iter()
            .zip(y)
            .map(|(p, t)| {
                let r = p - t;
                if self.config.output_linear {
                    r
                } else {
                    r * p * (1.0 - p)
                }
            })
            .collect()
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.n_features() != self.config.n_inputs {
            return Err(Error::Shape {
                expected: self.config.n_inputs,
                actual: data.n_features(),
            });
        }
        if self.config.n_outputs != 1 {
            return Err(Error::Unsupported(
                "datasets carry a single target column".into(),
            ));
        }
        data.target().map(|_| ())
    }

    /// Half the sum of squared residuals over every observation.
    pub fn loss_sse(&self, data: &Dataset) -> Result<f64> {
        self.check_data(data)?;
        let y = data.target()?;
        Ok(data
            .x
            .iter()
            .zip(y)
            .map(|(x, t)| {
                let p = self.trace(x).acts.pop().expect("layers")[0];
                0.5 * (p - t) * (p - t)
            })
            .sum())
    }

    /// Loss together with its exact partials, shaped like `layers`.
    pub fn loss_and_gradients(&self, data: &Dataset) -> Result<(f64, Vec<Matrix>)> {
        self.check_data(data)?;
        let y = data.target()?;
        let mut grads: Vec<Matrix> = self
            .layers
            .iter()
            .map(|m| Matrix::zeros(m.rows, m.cols))
            .collect();
        let mut loss = 0.0;
        for (x, t) in data.x.iter().zip(y) {
            let trace = self.trace(x);
            let yhat = trace.acts.last().expect("layers");
            let target = [*t];
            loss += yhat
                .iter()
                .zip(&target)
                .map(|(p, t)| 0.5 * (p - t) * (p - t))
                .sum::<f64>();
            let delta = self.output_delta(yhat, &target);
            self.backward(&trace, delta, Some(&mut grads));
        }
        Ok((loss, grads))
    }

    pub fn gradients(&self, data: &Dataset) -> Result<Vec<Matrix>> {
        self.loss_and_gradients(data).map(|(_, g)| g)
    }

    /// `∂ŷ/∂x` at each observation, one row per observation.
    pub fn generalized_weights(&self, data: &Dataset) -> Result<GwMatrix> {
        if !self.config.output_linear {
            return Err(Error::Unsupported(
                "generalized weights require a linear output head".into(),
            ));
        }
        if self.config.n_outputs != 1 {
            return Err(Error::Unsupported(
                "generalized weights support a single output".into(),
            ));
        }
        if data.n_features() != self.config.n_inputs {
            return Err(Error::Shape {
                expected: self.config.n_inputs,
                actual: data.n_features(),
            });
        }
        let rows = data
            .x
            .iter()
            .map(|x| self.backward(&self.trace(x), vec![1.0], None))
            .collect();
        Ok(GwMatrix {
            feature_names: data.feature_names.clone(),
            rows,
        })
    }
}

fn max_abs(grads: &[Matrix]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data.iter())
        .fold(0.0f64, |m, g| m.max(g.abs()))
}

/// Network with every weight and intercept drawn from N(0,1), layer order,
/// row-major, from a ChaCha8 stream seeded by `config.seed`.
pub fn init_network(config: &NetConfig) -> Result<Network> {
    let mut net = Network::zeros(config.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for p in net.params_mut() {
        *p = StandardNormal.sample(&mut rng);
    }
    Ok(net)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GwMatrix {
    pub feature_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl GwMatrix {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows.len(), self.feature_names.len())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
        w.write_record(&self.feature_names).map_err(io)?;
        for r in &self.rows {
            w.write_record(r.iter().map(|v| crate::preprocess::format_real(*v)))
                .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("utf-8"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub network: Network,
    /// ½·SSE at the returned network.
    pub error: f64,
    /// Largest absolute partial derivative at the returned network.
    pub reached_threshold: f64,
    pub steps: usize,
    pub converged: bool,
}

/// Snapshot handed to a training observer once per step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Progress {
    pub step: usize,
    pub error: f64,
    pub max_gradient: f64,
}

pub fn train(config: &NetConfig, data: &Dataset) -> Result<TrainResult> {
    train_observed(config, data, |_| {})
}

/// Full-batch training from the seeded initial network.
///
/// Each step evaluates the loss and gradient at the current weights. If the
/// largest partial is below the threshold the run stops converged; if the
/// step budget is spent it stops unconverged; otherwise the weights are
/// updated once.
pub fn train_observed(
    config: &NetConfig,
    data: &Dataset,
    mut observe: impl FnMut(&Progress),
) -> Result<TrainResult> {
    let mut net = init_network(config)?;
    net.check_data(data)?;
    let n = net.parameter_count();

    let mut step_size = vec![RPROP_INITIAL_STEP; n];
    let mut prev_grad = vec![0.0; n];
    let mut prev_change = vec![0.0; n];

    let mut step = 0;
    loop {
        step += 1;
        let (loss, grads) = net.loss_and_gradients(data)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { step });
        }
        let reached = max_abs(&grads);
        observe(&Progress {
            step,
            error: loss,
            max_gradient: reached,
        });
        if reached < config.threshold || step >= config.step_max {
            return Ok(TrainResult {
                network: net,
                error: loss,
                reached_threshold: reached,
                steps: step,
                converged: reached < config.threshold,
            });
        }

        let flat_grads = grads.iter().flat_map(|g| g.data.iter());
        match config.algorithm {
            Algorithm::Rprop => {
                for ((((w, &g), delta), pg), pc) in net
                    .params_mut()
                    .zip(flat_grads)
                    .zip(step_size.iter_mut())
                    .zip(prev_grad.iter_mut())
                    .zip(prev_change.iter_mut())
                {
                    let s = g * *pg;
                    if s > 0.0 {
                        *delta = (*delta * RPROP_GROW).min(RPROP_STEP_MAX);
                        *pc = -g.signum() * *delta;
                        *w += *pc;
                        *pg = g;
                    } else if s < 0.0 {
                        *delta = (*delta * RPROP_SHRINK).max(RPROP_STEP_MIN);
                        *w -= *pc;
                        *pc = 0.0;
                        *pg = 0.0;
                    } else {
                        *pc = if g == 0.0 { 0.0 } else { -g.signum() * *delta };
                        *w += *pc;
                        *pg = g;
                    }
                }
            }
            Algorithm::GradientDescent { learning_rate } => {
                for (w, g) in net.params_mut().zip(flat_grads) {
                    *w -= learning_rate * g;
                }
            }
        }
    }
}

/// `[error, reached_threshold, steps, weights...]` where the weights run in
/// layer order and, within a layer, destination neuron by destination
/// neuron with the intercept first.
pub fn result_matrix(result: &TrainResult) -> Vec<f64> {
    let mut out = Vec::with_capacity(3 + result.network.parameter_count());
    out.push(result.error);
    out.push(result.reached_threshold);
    out.push(result.steps as f64);
    for m in &result.network.layers {
        for c in 0..m.cols {
            for r in 0..m.rows {
                out.push(m.get(r, c));
            }
        }
    }
    out
}

/// Rebuilds a [`TrainResult`] from [`result_matrix`] output. The convergence
/// flag is recomputed from the threshold in `config`.
pub fn from_result_matrix(config: NetConfig, flat: &[f64]) -> Result<TrainResult> {
    let mut net = Network::zeros(config)?;
    let expected = 3 + net.parameter_count();
    if flat.len() != expected {
        return Err(Error::Shape {
            expected,
            actual: flat.len(),
        });
    }
    let mut it = flat[3..].iter();
    for m in &mut net.layers {
        for c in 0..m.cols {
            for r in 0..m.rows {
                m.set(r, c, *it.next().expect("length checked"));
            }
        }
    }
    let reached_threshold = flat[1];
    Ok(TrainResult {
        converged: reached_threshold < net.config.threshold,
        network: net,
        error: flat[0],
        reached_threshold,
        steps: flat[2] as usize,
    })
}

/// Neuralnet-style labels for each entry after the three scalars of
/// [`result_matrix`], e.g. `Intercept.to.1layhid1` or `cas1.to.2layhid3`.
pub fn result_matrix_labels(config: &NetConfig, input_names: &[String]) -> Vec<String> {
    let sizes = config.layer_sizes();
    let n_layers = sizes.len() - 1;
    let mut labels = vec!["error".into(), "reached.threshold".into(), "steps".into()];
    for l in 0..n_layers {
        let source = |r: usize| -> String {
            if r == 0 {
                "Intercept".into()
            } else if l == 0 {
                input_names
                    .get(r - 1)
                    .cloned()
                    .unwrap_or_else(|| format!("x{r}"))
            } else {
                format!("{l}layhid{r}")
            }
        };
        for c in 0..sizes[l + 1] {
            let dest = if l + 1 == n_layers {
                format!("output{}", c + 1)
            } else {
                format!("{}layhid{}", l + 1, c + 1)
            };
            for r in 0..=sizes[l] {
                labels.push(format!("{}.to.{dest}", source(r)));
            }
        }
    }
    labels
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub error: f64,
    pub reached_threshold: f64,
    pub steps: usize,
    pub converged: bool,
    pub seed: u64,
}

/// On-disk model: configuration, weight matrices and training statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub config: NetConfig,
    pub layers: Vec<Matrix>,
    pub train_stats: TrainStats,
}

impl ModelFile {
    pub fn from_result(result: &TrainResult) -> Self {
        Self {
            config: result.network.config.clone(),
            layers: result.network.layers.clone(),
            train_stats: TrainStats {
                error: result.error,
                reached_threshold: result.reached_threshold,
                steps: result.steps,
                converged: result.converged,
                seed: result.network.config.seed,
            },
        }
    }

    pub fn network(&self) -> Result<Network> {
        Network::from_layers(self.config.clone(), self.layers.clone())
    }
}

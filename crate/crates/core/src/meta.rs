//! Inverse-variance pooling of per-source estimates.
//!
//! Estimates are pooled under a common-effect model (weights `1/v_i`) and a
//! random-effects model whose between-study variance is the DerSimonian-Laird
//! moment estimate. Heterogeneity is reported as Cochran's Q and I².

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::ingest::ReportTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub study_id: String,
    pub effect: f64,
    pub variance: f64,
}

impl EffectEstimate {
    pub fn new(study_id: impl Into<String>, effect: f64, variance: f64) -> Result<Self> {
        if !effect.is_finite() {
            return Err(Error::Domain(format!(
                "effect must be finite, got {effect}"
            )));
        }
        if !(variance.is_finite() && variance > 0.0) {
            return Err(Error::Domain(format!(
                "variance must be positive and finite, got {variance}"
            )));
        }
        Ok(Self {
            study_id: study_id.into(),
            effect,
            variance,
        })
    }

    pub fn standard_error(&self) -> f64 {
        self.variance.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolingResult {
    pub pooled_common: f64,
    pub se_common: f64,
    pub pooled_random: f64,
    pub se_random: f64,
    pub weights_common: Vec<f64>,
    pub weights_random: Vec<f64>,
    #[serde(rename = "Q")]
    pub q: f64,
    pub df: usize,
    #[serde(rename = "I2")]
    pub i2: f64,
    pub tau2: f64,
    pub z_common: f64,
    pub p_common: f64,
    pub z_random: f64,
    pub p_random: f64,
}

/// Which row of a forest plot a [`ForestRow`] describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowKind {
    Study,
    Common,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestRow {
    pub kind: RowKind,
    pub study_id: String,
    pub effect: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub weight_common: f64,
    pub weight_random: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunnelPoint {
    pub effect: f64,
    pub standard_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub ci_level: f64,
    /// Study rows in input order, then the common and random summary rows.
    pub forest_rows: Vec<ForestRow>,
    pub funnel_points: Vec<FunnelPoint>,
    pub residuals: Vec<f64>,
}

impl PlotData {
    pub fn study_rows(&self) -> impl Iterator<Item = &ForestRow> {
        self.forest_rows.iter().filter(|r| r.kind == RowKind::Study)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fusion {
    pub fused: f64,
    pub weights: Vec<f64>,
}

fn positive_count(name: &str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "{name} must be a positive count, got {x}"
        )))
    }
}

/// Log count ratio `ln(a/b)` with Poisson-approximation variance `1/a + 1/b`.
pub fn effect_from_two_arm(study_id: &str, arm_a: f64, arm_b: f64) -> Result<EffectEstimate> {
    positive_count("arm_a", arm_a)?;
    positive_count("arm_b", arm_b)?;
    EffectEstimate::new(study_id, (arm_a / arm_b).ln(), 1.0 / arm_a + 1.0 / arm_b)
}

/// A raw count whose standard error is `bias_rate * value / sqrt(n_reports)`.
pub fn effect_from_single_source(
    study_id: &str,
    value: f64,
    bias_rate: f64,
    n_reports: u32,
) -> Result<EffectEstimate> {
    positive_count("value", value)?;
    if !(bias_rate.is_finite() && bias_rate > 0.0) {
        return Err(Error::Domain(format!(
            "bias_rate must be positive, got {bias_rate}"
        )));
    }
    if n_reports == 0 {
        return Err(Error::Domain("n_reports must be ≥ 1".into()));
    }
    let se = bias_rate * value / f64::from(n_reports).sqrt();
    EffectEstimate::new(study_id, value, se * se)
}

/// Two-arm estimates for every row of `table`, pairing columns `col_a` and `col_b`.
pub fn two_arm_estimates(
    table: &ReportTable,
    col_a: &str,
    col_b: &str,
) -> Result<Vec<EffectEstimate>> {
    let a = table.column_values(col_a)?;
    let b = table.column_values(col_b)?;
    table
        .rows
        .iter()
        .zip(a.iter().zip(&b))
        .map(|(r, (&x, &y))| effect_from_two_arm(&r.source_id, x, y))
        .collect()
}

/// Bias model for one source: its historical bias rate and how many reports back it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRate {
    pub source: String,
    pub bias_rate: f64,
    pub n_reports: u32,
}

/// Parses the `source,bias_rate,n_reports` side file.
pub fn parse_bias_rates(text: &str) -> Result<Vec<BiasRate>> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if header.iter().collect::<Vec<_>>() != ["source", "bias_rate", "n_reports"] {
        return Err(Error::Schema(
            "bias-rate header must be `source,bias_rate,n_reports`".into(),
        ));
    }
    reader
        .deserialize()
        .map(|r| {
            r.map_err(|e: csv::Error| Error::Parse {
                line: e.position().map(|p| p.line()).unwrap_or(0),
                message: e.to_string(),
            })
        })
        .collect()
}

/// Single-source estimates for column `col`, matching rows to `rates` by source name.
pub fn single_source_estimates(
    table: &ReportTable,
    col: &str,
    rates: &[BiasRate],
) -> Result<Vec<EffectEstimate>> {
    let values = table.column_values(col)?;
    table
        .rows
        .iter()
        .zip(values)
        .map(|(r, v)| {
            let rate = rates
                .iter()
                .find(|b| b.source == r.source_id)
                .ok_or_else(|| {
                    Error::Input(format!("no bias rate for source `{}`", r.source_id))
                })?;
            effect_from_single_source(&r.source_id, v, rate.bias_rate, rate.n_reports)
        })
        .collect()
}

fn two_sided_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

fn weighted(effects: &[f64], weights: &[f64]) -> (f64, f64, Vec<f64>) {
    let total: f64 = weights.iter().sum();
    let pooled = effects.iter().zip(weights).map(|(t, w)| w * t).sum::<f64>() / total;
    let normalized = weights.iter().map(|w| w / total).collect();
    (pooled, total.sqrt().recip(), normalized)
}

/// Pools `estimates` under common-effect and DerSimonian-Laird random-effects models.
pub fn pool(estimates: &[EffectEstimate]) -> Result<PoolingResult> {
    let k = estimates.len();
    if k < 2 {
        return Err(Error::Size(format!("pooling needs k ≥ 2 studies, got {k}")));
    }
    for e in estimates {
        if !(e.variance.is_finite() && e.variance > 0.0) {
            return Err(Error::Domain(format!(
                "study `{}` has non-positive variance {}",
                e.study_id, e.variance
            )));
        }
        if !e.effect.is_finite() {
            return Err(Error::Domain(format!(
                "study `{}` has non-finite effect",
                e.study_id
            )));
        }
    }

    let effects: Vec<f64> = estimates.iter().map(|e| e.effect).collect();
    let w: Vec<f64> = estimates.iter().map(|e| e.variance.recip()).collect();
    let (pooled_common, se_common, weights_common) = weighted(&effects, &w);

    let q: f64 = effects
        .iter()
        .zip(&w)
        .map(|(t, wi)| wi * (t - pooled_common).powi(2))
        .sum();
    let df = k - 1;
    let dff = df as f64;
    let i2 = if q > 0.0 {
        ((q - dff) / q).max(0.0)
    } else {
        0.0
    };

    let sum_w: f64 = w.iter().sum();
    let sum_w2: f64 = w.iter().map(|x| x * x).sum();
    let c = sum_w - sum_w2 / sum_w;
    let tau2 = if c > 0.0 {
        ((q - dff) / c).max(0.0)
    } else {
        0.0
    };

    let w_star: Vec<f64> = estimates
        .iter()
        .map(|e| (e.variance + tau2).recip())
        .collect();
    let (pooled_random, se_random, weights_random) = weighted(&effects, &w_star);

    let z_common = pooled_common / se_common;
    let z_random = pooled_random / se_random;
    Ok(PoolingResult {
        pooled_common,
        se_common,
        pooled_random,
        se_random,
        weights_common,
        weights_random,
        q,
        df,
        i2,
        tau2,
        z_common,
        p_common: two_sided_p(z_common),
        z_random,
        p_random: two_sided_p(z_random),
    })
}

/// `(θ_i − pooled_common) / sqrt(v_i)` for every study.
pub fn standardized_residuals(
    estimates: &[EffectEstimate],
    result: &PoolingResult,
) -> Result<Vec<f64>> {
    if estimates.len() != result.weights_common.len() {
        return Err(Error::Input(format!(
            "{} estimates but result pools {} studies",
            estimates.len(),
            result.weights_common.len()
        )));
    }
    Ok(estimates
        .iter()
        .map(|e| (e.effect - result.pooled_common) / e.standard_error())
        .collect())
}

/// Two-sided standard normal quantile for a central interval of mass `level`.
pub fn normal_quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!(
            "ci level must lie in (0,1), got {level}"
        )));
    }
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(n.inverse_cdf((1.0 + level) / 2.0))
}

pub fn plot_data(
    estimates: &[EffectEstimate],
    result: &PoolingResult,
    ci_level: f64,
) -> Result<PlotData> {
    let z = normal_quantile(ci_level)?;
    let residuals = standardized_residuals(estimates, result)?;
    let mut forest_rows: Vec<ForestRow> = estimates
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let half = z * e.standard_error();
            ForestRow {
                kind: RowKind::Study,
                study_id: e.study_id.clone(),
                effect: e.effect,
                ci_low: e.effect - half,
                ci_high: e.effect + half,
                weight_common: result.weights_common[i],
                weight_random: result.weights_random[i],
            }
        })
        .collect();
    forest_rows.push(ForestRow {
        kind: RowKind::Common,
        study_id: "Common effect model".into(),
        effect: result.pooled_common,
        ci_low: result.pooled_common - z * result.se_common,
        ci_high: result.pooled_common + z * result.se_common,
        weight_common: 1.0,
        weight_random: 0.0,
    });
    forest_rows.push(ForestRow {
        kind: RowKind::Random,
        study_id: "Random effects model".into(),
        effect: result.pooled_random,
        ci_low: result.pooled_random - z * result.se_random,
        ci_high: result.pooled_random + z * result.se_random,
        weight_common: 0.0,
        weight_random: 1.0,
    });
    let funnel_points = estimates
        .iter()
        .map(|e| FunnelPoint {
            effect: e.effect,
            standard_error: e.standard_error(),
        })
        .collect();
    Ok(PlotData {
        ci_level,
        forest_rows,
        funnel_points,
        residuals,
    })
}

/// Minimum-variance linear combination of independent unbiased predictions.
pub fn fuse_predictions(predictions: &[f64], variances: &[f64]) -> Result<Fusion> {
    if predictions.is_empty() {
        return Err(Error::Size("need at least one prediction".into()));
    }
    if predictions.len() != variances.len() {
        return Err(Error::Shape {
            expected: predictions.len(),
            actual: variances.len(),
        });
    }
    if let Some(v) = variances.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::Domain(format!("variance must be positive, got {v}")));
    }
    let inv: Vec<f64> = variances.iter().map(|v| v.recip()).collect();
    let total: f64 = inv.iter().sum();
    let weights: Vec<f64> = inv.iter().map(|w| w / total).collect();
    let fused = predictions.iter().zip(&weights).map(|(p, w)| p * w).sum();
    Ok(Fusion { fused, weights })
}

//! Linear situation score over the 5×5 parameter matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ParameterMatrix, MATRIX_DIM};

pub const N_WEIGHTS: usize = MATRIX_DIM * MATRIX_DIM;

/// Intercept plus one weight per matrix entry, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SituationWeights {
    pub bias: f64,
    pub omega: Vec<f64>,
}

impl SituationWeights {
    pub fn new(bias: f64, omega: Vec<f64>) -> Result<Self> {
        let w = Self { bias, omega };
        w.validate()?;
        Ok(w)
    }

    pub fn uniform(bias: f64, omega: f64) -> Self {
        Self {
            bias,
            omega: vec![omega; N_WEIGHTS],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.omega.len() != N_WEIGHTS {
            return Err(Error::Shape {
                expected: N_WEIGHTS,
                actual: self.omega.len(),
            });
        }
        if !self.bias.is_finite() || self.omega.iter().any(|w| !w.is_finite()) {
            return Err(Error::Domain("situation weights must be finite".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let w: Self = serde_json::from_str(text)?;
        w.validate()?;
        Ok(w)
    }
}

fn checked_flat(matrix: &ParameterMatrix) -> Result<Vec<f64>> {
    let v = matrix.validate();
    if !v.is_empty() {
        return Err(Error::Validation(v));
    }
    let flat = matrix.flat();
    if flat.iter().any(|a| !a.is_finite()) {
        return Err(Error::Domain(
            "parameter matrix has a non-finite entry".into(),
        ));
    }
    Ok(flat)
}

fn score_flat(flat: &[f64], weights: &SituationWeights) -> f64 {
    weights.bias
        + weights
            .omega
            .iter()
            .zip(flat)
            .map(|(w, a)| w * a)
            .sum::<f64>()
}

/// `bias + Σ_j ω_j · a_j` with the matrix flattened row-major.
pub fn situation_score(matrix: &ParameterMatrix, weights: &SituationWeights) -> Result<f64> {
    weights.validate()?;
    Ok(score_flat(&checked_flat(matrix)?, weights))
}

/// One least-mean-squares step on `r = score − target`.
pub fn feedback_update(
    weights: &SituationWeights,
    matrix: &ParameterMatrix,
    target: f64,
    rate: f64,
) -> Result<SituationWeights> {
    if !(rate.is_finite() && rate > 0.0) {
        return Err(Error::Domain(format!("rate must be > 0, got {rate}")));
    }
    weights.validate()?;
    let flat = checked_flat(matrix)?;
    let r = score_flat(&flat, weights) - target;
    if !r.is_finite() {
        return Err(Error::Domain("non-finite score residual".into()));
    }
    Ok(SituationWeights {
        bias: weights.bias - rate * r,
        omega: weights
            .omega
            .iter()
            .zip(&flat)
            .map(|(w, a)| w - rate * r * a)
            .collect(),
    })
}

/// Largest rate for which repeated [`feedback_update`] steps on a fixed
/// matrix shrink the residual: `2 / (1 + Σ a_j²)`.
pub fn stable_rate_bound(matrix: &ParameterMatrix) -> f64 {
    2.0 / (1.0 + matrix.flat().iter().map(|a| a * a).sum::<f64>())
}

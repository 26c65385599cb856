//! Modeling datasets, invertible min-max scaling and the synthetic target column.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::ReportTable;

pub const DEFAULT_COEFFICIENTS: [f64; 4] = [0.4, 0.1, 0.4, 0.1];
pub const DEFAULT_NOISE_SD: f64 = 0.01;
pub const DEFAULT_TARGET: &str = "Y";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    /// Row-major observations, `n` rows of `p` features.
    pub x: Vec<Vec<f64>>,
    #[serde(default)]
    pub y: Option<Vec<f64>>,
    #[serde(default)]
    pub target_name: Option<String>,
}

impl Dataset {
    pub fn new(feature_names: Vec<String>, x: Vec<Vec<f64>>, y: Option<Vec<f64>>) -> Result<Self> {
        let target_name = y.as_ref().map(|_| DEFAULT_TARGET.to_owned());
        let d = Self {
            feature_names,
            x,
            y,
            target_name,
        };
        d.check()?;
        Ok(d)
    }

    pub fn check(&self) -> Result<()> {
        let p = self.feature_names.len();
        let mut names = std::collections::HashSet::new();
        for n in &self.feature_names {
            if !names.insert(n) {
                return Err(Error::Schema(format!("duplicate feature name `{n}`")));
            }
        }
        for row in &self.x {
            if row.len() != p {
                return Err(Error::Shape {
                    expected: p,
                    actual: row.len(),
                });
            }
        }
        if let Some(y) = &self.y {
            if y.len() != self.x.len() {
                return Err(Error::Shape {
                    expected: self.x.len(),
                    actual: y.len(),
                });
            }
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.x.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.x.iter().map(|r| r[j]).collect()
    }

    pub fn target(&self) -> Result<&[f64]> {
        self.y
            .as_deref()
            .ok_or_else(|| Error::Input("dataset has no target column".into()))
    }

    /// Raw counts of every indicator column, one observation per source.
    pub fn from_report_table(table: &ReportTable) -> Result<Self> {
        let columns: Vec<Vec<f64>> = table
            .columns
            .iter()
            .map(|c| table.column_values(c))
            .collect::<Result<_>>()?;
        let x = (0..table.rows.len())
            .map(|i| columns.iter().map(|c| c[i]).collect())
            .collect();
        Self::new(table.columns.clone(), x, None)
    }

    /// Content hash over names and the exact bit patterns of every value.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for n in &self.feature_names {
            h.update(n.as_bytes());
            h.update([0u8]);
        }
        for row in &self.x {
            for v in row {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        if let Some(y) = &self.y {
            h.update(
                self.target_name
                    .as_deref()
                    .unwrap_or(DEFAULT_TARGET)
                    .as_bytes(),
            );
            for v in y {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// CSV with the feature columns followed by the target column, when present.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = self.feature_names.clone();
        if self.y.is_some() {
            header.push(
                self.target_name
                    .clone()
                    .unwrap_or_else(|| DEFAULT_TARGET.into()),
            );
        }
        w.write_record(&header).map_err(to_io)?;
        for (i, row) in self.x.iter().enumerate() {
            let mut rec: Vec<String> = row.iter().map(|v| format_real(*v)).collect();
            if let Some(y) = &self.y {
                rec.push(format_real(y[i]));
            }
            w.write_record(&rec).map_err(to_io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
    }

    /// Reads a dataset CSV. Lines starting with `#` are skipped, except a
    /// `# target: NAME` directive naming the target column. `target` overrides
    /// the directive; with neither, every column is a feature.
    pub fn from_csv(text: &str, target: Option<&str>) -> Result<Self> {
        let directive = text.lines().find_map(|l| {
            l.strip_prefix('#')
                .and_then(|r| r.trim().strip_prefix("target:"))
                .map(|t| t.trim().to_owned())
        });
        let target = target.map(str::to_owned).or(directive);

        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let header: Vec<String> = reader
            .headers()
            .map_err(parse_err)?
            .iter()
            .map(str::to_owned)
            .collect();
        let target_idx = match &target {
            Some(t) => Some(
                header
                    .iter()
                    .position(|h| h == t)
                    .ok_or_else(|| Error::Schema(format!("target column `{t}` not in header")))?,
            ),
            None => None,
        };
        let mut x = Vec::new();
        let mut y = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(parse_err)?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let mut row = Vec::with_capacity(header.len());
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|e| Error::Parse {
                    line,
                    message: format!("value `{field}`: {e}"),
                })?;
                if Some(j) == target_idx {
                    y.push(v);
                } else {
                    row.push(v);
                }
            }
            x.push(row);
        }
        let feature_names = header
            .iter()
            .enumerate()
            .filter(|(j, _)| Some(*j) != target_idx)
            .map(|(_, h)| h.clone())
            .collect();
        let d = Self {
            feature_names,
            x,
            y: target_idx.map(|_| y),
            target_name: target,
        };
        d.check()?;
        Ok(d)
    }
}

/// Shortest decimal form that parses back to the same bits.
pub fn format_real(v: f64) -> String {
    format!("{v:?}")
}

fn to_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

fn parse_err(e: csv::Error) -> Error {
    Error::Parse {
        line: e.position().map(|p| p.line()).unwrap_or(0),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnRange {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub constant: bool,
}

impl ColumnRange {
    fn apply(&self, v: f64) -> f64 {
        if self.constant {
            0.0
        } else {
            (v - self.min) / (self.max - self.min)
        }
    }

    fn invert(&self, v: f64) -> f64 {
        if self.constant {
            self.min
        } else {
            v * (self.max - self.min) + self.min
        }
    }
}

/// Per-column min/max fitted on a dataset. When the dataset had a target,
/// its range is the last entry of `columns` and `has_target` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub columns: Vec<ColumnRange>,
    #[serde(default)]
    pub has_target: bool,
}

impl Scaler {
    pub fn constant_columns(&self) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.constant)
            .map(|(i, _)| i)
            .collect()
    }

    fn n_features(&self) -> usize {
        self.columns.len() - usize::from(self.has_target)
    }

    fn target_range(&self) -> Option<&ColumnRange> {
        self.has_target.then(|| self.columns.last()).flatten()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn range_of(name: &str, values: impl Iterator<Item = f64>) -> Result<ColumnRange> {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for v in values {
        if !v.is_finite() {
            return Err(Error::Domain(format!(
                "non-finite value in column `{name}`"
            )));
        }
        min = min.min(v);
        max = max.max(v);
    }
    Ok(ColumnRange {
        name: name.to_owned(),
        min,
        max,
        constant: min == max,
    })
}

pub fn minmax_fit(data: &Dataset) -> Result<Scaler> {
    if data.n_rows() == 0 {
        return Err(Error::Size(
            "cannot fit a scaler on an empty dataset".into(),
        ));
    }
    let mut columns = (0..data.n_features())
        .map(|j| range_of(&data.feature_names[j], data.x.iter().map(|r| r[j])))
        .collect::<Result<Vec<_>>>()?;
    if let Some(y) = &data.y {
        let name = data.target_name.as_deref().unwrap_or(DEFAULT_TARGET);
        columns.push(range_of(name, y.iter().copied())?);
    }
    Ok(Scaler {
        columns,
        has_target: data.y.is_some(),
    })
}

fn transform(
    scaler: &Scaler,
    data: &Dataset,
    f: impl Fn(&ColumnRange, f64) -> f64,
) -> Result<Dataset> {
    let p = scaler.n_features();
    if data.n_features() != p {
        return Err(Error::Shape {
            expected: p,
            actual: data.n_features(),
        });
    }
    let x = data
        .x
        .iter()
        .map(|row| {
            row.iter()
                .zip(&scaler.columns)
                .map(|(v, c)| f(c, *v))
                .collect()
        })
        .collect();
    let y = match (&data.y, scaler.target_range()) {
        (Some(y), Some(c)) => Some(y.iter().map(|v| f(c, *v)).collect()),
        (y, _) => y.clone(),
    };
    Ok(Dataset {
        feature_names: data.feature_names.clone(),
        x,
        y,
        target_name: data.target_name.clone(),
    })
}

/// Maps every fitted column onto `[0,1]`; constant columns become 0. Values
/// outside the fitted range are mapped by the same affine rule, unclipped.
pub fn minmax_apply(scaler: &Scaler, data: &Dataset) -> Result<Dataset> {
    transform(scaler, data, ColumnRange::apply)
}

pub fn minmax_invert(scaler: &Scaler, data: &Dataset) -> Result<Dataset> {
    transform(scaler, data, ColumnRange::invert)
}

/// Appends `Y = clamp(Σ c_j x_j + ε, 0, 1)` with `ε ~ N(0, noise_sd²)` drawn
/// from a ChaCha8 stream seeded by `seed`.
pub fn synthesize_target(
    data: &Dataset,
    coefficients: &[f64],
    noise_sd: f64,
    seed: u64,
) -> Result<Dataset> {
    if coefficients.len() != data.n_features() {
        return Err(Error::Shape {
            expected: data.n_features(),
            actual: coefficients.len(),
        });
    }
    if !(noise_sd.is_finite() && noise_sd >= 0.0) {
        return Err(Error::Domain(format!(
            "noise_sd must be ≥ 0, got {noise_sd}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::Domain(e.to_string()))?;
    let y = data
        .x
        .iter()
        .map(|row| {
            let lin: f64 = row.iter().zip(coefficients).map(|(x, c)| x * c).sum();
            let eps = if noise_sd > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            (lin + eps).clamp(0.0, 1.0)
        })
        .collect();
    Ok(Dataset {
        feature_names: data.feature_names.clone(),
        x: data.x.clone(),
        y: Some(y),
        target_name: Some(DEFAULT_TARGET.to_owned()),
    })
}

/// Normalizes the raw report table and appends the synthetic target.
pub fn prepare(
    table: &ReportTable,
    coefficients: &[f64],
    noise_sd: f64,
    seed: u64,
) -> Result<(Dataset, Scaler)> {
    let raw = Dataset::from_report_table(table)?;
    let scaler = minmax_fit(&raw)?;
    let scaled = minmax_apply(&scaler, &raw)?;
    Ok((
        synthesize_target(&scaled, coefficients, noise_sd, seed)?,
        scaler,
    ))
}

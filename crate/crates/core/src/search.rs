//! Architecture comparison and layer-by-layer neuron-count refinement.
//!
//! Every candidate is trained from several seeded restarts and represented
//! by its best restart. Selection is lexicographic by (error, steps,
//! parameter count).

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Algorithm, NetConfig, TrainResult};
use crate::preprocess::Dataset;

pub const DEFAULT_RESTARTS: usize = 10;
pub const ANCHOR_SIZES: [usize; 2] = [10, 5];
pub const DEFAULT_GRID: std::ops::RangeInclusive<usize> = 1..=16;

/// Training settings shared by every candidate in a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub threshold: f64,
    pub step_max: usize,
    pub output_linear: bool,
    #[serde(default)]
    pub algorithm: Algorithm,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            threshold: nn::DEFAULT_THRESHOLD,
            step_max: nn::DEFAULT_STEP_MAX,
            output_linear: true,
            algorithm: Algorithm::Rprop,
        }
    }
}

impl TrainParams {
    pub fn config(&self, n_inputs: usize, hidden_sizes: &[usize], seed: u64) -> NetConfig {
        NetConfig {
            n_inputs,
            hidden_sizes: hidden_sizes.to_vec(),
            n_outputs: 1,
            hidden_activation: nn::Activation::Logistic,
            output_linear: self.output_linear,
            threshold: self.threshold,
            step_max: self.step_max,
            seed,
            algorithm: self.algorithm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub hidden_sizes: Vec<usize>,
    pub parameter_count: usize,
    /// Best ½·SSE over restarts; `f64::MAX` when every restart diverged.
    pub error: f64,
    pub steps: usize,
    pub seed_used: u64,
    pub converged: bool,
    #[serde(default)]
    pub diverged: bool,
}

impl ComparisonRow {
    fn sort_key(&self, other: &Self) -> Ordering {
        self.diverged
            .cmp(&other.diverged)
            .then(self.error.total_cmp(&other.error))
            .then(self.steps.cmp(&other.steps))
            .then(self.parameter_count.cmp(&other.parameter_count))
            .then_with(|| self.hidden_sizes.cmp(&other.hidden_sizes))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
    pub dataset_fingerprint: String,
}

impl ComparisonTable {
    /// Aligned text with one line per architecture.
    pub fn to_text(&self) -> String {
        let header = [
            "Model",
            "Hidden layers",
            "Neurons per layer",
            "Errors",
            "Steps",
        ];
        let body: Vec<[String; 5]> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let sizes = r
                    .hidden_sizes
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join(", ");
                let err = if r.diverged {
                    "diverged".to_owned()
                } else {
                    format!("{:.4}", r.error)
                };
                let steps = if r.converged {
                    r.steps.to_string()
                } else {
                    format!("{}*", r.steps)
                };
                [
                    format!("NN_{}", i + 1),
                    r.hidden_sizes.len().to_string(),
                    if sizes.is_empty() { "-".into() } else { sizes },
                    err,
                    steps,
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &body {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let mut out = String::new();
        let mut line = |cells: &[&str]| {
            let parts: Vec<String> = cells
                .iter()
                .zip(widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&header);
        for row in &body {
            line(&row.each_ref().map(String::as_str));
        }
        if self.rows.iter().any(|r| !r.converged) {
            out.push_str("* step budget exhausted before the threshold was reached\n");
        }
        out
    }
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-sensitive 64-bit mix of `parts`, stable across platforms and releases.
pub fn stable_hash(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x243F_6A88_85A3_08D3, |h, &p| splitmix64(h ^ splitmix64(p)))
}

fn architecture_key(sizes: &[usize]) -> u64 {
    let mut parts = vec![sizes.len() as u64];
    parts.extend(sizes.iter().map(|&s| s as u64));
    stable_hash(&parts)
}

struct Job {
    candidate: usize,
    seed: u64,
}

fn run_jobs(
    data: &Dataset,
    candidates: &[Vec<usize>],
    jobs: &[Job],
    params: &TrainParams,
) -> Vec<Result<TrainResult>> {
    let run = |job: &Job| {
        let cfg = params.config(data.n_features(), &candidates[job.candidate], job.seed);
        nn::train(&cfg, data)
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        jobs.par_iter().map(run).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        jobs.iter().map(run).collect()
    }
}

/// Trains every candidate `restarts` times with seeds from `seed_of(index,
/// sizes, restart)` and keeps the best restart of each. Results are merged
/// in (candidate, restart) order regardless of execution order.
fn compare_with(
    data: &Dataset,
    candidates: &[Vec<usize>],
    restarts: usize,
    params: &TrainParams,
    seed_of: impl Fn(usize, &[usize], usize) -> u64,
) -> Result<ComparisonTable> {
    if candidates.is_empty() {
        return Err(Error::Size("no candidate architectures".into()));
    }
    if restarts == 0 {
        return Err(Error::Size("restarts must be ≥ 1".into()));
    }
    let jobs: Vec<Job> = candidates
        .iter()
        .enumerate()
        .flat_map(|(c, sizes)| {
            (0..restarts).map({
                let seed_of = &seed_of;
                move |r| Job {
                    candidate: c,
                    seed: seed_of(c, sizes, r),
                }
            })
        })
        .collect();
    let results = run_jobs(data, candidates, &jobs, params);

    let mut rows = Vec::with_capacity(candidates.len());
    for (c, sizes) in candidates.iter().enumerate() {
        let parameter_count = params.config(data.n_features(), sizes, 0).parameter_count();
        let mut best: Option<ComparisonRow> = None;
        for (job, res) in jobs.iter().zip(&results).filter(|(j, _)| j.candidate == c) {
            let row = match res {
                Ok(t) => ComparisonRow {
                    hidden_sizes: sizes.clone(),
                    parameter_count,
                    error: t.error,
                    steps: t.steps,
                    seed_used: job.seed,
                    converged: t.converged,
                    diverged: false,
                },
                Err(Error::Divergence { step }) => ComparisonRow {
                    hidden_sizes: sizes.clone(),
                    parameter_count,
                    error: f64::MAX,
                    steps: *step,
                    seed_used: job.seed,
                    converged: false,
                    diverged: true,
                },
                Err(e) => return Err(Error::Input(format!("training {sizes:?}: {e}"))),
            };
            let better = best.as_ref().is_none_or(|b| {
                (row.diverged, row.error, row.steps).partial_cmp(&(b.diverged, b.error, b.steps))
                    == Some(Ordering::Less)
            });
            if better {
                best = Some(row);
            }
        }
        rows.push(best.expect("restarts ≥ 1"));
    }
    Ok(ComparisonTable {
        rows,
        dataset_fingerprint: data.fingerprint(),
    })
}

/// Per-run seed is `stable_hash([base_seed, candidate_index, restart_index])`.
pub fn compare_architectures(
    data: &Dataset,
    candidates: &[Vec<usize>],
    restarts: usize,
    base_seed: u64,
    params: &TrainParams,
) -> Result<ComparisonTable> {
    compare_with(data, candidates, restarts, params, |c, _, r| {
        stable_hash(&[base_seed, c as u64, r as u64])
    })
}

/// Lexicographic minimum by (error, steps, parameter count); diverged rows last.
pub fn select_best(table: &ComparisonTable) -> Result<&ComparisonRow> {
    table
        .rows
        .iter()
        .min_by(|a, b| a.sort_key(b))
        .ok_or_else(|| Error::Size("empty comparison table".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub best_sizes: Vec<usize>,
    pub trace: Vec<ComparisonTable>,
}

/// The (10, 5) anchor cut or padded (repeating its last size) to `depth`.
pub fn anchor(depth: usize) -> Vec<usize> {
    (0..depth)
        .map(|i| ANCHOR_SIZES[i.min(ANCHOR_SIZES.len() - 1)])
        .collect()
}

fn nearest_in_grid(grid: &[usize], target: usize) -> usize {
    *grid
        .iter()
        .min_by_key(|&&g| (g.abs_diff(target), g))
        .expect("grid non-empty")
}

/// Coordinate descent over hidden-layer sizes.
///
/// Starts from the anchor projected onto the grid, then for each layer in
/// turn evaluates every grid size with the other layers held fixed and keeps
/// the winner. Seeds depend on the architecture rather than its position in
/// a stage, so the incumbent scores identically in every stage it appears in
/// and the winning error never increases.
pub fn stepwise_refine(
    data: &Dataset,
    depth: usize,
    size_grid: &[usize],
    restarts: usize,
    base_seed: u64,
    params: &TrainParams,
) -> Result<Refinement> {
    if depth == 0 {
        return Err(Error::Domain("depth must be ≥ 1".into()));
    }
    let mut grid: Vec<usize> = Vec::with_capacity(size_grid.len());
    for &g in size_grid {
        if g == 0 {
            return Err(Error::Domain("grid sizes must be ≥ 1".into()));
        }
        if !grid.contains(&g) {
            grid.push(g);
        }
    }
    if grid.is_empty() {
        return Err(Error::Size("empty size grid".into()));
    }

    let mut sizes: Vec<usize> = anchor(depth)
        .into_iter()
        .map(|a| nearest_in_grid(&grid, a))
        .collect();
    let mut cache: HashMap<Vec<usize>, ComparisonRow> = HashMap::new();
    let mut trace = Vec::with_capacity(depth);
    let seed_of =
        |_: usize, s: &[usize], r: usize| stable_hash(&[base_seed, architecture_key(s), r as u64]);

    for layer in 0..depth {
        let candidates: Vec<Vec<usize>> = grid
            .iter()
            .map(|&g| {
                let mut c = sizes.clone();
                c[layer] = g;
                c
            })
            .collect();
        let fresh: Vec<Vec<usize>> = candidates
            .iter()
            .filter(|c| !cache.contains_key(*c))
            .cloned()
            .collect();
        if !fresh.is_empty() {
            let table = compare_with(data, &fresh, restarts, params, seed_of)?;
            for row in table.rows {
                cache.insert(row.hidden_sizes.clone(), row);
            }
        }
        let table = ComparisonTable {
            rows: candidates.iter().map(|c| cache[c].clone()).collect(),
            dataset_fingerprint: data.fingerprint(),
        };
        sizes = select_best(&table)?.hidden_sizes.clone();
        trace.push(table);
    }
    Ok(Refinement {
        best_sizes: sizes,
        trace,
    })
}

/// Parses `lo..hi` (inclusive) or a comma list into grid sizes.
pub fn parse_grid(text: &str) -> Result<Vec<usize>> {
    let bad = || {
        Error::Input(format!(
            "grid `{text}` is neither `lo..hi` nor a comma list"
        ))
    };
    if let Some((lo, hi)) = text.split_once("..") {
        let lo: usize = lo.trim().parse().map_err(|_| bad())?;
        let hi: usize = hi
            .trim()
            .trim_start_matches('=')
            .parse()
            .map_err(|_| bad())?;
        if lo == 0 || lo > hi {
            return Err(bad());
        }
        Ok((lo..=hi).collect())
    } else {
        parse_sizes(text)
    }
}

/// Parses `a,b,c` into layer sizes; an empty string means no hidden layer.
pub fn parse_sizes(text: &str) -> Result<Vec<usize>> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::Input(format!("bad layer size `{s}`")))
        })
        .collect()
}

/// Parses `g1|g2|…` where each group is a comma list of layer sizes.
pub fn parse_candidates(text: &str) -> Result<Vec<Vec<usize>>> {
    text.split('|').map(parse_sizes).collect()
}

//! Pipeline front end: each subcommand runs exactly one stage and writes its
//! artifacts atomically with an embedded provenance header.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use sitaware_core::meta::{self, EffectEstimate, PlotData, PoolingResult};
use sitaware_core::nn::{self, Algorithm, ModelFile, NetConfig};
use sitaware_core::preprocess::{self, Dataset, Scaler};
use sitaware_core::provenance::{Provenance, DEFAULT_SEED};
use sitaware_core::score::{self, SituationWeights};
use sitaware_core::search::{self, ComparisonRow, ComparisonTable, Refinement, TrainParams};
use sitaware_core::{ingest, plot, ParameterMatrix, ReportTable};

/// Environment variable overriding the default seed.
pub const SEED_ENV: &str = "SITAWARE_SEED";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("input file not found: {}", .0.display())]
    MissingInput(PathBuf),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] sitaware_core::Error),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::MissingInput(_) => 2,
            CliError::Core(sitaware_core::Error::Validation(_)) => 3,
            CliError::Core(sitaware_core::Error::Divergence { .. }) => 4,
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "sitaware",
    version,
    about = "Report fusion, network training and situation scoring"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Svg,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainAlgorithm {
    Rprop,
    Gd,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a report CSV and write its canonical JSON form.
    Ingest {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pool log count ratios of two indicator columns.
    MetaTwoArm {
        #[arg(long)]
        table: PathBuf,
        /// Two indicator columns, `C1,C2`.
        #[arg(long)]
        arms: String,
        #[arg(long, default_value_t = 0.95)]
        ci: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        plots: Option<PathBuf>,
    },
    /// Pool one column's raw counts using per-source bias rates.
    MetaPooled {
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        col: String,
        #[arg(long = "bias-rates")]
        bias_rates: PathBuf,
        #[arg(long, default_value_t = 0.95)]
        ci: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        plots: Option<PathBuf>,
    },
    /// Normalize a report table and append the synthetic target.
    Prep {
        #[arg(long)]
        table: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        coeffs: Option<Vec<f64>>,
        #[arg(long = "noise-sd", default_value_t = preprocess::DEFAULT_NOISE_SD)]
        noise_sd: f64,
        #[arg(long)]
        seed: Option<u64>,
        /// `.csv` writes a dataset CSV, anything else JSON.
        #[arg(long)]
        out: PathBuf,
        /// Optional separate scaler JSON.
        #[arg(long)]
        scaler: Option<PathBuf>,
    },
    /// Train one network.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "10,5")]
        hidden: String,
        #[arg(long, default_value_t = nn::DEFAULT_THRESHOLD)]
        threshold: f64,
        #[arg(long, default_value_t = nn::DEFAULT_STEP_MAX)]
        stepmax: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = TrainAlgorithm::Rprop)]
        algorithm: TrainAlgorithm,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare architectures, select the best and optionally refine its sizes.
    Search {
        #[arg(long)]
        data: PathBuf,
        /// Candidate hidden layouts separated by `|`, e.g. `5|10,5|4,5,3`.
        #[arg(long, default_value = "5|10,5|4,5,3")]
        depths: String,
        #[arg(long, default_value_t = search::DEFAULT_RESTARTS)]
        restarts: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Neuron grid for layer-by-layer refinement of the winner, `lo..hi`.
        #[arg(long)]
        grid: Option<String>,
        #[arg(long, default_value_t = nn::DEFAULT_THRESHOLD)]
        threshold: f64,
        #[arg(long, default_value_t = nn::DEFAULT_STEP_MAX)]
        stepmax: usize,
        /// `.txt` writes the aligned text table, anything else JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Export the generalized-weights matrix of a trained model.
    Gw {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a parameter matrix, optionally applying feedback toward a target.
    Score {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        target: Option<f64>,
        #[arg(long, default_value_t = 0.01)]
        rate: f64,
        #[arg(long, default_value_t = 1)]
        iterations: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render plots or tables from a meta-analysis output.
    Report {
        #[arg(long)]
        meta: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportFormat::Svg)]
        format: ReportFormat,
        #[arg(long = "out-dir")]
        out_dir: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::MetaTwoArm { .. } => "meta-two-arm",
            Command::MetaPooled { .. } => "meta-pooled",
            Command::Prep { .. } => "prep",
            Command::Train { .. } => "train",
            Command::Search { .. } => "search",
            Command::Gw { .. } => "gw",
            Command::Score { .. } => "score",
            Command::Report { .. } => "report",
        }
    }

    fn seed_flag(&self) -> Option<u64> {
        match self {
            Command::Prep { seed, .. }
            | Command::Train { seed, .. }
            | Command::Search { seed, .. } => *seed,
            _ => None,
        }
    }

    fn inputs(&self) -> Vec<&Path> {
        match self {
            Command::Ingest { input, .. } => vec![input],
            Command::MetaTwoArm { table, .. } => vec![table],
            Command::MetaPooled {
                table, bias_rates, ..
            } => vec![table, bias_rates],
            Command::Prep { table, .. } => vec![table],
            Command::Train { data, .. } | Command::Search { data, .. } => vec![data],
            Command::Gw { model, data, .. } => vec![model, data],
            Command::Score {
                matrix, weights, ..
            } => vec![matrix, weights],
            Command::Report { meta, .. } => vec![meta],
        }
    }
}

/// Seed from the flag, else the environment override, else 42.
pub fn resolve_seed(flag: Option<u64>) -> CliResult<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => {
            let s = v
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("{SEED_ENV}=`{v}` is not an integer")))?;
            eprintln!("sitaware: default seed overridden by {SEED_ENV}={s}");
            Ok(s)
        }
        Err(_) => Ok(DEFAULT_SEED),
    }
}

fn read(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::MissingInput(path.to_owned())
        } else {
            CliError::Io {
                context: format!("reading {}", path.display()),
                source: e,
            }
        }
    })
}

fn text(bytes: &[u8], path: &Path) -> CliResult<String> {
    String::from_utf8(bytes.to_vec()).map_err(|e| CliError::Io {
        context: format!("{} is not UTF-8", path.display()),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
    })
}

/// Writes `contents` through a temporary file in the target directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> CliResult<()> {
    let io = |e: std::io::Error| CliError::Io {
        context: format!("writing {}", path.display()),
        source: e,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_owned(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io)?;
    tmp.write_all(contents).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(sitaware_core::Error::from)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

fn is_ext(path: &Path, ext: &str) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

fn load_table(bytes: &[u8], path: &Path) -> CliResult<ReportTable> {
    let s = text(bytes, path)?;
    Ok(if is_ext(path, "json") {
        ReportTable::from_json(&s)?
    } else {
        ingest::parse_report_table(&s)?
    })
}

fn load_dataset(bytes: &[u8], path: &Path) -> CliResult<Dataset> {
    let s = text(bytes, path)?;
    let d = if is_ext(path, "csv") {
        Dataset::from_csv(&s, None)?
    } else {
        let d: Dataset = serde_json::from_str(&s).map_err(sitaware_core::Error::from)?;
        d.check()?;
        d
    };
    Ok(d)
}

/// Output wrapper that places the provenance header before the payload.
#[derive(Debug, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub provenance: Provenance,
    #[serde(flatten)]
    pub body: T,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetaOutput {
    pub model: String,
    pub columns: Vec<String>,
    pub estimates: Vec<EffectEstimate>,
    pub result: PoolingResult,
    pub plot: PlotData,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PrepOutput {
    pub coefficients: Vec<f64>,
    pub noise_sd: f64,
    pub scaler: Scaler,
    #[serde(flatten)]
    pub dataset: Dataset,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrainOutput {
    #[serde(flatten)]
    pub model: ModelFile,
    pub feature_names: Vec<String>,
    pub result_matrix: Vec<f64>,
    pub result_matrix_labels: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SearchOutput {
    pub restarts: usize,
    pub train_params: TrainParams,
    pub comparison: ComparisonTable,
    pub selected: ComparisonRow,
    pub refinement: Option<Refinement>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreOutput {
    pub score: f64,
    pub target: Option<f64>,
    pub rate: Option<f64>,
    /// `|score − target|` before the first and after every feedback step.
    pub residuals: Vec<f64>,
    pub weights: SituationWeights,
}

fn write_plots(dir: &Path, plot_data: &PlotData, prov: &Provenance) -> CliResult<()> {
    let meta = prov.to_json();
    write_atomic(
        &dir.join("forest.svg"),
        plot::forest_svg(plot_data, Some(&meta)).as_bytes(),
    )?;
    write_atomic(
        &dir.join("funnel.svg"),
        plot::funnel_svg(plot_data, Some(&meta)).as_bytes(),
    )?;
    write_atomic(
        &dir.join("residuals.svg"),
        plot::residual_svg(plot_data, Some(&meta)).as_bytes(),
    )?;
    Ok(())
}

fn meta_output(
    model: &str,
    columns: Vec<String>,
    estimates: Vec<EffectEstimate>,
    ci: f64,
) -> CliResult<MetaOutput> {
    let result = meta::pool(&estimates)?;
    let plot = meta::plot_data(&estimates, &result, ci)?;
    Ok(MetaOutput {
        model: model.to_owned(),
        columns,
        estimates,
        result,
        plot,
    })
}

fn csv_text(
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
    prov: &Provenance,
) -> String {
    let mut out = prov.comment_lines();
    out.push_str(&header.join(","));
    out.push('\n');
    for r in rows {
        let quoted: Vec<String> = r
            .into_iter()
            .map(|c| {
                if c.contains([',', '"', '\n']) {
                    format!("\"{}\"", c.replace('"', "\"\""))
                } else {
                    c
                }
            })
            .collect();
        out.push_str(&quoted.join(","));
        out.push('\n');
    }
    out
}

/// Runs one pipeline stage.
pub fn execute(command: &Command) -> CliResult<()> {
    let inputs = command.inputs();
    for p in &inputs {
        if !p.exists() {
            return Err(CliError::MissingInput(p.to_path_buf()));
        }
    }
    let bytes: Vec<Vec<u8>> = inputs.iter().map(|p| read(p)).collect::<CliResult<_>>()?;
    let seed = resolve_seed(command.seed_flag())?;
    let prov = Provenance::new(command.name(), seed, bytes.iter().map(Vec::as_slice));

    match command {
        Command::Ingest { input, out } => {
            let table = load_table(&bytes[0], input)?;
            write_json(
                out,
                &Artifact {
                    provenance: prov,
                    body: table,
                },
            )
        }

        Command::MetaTwoArm {
            table,
            arms,
            ci,
            out,
            plots,
        } => {
            let t = load_table(&bytes[0], table)?;
            let cols: Vec<&str> = arms.split(',').map(str::trim).collect();
            let [a, b] = cols.as_slice() else {
                return Err(CliError::Usage(format!(
                    "--arms expects `C1,C2`, got `{arms}`"
                )));
            };
            let estimates = meta::two_arm_estimates(&t, a, b)?;
            let body = meta_output(
                "two-arm",
                vec![a.to_string(), b.to_string()],
                estimates,
                *ci,
            )?;
            if let Some(dir) = plots {
                write_plots(dir, &body.plot, &prov)?;
            }
            write_json(
                out,
                &Artifact {
                    provenance: prov,
                    body,
                },
            )
        }

        Command::MetaPooled {
            table,
            col,
            bias_rates,
            ci,
            out,
            plots,
        } => {
            let t = load_table(&bytes[0], table)?;
            let rates = meta::parse_bias_rates(&text(&bytes[1], bias_rates)?)?;
            let estimates = meta::single_source_estimates(&t, col, &rates)?;
            let body = meta_output("single-source", vec![col.clone()], estimates, *ci)?;
            if let Some(dir) = plots {
                write_plots(dir, &body.plot, &prov)?;
            }
            write_json(
                out,
                &Artifact {
                    provenance: prov,
                    body,
                },
            )
        }

        Command::Prep {
            table,
            coeffs,
            noise_sd,
            out,
            scaler,
            ..
        } => {
            let t = load_table(&bytes[0], table)?;
            let coefficients = coeffs
                .clone()
                .unwrap_or_else(|| preprocess::DEFAULT_COEFFICIENTS.to_vec());
            let (dataset, fitted) = preprocess::prepare(&t, &coefficients, *noise_sd, seed)?;
            if let Some(path) = scaler {
                write_json(
                    path,
                    &Artifact {
                        provenance: prov.clone(),
                        body: fitted.clone(),
                    },
                )?;
            }
            if is_ext(out, "csv") {
                let mut s = prov.comment_lines();
                s.push_str(&format!(
                    "# coefficients: {}\n# noise_sd: {}\n# target: {}\n",
                    coefficients
                        .iter()
                        .map(|c| preprocess::format_real(*c))
                        .collect::<Vec<_>>()
                        .join(","),
                    preprocess::format_real(*noise_sd),
                    preprocess::DEFAULT_TARGET
                ));
                s.push_str(&dataset.to_csv()?);
                write_atomic(out, s.as_bytes())
            } else {
                let body = PrepOutput {
                    coefficients,
                    noise_sd: *noise_sd,
                    scaler: fitted,
                    dataset,
                };
                write_json(
                    out,
                    &Artifact {
                        provenance: prov,
                        body,
                    },
                )
            }
        }

        Command::Train {
            data,
            hidden,
            threshold,
            stepmax,
            algorithm,
            out,
            ..
        } => {
            let d = load_dataset(&bytes[0], data)?;
            let sizes = search::parse_sizes(hidden)?;
            let mut cfg = NetConfig::regression(d.n_features(), &sizes, seed);
            cfg.threshold = *threshold;
            cfg.step_max = *stepmax;
            cfg.algorithm = match algorithm {
                TrainAlgorithm::Rprop => Algorithm::Rprop,
                TrainAlgorithm::Gd => Algorithm::gradient_descent(),
            };
            let result = nn::train(&cfg, &d)?;
            eprintln!(
                "sitaware: error {:.6} reached_threshold {:.6} steps {} converged {}",
                result.error, result.reached_threshold, result.steps, result.converged
            );
            let body = TrainOutput {
                model: ModelFile::from_result(&result),
                feature_names: d.feature_names.clone(),
                result_matrix: nn::result_matrix(&result),
                result_matrix_labels: nn::result_matrix_labels(&cfg, &d.feature_names),
            };
            write_json(
                out,
                &Artifact {
                    provenance: prov,
                    body,
                },
            )
        }

        Command::Search {
            data,
            depths,
            restarts,
            grid,
            threshold,
            stepmax,
            out,
            ..
        } => {
            let d = load_dataset(&bytes[0], data)?;
            let candidates = search::parse_candidates(depths)?;
            let params = TrainParams {
                threshold: *threshold,
                step_max: *stepmax,
                ..TrainParams::default()
            };
            let comparison =
                search::compare_architectures(&d, &candidates, *restarts, seed, &params)?;
            let selected = search::select_best(&comparison)?.clone();
            let refinement = match grid {
                Some(g) if !selected.hidden_sizes.is_empty() => Some(search::stepwise_refine(
                    &d,
                    selected.hidden_sizes.len(),
                    &search::parse_grid(g)?,
                    *restarts,
                    seed,
                    &params,
                )?),
                _ => None,
            };
            print!("{}", comparison.to_text());
            if let Some(r) = &refinement {
                println!("refined sizes: {:?}", r.best_sizes);
            }
            if is_ext(out, "txt") {
                let mut s = prov.comment_lines();
                s.push_str(&comparison.to_text());
                if let Some(r) = &refinement {
                    for (layer, t) in r.trace.iter().enumerate() {
                        s.push_str(&format!("\nrefinement of hidden layer {}\n", layer + 1));
                        s.push_str(&t.to_text());
                    }
                    s.push_str(&format!("\nrefined sizes: {:?}\n", r.best_sizes));
                }
                write_atomic(out, s.as_bytes())
            } else {
                let body = SearchOutput {
                    restarts: *restarts,
                    train_params: params,
                    comparison,
                    selected,
                    refinement,
                };
                write_json(
                    out,
                    &Artifact {
                        provenance: prov,
                        body,
                    },
                )
            }
        }

        Command::Gw { model, data, out } => {
            let m: ModelFile = serde_json::from_str(&text(&bytes[0], model)?)
                .map_err(sitaware_core::Error::from)?;
            let d = load_dataset(&bytes[1], data)?;
            let gw = m.network()?.generalized_weights(&d)?;
            let mut s = prov.comment_lines();
            s.push_str(&gw.to_csv()?);
            write_atomic(out, s.as_bytes())
        }

        Command::Score {
            matrix,
            weights,
            target,
            rate,
            iterations,
            out,
        } => {
            let m = ParameterMatrix::from_json(&text(&bytes[0], matrix)?)?;
            let mut w = SituationWeights::from_json(&text(&bytes[1], weights)?)?;
            let initial = score::situation_score(&m, &w)?;
            let mut residuals = Vec::new();
            if let Some(t) = target {
                residuals.push((initial - t).abs());
                for _ in 0..*iterations {
                    w = score::feedback_update(&w, &m, *t, *rate)?;
                    residuals.push((score::situation_score(&m, &w)? - t).abs());
                }
            }
            let body = ScoreOutput {
                score: initial,
                target: *target,
                rate: target.map(|_| *rate),
                residuals,
                weights: w,
            };
            write_json(
                out,
                &Artifact {
                    provenance: prov,
                    body,
                },
            )
        }

        Command::Report {
            meta,
            format,
            out_dir,
        } => {
            let m: Artifact<MetaOutput> = serde_json::from_str(&text(&bytes[0], meta)?)
                .map_err(sitaware_core::Error::from)?;
            let plot_data = &m.body.plot;
            match format {
                ReportFormat::Svg => write_plots(out_dir, plot_data, &prov),
                ReportFormat::Csv => write_report_csv(out_dir, &m.body, &prov),
            }
        }
    }
}

fn write_report_csv(dir: &Path, m: &MetaOutput, prov: &Provenance) -> CliResult<()> {
    let f = preprocess::format_real;
    let forest = csv_text(
        &[
            "kind",
            "study_id",
            "effect",
            "ci_low",
            "ci_high",
            "weight_common",
            "weight_random",
        ],
        m.plot.forest_rows.iter().map(|r| {
            vec![
                serde_json::to_value(r.kind)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_owned))
                    .unwrap_or_default(),
                r.study_id.clone(),
                f(r.effect),
                f(r.ci_low),
                f(r.ci_high),
                f(r.weight_common),
                f(r.weight_random),
            ]
        }),
        prov,
    );
    let ids: Vec<&str> = m.estimates.iter().map(|e| e.study_id.as_str()).collect();
    let funnel = csv_text(
        &["study_id", "effect", "standard_error"],
        m.plot
            .funnel_points
            .iter()
            .zip(&ids)
            .map(|(p, id)| vec![id.to_string(), f(p.effect), f(p.standard_error)]),
        prov,
    );
    let residuals = csv_text(
        &["study_id", "residual"],
        m.plot
            .residuals
            .iter()
            .zip(&ids)
            .map(|(r, id)| vec![id.to_string(), f(*r)]),
        prov,
    );
    let r = &m.result;
    let summary = csv_text(
        &["statistic", "value"],
        [
            ("pooled_common", r.pooled_common),
            ("se_common", r.se_common),
            ("z_common", r.z_common),
            ("p_common", r.p_common),
            ("pooled_random", r.pooled_random),
            ("se_random", r.se_random),
            ("z_random", r.z_random),
            ("p_random", r.p_random),
            ("Q", r.q),
            ("df", r.df as f64),
            ("I2", r.i2),
            ("tau2", r.tau2),
        ]
        .into_iter()
        .map(|(k, v)| vec![k.to_owned(), f(v)]),
        prov,
    );
    write_atomic(&dir.join("forest.csv"), forest.as_bytes())?;
    write_atomic(&dir.join("funnel.csv"), funnel.as_bytes())?;
    write_atomic(&dir.join("residuals.csv"), residuals.as_bytes())?;
    write_atomic(&dir.join("summary.csv"), summary.as_bytes())?;
    Ok(())
}

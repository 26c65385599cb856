//! Fusion of conflicting multi-source count reports, min-max preprocessing,
//! feed-forward regression networks with architecture search, and a linear
//! situation score.
//!
//! The modules mirror the processing order: [`ingest`] parses report tables,
//! [`meta`] pools per-source estimates, [`preprocess`] builds a normalized
//! dataset, [`nn`] and [`search`] fit and select networks, and [`score`]
//! aggregates the parameter matrix. [`plot`] renders pooling results as SVG.

pub mod error;
pub mod ingest;
pub mod meta;
pub mod nn;
pub mod plot;
pub mod preprocess;
pub mod provenance;
pub mod score;
pub mod search;

pub use error::{Error, Result};
pub use ingest::{
    parse_report_table, validate, ParameterMatrix, ReportTable, SourceReport, Violation,
};
pub use meta::{EffectEstimate, PlotData, PoolingResult};
pub use nn::{GwMatrix, NetConfig, Network, TrainResult};
pub use preprocess::{Dataset, Scaler};
pub use score::SituationWeights;
pub use search::{ComparisonRow, ComparisonTable, TrainParams};

/// The ten-source casualty table shipped as a fixture.
pub const FIXTURE_REPORTS: &str = include_str!("../fixtures/reports.csv");

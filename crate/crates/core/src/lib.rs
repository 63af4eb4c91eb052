//! Recursive space-division hash codes for positions, 0/1-feedback
//! symmetric-flip correction of unsupervised predictions, and the
//! exploration → correction → exploitation training loop built on them.

pub mod analysis;
pub mod config;
pub mod dataset;
pub mod decoder;
pub mod error;
pub mod exploit;
pub mod grid;
pub mod pipeline;
pub mod seeds;
pub mod synth;

pub use config::RunConfig;
pub use dataset::{Dataset, Split};
pub use decoder::{ExplorationDecoder, OracleDecoder, PcaDecoder};
pub use error::{Error, Result};
pub use exploit::ExploitationModel;
pub use grid::{
    BandPolicy, BitCode, BitOutcome, Feedback, Grid, GridParams, Interval, LevelEvent, SpaceBounds,
};
pub use pipeline::{CorrectionEvent, Pipeline, PipelineConfig, Refit, RunMode, RunResult};

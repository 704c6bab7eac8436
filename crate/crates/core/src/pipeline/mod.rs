//! Dataset store, staged training, sampling, evaluation and attention export.

pub mod attention;
pub mod config;
pub mod model;
pub mod sample;
pub mod store;
pub mod train;

pub use config::{DiffusionConfig, RunConfig, SampleConfig, TrainConfig};
pub use model::{CheckpointMeta, Model, Prepared, Stage};
pub use sample::{evaluate, load_samples, run_sampling, EvalReport, SampleRecord};
pub use store::{ingest, DatasetStore, IngestReport, StoreRecord};
pub use train::{train, StageManifest, TrainReport};

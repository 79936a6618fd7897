//! Dataset generation, training, evaluation and the end-to-end experiment.

pub mod config;
pub mod eval;
pub mod experiment;
pub mod files;
pub mod manifest;
pub mod stages;
pub mod synth;
pub mod train;

pub use config::{derive_seed, Config, Preset};
pub use eval::{average_precision, evaluate_scores, ranked_classes, top_k_correct, ClassAp, EvalReport};
pub use experiment::{run_experiment, Baselines, ExperimentOutcome, TaskData};
pub use manifest::{ingest_frames, DatasetManifest, ManifestRow, Split};
pub use synth::{render_sample, synth_generate, synth_samples, Motion, ShapeKind, SyntheticSample, SyntheticSpec};
pub use train::{
    mirror_tensor, predict_scores, train_classifier, train_flow_network, Augment, FlowSample, InitKind, LogEntry,
    TrainConfig, TrainLog,
};

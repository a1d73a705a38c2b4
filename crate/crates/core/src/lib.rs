//! Acoustic anomaly detection for industrial machine sounds.
//!
//! Clips are turned into log-mel spectrograms, cut into overlapping patches,
//! rendered as images and embedded by a pretrained network. One-class
//! detectors fitted on normal features score test patches; patch scores are
//! mean-pooled per clip and summarised by ROC AUC.

pub mod audio;
pub mod config;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod models;
pub mod pipeline;
pub mod render;
pub mod rng;
pub mod spectral;
mod viridis;

pub use audio::{
    decode_wav, encode_wav, index_dataset, split_train_test, DatasetIndex, GroupKey, Label, MachineId, MachineType,
    Manifest, RecordingMeta, Split, Waveform,
};
pub use embedding::{
    fit_standardizer, read_cache, write_cache, DownsampleEmbedder, EmbeddingBackendSpec, ExtractorId, FeatureMatrix,
    PatchEmbedder, RowId, Standardizer,
};
pub use config::{ExtractorSpec, RunConfig};
pub use error::{Error, Result};
pub use eval::{roc_auc, roc_auc_scores, ClipScore, ExperimentConfig, ExperimentReport, RocResult};
pub use models::{AnomalyModel, ModelConfig, ModelKind};
pub use pipeline::Featurizer;
pub use render::{extract_patches, Orientation, Patch, PatchRenderer, RenderConfig};
pub use spectral::{MelConfig, MelFrontEnd, MelSpectrogram, StftConfig};

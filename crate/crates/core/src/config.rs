//! Declarative run configuration (TOML).
//!
//! ```toml
//! config_version = 1
//! dataset_root = "/data/mimii/-6_dB"
//! seeds = [0, 1, 2, 3, 4]
//! models = ["gmm", "vbgmm", "isoforest", "ocsvm", "kde"]
//! machines = ["fan", "slider"]      # empty or absent: all
//! ids = ["M0", "M6"]                # empty or absent: all
//!
//! [[extractors]]
//! kind = "onnx"
//! id = "resnet18"
//! graph = "graphs/resnet18.onnx"
//! input = "input"
//! output = "features"
//!
//! [[extractors]]
//! kind = "downsample"
//! cells = 8
//!
//! [stft]
//! n_fft = 1024
//!
//! [model.gmm]
//! n_components = 80
//! ```
//!
//! Every table is optional; omitted values take the defaults below.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::{MachineId, MachineType};
use crate::embedding::{EmbeddingBackendSpec, ExtractorId};
use crate::error::{Error, Result};
use crate::eval::ExperimentConfig;
use crate::models::{ModelConfig, ModelKind};
use crate::render::RenderConfig;
use crate::spectral::{MelConfig, StftConfig};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ExtractorSpec {
    Onnx {
        id: ExtractorId,
        graph: PathBuf,
        input: String,
        output: String,
    },
    Downsample {
        #[serde(default = "default_cells")]
        cells: usize,
    },
}

fn default_cells() -> usize {
    8
}

impl ExtractorSpec {
    pub fn name(&self) -> String {
        match self {
            Self::Onnx { id, .. } => id.as_str().to_string(),
            Self::Downsample { .. } => "downsample".to_string(),
        }
    }

    /// Backend spec with relative graph paths resolved against `base`.
    pub fn backend(&self, base: &Path) -> Option<EmbeddingBackendSpec> {
        match self {
            Self::Onnx { id, graph, input, output } => {
                Some(EmbeddingBackendSpec::new(*id, base.join(graph), input, output))
            }
            Self::Downsample { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub config_version: u32,
    pub dataset_root: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    pub seeds: Vec<u64>,
    pub n_test_normal: usize,
    pub machines: Vec<MachineType>,
    pub ids: Vec<MachineId>,
    pub models: Vec<ModelKind>,
    pub extractors: Vec<ExtractorSpec>,
    pub batch_size: usize,
    pub stft: StftConfig,
    pub mel: MelConfig,
    pub render: RenderConfig,
    pub model: ModelConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let exp = ExperimentConfig::default();
        Self {
            config_version: CONFIG_VERSION,
            dataset_root: None,
            cache_dir: None,
            out_dir: None,
            workers: None,
            seeds: exp.seeds,
            n_test_normal: exp.n_test_normal,
            machines: Vec::new(),
            ids: Vec::new(),
            models: exp.models,
            extractors: Vec::new(),
            batch_size: 32,
            stft: StftConfig::default(),
            mel: MelConfig::default(),
            render: RenderConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.config_version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config_version {} is not supported (expected {CONFIG_VERSION})",
                self.config_version
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.models.is_empty() {
            return Err(Error::Config("models must not be empty".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        self.stft.validate()?;
        Ok(())
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            seeds: self.seeds.clone(),
            n_test_normal: self.n_test_normal,
            models: self.models.clone(),
            model: self.model.clone(),
        }
    }

    pub fn wants_group(&self, machine_type: MachineType, machine_id: MachineId) -> bool {
        (self.machines.is_empty() || self.machines.contains(&machine_type))
            && (self.ids.is_empty() || self.ids.contains(&machine_id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_reference_setup() {
        let c = RunConfig::default();
        assert_eq!(c.seeds, vec![0, 1, 2, 3, 4]);
        assert_eq!(c.stft.n_fft, 1024);
        assert_eq!(c.stft.hop, 256);
        assert_eq!(c.mel.n_mels, 64);
        assert_eq!((c.render.width, c.render.stride, c.render.image_size), (64, 32, 224));
        assert_eq!(c.model.gmm.n_components, 80);
        assert_eq!(c.model.gmm.max_iter, 150);
        assert_eq!(c.model.iforest.n_trees, 128);
        assert_eq!(c.model.ocsvm.nu, 1e-4);
        assert_eq!(c.model.kde.bandwidth, 0.1);
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let c = RunConfig::from_toml(
            r#"
config_version = 1
seeds = [3]
machines = ["slider"]
ids = ["M0"]

[[extractors]]
kind = "onnx"
id = "resnet18"
graph = "r18.onnx"
input = "input"
output = "features"

[model.gmm]
n_components = 4
"#,
        )
        .unwrap();
        assert_eq!(c.seeds, vec![3]);
        assert_eq!(c.model.gmm.n_components, 4);
        assert_eq!(c.model.gmm.max_iter, 150);
        assert!(c.wants_group(MachineType::Slider, MachineId::M0));
        assert!(!c.wants_group(MachineType::Fan, MachineId::M0));
        let spec = c.extractors[0].backend(Path::new("/g")).unwrap();
        assert_eq!(spec.expected_dim, 512);
        assert_eq!(spec.graph_path, PathBuf::from("/g/r18.onnx"));
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = RunConfig::default();
        c.extractors.push(ExtractorSpec::Downsample { cells: 8 });
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_version_and_unknown_keys() {
        assert!(matches!(RunConfig::from_toml("config_version = 2"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("config_version = 1\nbogus = 3"), Err(Error::Config(_))));
    }
}

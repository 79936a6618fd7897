//! TOML run configuration. Every section and key is optional; missing
//! values take the defaults below.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::synth::SyntheticSpec;
use super::train::TrainConfig;
use crate::error::{Error, Result};
use crate::flow::{DecodeMode, KMeans, DEFAULT_CLUSTERS};
use crate::loss::{LossConfig, LossVariant, DEFAULT_TOP_K};
use crate::nn::{LayerKind, NetworkSpec, Scenario};
use crate::saliency::SaliencyParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneralConfig {
    /// Master seed. Every stage derives its own seed from it.
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
}

impl Default for GeneralConfig {
    fn default() -> Self {
        GeneralConfig { seed: 0, threads: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodebookConfig {
    pub clusters: usize,
    pub max_iters: usize,
    pub restarts: usize,
}

impl Default for CodebookConfig {
    fn default() -> Self {
        let k = KMeans::default();
        CodebookConfig { clusters: DEFAULT_CLUSTERS, max_iters: k.max_iters, restarts: k.restarts }
    }
}

impl CodebookConfig {
    pub fn kmeans(&self, seed: u64) -> KMeans {
        KMeans { clusters: self.clusters, max_iters: self.max_iters, restarts: self.restarts, seed }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowNetConfig {
    /// Channels of the hidden convolutions.
    pub width: usize,
    /// Input and output grid; 0 uses the dataset's image size.
    pub rows: usize,
    pub cols: usize,
}

impl Default for FlowNetConfig {
    fn default() -> Self {
        FlowNetConfig { width: 32, rows: 0, cols: 0 }
    }
}

impl FlowNetConfig {
    pub fn spec(&self, image_rows: usize, image_cols: usize, clusters: usize) -> NetworkSpec {
        let pick = |v: usize, d: usize| if v == 0 { d } else { v };
        NetworkSpec::desk_flow(pick(self.rows, image_rows), pick(self.cols, image_cols), clusters, self.width)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub variant: LossVariant,
    /// Uniform `1/K` weight on the K most likely clusters.
    pub top_k: usize,
}

impl Default for LossSection {
    fn default() -> Self {
        LossSection { variant: LossVariant::V2, top_k: DEFAULT_TOP_K }
    }
}

impl LossSection {
    pub fn loss_config(&self) -> LossConfig {
        LossConfig::top_k(self.top_k)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MappingSection {
    pub decode: DecodeMode,
    pub otsu_bins: usize,
    /// Flow normalization range; 0 uses the codebook's.
    pub f_max: f64,
}

impl Default for MappingSection {
    fn default() -> Self {
        MappingSection { decode: DecodeMode::Expected, otsu_bins: 256, f_max: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 227x227x3 input, 4096-wide FC layers.
    #[default]
    Full,
    /// 32x32x3 input, same layer sequence, narrow.
    Desk,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSection {
    pub preset: Preset,
    pub pool_size: usize,
    pub pool_stride: usize,
    pub scenario: Scenario,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        ClassifierSection { preset: Preset::Full, pool_size: 3, pool_stride: 2, scenario: Scenario::Top5Layers }
    }
}

impl ClassifierSection {
    pub fn spec(&self, num_classes: usize) -> NetworkSpec {
        let mut spec = match self.preset {
            Preset::Full => NetworkSpec::full_classifier(num_classes),
            Preset::Desk => NetworkSpec::desk_classifier(num_classes),
        };
        for layer in &mut spec.layers {
            if let LayerKind::MaxPool { .. } = layer.kind {
                layer.kind = LayerKind::MaxPool { size: self.pool_size, stride: self.pool_stride };
            }
        }
        spec
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub general: GeneralConfig,
    /// Source task for pretraining. Its `seed` is derived from
    /// `general.seed`.
    pub source: SyntheticSpec,
    /// Target task for fine-tuning. Its `seed` is derived from
    /// `general.seed`.
    pub target: SyntheticSpec,
    pub codebook: CodebookConfig,
    pub flow_net: FlowNetConfig,
    pub flow_train: TrainConfig,
    pub loss: LossSection,
    pub saliency: SaliencyParams,
    pub mapping: MappingSection,
    pub classifier: ClassifierSection,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
}

/// Derives an independent stage seed from the master seed. The top bit is
/// cleared so the value fits a TOML integer.
pub fn derive_seed(seed: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stage.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes")) >> 1
}

impl Config {
    /// Full-scale defaults with the desk-scale synthetic tasks.
    pub fn full() -> Self {
        Config {
            source: SyntheticSpec::desk_source(),
            target: SyntheticSpec::desk_target(),
            ..Config::default()
        }
        .with_seed(0)
    }

    /// Small settings that run the full pipeline on one core in under two
    /// minutes. Mirroring is off because the synthetic classes are
    /// directions, which a left-right flip exchanges.
    pub fn desk() -> Self {
        let fast = TrainConfig {
            batch: 8,
            init: super::train::InitKind::He,
            mirror: false,
            ..TrainConfig::default()
        };
        Config {
            general: GeneralConfig::default(),
            source: SyntheticSpec::desk_source(),
            target: SyntheticSpec::desk_target(),
            codebook: CodebookConfig { clusters: 5, ..CodebookConfig::default() },
            flow_net: FlowNetConfig { width: 12, rows: 0, cols: 0 },
            flow_train: TrainConfig { iterations: 800, base_lr: 0.0015, ..fast.clone() },
            loss: LossSection::default(),
            saliency: SaliencyParams::default(),
            mapping: MappingSection::default(),
            classifier: ClassifierSection { preset: Preset::Desk, ..ClassifierSection::default() },
            pretrain: TrainConfig { iterations: 1000, base_lr: 0.02, ..fast.clone() },
            finetune: TrainConfig { iterations: 300, base_lr: 0.01, ..fast },
        }
        .with_seed(0)
    }

    /// Sets the master seed and the synthetic task seeds derived from it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.general.seed = seed;
        self.source.seed = derive_seed(seed, "synth-source");
        self.target.seed = derive_seed(seed, "synth-target");
        self
    }

    pub fn seed(&self, stage: &str) -> u64 {
        derive_seed(self.general.seed, stage)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        let seed = cfg.general.seed;
        let cfg = cfg.with_seed(seed);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.target.validate()?;
        for t in [&self.flow_train, &self.pretrain, &self.finetune] {
            t.validate()?;
        }
        self.loss.loss_config().validate()?;
        self.saliency.validate()?;
        if self.codebook.clusters == 0 {
            return Err(Error::config("codebook.clusters must be >= 1"));
        }
        if self.flow_net.width == 0 {
            return Err(Error::config("flow_net.width must be >= 1"));
        }
        if self.mapping.otsu_bins < 2 {
            return Err(Error::config("mapping.otsu_bins must be >= 2"));
        }
        if !(self.mapping.f_max >= 0.0 && self.mapping.f_max.is_finite()) {
            return Err(Error::config("mapping.f_max must be >= 0"));
        }
        self.classifier.spec(2).validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_full_scale_values() {
        let c = Config::default();
        assert_eq!(c.codebook.clusters, 40);
        assert_eq!(c.loss.top_k, 10);
        assert_eq!(c.pretrain.base_lr, 0.001);
        assert_eq!(c.pretrain.lr_step_iters, 70_000);
        assert_eq!((c.classifier.pool_size, c.classifier.pool_stride), (3, 2));
    }

    #[test]
    fn toml_round_trip() {
        let c = Config::desk().with_seed(9);
        assert_eq!(Config::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let c = Config::from_toml("[codebook]\nclusters = 7\n").unwrap();
        assert_eq!(c.codebook.clusters, 7);
        assert_eq!(c.loss.top_k, 10);
    }

    #[test]
    fn unknown_key_and_bad_value_are_config_errors() {
        assert!(matches!(Config::from_toml("[loss]\nbogus = 1\n"), Err(Error::Config(_))));
        assert!(matches!(Config::from_toml("[pretrain]\nbase_lr = -1.0\n"), Err(Error::Config(_))));
        assert!(matches!(Config::from_toml("[classifier]\nscenario = \"sideways\"\n"), Err(Error::Config(_))));
    }
}

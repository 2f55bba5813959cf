//! Experiment configuration: one strict JSON document shared by every
//! command.

use std::path::{Path, PathBuf};

use onetfwi_core::fwi::FwiConfig;
use onetfwi_core::geometry::{make_openfwi_geometry, AcquisitionGeometry, Grid2D};
use onetfwi_core::model::{BranchConfig, ModelConfig, TrunkConfig};
use onetfwi_core::preprocess::CorruptionSpec;
use onetfwi_core::training::{ToyConfig, TrainConfig, TOY_SOURCE_AMPLITUDE};
use onetfwi_core::wave::{RickerSource, SimulationConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DATA_DIR_ENV: &str = "ONETFWI_DATA_DIR";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Root that relative manifest paths resolve against.
    pub root: Option<PathBuf>,
    pub train_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    /// Use only the first `sample_limit` samples of each split.
    pub sample_limit: Option<usize>,
}

impl DataSection {
    pub fn resolve(&self, path: &Path) -> PathBuf {
        match &self.root {
            Some(root) if path.is_relative() => root.join(path),
            _ => path.to_path_buf(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Full,
    #[default]
    Desk,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub preset: Preset,
    pub input_shape: Option<[usize; 3]>,
    pub branch: Option<BranchConfig>,
    pub trunk: Option<TrunkConfig>,
}

impl ModelSection {
    pub fn resolve(&self) -> ModelConfig {
        let mut cfg = match self.preset {
            Preset::Full => ModelConfig::full(),
            Preset::Desk => ModelConfig::desk(),
        };
        if let Some(shape) = self.input_shape {
            cfg.input_shape = shape;
        }
        if let Some(branch) = &self.branch {
            cfg.branch = branch.clone();
        }
        if let Some(trunk) = &self.trunk {
            cfg.trunk = trunk.clone();
        }
        cfg
    }
}

/// Grid, acquisition and source used by `simulate`, `predict`, `fwi` and
/// `hybrid`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForwardSection {
    pub grid: Grid2D,
    pub geometry: AcquisitionGeometry,
    pub source: RickerSource,
    pub simulation: SimulationConfig,
}

impl Default for ForwardSection {
    fn default() -> Self {
        Self {
            grid: Grid2D::openfwi(),
            geometry: make_openfwi_geometry(),
            source: RickerSource::new(25.0).with_amplitude(TOY_SOURCE_AMPLITUDE),
            simulation: SimulationConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub directory: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { directory: PathBuf::from("out") }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub corruption: CorruptionSpec,
    pub fwi: FwiConfig,
    pub output: OutputSection,
    pub forward: ForwardSection,
    pub toy: ToyConfig,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
    /// Value of the data-root environment variable.
    pub env_data_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies flag > environment > file precedence. A seed flag replaces
    /// every seed in the document.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(root) = o.data_dir.clone().or_else(|| o.env_data_dir.clone()) {
            self.data.root = Some(root);
        }
        if let Some(out) = &o.out {
            self.output.directory = out.clone();
        }
        if let Some(seed) = o.seed {
            self.train.seed = seed;
            self.toy.seed = seed;
            self.corruption.rng_seed = seed;
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let check = |r: onetfwi_core::Result<()>, section: &str| r.map_err(|e| CliError::config(format!("{section}: {e}")));
        check(self.model.resolve().validate(), "model")?;
        check(self.train.validate(), "train")?;
        check(self.fwi.validate(), "fwi")?;
        check(self.forward.geometry.validate(), "forward.geometry")?;
        check(self.forward.simulation.validate(), "forward.simulation")?;
        check(self.forward.source.validate(), "forward.source")?;
        check(self.corruption.validate(self.forward.geometry.dt, self.forward.geometry.n_receivers()), "corruption")?;
        Ok(())
    }
}

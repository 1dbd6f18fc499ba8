//! Run configuration read from a TOML file.
//!
//! ```toml
//! seed = 7
//!
//! [dataset]
//! root = "images"        # one sub-directory per class
//!
//! [split]
//! train_per_class = 30
//! repeats = 10
//!
//! [gabor]
//! stride = 4
//!
//! [boost]
//! rounds = [100, 80]     # one entry per layer
//! quantile_count = 16
//!
//! [compose]
//! cell_size = 12
//! neighborhood = 1
//! max_composites = 8000
//!
//! [output]
//! dir = "run"
//! ```
//!
//! Every key is optional. Relative paths are resolved against the directory
//! of the config file. Values come from, in increasing precedence: the
//! built-in defaults, the `--desk-scale` preset, the file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::compose::CompositionConfig;
use crate::gabor::GaborConfig;
use crate::imageio::SplitSpec;
use crate::model::ModelConfig;

const DEFAULT_TRAIN_PER_CLASS: usize = 30;
const DEFAULT_REPEATS: usize = 10;
const DEFAULT_OUTPUT_DIR: &str = "deepboost-out";

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    seed: Option<u64>,
    #[serde(default)]
    dataset: DatasetSection,
    #[serde(default)]
    split: SplitSection,
    #[serde(default)]
    gabor: GaborSection,
    #[serde(default)]
    boost: BoostSection,
    #[serde(default)]
    compose: ComposeSection,
    #[serde(default)]
    output: OutputSection,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetSection {
    root: Option<PathBuf>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitSection {
    train_per_class: Option<usize>,
    seed: Option<u64>,
    repeats: Option<usize>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GaborSection {
    support: Option<usize>,
    sigma: Option<f64>,
    wavelength: Option<f64>,
    orientations: Option<usize>,
    stride: Option<usize>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoostSection {
    rounds: Option<Vec<usize>>,
    quantile_count: Option<usize>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComposeSection {
    cell_size: Option<usize>,
    neighborhood: Option<usize>,
    max_composites: Option<usize>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    dir: Option<PathBuf>,
}

/// Fully resolved settings of one invocation.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset_root: Option<PathBuf>,
    pub split: SplitSpec,
    pub model: ModelConfig,
    pub output_dir: PathBuf,
}

impl RunConfig {
    /// Defaults, optionally with the desk-scale preset, and no dataset.
    pub fn defaults(desk_scale: bool) -> Self {
        let model = if desk_scale {
            ModelConfig::desk_scale()
        } else {
            ModelConfig::default()
        };
        Self {
            dataset_root: None,
            split: SplitSpec {
                train_per_class: DEFAULT_TRAIN_PER_CLASS,
                seed: model.seed,
                repeats: DEFAULT_REPEATS,
            },
            model,
            output_dir: PathBuf::from(DEFAULT_OUTPUT_DIR),
        }
    }

    pub fn load(path: &Path, desk_scale: bool) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::from_toml(&text, base, desk_scale)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn from_toml(text: &str, base: &Path, desk_scale: bool) -> Result<Self, String> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| e.to_string())?;
        let mut cfg = Self::defaults(desk_scale);
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };

        if let Some(seed) = file.seed {
            cfg.model.seed = seed;
            cfg.split.seed = seed;
        }
        cfg.dataset_root = file.dataset.root.map(resolve);
        let s = file.split;
        set(&mut cfg.split.train_per_class, s.train_per_class);
        set(&mut cfg.split.seed, s.seed);
        set(&mut cfg.split.repeats, s.repeats);
        let g = file.gabor;
        let gabor = &mut cfg.model.gabor;
        set(&mut gabor.support, g.support);
        set(&mut gabor.sigma, g.sigma);
        set(&mut gabor.wavelength, g.wavelength);
        set(&mut gabor.orientations, g.orientations);
        set(&mut gabor.stride, g.stride);
        set(&mut cfg.model.rounds, file.boost.rounds);
        set(&mut cfg.model.quantile_count, file.boost.quantile_count);
        let c = file.compose;
        let comp = &mut cfg.model.composition;
        set(&mut comp.cell_size, c.cell_size);
        set(&mut comp.neighborhood, c.neighborhood);
        set(&mut comp.max_composites, c.max_composites);
        if let Some(dir) = file.output.dir {
            cfg.output_dir = resolve(dir);
        } else {
            cfg.output_dir = base.join(DEFAULT_OUTPUT_DIR);
        }

        cfg.model.validate().map_err(|e| e.to_string())?;
        cfg.split.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    /// The dataset root, which must exist.
    pub fn require_dataset(&self) -> Result<&Path, CliError> {
        let root = self
            .dataset_root
            .as_deref()
            .ok_or_else(|| CliError::Config("config has no [dataset] root".into()))?;
        if !root.is_dir() {
            return Err(CliError::Config(format!(
                "dataset root {} is not a directory",
                root.display()
            )));
        }
        Ok(root)
    }

    pub fn manifest_path(&self, repeat: usize) -> PathBuf {
        self.output_dir.join(format!("split_{repeat:02}.tsv"))
    }

    pub fn default_model_path(&self) -> PathBuf {
        self.output_dir.join("model.dbm")
    }

    /// Every resolved setting as TOML, loadable by [`RunConfig::from_toml`].
    pub fn to_toml(&self) -> String {
        let GaborConfig {
            support,
            sigma,
            wavelength,
            orientations,
            stride,
        } = self.model.gabor.clone();
        let CompositionConfig {
            cell_size,
            neighborhood,
            max_composites,
        } = self.model.composition.clone();
        let file = ConfigFile {
            seed: Some(self.model.seed),
            dataset: DatasetSection {
                root: self.dataset_root.clone(),
            },
            split: SplitSection {
                train_per_class: Some(self.split.train_per_class),
                seed: Some(self.split.seed),
                repeats: Some(self.split.repeats),
            },
            gabor: GaborSection {
                support: Some(support),
                sigma: Some(sigma),
                wavelength: Some(wavelength),
                orientations: Some(orientations),
                stride: Some(stride),
            },
            boost: BoostSection {
                rounds: Some(self.model.rounds.clone()),
                quantile_count: Some(self.model.quantile_count),
            },
            compose: ComposeSection {
                cell_size: Some(cell_size),
                neighborhood: Some(neighborhood),
                max_composites: Some(max_composites),
            },
            output: OutputSection {
                dir: Some(self.output_dir.clone()),
            },
        };
        toml::to_string(&file).expect("config sections serialize")
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

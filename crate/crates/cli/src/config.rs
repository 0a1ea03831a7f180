use std::path::{Path, PathBuf};

use dabp::model::ModelConfig;
use dabp::oracle::DEFAULT_CAP;
use dabp::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::{io_err, CliError};

/// Optional TOML file with `[train]`, `[model]` and `[solve]` tables. Any
/// omitted key keeps its default; command-line flags override both.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub solve: SolveDefaults,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveDefaults {
    pub lambda: f64,
    pub rho: f64,
    /// Run the learned solvers on the split factor graph.
    pub scfg: bool,
    pub exact_cap: u128,
}

impl Default for SolveDefaults {
    fn default() -> Self {
        Self {
            lambda: 0.9,
            rho: 0.95,
            scfg: true,
            exact_cap: DEFAULT_CAP,
        }
    }
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        toml::from_str(&text).map_err(|source| CliError::Toml {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Everything a solver run needs besides the instance.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveSettings {
    pub train: TrainConfig,
    /// A zero `msg_width` means "use the instance's largest domain".
    pub model: ModelConfig,
    pub lambda: f64,
    pub rho: f64,
    pub scfg: bool,
    pub exact_cap: u128,
    pub load_params: Option<PathBuf>,
    pub save_params: Option<PathBuf>,
}

impl Default for SolveSettings {
    fn default() -> Self {
        FileConfig::default().into()
    }
}

impl From<FileConfig> for SolveSettings {
    fn from(c: FileConfig) -> Self {
        Self {
            train: c.train,
            model: c.model,
            lambda: c.solve.lambda,
            rho: c.solve.rho,
            scfg: c.solve.scfg,
            exact_cap: c.solve.exact_cap,
            load_params: None,
            save_params: None,
        }
    }
}

//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{SbmParams, SideInfoMode};
use crate::wmp::{FlowWeighting, PartialTreatment, WmpOptions};

/// Environment variable naming the default dataset directory.
pub const DATA_DIR_ENV: &str = "WMP_DATA_DIR";
pub const POLBLOGS_FILE: &str = "polblogs.gml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    GwTree,
    Sbm,
    Polblogs,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Self::GwTree => "gw_tree",
            Self::Sbm => "sbm",
            Self::Polblogs => "polblogs",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Minimum-energy flow initialization.
    Wmp,
    /// Uniform flow initialization.
    AmpUniformFlow,
    Bp,
    Spectral,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Self::Wmp => "wmp",
            Self::AmpUniformFlow => "amp_uniform_flow",
            Self::Bp => "bp",
            Self::Spectral => "spectral",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SideInfoKind {
    #[default]
    Noisy,
    Partial,
}

impl SideInfoKind {
    pub fn with_delta(self, delta: f64) -> Result<SideInfoMode> {
        match self {
            Self::Noisy => SideInfoMode::noisy(delta),
            Self::Partial => SideInfoMode::partial(delta),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    /// Mean offspring matrix of the Galton-Watson tree (`gw_tree`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<Vec<f64>>>,
    /// Community sizes of the SBM (`sbm`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sizes: Option<Vec<usize>>,
    /// Edge probability matrix of the SBM (`sbm`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<Vec<f64>>>,
    /// Dataset file (`polblogs`); defaults to `$WMP_DATA_DIR/polblogs.gml`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub side_info: SideInfoKind,
    pub deltas: Vec<f64>,
    pub depths: Vec<usize>,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    pub estimators: Vec<Estimator>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Options shared by the WMP-family estimators; `depth` is overridden
    /// by the depth grid and `flow` by the estimator.
    #[serde(default)]
    pub wmp: WmpOptions,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.deltas.is_empty() {
            return bad("delta grid is empty");
        }
        if self.depths.is_empty() {
            return bad("depth grid is empty");
        }
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if self.estimators.is_empty() {
            return bad("estimator set is empty");
        }
        for &d in &self.deltas {
            self.side_info
                .with_delta(d)
                .map_err(|_| Error::Config(format!("delta {d} outside (0, 1)")))?;
        }
        match self.scenario {
            Scenario::GwTree => {
                if self.mean.is_none() {
                    return bad("gw_tree needs `mean`");
                }
                if self.estimators.contains(&Estimator::Spectral) {
                    return bad("spectral needs a graph scenario");
                }
                self.mean_matrix()?;
            }
            Scenario::Sbm => {
                self.sbm_params()?;
            }
            Scenario::Polblogs => {}
        }
        if self.estimators.contains(&Estimator::Spectral) && self.side_info != SideInfoKind::Partial
        {
            return bad("spectral needs partial side information");
        }
        Ok(())
    }

    pub fn mean_matrix(&self) -> Result<Matrix> {
        let rows = self
            .mean
            .as_ref()
            .ok_or_else(|| Error::Config("missing `mean`".into()))?;
        Matrix::from_rows(rows).map_err(|e| Error::Config(format!("mean: {e}")))
    }

    pub fn sbm_params(&self) -> Result<SbmParams> {
        match (&self.sizes, &self.probs) {
            (Some(sizes), Some(probs)) => SbmParams::new(sizes.clone(), probs.clone())
                .map_err(|e| Error::Config(format!("sbm: {e}"))),
            _ => Err(Error::Config("sbm needs `sizes` and `probs`".into())),
        }
    }

    /// Settings of the political-blogs replication: partial labels at
    /// three reveal rates, depths 1 to 5, 50 repetitions, uniform-flow
    /// messages against the spectral baseline. Nodes without a usable
    /// label count as errors and revealed nodes are not scored.
    pub fn polblogs(dataset: Option<PathBuf>) -> Self {
        Self {
            scenario: Scenario::Polblogs,
            mean: None,
            sizes: None,
            probs: None,
            dataset,
            side_info: SideInfoKind::Partial,
            deltas: vec![0.1, 0.05, 0.025],
            depths: (1..=5).collect(),
            trials: 50,
            seed: 0,
            estimators: vec![Estimator::AmpUniformFlow, Estimator::Spectral],
            output: None,
            wmp: WmpOptions {
                flow: FlowWeighting::Uniform,
                partial: PartialTreatment::AllRevealed,
                exclude_revealed: true,
                uninformed_as_error: true,
                ..WmpOptions::default()
            },
        }
    }
}

/// The dataset file: `explicit` if given, otherwise `$WMP_DATA_DIR/polblogs.gml`.
pub fn resolve_dataset(explicit: Option<&Path>) -> Result<PathBuf> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None => match std::env::var_os(DATA_DIR_ENV) {
            Some(dir) => PathBuf::from(dir).join(POLBLOGS_FILE),
            None => PathBuf::from(POLBLOGS_FILE),
        },
    };
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::DatasetMissing(path))
    }
}

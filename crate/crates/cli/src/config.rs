//! Experiment configuration file (TOML). Every key mirrors a command-line
//! flag; flags win over the file and `COGMAP_OUT` wins over `out`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub out: PathBuf,
    pub experiment: String,
    pub jobs: usize,
    pub dataset: DatasetConfig,
    pub grid: GridConfig,
    pub training: TrainingConfig,
    pub analysis: AnalysisConfig,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Dataset file; relative paths are taken from the output root.
    pub path: PathBuf,
    pub frames: usize,
    pub size: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub variants: Vec<String>,
    pub tau: Vec<usize>,
    pub zdim: Vec<usize>,
    pub seeds: Vec<u64>,
    pub alpha: f32,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub iters: u64,
    pub batch: usize,
    pub width: usize,
    pub checkpoint_interval: u64,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Samples per frame for the variability probe; 0 disables it.
    pub probe: usize,
    pub probe_seed: u64,
    pub junction_window: usize,
    pub bifurcation: bool,
    /// Side of the PCA image lattice; 0 disables it.
    pub pca_grid: usize,
    pub dream: bool,
    pub dream_step: usize,
    pub dream_iterations: usize,
    pub rollout_starts: Vec<usize>,
    pub sweep: bool,
    pub alphas: Vec<f32>,
    pub sweep_tau: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from("runs"),
            experiment: "default".into(),
            jobs: 1,
            dataset: DatasetConfig::default(),
            grid: GridConfig::default(),
            training: TrainingConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            path: PathBuf::from("maze.bin"),
            frames: 480,
            size: 64,
            seed: 5,
        }
    }
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            variants: vec!["vae".into(), "vaegan".into()],
            tau: vec![0, 5, 30],
            zdim: vec![10],
            seeds: vec![1, 2, 3],
            alpha: 1.0,
        }
    }
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            iters: 10_000,
            batch: 64,
            width: 64,
            checkpoint_interval: 1000,
        }
    }
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            probe: 10,
            probe_seed: 0,
            junction_window: 10,
            bifurcation: true,
            pca_grid: 10,
            dream: true,
            dream_step: 5,
            dream_iterations: 200,
            rollout_starts: vec![0],
            sweep: false,
            alphas: vec![0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0],
            sweep_tau: 5,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if g.variants.is_empty() || g.tau.is_empty() || g.zdim.is_empty() || g.seeds.is_empty() {
            bail!("the model grid is empty");
        }
        if self.jobs == 0 {
            bail!("jobs must be at least 1");
        }
        Ok(())
    }

    /// Dataset file, resolved against the output root when relative.
    pub fn dataset_path(&self) -> PathBuf {
        if self.dataset.path.is_absolute() {
            self.dataset.path.clone()
        } else {
            self.out.join(&self.dataset.path)
        }
    }
}

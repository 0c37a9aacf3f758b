//! Experiment configuration file (TOML).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use iriscap_core::dataset::{Bounds, QualityMetric};
use iriscap_core::synth::PopulationParams;
use iriscap_core::{
    DimensionTag, FeatureLevel, OperatingPoint, QualityMode, QualityPolicy, ResolutionMode,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub experiment_seed: u64,
    /// Output directory; relative paths resolve against the config file.
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub dataset: DatasetSection,
    /// Parameters for `synth`. Dimension and resolution are taken from the
    /// grid instead.
    #[serde(default)]
    pub synth: PopulationParams,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub engine: EngineSection,
    /// ISOQ bounds by metric; missing metrics use the built-in placeholders.
    #[serde(default)]
    pub iso_bounds: BTreeMap<QualityMetric, Bounds>,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// Sample manifest. Defaults to `<out_dir>/manifest.csv`, which is where
    /// `synth` writes.
    pub manifest: Option<PathBuf>,
    /// Template tree. Defaults to `<out_dir>/templates`.
    pub template_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub dimensions: Vec<DimensionTag>,
    pub resolutions: Vec<ResolutionMode>,
    pub qualities: Vec<QualityMode>,
    pub feature_levels: Vec<FeatureLevel>,
    pub operating_points: Vec<OperatingPoint>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            dimensions: DimensionTag::ALL.to_vec(),
            resolutions: ResolutionMode::ALL.to_vec(),
            qualities: QualityMode::ALL.to_vec(),
            feature_levels: FeatureLevel::all().collect(),
            operating_points: OperatingPoint::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineSection {
    pub workers: usize,
    pub chunk_size: u64,
}

impl Default for EngineSection {
    fn default() -> Self {
        Self {
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            chunk_size: 4096,
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub chunk_size: Option<u64>,
}

impl ExperimentConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve(base);
        config.apply(overrides);
        config.validate()?;
        Ok(config)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        if let Some(p) = self.dataset.manifest.as_mut() {
            fix(p);
        }
        if let Some(p) = self.dataset.template_dir.as_mut() {
            fix(p);
        }
    }

    fn apply(&mut self, o: &Overrides) {
        if let Some(out) = &o.out {
            self.out_dir = out.clone();
        }
        if let Some(seed) = o.seed {
            self.experiment_seed = seed;
        }
        if let Some(w) = o.workers {
            self.engine.workers = w;
        }
        if let Some(c) = o.chunk_size {
            self.engine.chunk_size = c;
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let g = &self.grid;
        if g.dimensions.is_empty()
            || g.resolutions.is_empty()
            || g.qualities.is_empty()
            || g.feature_levels.is_empty()
            || g.operating_points.is_empty()
        {
            return Err(CliError::Config(
                "every grid list needs at least one entry".into(),
            ));
        }
        if !g.feature_levels.contains(&FeatureLevel::FULL) {
            return Err(CliError::Config(
                "feature_levels must include 100: thresholds are calibrated there".into(),
            ));
        }
        if self.engine.workers == 0 || self.engine.chunk_size == 0 {
            return Err(CliError::Config(
                "engine workers and chunk_size must be positive".into(),
            ));
        }
        self.synth
            .validate()
            .map_err(|e| CliError::Config(format!("synth: {e}")))?;
        self.quality_policy(QualityMode::Isoq)?;
        Ok(())
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.dataset
            .manifest
            .clone()
            .unwrap_or_else(|| self.out_dir.join("manifest.csv"))
    }

    pub fn template_dir(&self) -> PathBuf {
        self.dataset
            .template_dir
            .clone()
            .unwrap_or_else(|| self.out_dir.join("templates"))
    }

    pub fn quality_policy(&self, mode: QualityMode) -> Result<QualityPolicy, CliError> {
        let mut bounds = QualityPolicy::default_iso_bounds();
        bounds.extend(self.iso_bounds.iter().map(|(k, v)| (*k, *v)));
        QualityPolicy::for_mode(mode, &bounds).map_err(|e| CliError::Config(e.to_string()))
    }

    /// `(dimension, resolution, quality)` triples in report order.
    pub fn triples(&self) -> Vec<(DimensionTag, ResolutionMode, QualityMode)> {
        let mut out = Vec::new();
        for &d in &self.grid.dimensions {
            for &r in &self.grid.resolutions {
                for &q in &self.grid.qualities {
                    out.push((d, r, q));
                }
            }
        }
        out
    }

    /// Feature levels with 100 first, then the rest in descending order.
    pub fn feature_levels(&self) -> Vec<FeatureLevel> {
        let mut v = self.grid.feature_levels.clone();
        v.sort_by(|a, b| b.cmp(a));
        v.dedup();
        v
    }

    /// Operating points tightest first.
    pub fn operating_points(&self) -> Vec<OperatingPoint> {
        let mut v = self.grid.operating_points.clone();
        v.sort_by(|a, b| a.percent().total_cmp(&b.percent()));
        v.dedup();
        v
    }
}

//! Versioned TOML experiment configuration.
//!
//! Unknown keys anywhere are errors. [`ExperimentConfig::resolve`] expands
//! defaults, propagates the master seed and checks cross-field consistency;
//! the resolved form is what reports echo.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::capture::{ExposureModel, Illumination, SceneSpec};
use crate::csa::{CsaPolicy, CsaVariant};
use crate::domain::{PipelineParams, SensorGrid};
use crate::pipeline::augment::{GeometricParams, PhotometricParams};
use crate::pipeline::{Method, SimContext};
use crate::provider::{ReferenceSpec, SyntheticProviderModel};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Worker threads; 0 means one per core.
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub scenes: ScenesConfig,
    #[serde(default)]
    pub grid: SensorGrid,
    #[serde(default)]
    pub exposure: ExposureModel,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub provider: ProviderConfig,
    #[serde(default)]
    pub pipeline: PipelineParams,
    #[serde(default)]
    pub csa: CsaConfig,
    #[serde(default)]
    pub ae: AeConfig,
    #[serde(default)]
    pub latency: LatencyConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_seed() -> u64 {
    42
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            seed: default_seed(),
            workers: 0,
            methods: default_methods(),
            scenes: ScenesConfig::default(),
            grid: SensorGrid::default_grid(),
            exposure: ExposureModel::default(),
            augment: AugmentConfig::default(),
            provider: ProviderConfig::default(),
            pipeline: PipelineParams::default(),
            csa: CsaConfig::default(),
            ae: AeConfig::default(),
            latency: LatencyConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

/// An illumination preset name (`"L3"`) or an explicit level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IlluminationSpec {
    Preset(String),
    Custom(Illumination),
}

impl IlluminationSpec {
    pub fn resolve(&self) -> Result<Illumination> {
        match self {
            IlluminationSpec::Preset(id) => Illumination::preset(id)
                .ok_or_else(|| Error::Config(format!("unknown illumination preset {id:?}"))),
            IlluminationSpec::Custom(l) => Illumination::new(l.level_id.clone(), l.lux_scale),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenesConfig {
    pub n_scenes: usize,
    pub n_classes: usize,
    pub width: usize,
    pub height: usize,
    pub class_spread: f64,
    pub subject_contrast: f64,
    pub illuminations: Vec<IlluminationSpec>,
    /// Load scenes from a JSON scene file instead of generating them.
    pub file: Option<PathBuf>,
}

impl Default for ScenesConfig {
    fn default() -> Self {
        let spec = SceneSpec::default();
        ScenesConfig {
            n_scenes: spec.n_scenes,
            n_classes: spec.n_classes,
            width: spec.width,
            height: spec.height,
            class_spread: spec.class_spread,
            subject_contrast: spec.subject_contrast,
            illuminations: Illumination::presets()
                .into_iter()
                .map(|l| IlluminationSpec::Preset(l.level_id))
                .collect(),
            file: None,
        }
    }
}

impl ScenesConfig {
    pub fn spec(&self, seed: u64) -> SceneSpec {
        SceneSpec {
            seed,
            n_scenes: self.n_scenes,
            n_classes: self.n_classes,
            width: self.width,
            height: self.height,
            class_spread: self.class_spread,
            subject_contrast: self.subject_contrast,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub geometric: GeometricParams,
    pub photometric: PhotometricParams,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Synthetic,
    /// Precomputed embeddings from an MVPF file.
    Embeddings,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    /// MVPF file, required for `kind = "embeddings"`.
    pub embeddings: Option<PathBuf>,
    /// MVPS file; when absent the synthetic provider builds source
    /// statistics from its reference set.
    pub source_stats: Option<PathBuf>,
    pub synthetic: SyntheticProviderModel,
    pub reference: ReferenceSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CsaConfig {
    pub variant: CsaVariant,
    /// Candidate count; defaults to the variant's standard M.
    pub m: Option<usize>,
    /// Independent candidate draws averaged for the random variants.
    pub runs: usize,
}

impl Default for CsaConfig {
    fn default() -> Self {
        CsaConfig {
            variant: CsaVariant::Full,
            m: None,
            runs: 3,
        }
    }
}

impl CsaConfig {
    /// Draws actually performed: one for the deterministic full grid.
    pub fn effective_runs(&self) -> usize {
        if self.variant.is_random() {
            self.runs
        } else {
            1
        }
    }

    pub fn policy(&self, grid: &SensorGrid, seed: u64, run: usize) -> CsaPolicy {
        CsaPolicy {
            variant: self.variant,
            m: self.m.unwrap_or_else(|| self.variant.default_m(grid)),
            seed: crate::rng::hash_parts(&[crate::rng::purpose::CSA, seed, run as u64]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AeConfig {
    pub shots: usize,
}

impl Default for AeConfig {
    fn default() -> Self {
        AeConfig { shots: 5 }
    }
}

/// Compute-latency model: encoder forward passes times a per-pass cost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatencyConfig {
    pub forward_pass_ms: f64,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        LatencyConfig {
            forward_pass_ms: 5.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Directory for report.csv, report.json and timing.json.
    pub dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parse a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::at_path(path))?;
        let mut cfg = Self::from_toml_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(x) = p.as_mut() {
                if x.is_relative() {
                    *x = base.join(&*x);
                }
            }
        };
        rebase(&mut cfg.scenes.file);
        rebase(&mut cfg.provider.embeddings);
        rebase(&mut cfg.provider.source_stats);
        rebase(&mut cfg.output.dir);
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Expand defaults, propagate the master seed and validate everything
    /// that can be checked before any work starts.
    pub fn resolve(mut self) -> Result<Self> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        for (name, value) in [
            ("exposure.seed", self.exposure.seed),
            ("pipeline.seed", self.pipeline.seed),
        ] {
            if value != 0 && value != self.seed {
                return Err(Error::Config(format!(
                    "{name} = {value} conflicts with seed = {}; set the top-level seed only",
                    self.seed
                )));
            }
        }
        self.exposure.seed = self.seed;
        self.pipeline.seed = self.seed;
        let m = self
            .csa
            .m
            .unwrap_or_else(|| self.csa.variant.default_m(&self.grid));
        self.csa.m = Some(m);
        self.pipeline.n_captures = m;
        if self.csa.runs == 0 {
            return Err(Error::Config("csa.runs must be positive".into()));
        }
        self.csa
            .policy(&self.grid, self.seed, 0)
            .validate(&self.grid)?;

        if self.methods.is_empty() {
            return Err(Error::Config("methods must not be empty".into()));
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return Err(Error::Config("methods contains duplicates".into()));
        }
        if self.scenes.illuminations.is_empty() {
            return Err(Error::Config(
                "scenes.illuminations must not be empty".into(),
            ));
        }
        let mut ids = Vec::new();
        for l in &self.scenes.illuminations {
            let l = l.resolve()?;
            if ids.contains(&l.level_id) {
                return Err(Error::Config(format!(
                    "illumination {:?} listed twice",
                    l.level_id
                )));
            }
            ids.push(l.level_id);
        }
        if self.scenes.file.is_none() {
            self.scenes.spec(self.seed).validate()?;
        }
        if self.ae.shots == 0 || self.ae.shots > 0x3fff {
            return Err(Error::Config(format!(
                "ae.shots = {} out of range",
                self.ae.shots
            )));
        }
        if !(self.latency.forward_pass_ms.is_finite() && self.latency.forward_pass_ms >= 0.0) {
            return Err(Error::Config(
                "latency.forward_pass_ms must be non-negative".into(),
            ));
        }
        self.exposure.validate()?;
        self.augment.geometric.validate()?;
        self.augment.photometric.validate()?;
        match self.provider.kind {
            ProviderKind::Synthetic => {
                self.provider.synthetic.validate()?;
                if self.provider.synthetic.n_classes != self.scenes.n_classes {
                    return Err(Error::Config(format!(
                        "provider has {} classes but scenes have {}",
                        self.provider.synthetic.n_classes, self.scenes.n_classes
                    )));
                }
                self.pipeline.validate(self.provider.synthetic.n_layers)?;
            }
            ProviderKind::Embeddings => {
                if self.provider.embeddings.is_none() {
                    return Err(Error::Config(
                        "provider.kind = \"embeddings\" needs provider.embeddings".into(),
                    ));
                }
                if self.provider.source_stats.is_none() {
                    return Err(Error::Config(
                        "provider.kind = \"embeddings\" needs provider.source_stats".into(),
                    ));
                }
                self.pipeline.validate(usize::MAX)?;
            }
        }
        Ok(self)
    }

    pub fn illuminations(&self) -> Result<Vec<Illumination>> {
        self.scenes
            .illuminations
            .iter()
            .map(|l| l.resolve())
            .collect()
    }

    pub fn sim_context(&self) -> SimContext {
        SimContext {
            grid: self.grid.clone(),
            exposure: self.exposure.clone(),
            geometric: self.augment.geometric.clone(),
            photometric: self.augment.photometric.clone(),
            ae_shots: self.ae.shots,
        }
    }
}

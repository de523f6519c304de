//! Feature providers stand in for a frozen visual encoder: a view goes in,
//! per-layer token statistics and class probabilities come out.

mod embedding;
pub mod format;
mod synthetic;

pub use embedding::{EmbeddingProvider, RecordingProvider};
pub use synthetic::{SyntheticProvider, SyntheticProviderModel};

use serde::{Deserialize, Serialize};

use crate::capture::{capture, ExposureModel, Illumination, SceneSpec};
use crate::domain::{Image, LayerRange, LayerStats, SensorConfig, Shutter, SourceStats};
use crate::rng::{self, purpose};
use crate::{Error, Result};

/// Config ranks at or above this value identify auto-exposure shots in
/// view keys: `AE_RANK_BASE + 2 * shot + photometric`.
pub const AE_RANK_BASE: u16 = 0x8000;

/// Identity of one encoded view within an experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ViewKey {
    pub scene_id: u64,
    pub config_rank: u16,
    pub aug_index: u16,
}

impl ViewKey {
    /// Scene field of a key: one value per (scene, illumination level), so a
    /// single embedding file can hold every lighting condition.
    pub fn scene_key(scene_id: u64, illumination: &Illumination) -> u64 {
        rng::hash_parts(&[scene_id, illumination.key()])
    }

    pub fn grid(scene_id: u64, config_rank: u16, aug_index: u16) -> Self {
        ViewKey {
            scene_id,
            config_rank,
            aug_index,
        }
    }

    pub fn ae(scene_id: u64, shot: u32, photometric: bool, aug_index: u16) -> Self {
        ViewKey {
            scene_id,
            config_rank: AE_RANK_BASE + 2 * shot as u16 + photometric as u16,
            aug_index,
        }
    }
}

/// What an encoder sees. The synthetic provider reads the pixels and the
/// scene signature; the file-backed provider only uses the key.
#[derive(Clone, Copy, Debug)]
pub struct ViewInput<'a> {
    pub key: ViewKey,
    pub image: &'a Image,
    pub signature: &'a [f64],
}

pub trait FeatureProvider: Send + Sync {
    fn n_layers(&self) -> usize;

    fn feat_dim(&self) -> usize;

    fn n_classes(&self) -> usize;

    /// False when outputs are looked up by key and pixels can be skipped.
    fn consumes_pixels(&self) -> bool {
        true
    }

    fn predict(&self, view: &ViewInput<'_>) -> Result<Vec<f64>>;

    fn layer_stats(&self, view: &ViewInput<'_>, layers: LayerRange) -> Result<Vec<LayerStats>>;

    fn encode(
        &self,
        view: &ViewInput<'_>,
        layers: LayerRange,
    ) -> Result<(Vec<LayerStats>, Vec<f64>)> {
        Ok((self.layer_stats(view, layers)?, self.predict(view)?))
    }

    fn all_layers(&self) -> LayerRange {
        LayerRange::first_n(self.n_layers()).expect("providers have at least one layer")
    }
}

/// Source reference: per layer, the mean of per-view means and the mean of
/// per-view variances over the reference set.
pub fn build_source_stats(
    provider: &dyn FeatureProvider,
    reference: &[ViewInput<'_>],
    layers: LayerRange,
    provenance: impl Into<String>,
) -> Result<SourceStats> {
    if reference.is_empty() {
        return Err(Error::InvalidParam("reference set is empty".into()));
    }
    layers.check_available(provider.n_layers())?;
    let dim = provider.feat_dim();
    let mut mean = vec![vec![0.0; dim]; layers.len()];
    let mut var = vec![vec![0.0; dim]; layers.len()];
    for v in reference {
        let stats = provider.layer_stats(v, layers)?;
        if stats.len() != layers.len() {
            return Err(Error::LayerBound {
                requested: layers.to_string(),
                available: stats.len(),
            });
        }
        for (i, ls) in stats.iter().enumerate() {
            if ls.dim() != dim {
                return Err(Error::Dimension(format!(
                    "layer {} has {} dims, provider declares {dim}",
                    ls.layer,
                    ls.dim()
                )));
            }
            for d in 0..dim {
                mean[i][d] += ls.mean[d];
                var[i][d] += ls.var[d];
            }
        }
    }
    let n = reference.len() as f64;
    let per_layer = mean
        .into_iter()
        .zip(var)
        .enumerate()
        .map(|(i, (m, v))| {
            LayerStats::new(
                layers.first() + i,
                m.into_iter().map(|x| x / n).collect(),
                v.into_iter().map(|x| x / n).collect(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    SourceStats::new(per_layer, provenance)
}

/// How the synthetic reference set is generated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReferenceSpec {
    pub n_views: usize,
    pub seed: u64,
}

impl Default for ReferenceSpec {
    fn default() -> Self {
        ReferenceSpec {
            n_views: 1000,
            seed: 0,
        }
    }
}

/// A reference view with owned pixels and signature.
#[derive(Clone, Debug)]
pub struct ReferenceView {
    pub key: ViewKey,
    pub image: Image,
    pub signature: Vec<f64>,
}

impl ReferenceView {
    pub fn input(&self) -> ViewInput<'_> {
        ViewInput {
            key: self.key,
            image: &self.image,
            signature: &self.signature,
        }
    }
}

/// Perfectly exposed captures of random scenes: each scene is lit so the
/// subject under the reference config (1/60 s, f/5 at the reference ISO)
/// lands exactly on `e_opt`.
pub fn ideal_reference_views(
    spec: &ReferenceSpec,
    scenes: &SceneSpec,
    model: &ExposureModel,
) -> Vec<ReferenceView> {
    let cfg = SensorConfig::new(
        model.iso_ref.round().max(1.0) as u32,
        Shutter::new(1, 60).expect("valid"),
        5.0,
    )
    .expect("valid");
    let scene_spec = SceneSpec {
        seed: rng::hash_parts(&[purpose::REFERENCE, spec.seed]),
        n_scenes: spec.n_views,
        ..scenes.clone()
    };
    let model = ExposureModel {
        seed: rng::hash_parts(&[purpose::REFERENCE, spec.seed, 1]),
        ..model.clone()
    };
    (0..spec.n_views)
        .map(|i| {
            let scene = crate::capture::generate_scene(&scene_spec, i);
            let factor = cfg.shutter_s() / (cfg.aperture_f * cfg.aperture_f)
                * (cfg.iso as f64 / model.iso_ref);
            let lux = model.e_opt.exp() / (scene.radiance.subject_mean() * factor);
            let illum = Illumination::new("reference", lux).expect("positive lux");
            let mut r = rng::stream(model.seed, &[purpose::REFERENCE, i as u64]);
            let view = capture(&scene, &illum, &cfg, &model, &mut r);
            ReferenceView {
                key: ViewKey::grid(i as u64, 0, 0),
                image: view.image,
                signature: scene.signature,
            }
        })
        .collect()
}

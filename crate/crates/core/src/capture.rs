//! Scene to measurement: exposure, photon shot noise, read noise, clipping,
//! and the auto-exposure baseline.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::domain::{is_nonnegative, Image, PhysicalView, SensorConfig, SensorGrid};
use crate::rng::{self, purpose};
use crate::{Error, Result};

/// Above this mean photon count the Poisson draw is replaced by its normal
/// approximation.
pub const POISSON_NORMAL_SWITCH: f64 = 50.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: u64,
    pub true_label: usize,
    pub radiance: SceneRadiance,
    /// Unit-norm class-discriminative latent, one entry per class.
    pub signature: Vec<f64>,
}

/// Relative luminance map, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneRadiance {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl SceneRadiance {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Mean over the central subject window.
    pub fn subject_mean(&self) -> f64 {
        let (xs, ys) = crate::domain::central_window(self.width, self.height);
        let n = (xs.len() * ys.len()) as f64;
        ys.flat_map(|y| xs.clone().map(move |x| (x, y)))
            .map(|(x, y)| self.values[y * self.width + x])
            .sum::<f64>()
            / n
    }
}

impl Scene {
    pub fn new(
        scene_id: u64,
        true_label: usize,
        radiance: SceneRadiance,
        signature: Vec<f64>,
    ) -> Result<Self> {
        if radiance.values.len() != radiance.width * radiance.height || radiance.values.is_empty() {
            return Err(Error::Dimension(format!(
                "scene {scene_id}: radiance map {}x{} has {} values",
                radiance.width,
                radiance.height,
                radiance.values.len()
            )));
        }
        if radiance
            .values
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::InvalidParam(format!(
                "scene {scene_id}: radiance must be finite and non-negative"
            )));
        }
        if radiance.mean().is_nan() || radiance.mean() <= 0.0 {
            return Err(Error::InvalidParam(format!(
                "scene {scene_id}: radiance is all zero"
            )));
        }
        if true_label >= signature.len() {
            return Err(Error::InvalidParam(format!(
                "scene {scene_id}: label {true_label} outside {} classes",
                signature.len()
            )));
        }
        let norm = signature.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParam(format!(
                "scene {scene_id}: signature norm {norm} != 1"
            )));
        }
        Ok(Scene {
            scene_id,
            true_label,
            radiance,
            signature,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.signature.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Illumination {
    pub level_id: String,
    pub lux_scale: f64,
}

impl Illumination {
    pub fn new(level_id: impl Into<String>, lux_scale: f64) -> Result<Self> {
        if !(lux_scale.is_finite() && lux_scale > 0.0) {
            return Err(Error::InvalidParam(format!(
                "lux_scale {lux_scale} must be positive"
            )));
        }
        Ok(Illumination {
            level_id: level_id.into(),
            lux_scale,
        })
    }

    /// Six levels L1..L6, log-spaced over three decades starting at 0.5.
    pub fn presets() -> Vec<Illumination> {
        (0..6)
            .map(|i| Illumination {
                level_id: format!("L{}", i + 1),
                lux_scale: 0.5 * 10f64.powf(3.0 * i as f64 / 5.0),
            })
            .collect()
    }

    pub fn preset(level_id: &str) -> Option<Illumination> {
        Illumination::presets()
            .into_iter()
            .find(|l| l.level_id == level_id)
    }

    /// Stable numeric identity of the level, derived from its id.
    pub fn key(&self) -> u64 {
        rng::hash_str(&self.level_id)
    }
}

/// Sensor response model.
///
/// The pixel mean before clipping equals `exp(E)` where `E` is [`exposure`];
/// `e_opt` is the log-exposure of a well-formed measurement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExposureModel {
    pub e_opt: f64,
    /// Read-noise standard deviation at the reference gain, in output units.
    pub sigma_read: f64,
    pub iso_ref: f64,
    pub full_well: f64,
    /// Photons per unit of pre-gain signal; 0 disables shot noise.
    pub photon_scale: f64,
    pub seed: u64,
}

impl Default for ExposureModel {
    fn default() -> Self {
        ExposureModel {
            e_opt: 0.25f64.ln(),
            sigma_read: 0.001,
            iso_ref: 250.0,
            full_well: 1.0,
            photon_scale: 20_000.0,
            seed: 0,
        }
    }
}

impl ExposureModel {
    pub fn noiseless() -> Self {
        ExposureModel {
            sigma_read: 0.0,
            photon_scale: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.e_opt.is_finite()
            && self.sigma_read >= 0.0
            && self.iso_ref > 0.0
            && self.full_well > 0.0
            && self.photon_scale >= 0.0;
        if !ok {
            return Err(Error::InvalidParam(format!(
                "invalid exposure model {self:?}"
            )));
        }
        Ok(())
    }

    fn gain(&self, cfg: &SensorConfig) -> f64 {
        cfg.iso as f64 / self.iso_ref
    }
}

/// Light-gathering factor of a config relative to the reference gain.
fn exposure_factor(cfg: &SensorConfig, model: &ExposureModel) -> f64 {
    cfg.shutter_s() / (cfg.aperture_f * cfg.aperture_f) * model.gain(cfg)
}

/// Log-exposure `ln(mean radiance * lux * shutter / f^2 * iso / iso_ref)`.
pub fn exposure(
    scene: &Scene,
    illum: &Illumination,
    cfg: &SensorConfig,
    model: &ExposureModel,
) -> f64 {
    (scene.radiance.mean() * illum.lux_scale * exposure_factor(cfg, model)).ln()
}

/// RNG stream for one capture; shot 0 is the canonical capture of a config.
pub fn capture_stream(
    model: &ExposureModel,
    scene: &Scene,
    illum: &Illumination,
    config_rank: u16,
    shot: u32,
) -> rand_chacha::ChaCha8Rng {
    rng::stream(
        model.seed,
        &[
            purpose::CAPTURE,
            scene.scene_id,
            illum.key(),
            config_rank as u64,
            shot as u64,
        ],
    )
}

/// Simulate one measurement.
pub fn capture<R: Rng + ?Sized>(
    scene: &Scene,
    illum: &Illumination,
    cfg: &SensorConfig,
    model: &ExposureModel,
    rng: &mut R,
) -> PhysicalView {
    let gain = model.gain(cfg);
    let pre_gain = illum.lux_scale * cfg.shutter_s() / (cfg.aperture_f * cfg.aperture_f);
    let read = model.sigma_read * gain;
    let q = model.photon_scale;
    let data = scene
        .radiance
        .values
        .iter()
        .map(|&r| {
            let signal = r * pre_gain;
            let measured = if q > 0.0 {
                let mean = signal * q;
                let photons = if mean <= 0.0 {
                    0.0
                } else if mean > POISSON_NORMAL_SWITCH {
                    let z: f64 = StandardNormal.sample(rng);
                    (mean + mean.sqrt() * z).max(0.0)
                } else {
                    Poisson::new(mean).expect("positive mean").sample(rng)
                };
                photons / q
            } else {
                signal
            };
            let noise = if read > 0.0 {
                Normal::new(0.0, read).expect("positive sigma").sample(rng)
            } else {
                0.0
            };
            ((gain * measured + noise) / model.full_well).clamp(0.0, 1.0)
        })
        .collect();
    PhysicalView {
        config: *cfg,
        image: Image::new(scene.radiance.width, scene.radiance.height, data)
            .expect("radiance dims are consistent"),
        scene_id: scene.scene_id,
    }
}

/// Grid config minimizing |E - e_opt|, ties to the canonically smaller config.
pub fn auto_exposure(
    scene: &Scene,
    illum: &Illumination,
    grid: &SensorGrid,
    model: &ExposureModel,
) -> SensorConfig {
    let mut best: Option<(f64, SensorConfig)> = None;
    for cfg in grid.configs() {
        let err = (exposure(scene, illum, &cfg, model) - model.e_opt).abs();
        if best.is_none_or(|(b, _)| err < b) {
            best = Some((err, cfg));
        }
    }
    best.expect("grid is never empty").1
}

/// Independent shots at the auto-exposure config.
pub fn ae_protocol(
    scene: &Scene,
    illum: &Illumination,
    grid: &SensorGrid,
    model: &ExposureModel,
    n_shots: usize,
) -> Vec<PhysicalView> {
    let cfg = auto_exposure(scene, illum, grid, model);
    let rank = grid.rank(&cfg).expect("AE config is on the grid");
    (0..n_shots)
        .map(|shot| {
            let mut rng = capture_stream(model, scene, illum, rank, shot as u32);
            capture(scene, illum, &cfg, model, &mut rng)
        })
        .collect()
}

/// Procedural scene set parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub seed: u64,
    pub n_scenes: usize,
    pub n_classes: usize,
    pub width: usize,
    pub height: usize,
    /// Norm of the within-class perturbation added to the class axis.
    pub class_spread: f64,
    /// Standard deviation (nats) of the subject's log-brightness relative to
    /// the background.
    pub subject_contrast: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            seed: 42,
            n_scenes: 1000,
            n_classes: 50,
            width: 16,
            height: 16,
            class_spread: 1.0,
            subject_contrast: 3.0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2
            || self.width < 2
            || self.height < 2
            || !is_nonnegative(self.class_spread)
            || !(self.subject_contrast >= 0.0 && self.subject_contrast.is_finite())
        {
            return Err(Error::InvalidParam(format!("invalid scene spec {self:?}")));
        }
        Ok(())
    }
}

/// Generate scene `index` of a procedural set. Each scene has its own stream,
/// so scene `i` is the same whatever `n_scenes` is.
pub fn generate_scene(spec: &SceneSpec, index: usize) -> Scene {
    let mut rng = rng::stream(spec.seed, &[purpose::SCENE, index as u64]);
    let c = spec.n_classes;
    let label = rng.random_range(0..c);

    // Smooth field: base reflectance times a few low-frequency cosines.
    let base = (rng.random_range(0.5f64.ln()..2f64.ln())).exp();
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.0..0.2),
                rng.random_range(-1.5..1.5),
                rng.random_range(-1.5..1.5),
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let z: f64 = StandardNormal.sample(&mut rng);
    let subject = (spec.subject_contrast * z).exp();
    let (w, h) = (spec.width, spec.height);
    let (xs, ys) = crate::domain::central_window(w, h);
    let mut values = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = (x as f64 / w as f64, y as f64 / h as f64);
            let mut m = 1.0;
            for &(a, fx, fy, ph) in &waves {
                m += a * (std::f64::consts::TAU * (fx * u + fy * v) + ph).cos();
            }
            let lit = if xs.contains(&x) && ys.contains(&y) {
                subject
            } else {
                1.0
            };
            values.push(base * m * lit);
        }
    }

    // Signature: class axis plus a random perturbation, resampled until the
    // class axis is still the largest coordinate.
    let signature = loop {
        let mut s: Vec<f64> = (0..c)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * spec.class_spread / (c as f64).sqrt()
            })
            .collect();
        s[label] += 1.0;
        let norm = s.iter().map(|x| x * x).sum::<f64>().sqrt();
        s.iter_mut().for_each(|x| *x /= norm);
        if crate::domain::argmax(&s) == label {
            break s;
        }
    };

    Scene {
        scene_id: index as u64,
        true_label: label,
        radiance: SceneRadiance {
            width: w,
            height: h,
            values,
        },
        signature,
    }
}

pub fn generate_scenes(spec: &SceneSpec) -> Vec<Scene> {
    (0..spec.n_scenes)
        .map(|i| generate_scene(spec, i))
        .collect()
}

/// On-disk scene set (JSON).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub schema_version: u32,
    pub n_classes: usize,
    pub scenes: Vec<Scene>,
}

impl SceneFile {
    pub const VERSION: u32 = 1;

    pub fn load(path: &std::path::Path) -> Result<Vec<Scene>> {
        let text = std::fs::read_to_string(path).map_err(Error::at_path(path))?;
        let file: SceneFile = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if file.schema_version != Self::VERSION {
            return Err(Error::Config(format!(
                "{}: unsupported scene file version {}",
                path.display(),
                file.schema_version
            )));
        }
        file.scenes
            .into_iter()
            .map(|s| {
                if s.signature.len() != file.n_classes {
                    return Err(Error::Dimension(format!(
                        "scene {} has {} signature entries, file declares {} classes",
                        s.scene_id,
                        s.signature.len(),
                        file.n_classes
                    )));
                }
                Scene::new(s.scene_id, s.true_label, s.radiance, s.signature)
            })
            .collect()
    }

    pub fn save(path: &std::path::Path, scenes: &[Scene]) -> Result<()> {
        let file = SceneFile {
            schema_version: Self::VERSION,
            n_classes: scenes.first().map_or(0, |s| s.n_classes()),
            scenes: scenes.to_vec(),
        };
        std::fs::write(path, serde_json::to_string(&file)?).map_err(Error::at_path(path))
    }
}

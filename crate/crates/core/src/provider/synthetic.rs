//! Desk-scale encoder whose behavior follows the exposure quality of the
//! pixels it is given.
//!
//! From the image it estimates log-exposure, clipped fraction and relative
//! noise, and folds them into an effective exposure error `d`. Shallow layer
//! statistics drift from the source along a fixed direction in proportion to
//! `d`; deep layers drift by a seeded oscillation of the exposure estimate.
//! Logits are the scene signature scaled by a bell-shaped quality `q(d)`,
//! a pull toward the scene's runner-up class as quality drops, and noise.
//! Badly exposed views are, with probability `overconf_prob`, replaced by
//! a near one-hot prediction on that runner-up class.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{FeatureProvider, ViewInput};
use crate::domain::{Image, LayerRange, LayerStats};
use crate::rng::{self, purpose, SplitMix};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticProviderModel {
    pub n_classes: usize,
    pub n_layers: usize,
    /// Layers 1..=n_smooth_layers drift smoothly with exposure error.
    pub n_smooth_layers: usize,
    pub feat_dim: usize,
    /// Log-exposure the encoder is tuned to.
    pub e_opt: f64,
    pub drift_gain: f64,
    pub deep_gain: f64,
    pub token_noise: f64,
    pub class_margin: f64,
    pub logit_noise: f64,
    /// Extra logit noise per unit of relative pixel noise.
    pub noise_gain: f64,
    pub confusion_bias: f64,
    /// Amplitude of a per-scene logit perturbation that oscillates with the
    /// exposure estimate, so captures at different exposures err differently.
    pub nuisance_gain: f64,
    /// Width (nats) of the quality bell around zero exposure error.
    pub quality_width: f64,
    pub saturation_weight: f64,
    /// Weight of relative pixel noise in the effective exposure error.
    pub noise_weight: f64,
    /// Effective exposure error above which a view counts as badly exposed.
    pub bad_threshold: f64,
    pub overconf_prob: f64,
    pub seed: u64,
}

impl Default for SyntheticProviderModel {
    fn default() -> Self {
        SyntheticProviderModel {
            n_classes: 50,
            n_layers: 6,
            n_smooth_layers: 3,
            feat_dim: 64,
            e_opt: 0.25f64.ln(),
            drift_gain: 1.0,
            deep_gain: 2.0,
            token_noise: 0.05,
            class_margin: 20.0,
            logit_noise: 1.0,
            noise_gain: 4.0,
            confusion_bias: 4.0,
            nuisance_gain: 6.0,
            quality_width: 2.5,
            saturation_weight: 3.0,
            noise_weight: 4.0,
            bad_threshold: 2.5,
            overconf_prob: 0.2,
            seed: 0,
        }
    }
}

impl SyntheticProviderModel {
    /// Exposure-blind, noiseless encoder: always predicts the signature's argmax
    /// and reports source statistics exactly.
    pub fn ideal() -> Self {
        SyntheticProviderModel {
            drift_gain: 0.0,
            deep_gain: 0.0,
            token_noise: 0.0,
            logit_noise: 0.0,
            noise_gain: 0.0,
            confusion_bias: 0.0,
            nuisance_gain: 0.0,
            quality_width: f64::INFINITY,
            overconf_prob: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let gains = [
            self.drift_gain,
            self.deep_gain,
            self.token_noise,
            self.class_margin,
            self.logit_noise,
            self.noise_gain,
            self.confusion_bias,
            self.nuisance_gain,
            self.saturation_weight,
            self.noise_weight,
        ];
        if gains.iter().any(|g| !(*g >= 0.0 && g.is_finite()))
            || !(0.0..=1.0).contains(&self.overconf_prob)
            || self.quality_width.is_nan()
            || self.quality_width <= 0.0
            || self.n_classes < 2
            || self.n_layers == 0
            || self.n_smooth_layers > self.n_layers
            || self.feat_dim == 0
        {
            return Err(Error::InvalidParam(format!(
                "invalid synthetic provider model {self:?}"
            )));
        }
        Ok(())
    }
}

/// Image-derived exposure assessment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Assessment {
    pub e_est: f64,
    pub saturated: f64,
    pub rel_noise: f64,
    /// Effective exposure error.
    pub error: f64,
    pub quality: f64,
    pub hash: u64,
}

pub struct SyntheticProvider {
    model: SyntheticProviderModel,
    source_mean: Vec<Vec<f64>>,
    source_var: Vec<Vec<f64>>,
    mean_dir: Vec<Vec<f64>>,
    var_dir: Vec<Vec<f64>>,
    /// Per deep layer: (frequency, phase) of the exposure oscillation.
    deep_wave: Vec<(f64, f64)>,
}

impl SyntheticProvider {
    pub fn new(model: SyntheticProviderModel) -> Result<Self> {
        model.validate()?;
        let mut sm = SplitMix::new(rng::hash_parts(&[purpose::PROVIDER, model.seed]));
        let (l, d) = (model.n_layers, model.feat_dim);
        let mut unit = |nonneg: bool| {
            let mut v: Vec<f64> = (0..d)
                .map(|_| {
                    let x = sm.normal();
                    if nonneg {
                        x.abs()
                    } else {
                        x
                    }
                })
                .collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= n);
            v
        };
        let mean_dir = (0..l).map(|_| unit(false)).collect();
        let var_dir = (0..l).map(|_| unit(true)).collect();
        let source_mean = (0..l)
            .map(|_| (0..d).map(|_| sm.normal() as f32 as f64).collect())
            .collect();
        let source_var = (0..l)
            .map(|_| (0..d).map(|_| (0.5 + sm.unit()) as f32 as f64).collect())
            .collect();
        let deep_wave = (0..l)
            .map(|_| (2.0 + 3.0 * sm.unit(), std::f64::consts::TAU * sm.unit()))
            .collect();
        Ok(SyntheticProvider {
            model,
            source_mean,
            source_var,
            mean_dir,
            var_dir,
            deep_wave,
        })
    }

    pub fn model(&self) -> &SyntheticProviderModel {
        &self.model
    }

    /// The latent source statistics the encoder drifts away from.
    pub fn latent_source(&self, layer: usize) -> (&[f64], &[f64]) {
        (&self.source_mean[layer - 1], &self.source_var[layer - 1])
    }

    pub(crate) fn assess(&self, image: &Image, signature: &[f64]) -> Assessment {
        // Exposure is judged on the central subject window only.
        let px = image.pixels();
        let w = image.width();
        let (xs, ys) = crate::domain::central_window(w, image.height());
        let mut sum = 0.0;
        let mut sat = 0usize;
        let mut diff = 0.0;
        let mut pairs = 0usize;
        for y in ys.clone() {
            let row = &px[y * w + xs.start..y * w + xs.end];
            let mut prev = f64::NAN;
            for &p in row {
                sum += p;
                sat += (p >= 1.0) as usize;
                if !prev.is_nan() {
                    diff += (p - prev).abs();
                }
                prev = p;
            }
            pairs += row.len().saturating_sub(1);
        }
        let n = (xs.len() * ys.len()).max(1) as f64;
        let mean = sum / n;
        // E|X - Y| = 2 sigma / sqrt(pi) for iid normal neighbours.
        let sigma = if pairs > 0 {
            diff / pairs as f64 * std::f64::consts::PI.sqrt() / 2.0
        } else {
            0.0
        };
        let rel_noise = sigma / mean.max(1e-3);
        let saturated = sat as f64 / n;
        let e_est = mean.max(1e-4).ln();
        let m = &self.model;
        let error =
            (e_est - m.e_opt).abs() + m.saturation_weight * saturated + m.noise_weight * rel_noise;
        let quality = if m.quality_width.is_infinite() {
            1.0
        } else {
            (-0.5 * (error / m.quality_width).powi(2)).exp()
        };

        let mut hash = rng::hash_parts(&[
            m.seed,
            sum.to_bits(),
            diff.to_bits(),
            sat as u64,
            px.len() as u64,
        ]);
        let stride = (px.len() / 8).max(1);
        for p in px.iter().step_by(stride) {
            hash = rng::mix64(hash ^ p.to_bits());
        }
        for s in signature.iter().take(4) {
            hash = rng::mix64(hash ^ s.to_bits());
        }
        Assessment {
            e_est,
            saturated,
            rel_noise,
            error,
            quality,
            hash,
        }
    }

    fn check_signature(&self, view: &ViewInput<'_>) -> Result<()> {
        if view.signature.len() != self.model.n_classes {
            return Err(Error::Dimension(format!(
                "view {:?} has a {}-dim signature, provider has {} classes",
                view.key,
                view.signature.len(),
                self.model.n_classes
            )));
        }
        Ok(())
    }

    pub(crate) fn probs_for(&self, a: &Assessment, signature: &[f64]) -> Vec<f64> {
        let m = &self.model;
        let c = m.n_classes;
        let (_, runner_up) = top_two(signature);
        let mut sm = SplitMix::new(a.hash ^ 0x4f56_4552);
        let bad = a.error > m.bad_threshold;
        if bad && sm.unit() < m.overconf_prob {
            let peak = 0.955 + 0.04 * sm.unit();
            let rest = (1.0 - peak) / (c - 1) as f64;
            let mut p = vec![rest; c];
            p[runner_up] = peak;
            return to_f32_precision(p);
        }
        let sigma = m.logit_noise * (1.0 + m.noise_gain * a.rel_noise);
        let mut z: Vec<f64> = signature
            .iter()
            .map(|s| m.class_margin * a.quality * s)
            .collect();
        z[runner_up] += m.confusion_bias * (1.0 - a.quality);
        if m.nuisance_gain > 0.0 {
            let seed = signature
                .iter()
                .take(4)
                .fold(rng::hash_parts(&[m.seed, purpose::PROVIDER]), |h, s| {
                    rng::mix64(h ^ s.to_bits())
                });
            let mut wave = SplitMix::new(seed);
            for zc in z.iter_mut() {
                let freq = 2.0 + 3.0 * wave.unit();
                let phase = std::f64::consts::TAU * wave.unit();
                *zc += m.nuisance_gain * (freq * a.e_est + phase).sin();
            }
        }
        if sigma > 0.0 {
            for zc in z.iter_mut() {
                let g: f64 = StandardNormal.sample(&mut sm);
                *zc += sigma * g;
            }
        }
        to_f32_precision(softmax(&z))
    }

    fn stats_for(&self, a: &Assessment, layers: LayerRange) -> Vec<LayerStats> {
        let m = &self.model;
        layers
            .iter()
            .map(|layer| {
                let i = layer - 1;
                let drift = if layer <= m.n_smooth_layers {
                    m.drift_gain * a.error
                } else {
                    let (freq, phase) = self.deep_wave[i];
                    m.deep_gain * (freq * a.e_est + phase).sin().abs()
                };
                let mut sm = SplitMix::new(rng::mix64(a.hash ^ layer as u64));
                let (sm_, sv_) = (&self.source_mean[i], &self.source_var[i]);
                let (md, vd) = (&self.mean_dir[i], &self.var_dir[i]);
                let mut mean = Vec::with_capacity(m.feat_dim);
                let mut var = Vec::with_capacity(m.feat_dim);
                for d in 0..m.feat_dim {
                    let (nm, nv) = if m.token_noise > 0.0 {
                        (m.token_noise * sm.centered(), m.token_noise * sm.centered())
                    } else {
                        (0.0, 0.0)
                    };
                    mean.push((sm_[d] + drift * md[d] + nm) as f32 as f64);
                    var.push((sv_[d] + drift * vd[d] + nv).max(0.0) as f32 as f64);
                }
                LayerStats { layer, mean, var }
            })
            .collect()
    }
}

/// Outputs are carried at f32 precision so an exported embedding file
/// reproduces them bit for bit.
fn to_f32_precision(mut p: Vec<f64>) -> Vec<f64> {
    p.iter_mut().for_each(|x| *x = *x as f32 as f64);
    p
}

fn top_two(xs: &[f64]) -> (usize, usize) {
    let top = crate::domain::argmax(xs);
    let mut second = if top == 0 { 1 } else { 0 };
    for (i, &x) in xs.iter().enumerate() {
        if i != top && x > xs[second] {
            second = i;
        }
    }
    (top, second)
}

pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = z.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
    p
}

impl FeatureProvider for SyntheticProvider {
    fn n_layers(&self) -> usize {
        self.model.n_layers
    }

    fn feat_dim(&self) -> usize {
        self.model.feat_dim
    }

    fn n_classes(&self) -> usize {
        self.model.n_classes
    }

    fn predict(&self, view: &ViewInput<'_>) -> Result<Vec<f64>> {
        self.check_signature(view)?;
        let a = self.assess(view.image, view.signature);
        Ok(self.probs_for(&a, view.signature))
    }

    fn layer_stats(&self, view: &ViewInput<'_>, layers: LayerRange) -> Result<Vec<LayerStats>> {
        layers.check_available(self.model.n_layers)?;
        self.check_signature(view)?;
        let a = self.assess(view.image, view.signature);
        Ok(self.stats_for(&a, layers))
    }

    fn encode(
        &self,
        view: &ViewInput<'_>,
        layers: LayerRange,
    ) -> Result<(Vec<LayerStats>, Vec<f64>)> {
        layers.check_available(self.model.n_layers)?;
        self.check_signature(view)?;
        let a = self.assess(view.image, view.signature);
        Ok((
            self.stats_for(&a, layers),
            self.probs_for(&a, view.signature),
        ))
    }
}

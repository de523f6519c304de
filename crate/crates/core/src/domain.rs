//! Value types shared across the simulator, pipeline and harness.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::pipeline::select::shannon_entropy;
use crate::{Error, Result};

/// Exact exposure duration in seconds.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Shutter(Ratio<u64>);

impl Shutter {
    pub fn new(numer: u64, denom: u64) -> Result<Self> {
        if numer == 0 || denom == 0 {
            return Err(Error::InvalidParam(format!(
                "shutter {numer}/{denom} must be a positive duration"
            )));
        }
        Ok(Shutter(Ratio::new(numer, denom)))
    }

    pub fn ratio(&self) -> Ratio<u64> {
        self.0
    }

    pub fn seconds(&self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }
}

impl fmt::Debug for Shutter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for Shutter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self.0.denom() == 1 {
            write!(f, "{}", self.0.numer())
        } else {
            write!(f, "{}/{}", self.0.numer(), self.0.denom())
        }
    }
}

impl FromStr for Shutter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParam(format!("cannot parse shutter duration {s:?}"));
        let s = s.trim();
        match s.split_once('/') {
            Some((n, d)) => Shutter::new(
                n.trim().parse().map_err(|_| bad())?,
                d.trim().parse().map_err(|_| bad())?,
            ),
            None => Shutter::new(s.parse().map_err(|_| bad())?, 1),
        }
    }
}

impl Serialize for Shutter {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Shutter {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One exposure-triangle setting.
///
/// Ordering is the canonical order used for every tie-break in the crate:
/// ascending ISO, then shutter duration, then f-number.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SensorConfig {
    pub iso: u32,
    pub shutter: Shutter,
    pub aperture_f: f64,
}

impl SensorConfig {
    pub fn new(iso: u32, shutter: Shutter, aperture_f: f64) -> Result<Self> {
        if iso == 0 {
            return Err(Error::InvalidParam("iso must be positive".into()));
        }
        if !(aperture_f.is_finite() && aperture_f > 0.0) {
            return Err(Error::InvalidParam(format!(
                "aperture f-number {aperture_f} must be positive and finite"
            )));
        }
        Ok(SensorConfig {
            iso,
            shutter,
            aperture_f,
        })
    }

    pub fn shutter_s(&self) -> f64 {
        self.shutter.seconds()
    }
}

impl fmt::Display for SensorConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ISO{} {}s f/{}", self.iso, self.shutter, self.aperture_f)
    }
}

pub fn canonical_order(a: &SensorConfig, b: &SensorConfig) -> Ordering {
    a.iso
        .cmp(&b.iso)
        .then_with(|| a.shutter.cmp(&b.shutter))
        .then_with(|| a.aperture_f.total_cmp(&b.aperture_f))
}

impl PartialEq for SensorConfig {
    fn eq(&self, other: &Self) -> bool {
        canonical_order(self, other) == Ordering::Equal
    }
}

impl Eq for SensorConfig {}

impl PartialOrd for SensorConfig {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SensorConfig {
    fn cmp(&self, other: &Self) -> Ordering {
        canonical_order(self, other)
    }
}

/// Discrete capture grid. Levels are kept sorted and deduplicated, so the
/// enumeration order is independent of the order levels were supplied in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridLevels", into = "GridLevels")]
pub struct SensorGrid {
    iso_levels: Vec<u32>,
    shutter_levels: Vec<Shutter>,
    aperture_levels: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridLevels {
    iso: Vec<u32>,
    shutter: Vec<Shutter>,
    aperture: Vec<f64>,
}

impl TryFrom<GridLevels> for SensorGrid {
    type Error = Error;

    fn try_from(g: GridLevels) -> Result<Self> {
        SensorGrid::new(g.iso, g.shutter, g.aperture)
    }
}

impl From<SensorGrid> for GridLevels {
    fn from(g: SensorGrid) -> Self {
        GridLevels {
            iso: g.iso_levels,
            shutter: g.shutter_levels,
            aperture: g.aperture_levels,
        }
    }
}

impl SensorGrid {
    pub fn new(
        mut iso: Vec<u32>,
        mut shutter: Vec<Shutter>,
        mut aperture: Vec<f64>,
    ) -> Result<Self> {
        if iso.is_empty() || shutter.is_empty() || aperture.is_empty() {
            return Err(Error::InvalidParam(
                "every grid axis needs at least one level".into(),
            ));
        }
        for &a in &aperture {
            SensorConfig::new(1, shutter[0], a)?;
        }
        if iso.contains(&0) {
            return Err(Error::InvalidParam("iso levels must be positive".into()));
        }
        iso.sort_unstable();
        iso.dedup();
        shutter.sort_unstable();
        shutter.dedup();
        aperture.sort_by(f64::total_cmp);
        aperture.dedup();
        Ok(SensorGrid {
            iso_levels: iso,
            shutter_levels: shutter,
            aperture_levels: aperture,
        })
    }

    /// ISO {250, 2000, 16000} x shutter {1/1000, 1/60, 1/4} x f/{5, 9, 16}.
    pub fn default_grid() -> Self {
        SensorGrid::new(
            vec![250, 2000, 16000],
            vec![
                Shutter::new(1, 1000).unwrap(),
                Shutter::new(1, 60).unwrap(),
                Shutter::new(1, 4).unwrap(),
            ],
            vec![5.0, 9.0, 16.0],
        )
        .expect("default grid is valid")
    }

    pub fn iso_levels(&self) -> &[u32] {
        &self.iso_levels
    }

    pub fn shutter_levels(&self) -> &[Shutter] {
        &self.shutter_levels
    }

    pub fn aperture_levels(&self) -> &[f64] {
        &self.aperture_levels
    }

    pub fn len(&self) -> usize {
        self.iso_levels.len() * self.shutter_levels.len() * self.aperture_levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All configs in canonical order; a config's position is its rank.
    pub fn configs(&self) -> Vec<SensorConfig> {
        let mut out = Vec::with_capacity(self.len());
        for &iso in &self.iso_levels {
            for &shutter in &self.shutter_levels {
                for &aperture_f in &self.aperture_levels {
                    out.push(SensorConfig {
                        iso,
                        shutter,
                        aperture_f,
                    });
                }
            }
        }
        out
    }

    pub fn rank(&self, cfg: &SensorConfig) -> Option<u16> {
        let i = self.iso_levels.binary_search(&cfg.iso).ok()?;
        let s = self.shutter_levels.binary_search(&cfg.shutter).ok()?;
        let a = self
            .aperture_levels
            .binary_search_by(|x| x.total_cmp(&cfg.aperture_f))
            .ok()?;
        let r = (i * self.shutter_levels.len() + s) * self.aperture_levels.len() + a;
        Some(r as u16)
    }

    /// Level indices (iso, shutter, aperture) of a config on this grid.
    pub fn level_indices(&self, cfg: &SensorConfig) -> Option<[usize; 3]> {
        Some([
            self.iso_levels.binary_search(&cfg.iso).ok()?,
            self.shutter_levels.binary_search(&cfg.shutter).ok()?,
            self.aperture_levels
                .binary_search_by(|x| x.total_cmp(&cfg.aperture_f))
                .ok()?,
        ])
    }
}

impl Default for SensorGrid {
    fn default() -> Self {
        SensorGrid::default_grid()
    }
}

/// The central window `[w/4, w - w/4) x [h/4, h - h/4)` where scenes place
/// their subject and the encoder judges exposure.
pub fn central_window(
    width: usize,
    height: usize,
) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    (
        width / 4..width - width / 4,
        height / 4..height - height / 4,
    )
}

/// Row-major grayscale image of linear sensor values.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "image {width}x{height} needs {} pixels, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Image {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn empty() -> Self {
        Image {
            width: 0,
            height: 0,
            data: Vec::new(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// One capture of a scene under a sensor config. Pixels are in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct PhysicalView {
    pub config: SensorConfig,
    pub image: Image,
    pub scene_id: u64,
}

/// Per-layer token statistics: population mean and variance over tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    /// 1-based layer index.
    pub layer: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl LayerStats {
    pub fn new(layer: usize, mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::Dimension(format!(
                "layer {layer}: mean has {} dims, var has {}",
                mean.len(),
                var.len()
            )));
        }
        if let Some(v) = var.iter().find(|v| !is_nonnegative(**v)) {
            return Err(Error::InvalidParam(format!(
                "layer {layer}: variance entry {v} is negative"
            )));
        }
        Ok(LayerStats { layer, mean, var })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Reference statistics of the source domain, one entry per provider layer.
///
/// Values are rounded to f32 precision on construction so that a stats file
/// written and read back reproduces them exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceStats {
    per_layer: Vec<LayerStats>,
    pub provenance: String,
}

impl SourceStats {
    pub fn new(per_layer: Vec<LayerStats>, provenance: impl Into<String>) -> Result<Self> {
        if per_layer.is_empty() {
            return Err(Error::InvalidParam(
                "source stats need at least one layer".into(),
            ));
        }
        let dim = per_layer[0].dim();
        let mut out = Vec::with_capacity(per_layer.len());
        for (i, l) in per_layer.into_iter().enumerate() {
            if l.dim() != dim {
                return Err(Error::Dimension(format!(
                    "source layer {} has {} dims, layer 1 has {dim}",
                    i + 1,
                    l.dim()
                )));
            }
            let q = |v: Vec<f64>| v.into_iter().map(|x| x as f32 as f64).collect::<Vec<_>>();
            out.push(LayerStats::new(i + 1, q(l.mean), q(l.var))?);
        }
        Ok(SourceStats {
            per_layer: out,
            provenance: provenance.into(),
        })
    }

    pub fn layers(&self) -> &[LayerStats] {
        &self.per_layer
    }

    pub fn n_layers(&self) -> usize {
        self.per_layer.len()
    }

    pub fn feat_dim(&self) -> usize {
        self.per_layer[0].dim()
    }

    /// Hard check that this reference can be scored against a provider.
    pub fn check_compatible(&self, n_layers: usize, feat_dim: usize) -> Result<()> {
        if self.n_layers() != n_layers || self.feat_dim() != feat_dim {
            return Err(Error::Dimension(format!(
                "source stats have {} layers x {} dims, provider has {n_layers} x {feat_dim}",
                self.n_layers(),
                self.feat_dim()
            )));
        }
        Ok(())
    }
}

/// One digital augmentation of a physical capture, after encoding.
///
/// `layer_stats` holds the layers that were requested for this view; it is
/// empty for views that only needed a prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedView {
    pub aug_index: u16,
    pub probs: Vec<f64>,
    pub entropy_nats: f64,
    pub layer_stats: Vec<LayerStats>,
}

impl AugmentedView {
    pub fn new(aug_index: u16, probs: Vec<f64>, layer_stats: Vec<LayerStats>) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|p| !is_nonnegative(*p)) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::NotNormalized { sum });
        }
        let entropy_nats = shannon_entropy(&probs)?;
        Ok(AugmentedView {
            aug_index,
            probs,
            entropy_nats,
            layer_stats,
        })
    }

    /// Maximum class probability.
    pub fn confidence(&self) -> f64 {
        self.probs.iter().copied().fold(0.0, f64::max)
    }

    /// Argmax with ties to the lowest class index.
    pub fn label(&self) -> usize {
        argmax(&self.probs)
    }
}

/// True for zero or positive values; false for negatives and NaN.
pub fn is_nonnegative(x: f64) -> bool {
    x >= 0.0
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Inclusive, 1-based range of encoder layers, written `a-b` (or `b` for `1-b`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LayerRange {
    first: usize,
    last: usize,
}

impl LayerRange {
    pub fn new(first: usize, last: usize) -> Result<Self> {
        if first == 0 || last < first {
            return Err(Error::InvalidParam(format!(
                "invalid layer range {first}-{last}"
            )));
        }
        Ok(LayerRange { first, last })
    }

    pub fn first_n(n: usize) -> Result<Self> {
        LayerRange::new(1, n)
    }

    pub fn first(&self) -> usize {
        self.first
    }

    pub fn last(&self) -> usize {
        self.last
    }

    pub fn len(&self) -> usize {
        self.last - self.first + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> {
        self.first..=self.last
    }

    pub fn union(&self, other: &LayerRange) -> LayerRange {
        LayerRange {
            first: self.first.min(other.first),
            last: self.last.max(other.last),
        }
    }

    pub fn contains(&self, other: &LayerRange) -> bool {
        self.first <= other.first && other.last <= self.last
    }

    pub fn check_available(&self, available: usize) -> Result<()> {
        if self.last > available {
            return Err(Error::LayerBound {
                requested: self.to_string(),
                available,
            });
        }
        Ok(())
    }
}

impl fmt::Display for LayerRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.first, self.last)
    }
}

impl FromStr for LayerRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParam(format!("cannot parse layer range {s:?}"));
        match s.trim().split_once('-') {
            Some((a, b)) => LayerRange::new(
                a.trim().parse().map_err(|_| bad())?,
                b.trim().parse().map_err(|_| bad())?,
            ),
            None => LayerRange::first_n(s.trim().parse().map_err(|_| bad())?),
        }
    }
}

impl Serialize for LayerRange {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LayerRange {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Count(usize),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Count(n) => LayerRange::first_n(n),
            Repr::Text(s) => s.parse(),
        }
        .map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    HardVote,
    Marginalized,
}

/// Every tunable of the selection-then-vote pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineParams {
    /// Augmented views per capture, including the original.
    pub n_augs: usize,
    /// Fraction of most confident views whose statistics are aggregated.
    pub alpha: f64,
    pub top_k: usize,
    /// Percentage of the lowest-entropy pooled views that vote.
    pub gamma_pct: f64,
    pub layers: LayerRange,
    /// Candidate captures per scene (M).
    pub n_captures: usize,
    pub aggregation: AggregationMode,
    pub seed: u64,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            n_augs: 64,
            alpha: 0.3,
            top_k: 5,
            gamma_pct: 3.0,
            layers: LayerRange { first: 1, last: 3 },
            n_captures: 27,
            aggregation: AggregationMode::HardVote,
            seed: 0,
        }
    }
}

impl PipelineParams {
    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn validate(&self, provider_layers: usize) -> Result<()> {
        if self.n_augs == 0 || self.n_augs > u16::MAX as usize {
            return Err(Error::InvalidParam(format!(
                "n_augs = {} out of range",
                self.n_augs
            )));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "alpha = {} not in (0, 1]",
                self.alpha
            )));
        }
        if !(self.gamma_pct > 0.0 && self.gamma_pct <= 100.0) {
            return Err(Error::InvalidParam(format!(
                "gamma_pct = {} not in (0, 100]",
                self.gamma_pct
            )));
        }
        if self.top_k == 0 || self.top_k > self.n_captures {
            return Err(Error::InvalidParam(format!(
                "top_k = {} must lie in [1, M = {}]",
                self.top_k, self.n_captures
            )));
        }
        self.layers.check_available(provider_layers)
    }

    /// Size of the confident subset used for statistics: max(1, ceil(alpha * N)).
    pub fn confident_count(&self, n: usize) -> usize {
        confident_count(self.alpha, n)
    }

    /// Size of the voting set drawn from a pool: max(1, floor(gamma/100 * pool)).
    pub fn retained_count(&self, pool: usize) -> usize {
        retained_count(self.gamma_pct, pool)
    }
}

pub fn confident_count(alpha: f64, n: usize) -> usize {
    // The epsilon absorbs representation error such as 0.3 * 10 = 3.0000000000000004.
    (((alpha * n as f64) - 1e-9).ceil() as usize).clamp(1, n.max(1))
}

pub fn retained_count(gamma_pct: f64, pool: usize) -> usize {
    // gamma * pool is exact for integral percentages, so divide last.
    (((gamma_pct * pool as f64) / 100.0 + 1e-9).floor() as usize).clamp(1, pool.max(1))
}

/// Voting member: one augmented view of one selected capture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoteMember {
    pub config: SensorConfig,
    pub aug_index: u16,
    pub probs: Vec<f64>,
    pub label: usize,
}

/// The lowest-entropy views retained for the final vote.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VoteSet {
    pub members: Vec<VoteMember>,
}

impl VoteSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

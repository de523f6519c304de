//! Per-scene method runners: MVP selection-then-vote and its baselines.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::augment::{
    geometric_view, photometric_view, AugmentKey, GeometricParams, PhotometricParams,
};
use super::select::{
    affinity_score, aggregate_stats, confident_subset, entropy_filter, hard_vote,
    marginalized_vote, select_top_k, AffinityScore, PooledView,
};
use crate::capture::{auto_exposure, capture, capture_stream, ExposureModel, Illumination, Scene};
use crate::domain::{
    AggregationMode, AugmentedView, Image, LayerRange, PipelineParams, SensorConfig, SensorGrid,
    SourceStats, VoteSet,
};
use crate::provider::{FeatureProvider, ViewInput, ViewKey};
use crate::{Error, Result};

/// Everything about the simulated camera and augmentations that a runner
/// needs besides the scene, provider and pipeline parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SimContext {
    pub grid: SensorGrid,
    pub exposure: ExposureModel,
    pub geometric: GeometricParams,
    pub photometric: PhotometricParams,
    pub ae_shots: usize,
}

impl Default for SimContext {
    fn default() -> Self {
        SimContext {
            grid: SensorGrid::default_grid(),
            exposure: ExposureModel::default(),
            geometric: GeometricParams::default(),
            photometric: PhotometricParams::default(),
            ae_shots: 5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Auto-exposure shots, each voted over its own geometric augmentations.
    Ae,
    /// As `Ae` with photometric jitter on top of the geometric augmentations.
    AePhoto,
    /// Most confident raw capture, predicted directly.
    Lens,
    /// Most confident raw capture, voted over its augmentations.
    LensVote,
    Mvp,
    /// MVP with the retained views' probabilities averaged instead of voted.
    MvpMarginalized,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Ae,
        Method::AePhoto,
        Method::Lens,
        Method::LensVote,
        Method::Mvp,
        Method::MvpMarginalized,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Ae => "ae",
            Method::AePhoto => "ae_photo",
            Method::Lens => "lens",
            Method::LensVote => "lens_vote",
            Method::Mvp => "mvp",
            Method::MvpMarginalized => "mvp_marginalized",
        }
    }

    pub fn uses_candidates(&self) -> bool {
        !matches!(self, Method::Ae | Method::AePhoto)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParam(format!("unknown method {s:?}")))
    }
}

/// Wall time spent per stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub capture: Duration,
    pub augment: Duration,
    pub encode: Duration,
    pub affinity: Duration,
    pub filter: Duration,
    pub vote: Duration,
}

impl std::ops::AddAssign for StageTimings {
    fn add_assign(&mut self, o: Self) {
        self.capture += o.capture;
        self.augment += o.augment;
        self.encode += o.encode;
        self.affinity += o.affinity;
        self.filter += o.filter;
        self.vote += o.vote;
    }
}

/// The encoded augmentations of one physical capture; `views[n]` is aug `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct CaptureViews {
    pub config: SensorConfig,
    pub views: Vec<AugmentedView>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MethodDecision {
    pub method: Method,
    pub selected: Vec<SensorConfig>,
    /// Affinity of every candidate, in canonical config order (MVP only).
    pub scores: Vec<AffinityScore>,
    pub vote_set: Option<VoteSet>,
    pub predicted: usize,
    /// AE shot index.
    pub shot: Option<u32>,
    /// Encoder forward passes this decision needed.
    pub forward_passes: u64,
    pub timings: StageTimings,
}

/// Where a capture's views come from and how they are keyed.
#[derive(Clone, Copy, Debug)]
pub struct CaptureSource {
    pub key: AugmentKey,
    /// Scene field of the view keys, see [`ViewKey::scene_key`].
    pub scene_key: u64,
    pub ae_shot: Option<u32>,
    pub photometric: bool,
}

impl CaptureSource {
    pub fn new(
        params: &PipelineParams,
        scene: &Scene,
        illum: &Illumination,
        rank: u16,
        ae_shot: Option<u32>,
        photometric: bool,
    ) -> Self {
        CaptureSource {
            key: AugmentKey {
                seed: params.seed,
                scene_id: scene.scene_id,
                illumination: illum.key(),
                config_rank: rank,
                shot: ae_shot.unwrap_or(0),
            },
            scene_key: ViewKey::scene_key(scene.scene_id, illum),
            ae_shot,
            photometric,
        }
    }

    fn view_key(&self, aug: u16) -> ViewKey {
        match self.ae_shot {
            Some(shot) => ViewKey::ae(self.scene_key, shot, self.photometric, aug),
            None => ViewKey::grid(self.scene_key, self.key.config_rank, aug),
        }
    }
}

/// Augment and encode one capture. Predictions are computed for every view;
/// statistics for `stat_layers` only for the views in the alpha-confident
/// subset, which is all the affinity score consumes.
#[allow(clippy::too_many_arguments)]
pub fn encode_capture(
    image: &Image,
    config: SensorConfig,
    signature: &[f64],
    source: &CaptureSource,
    provider: &dyn FeatureProvider,
    params: &PipelineParams,
    ctx: &SimContext,
    stat_layers: Option<LayerRange>,
    timings: &mut StageTimings,
) -> Result<CaptureViews> {
    let n = params.n_augs;
    let t = Instant::now();
    let images: Vec<Image> = if provider.consumes_pixels() {
        (0..n)
            .map(|i| {
                let g = geometric_view(image, i, &source.key, &ctx.geometric);
                if source.photometric {
                    photometric_view(&g, i, &source.key, &ctx.photometric)
                } else {
                    g
                }
            })
            .collect()
    } else {
        vec![Image::empty(); n]
    };
    timings.augment += t.elapsed();

    let t = Instant::now();
    let input = |i: usize| ViewInput {
        key: source.view_key(i as u16),
        image: &images[i],
        signature,
    };
    let mut views = (0..n)
        .map(|i| AugmentedView::new(i as u16, provider.predict(&input(i))?, Vec::new()))
        .collect::<Result<Vec<_>>>()?;
    if let Some(layers) = stat_layers {
        for i in confident_subset(&views, params.alpha) {
            views[i].layer_stats = provider.layer_stats(&input(i), layers)?;
        }
    }
    timings.encode += t.elapsed();
    Ok(CaptureViews { config, views })
}

/// Result of the selection-then-vote core on already encoded captures.
#[derive(Clone, Debug, PartialEq)]
pub struct MvpOutcome {
    pub scores: Vec<AffinityScore>,
    pub selected: Vec<SensorConfig>,
    pub vote_set: VoteSet,
    pub predicted: usize,
}

/// Affinity of each capture (canonical order), from its alpha-confident views.
pub fn score_captures(
    captures: &[&CaptureViews],
    source: &SourceStats,
    params: &PipelineParams,
) -> Result<Vec<AffinityScore>> {
    captures
        .iter()
        .map(|c| {
            let subset: Vec<&AugmentedView> = confident_subset(&c.views, params.alpha)
                .into_iter()
                .map(|i| &c.views[i])
                .collect();
            let agg = aggregate_stats(&subset, params.layers)?;
            Ok(AffinityScore {
                config: c.config,
                score: affinity_score(&agg, source)?,
            })
        })
        .collect()
}

fn canonical<'a>(captures: &[&'a CaptureViews]) -> Result<Vec<&'a CaptureViews>> {
    let mut sorted = captures.to_vec();
    sorted.sort_by_key(|c| c.config);
    if sorted.windows(2).any(|w| w[0].config == w[1].config) {
        return Err(Error::InvalidParam(
            "duplicate capture config among candidates".into(),
        ));
    }
    Ok(sorted)
}

fn vote(set: &VoteSet, mode: AggregationMode) -> Result<usize> {
    match mode {
        AggregationMode::HardVote => hard_vote(set),
        AggregationMode::Marginalized => marginalized_vote(set),
    }
}

/// Score, select top-k, filter by entropy, vote. The outcome does not
/// depend on the order of `captures`.
pub fn mvp_decide(
    captures: &[&CaptureViews],
    source: &SourceStats,
    params: &PipelineParams,
    timings: &mut StageTimings,
) -> Result<MvpOutcome> {
    let sorted = canonical(captures)?;
    let t = Instant::now();
    let scores = score_captures(&sorted, source, params)?;
    timings.affinity += t.elapsed();
    mvp_decide_scored(&sorted, scores, params, timings)
}

/// The selection, filter and vote stages given each capture's affinity.
/// `captures` must be in canonical config order with `scores` aligned.
pub fn mvp_decide_scored(
    captures: &[&CaptureViews],
    scores: Vec<AffinityScore>,
    params: &PipelineParams,
    timings: &mut StageTimings,
) -> Result<MvpOutcome> {
    if scores.len() != captures.len()
        || captures.windows(2).any(|w| w[0].config >= w[1].config)
        || scores
            .iter()
            .zip(captures)
            .any(|(s, c)| s.config != c.config)
    {
        return Err(Error::InvalidParam(
            "captures must be canonical and distinct with one score each".into(),
        ));
    }
    let sorted = captures;
    let t = Instant::now();
    let top = select_top_k(&scores, params.top_k)?;
    timings.affinity += t.elapsed();

    let t = Instant::now();
    let pool: Vec<PooledView> = top
        .iter()
        .flat_map(|&i| {
            let c = sorted[i];
            c.views.iter().map(move |v| PooledView {
                config: c.config,
                view: v,
            })
        })
        .collect();
    let vote_set = entropy_filter(&pool, params.gamma_pct);
    timings.filter += t.elapsed();

    let t = Instant::now();
    let predicted = vote(&vote_set, params.aggregation)?;
    timings.vote += t.elapsed();
    Ok(MvpOutcome {
        selected: top.iter().map(|&i| sorted[i].config).collect(),
        scores,
        vote_set,
        predicted,
    })
}

/// Capture with the most confident unaugmented view; ties to the canonically
/// smaller config.
pub fn most_confident<'a>(captures: &[&'a CaptureViews]) -> Result<&'a CaptureViews> {
    let sorted = canonical(captures)?;
    let mut best = *sorted
        .first()
        .ok_or_else(|| Error::InvalidParam("no candidates".into()))?;
    for c in &sorted[1..] {
        if c.views[0].confidence() > best.views[0].confidence() {
            best = c;
        }
    }
    Ok(best)
}

/// Entropy filter plus hard vote over the views of one capture.
pub fn vote_single_capture(c: &CaptureViews, gamma_pct: f64) -> Result<(VoteSet, usize)> {
    let pool: Vec<PooledView> = c
        .views
        .iter()
        .map(|v| PooledView {
            config: c.config,
            view: v,
        })
        .collect();
    let set = entropy_filter(&pool, gamma_pct);
    let label = hard_vote(&set)?;
    Ok((set, label))
}

/// Confidence-only selection over encoded captures.
pub fn lens_decide(
    captures: &[&CaptureViews],
    params: &PipelineParams,
    with_vote: bool,
    timings: &mut StageTimings,
) -> Result<MethodDecision> {
    let t = Instant::now();
    let best = most_confident(captures)?;
    timings.affinity += t.elapsed();
    let m = captures.len() as u64;
    let (method, vote_set, predicted, passes) = if with_vote {
        let t = Instant::now();
        let (set, label) = vote_single_capture(best, params.gamma_pct)?;
        timings.vote += t.elapsed();
        (
            Method::LensVote,
            Some(set),
            label,
            m + best.views.len() as u64 - 1,
        )
    } else {
        (Method::Lens, None, best.views[0].label(), m)
    };
    Ok(MethodDecision {
        method,
        selected: vec![best.config],
        scores: Vec::new(),
        vote_set,
        predicted,
        shot: None,
        forward_passes: passes,
        timings: StageTimings::default(),
    })
}

/// MVP decision over encoded captures.
pub fn mvp_decision(
    captures: &[&CaptureViews],
    source: &SourceStats,
    params: &PipelineParams,
    timings: &mut StageTimings,
) -> Result<MethodDecision> {
    let out = mvp_decide(captures, source, params, timings)?;
    Ok(mvp_method_decision(captures, params, out))
}

/// [`mvp_decision`] from precomputed scores, see [`mvp_decide_scored`].
pub fn mvp_decision_scored(
    captures: &[&CaptureViews],
    scores: Vec<AffinityScore>,
    params: &PipelineParams,
    timings: &mut StageTimings,
) -> Result<MethodDecision> {
    let out = mvp_decide_scored(captures, scores, params, timings)?;
    Ok(mvp_method_decision(captures, params, out))
}

fn mvp_method_decision(
    captures: &[&CaptureViews],
    params: &PipelineParams,
    out: MvpOutcome,
) -> MethodDecision {
    MethodDecision {
        method: match params.aggregation {
            AggregationMode::HardVote => Method::Mvp,
            AggregationMode::Marginalized => Method::MvpMarginalized,
        },
        selected: out.selected,
        scores: out.scores,
        vote_set: Some(out.vote_set),
        predicted: out.predicted,
        shot: None,
        forward_passes: captures.iter().map(|c| c.views.len() as u64).sum(),
        timings: StageTimings::default(),
    }
}

/// Auto-exposure decision for one shot: vote over its augmentations.
pub fn ae_decide(
    shot: &CaptureViews,
    shot_index: u32,
    photometric: bool,
    params: &PipelineParams,
    timings: &mut StageTimings,
) -> Result<MethodDecision> {
    let t = Instant::now();
    let (set, label) = vote_single_capture(shot, params.gamma_pct)?;
    timings.vote += t.elapsed();
    Ok(MethodDecision {
        method: if photometric {
            Method::AePhoto
        } else {
            Method::Ae
        },
        selected: vec![shot.config],
        scores: Vec::new(),
        vote_set: Some(set),
        predicted: label,
        shot: Some(shot_index),
        forward_passes: shot.views.len() as u64,
        timings: StageTimings::default(),
    })
}

fn check_candidates(
    candidates: &[SensorConfig],
    params: &PipelineParams,
    ctx: &SimContext,
) -> Result<()> {
    if candidates.is_empty() || candidates.len() < params.top_k {
        return Err(Error::InvalidParam(format!(
            "{} candidates cannot supply top_k = {}",
            candidates.len(),
            params.top_k
        )));
    }
    if let Some(c) = candidates.iter().find(|c| ctx.grid.rank(c).is_none()) {
        return Err(Error::InvalidParam(format!(
            "candidate {c} is not on the sensor grid"
        )));
    }
    Ok(())
}

/// Simulated measurement for one (config, shot); skipped for providers that
/// look views up by key.
pub fn physical_capture(
    scene: &Scene,
    illum: &Illumination,
    cfg: &SensorConfig,
    rank: u16,
    shot: u32,
    provider: &dyn FeatureProvider,
    ctx: &SimContext,
) -> Image {
    if provider.consumes_pixels() {
        let mut rng = capture_stream(&ctx.exposure, scene, illum, rank, shot);
        capture(scene, illum, cfg, &ctx.exposure, &mut rng).image
    } else {
        Image::empty()
    }
}

/// Capture and encode every candidate config of a scene.
#[allow(clippy::too_many_arguments)]
pub fn capture_candidates(
    scene: &Scene,
    illum: &Illumination,
    candidates: &[SensorConfig],
    provider: &dyn FeatureProvider,
    params: &PipelineParams,
    ctx: &SimContext,
    stat_layers: Option<LayerRange>,
    timings: &mut StageTimings,
) -> Result<Vec<CaptureViews>> {
    candidates
        .iter()
        .map(|cfg| {
            let rank = ctx.grid.rank(cfg).ok_or_else(|| {
                Error::InvalidParam(format!("candidate {cfg} is not on the sensor grid"))
            })?;
            let t = Instant::now();
            let image = physical_capture(scene, illum, cfg, rank, 0, provider, ctx);
            timings.capture += t.elapsed();
            let source = CaptureSource::new(params, scene, illum, rank, None, false);
            encode_capture(
                &image,
                *cfg,
                &scene.signature,
                &source,
                provider,
                params,
                ctx,
                stat_layers,
                timings,
            )
        })
        .collect()
}

/// Full MVP on one scene: capture every candidate, augment, encode, score,
/// select, filter, vote.
pub fn run_mvp(
    scene: &Scene,
    illum: &Illumination,
    candidates: &[SensorConfig],
    provider: &dyn FeatureProvider,
    source: &SourceStats,
    params: &PipelineParams,
    ctx: &SimContext,
) -> Result<MethodDecision> {
    check_candidates(candidates, params, ctx)?;
    params.validate(provider.n_layers())?;
    source.check_compatible(provider.n_layers(), provider.feat_dim())?;
    let mut timings = StageTimings::default();
    let captures = capture_candidates(
        scene,
        illum,
        candidates,
        provider,
        params,
        ctx,
        Some(params.layers),
        &mut timings,
    )?;
    let refs: Vec<&CaptureViews> = captures.iter().collect();
    let mut d = mvp_decision(&refs, source, params, &mut timings)?;
    d.timings = timings;
    Ok(d)
}

/// Confidence-only single-view selection, optionally followed by a vote over
/// the selected capture's augmentations.
pub fn run_confidence_only(
    scene: &Scene,
    illum: &Illumination,
    candidates: &[SensorConfig],
    provider: &dyn FeatureProvider,
    params: &PipelineParams,
    ctx: &SimContext,
    with_vote: bool,
) -> Result<MethodDecision> {
    if candidates.is_empty() {
        return Err(Error::InvalidParam("no candidates".into()));
    }
    let mut timings = StageTimings::default();
    let p = if with_vote {
        params.clone()
    } else {
        PipelineParams {
            n_augs: 1,
            ..params.clone()
        }
    };
    let captures = capture_candidates(
        scene,
        illum,
        candidates,
        provider,
        &p,
        ctx,
        None,
        &mut timings,
    )?;
    let refs: Vec<&CaptureViews> = captures.iter().collect();
    let mut d = lens_decide(&refs, params, with_vote, &mut timings)?;
    d.timings = timings;
    Ok(d)
}

/// Encode `ctx.ae_shots` auto-exposure shots of a scene.
pub fn capture_ae_shots(
    scene: &Scene,
    illum: &Illumination,
    provider: &dyn FeatureProvider,
    params: &PipelineParams,
    ctx: &SimContext,
    photometric: bool,
    timings: &mut StageTimings,
) -> Result<Vec<CaptureViews>> {
    let cfg = auto_exposure(scene, illum, &ctx.grid, &ctx.exposure);
    let rank = ctx.grid.rank(&cfg).expect("AE config is on the grid");
    (0..ctx.ae_shots as u32)
        .map(|shot| {
            let t = Instant::now();
            let image = physical_capture(scene, illum, &cfg, rank, shot, provider, ctx);
            timings.capture += t.elapsed();
            let source = CaptureSource::new(params, scene, illum, rank, Some(shot), photometric);
            encode_capture(
                &image,
                cfg,
                &scene.signature,
                &source,
                provider,
                params,
                ctx,
                None,
                timings,
            )
        })
        .collect()
}

/// Auto-exposure baseline: one decision per shot.
pub fn run_ae(
    scene: &Scene,
    illum: &Illumination,
    provider: &dyn FeatureProvider,
    params: &PipelineParams,
    ctx: &SimContext,
    photometric: bool,
) -> Result<Vec<MethodDecision>> {
    let mut timings = StageTimings::default();
    let shots = capture_ae_shots(
        scene,
        illum,
        provider,
        params,
        ctx,
        photometric,
        &mut timings,
    )?;
    let mut out = shots
        .iter()
        .enumerate()
        .map(|(i, s)| ae_decide(s, i as u32, photometric, params, &mut timings))
        .collect::<Result<Vec<_>>>()?;
    if let Some(first) = out.first_mut() {
        first.timings = timings;
    }
    Ok(out)
}

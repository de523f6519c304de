//! Benchmark and ablation sweep execution.
//!
//! Work is split per (scene, illumination). For each pair a capture library
//! is built once: every grid config any method or candidate draw needs is
//! captured and encoded a single time, the auto-exposure shots likewise,
//! and every method and sweep value is then decided from that library.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ProviderKind};
use super::report::{AblationRow, DecisionRow, ExperimentReport, MethodSummary, TimingReport};
use crate::capture::{auto_exposure, generate_scenes, Illumination, Scene, SceneFile};
use crate::csa::{capture_latency, CsaVariant};
use crate::domain::{AggregationMode, LayerRange, PipelineParams, SensorConfig, SourceStats};
use crate::exec::map_ordered;
use crate::pipeline::run::{
    ae_decide, encode_capture, lens_decide, mvp_decision_scored, physical_capture, score_captures,
    CaptureSource,
};
use crate::pipeline::AffinityScore;
use crate::pipeline::{CaptureViews, Method, MethodDecision, SimContext, StageTimings};
use crate::provider::format::load_source_stats;
use crate::provider::{
    build_source_stats, ideal_reference_views, EmbeddingProvider, FeatureProvider,
    SyntheticProvider,
};
use crate::{Error, Result};

/// Scenes, lights and simulation settings of a resolved config.
pub struct Workload {
    pub config: ExperimentConfig,
    pub scenes: Vec<Scene>,
    pub illuminations: Vec<Illumination>,
    pub ctx: SimContext,
}

impl Workload {
    /// Resolve `config` and generate or load its scenes.
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        let config = config.resolve()?;
        let scenes = match &config.scenes.file {
            Some(path) => SceneFile::load(path)?,
            None => generate_scenes(&config.scenes.spec(config.seed)),
        };
        if let Some(s) = scenes
            .iter()
            .find(|s| s.n_classes() != config.scenes.n_classes)
        {
            return Err(Error::Config(format!(
                "scene {} has {} classes, config declares {}",
                s.scene_id,
                s.n_classes(),
                config.scenes.n_classes
            )));
        }
        let illuminations = config.illuminations()?;
        let ctx = config.sim_context();
        Ok(Workload {
            config,
            scenes,
            illuminations,
            ctx,
        })
    }

    pub fn illumination(&self, level_id: &str) -> Option<&Illumination> {
        self.illuminations.iter().find(|l| l.level_id == level_id)
    }
}

/// Build the provider a config asks for and check it against the config.
pub fn build_provider(config: &ExperimentConfig) -> Result<Box<dyn FeatureProvider>> {
    let provider: Box<dyn FeatureProvider> = match config.provider.kind {
        ProviderKind::Synthetic => {
            Box::new(SyntheticProvider::new(config.provider.synthetic.clone())?)
        }
        ProviderKind::Embeddings => {
            let path = config
                .provider
                .embeddings
                .as_ref()
                .ok_or_else(|| Error::Config("provider.embeddings is not set".into()))?;
            Box::new(EmbeddingProvider::load(path)?)
        }
    };
    if provider.n_classes() != config.scenes.n_classes {
        return Err(Error::Config(format!(
            "provider has {} classes but scenes have {}",
            provider.n_classes(),
            config.scenes.n_classes
        )));
    }
    config.pipeline.validate(provider.n_layers())?;
    Ok(provider)
}

/// Source statistics: loaded from `provider.source_stats` when set, else
/// built from the ideal reference set.
pub fn resolve_source_stats(
    config: &ExperimentConfig,
    provider: &dyn FeatureProvider,
) -> Result<SourceStats> {
    let stats = match &config.provider.source_stats {
        Some(path) => load_source_stats(path)?,
        None => reference_source_stats(config, provider)?,
    };
    stats.check_compatible(provider.n_layers(), provider.feat_dim())?;
    Ok(stats)
}

/// Source statistics over all provider layers from the ideal reference set.
pub fn reference_source_stats(
    config: &ExperimentConfig,
    provider: &dyn FeatureProvider,
) -> Result<SourceStats> {
    let views = ideal_reference_views(
        &config.provider.reference,
        &config.scenes.spec(config.seed),
        &config.exposure,
    );
    let inputs: Vec<_> = views.iter().map(|v| v.input()).collect();
    build_source_stats(
        provider,
        &inputs,
        provider.all_layers(),
        "synthetic reference",
    )
}

/// One way of deciding a scene: a method with its parameters and
/// candidate-selection policy.
#[derive(Clone, Debug)]
struct Arm {
    method: Method,
    params: PipelineParams,
    csa: super::config::CsaConfig,
}

impl Arm {
    fn runs(&self) -> usize {
        if self.method.uses_candidates() {
            self.csa.effective_runs()
        } else {
            1
        }
    }
}

/// What to capture and encode for one (scene, illumination).
struct LibraryPlan {
    n_augs: usize,
    stat_layers: Option<LayerRange>,
    ae: bool,
    ae_photo: bool,
}

/// Encoded captures of one scene under one light.
pub struct SceneLibrary {
    grid: Vec<Option<CaptureViews>>,
    ae: Vec<CaptureViews>,
    ae_photo: Vec<CaptureViews>,
    /// Physical captures taken, counting each (config, shot) once.
    pub captures: u64,
    pub timings: StageTimings,
}

fn candidate_draw(scene: &Scene, illum: &Illumination) -> u64 {
    crate::rng::hash_parts(&[scene.scene_id, illum.key()])
}

fn arm_candidates(
    work: &Workload,
    arm: &Arm,
    run: usize,
    scene: &Scene,
    illum: &Illumination,
) -> Result<Vec<SensorConfig>> {
    arm.csa
        .policy(&work.ctx.grid, work.config.seed, run)
        .select(&work.ctx.grid, candidate_draw(scene, illum))
}

fn build_library(
    work: &Workload,
    provider: &dyn FeatureProvider,
    scene: &Scene,
    illum: &Illumination,
    arms: &[Arm],
    plan: &LibraryPlan,
) -> Result<SceneLibrary> {
    let ctx = &work.ctx;
    let base = PipelineParams {
        n_augs: plan.n_augs,
        ..work.config.pipeline.clone()
    };
    let mut needed = BTreeSet::new();
    for arm in arms.iter().filter(|a| a.method.uses_candidates()) {
        for run in 0..arm.runs() {
            for cfg in arm_candidates(work, arm, run, scene, illum)? {
                needed.insert(cfg);
            }
        }
    }
    let mut timings = StageTimings::default();
    let mut grid: Vec<Option<CaptureViews>> = vec![None; ctx.grid.len()];
    let mut shots_taken: BTreeSet<(u16, u32)> = BTreeSet::new();
    for cfg in &needed {
        let rank = ctx.grid.rank(cfg).expect("candidates come from the grid");
        let t = Instant::now();
        let image = physical_capture(scene, illum, cfg, rank, 0, provider, ctx);
        timings.capture += t.elapsed();
        shots_taken.insert((rank, 0));
        let source = CaptureSource::new(&base, scene, illum, rank, None, false);
        grid[rank as usize] = Some(encode_capture(
            &image,
            *cfg,
            &scene.signature,
            &source,
            provider,
            &base,
            ctx,
            plan.stat_layers,
            &mut timings,
        )?);
    }

    let mut ae = Vec::new();
    let mut ae_photo = Vec::new();
    if plan.ae || plan.ae_photo {
        let cfg = auto_exposure(scene, illum, &ctx.grid, &ctx.exposure);
        let rank = ctx.grid.rank(&cfg).expect("AE config is on the grid");
        for shot in 0..ctx.ae_shots as u32 {
            let t = Instant::now();
            let image = physical_capture(scene, illum, &cfg, rank, shot, provider, ctx);
            timings.capture += t.elapsed();
            shots_taken.insert((rank, shot));
            for (wanted, photometric, out) in [
                (plan.ae, false, &mut ae),
                (plan.ae_photo, true, &mut ae_photo),
            ] {
                if wanted {
                    let source =
                        CaptureSource::new(&base, scene, illum, rank, Some(shot), photometric);
                    out.push(encode_capture(
                        &image,
                        cfg,
                        &scene.signature,
                        &source,
                        provider,
                        &base,
                        ctx,
                        None,
                        &mut timings,
                    )?);
                }
            }
        }
    }
    Ok(SceneLibrary {
        grid,
        ae,
        ae_photo,
        captures: shots_taken.len() as u64,
        timings,
    })
}

fn decision_row(
    work: &Workload,
    scene: &Scene,
    illum: &Illumination,
    run: usize,
    candidates: &[SensorConfig],
    d: &MethodDecision,
) -> DecisionRow {
    let latency = if d.method.uses_candidates() {
        capture_latency(candidates)
    } else {
        capture_latency(&d.selected)
    };
    DecisionRow {
        scene_id: scene.scene_id,
        illumination: illum.level_id.clone(),
        method: d.method,
        csa_run: run as u32,
        shot: d.shot,
        candidates: candidates.iter().map(|c| c.to_string()).collect(),
        scores: d.scores.iter().map(|s| s.score).collect(),
        selected: d.selected.iter().map(|c| c.to_string()).collect(),
        vote_size: d.vote_set.as_ref().map_or(0, |v| v.len()),
        predicted: d.predicted,
        true_label: scene.true_label,
        correct: d.predicted == scene.true_label,
        capture_latency_s: latency,
        compute_latency_ms: d.forward_passes as f64 * work.config.latency.forward_pass_ms,
    }
}

/// Affinity of a library capture keyed by (grid rank, layers, alpha bits),
/// shared by every arm deciding that library.
type ScoreCache = HashMap<(usize, LayerRange, u64), f64>;

fn cached_scores(
    captures: &[(usize, &CaptureViews)],
    source: &SourceStats,
    params: &PipelineParams,
    cache: &mut ScoreCache,
) -> Result<Vec<AffinityScore>> {
    captures
        .iter()
        .map(|&(rank, c)| {
            let key = (rank, params.layers, params.alpha.to_bits());
            let score = match cache.get(&key) {
                Some(&s) => s,
                None => {
                    let s = score_captures(&[c], source, params)?[0].score;
                    cache.insert(key, s);
                    s
                }
            };
            Ok(AffinityScore {
                config: c.config,
                score,
            })
        })
        .collect()
}

/// Decisions of one arm on one library.
#[allow(clippy::too_many_arguments)]
fn decide_arm(
    work: &Workload,
    source: &SourceStats,
    scene: &Scene,
    illum: &Illumination,
    lib: &SceneLibrary,
    arm: &Arm,
    cache: &mut ScoreCache,
    timings: &mut StageTimings,
) -> Result<Vec<DecisionRow>> {
    let mut rows = Vec::new();
    match arm.method {
        Method::Ae | Method::AePhoto => {
            let photometric = arm.method == Method::AePhoto;
            let shots = if photometric { &lib.ae_photo } else { &lib.ae };
            for (i, shot) in shots.iter().enumerate() {
                let d = ae_decide(shot, i as u32, photometric, &arm.params, timings)?;
                rows.push(decision_row(work, scene, illum, 0, &d.selected, &d));
            }
        }
        Method::Lens | Method::LensVote | Method::Mvp | Method::MvpMarginalized => {
            for run in 0..arm.runs() {
                let candidates = arm_candidates(work, arm, run, scene, illum)?;
                let mut ranked: Vec<(usize, &CaptureViews)> = candidates
                    .iter()
                    .map(|c| {
                        let rank = work.ctx.grid.rank(c).expect("on grid") as usize;
                        (
                            rank,
                            lib.grid[rank]
                                .as_ref()
                                .expect("library holds every candidate"),
                        )
                    })
                    .collect();
                ranked.sort_by_key(|&(_, c)| c.config);
                let captures: Vec<&CaptureViews> = ranked.iter().map(|&(_, c)| c).collect();
                let d = match arm.method {
                    Method::Lens => lens_decide(&captures, &arm.params, false, timings)?,
                    Method::LensVote => lens_decide(&captures, &arm.params, true, timings)?,
                    _ => {
                        let t = Instant::now();
                        let scores = cached_scores(&ranked, source, &arm.params, cache)?;
                        timings.affinity += t.elapsed();
                        mvp_decision_scored(&captures, scores, &arm.params, timings)?
                    }
                };
                rows.push(decision_row(work, scene, illum, run, &candidates, &d));
            }
        }
    }
    Ok(rows)
}

fn method_arm(work: &Workload, method: Method) -> Arm {
    let mut params = work.config.pipeline.clone();
    if method == Method::MvpMarginalized {
        params.aggregation = AggregationMode::Marginalized;
    } else if method == Method::Mvp {
        params.aggregation = AggregationMode::HardVote;
    }
    Arm {
        method,
        params,
        csa: work.config.csa.clone(),
    }
}

fn plan_for(work: &Workload, arms: &[Arm]) -> LibraryPlan {
    let stat_layers = arms
        .iter()
        .filter(|a| matches!(a.method, Method::Mvp | Method::MvpMarginalized))
        .map(|a| a.params.layers)
        .reduce(|a, b| a.union(&b));
    LibraryPlan {
        n_augs: work.config.pipeline.n_augs,
        stat_layers,
        ae: arms.iter().any(|a| a.method == Method::Ae),
        ae_photo: arms.iter().any(|a| a.method == Method::AePhoto),
    }
}

struct PairOutcome {
    /// One row list per arm.
    rows: Vec<Vec<DecisionRow>>,
    captures: u64,
    timings: StageTimings,
}

/// Build each (scene, illumination) library once and decide every arm on it.
fn execute(
    work: &Workload,
    provider: &dyn FeatureProvider,
    source: &SourceStats,
    arms: &[Arm],
) -> Result<(Vec<PairOutcome>, TimingReport)> {
    let start = Instant::now();
    let plan = plan_for(work, arms);
    let pairs: Vec<(usize, usize)> = (0..work.scenes.len())
        .flat_map(|s| (0..work.illuminations.len()).map(move |l| (s, l)))
        .collect();
    let outcomes = map_ordered(&pairs, work.config.workers, |&(s, l)| {
        let scene = &work.scenes[s];
        let illum = &work.illuminations[l];
        let lib = build_library(work, provider, scene, illum, arms, &plan)?;
        let mut timings = lib.timings;
        let mut cache = ScoreCache::new();
        let rows = arms
            .iter()
            .map(|arm| {
                decide_arm(
                    work,
                    source,
                    scene,
                    illum,
                    &lib,
                    arm,
                    &mut cache,
                    &mut timings,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PairOutcome {
            rows,
            captures: lib.captures,
            timings,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut stages = StageTimings::default();
    for o in &outcomes {
        stages += o.timings;
    }
    let timing = TimingReport::new(work.config.workers, start.elapsed(), stages);
    Ok((outcomes, timing))
}

/// Result of a run: the deterministic report plus measured wall times.
pub struct RunOutput {
    pub report: ExperimentReport,
    pub timing: TimingReport,
}

/// Every configured method on every (scene, illumination).
pub fn run_benchmark_with(
    work: &Workload,
    provider: &dyn FeatureProvider,
    source: &SourceStats,
) -> Result<RunOutput> {
    run_suite_with(work, provider, source, &work.config.methods, &[])
}

/// `methods` plus the MVP sweeps over each `(axis, values)`, all decided
/// from a single capture library per (scene, illumination). The report
/// holds method decisions and summaries plus one ablation row per value.
pub fn run_suite_with(
    work: &Workload,
    provider: &dyn FeatureProvider,
    source: &SourceStats,
    methods: &[Method],
    sweeps: &[(SweepAxis, Vec<SweepValue>)],
) -> Result<RunOutput> {
    source.check_compatible(provider.n_layers(), provider.feat_dim())?;
    let mut arms: Vec<Arm> = methods.iter().map(|&m| method_arm(work, m)).collect();
    let mut labels = Vec::new();
    for (axis, values) in sweeps {
        if values.is_empty() {
            return Err(Error::InvalidParam(format!(
                "sweep over {axis} needs at least one value"
            )));
        }
        for &v in values {
            let arm = sweep_arm(work, v)?;
            arm.params.layers.check_available(provider.n_layers())?;
            arms.push(arm);
            labels.push((axis.name(), v.to_string()));
        }
    }
    let (outcomes, timing) = execute(work, provider, source, &arms)?;
    let mut per_arm: Vec<Vec<DecisionRow>> = vec![Vec::new(); arms.len()];
    let mut captures = 0;
    for o in outcomes {
        captures += o.captures;
        for (acc, rows) in per_arm.iter_mut().zip(o.rows) {
            acc.extend(rows);
        }
    }
    let ablation_rows = per_arm.split_off(methods.len());
    let mut report = if methods.is_empty() {
        ExperimentReport {
            captures_performed: captures,
            ..ExperimentReport::empty(work.config.clone())
        }
    } else {
        ExperimentReport::from_decisions(
            work.config.clone(),
            methods,
            &work.illuminations,
            per_arm.into_iter().flatten().collect(),
            captures,
        )
    };
    report.ablation = labels
        .iter()
        .zip(&ablation_rows)
        .map(|((axis, value), rows)| AblationRow::from_rows(axis, value, work.config.seed, rows))
        .collect();
    Ok(RunOutput { report, timing })
}

/// Resolve the config, build its provider and source statistics, and run
/// the benchmark.
pub fn run_benchmark(config: ExperimentConfig) -> Result<RunOutput> {
    let work = Workload::new(config)?;
    let provider = build_provider(&work.config)?;
    let source = resolve_source_stats(&work.config, provider.as_ref())?;
    run_benchmark_with(&work, provider.as_ref(), &source)
}

/// Re-run one logged decision from scratch.
pub fn replay_decision(
    work: &Workload,
    provider: &dyn FeatureProvider,
    source: &SourceStats,
    scene_id: u64,
    level_id: &str,
    method: Method,
) -> Result<Vec<DecisionRow>> {
    let scene = work
        .scenes
        .iter()
        .find(|s| s.scene_id == scene_id)
        .ok_or_else(|| Error::InvalidParam(format!("no scene {scene_id}")))?;
    let illum = work
        .illumination(level_id)
        .ok_or_else(|| Error::InvalidParam(format!("no illumination {level_id:?}")))?;
    let arms = [method_arm(work, method)];
    let lib = build_library(work, provider, scene, illum, &arms, &plan_for(work, &arms))?;
    let mut timings = StageTimings::default();
    decide_arm(
        work,
        source,
        scene,
        illum,
        &lib,
        &arms[0],
        &mut ScoreCache::new(),
        &mut timings,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    K,
    Gamma,
    Layers,
    M,
    Csa,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::K => "k",
            SweepAxis::Gamma => "gamma",
            SweepAxis::Layers => "layers",
            SweepAxis::M => "m",
            SweepAxis::Csa => "csa",
        }
    }

    /// Values swept when none are given.
    pub fn default_values(&self) -> Vec<SweepValue> {
        match self {
            SweepAxis::K => [1, 2, 3, 5, 9, 15, 27].map(SweepValue::K).to_vec(),
            SweepAxis::Gamma => [1.0, 3.0, 5.0, 10.0, 30.0, 50.0, 90.0]
                .map(SweepValue::Gamma)
                .to_vec(),
            SweepAxis::Layers => ["1-3", "4-6", "1-6", "1-1", "6-6"]
                .map(|s| SweepValue::Layers(s.parse().expect("valid range")))
                .to_vec(),
            SweepAxis::M => [5, 6, 9, 12, 15, 21, 27].map(SweepValue::M).to_vec(),
            SweepAxis::Csa => CsaVariant::ALL.map(SweepValue::Csa).to_vec(),
        }
    }

    pub fn parse_value(&self, s: &str) -> Result<SweepValue> {
        let bad =
            |e: String| Error::InvalidParam(format!("invalid {} value {s:?}: {e}", self.name()));
        Ok(match self {
            SweepAxis::K => SweepValue::K(
                s.trim()
                    .parse()
                    .map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            ),
            SweepAxis::Gamma => SweepValue::Gamma(
                s.trim()
                    .parse()
                    .map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
            ),
            SweepAxis::Layers => {
                SweepValue::Layers(s.trim().parse().map_err(|e: Error| bad(e.to_string()))?)
            }
            SweepAxis::M => SweepValue::M(
                s.trim()
                    .parse()
                    .map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            ),
            SweepAxis::Csa => {
                SweepValue::Csa(s.trim().parse().map_err(|e: Error| bad(e.to_string()))?)
            }
        })
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            SweepAxis::K,
            SweepAxis::Gamma,
            SweepAxis::Layers,
            SweepAxis::M,
            SweepAxis::Csa,
        ]
        .into_iter()
        .find(|a| a.name() == s)
        .ok_or_else(|| Error::InvalidParam(format!("unknown sweep axis {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SweepValue {
    K(usize),
    Gamma(f64),
    Layers(LayerRange),
    M(usize),
    Csa(CsaVariant),
}

impl fmt::Display for SweepValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepValue::K(k) => write!(f, "{k}"),
            SweepValue::Gamma(g) => write!(f, "{g}"),
            SweepValue::Layers(l) => write!(f, "{l}"),
            SweepValue::M(m) => write!(f, "{m}"),
            SweepValue::Csa(v) => write!(f, "{v}"),
        }
    }
}

fn sweep_arm(work: &Workload, value: SweepValue) -> Result<Arm> {
    let mut arm = method_arm(work, Method::Mvp);
    let grid = &work.ctx.grid;
    match value {
        SweepValue::K(k) => arm.params.top_k = k,
        SweepValue::Gamma(g) => arm.params.gamma_pct = g,
        SweepValue::Layers(l) => arm.params.layers = l,
        SweepValue::M(m) => {
            if !arm.csa.variant.is_random() {
                arm.csa.variant = CsaVariant::Csa1;
            }
            arm.csa.m = Some(m);
        }
        SweepValue::Csa(v) => {
            arm.csa.variant = v;
            arm.csa.m = Some(v.default_m(grid));
        }
    }
    let m = arm.csa.m.unwrap_or_else(|| arm.csa.variant.default_m(grid));
    arm.params.n_captures = m;
    arm.csa.policy(grid, work.config.seed, 0).validate(grid)?;
    arm.params.validate(usize::MAX)?;
    Ok(arm)
}

/// MVP accuracy for each value of one axis, all else at the config's values.
pub fn sweep_with(
    work: &Workload,
    provider: &dyn FeatureProvider,
    source: &SourceStats,
    axis: SweepAxis,
    values: &[SweepValue],
) -> Result<RunOutput> {
    run_suite_with(work, provider, source, &[], &[(axis, values.to_vec())])
}

pub fn sweep(
    config: ExperimentConfig,
    axis: SweepAxis,
    values: &[SweepValue],
) -> Result<RunOutput> {
    let work = Workload::new(config)?;
    let provider = build_provider(&work.config)?;
    let source = resolve_source_stats(&work.config, provider.as_ref())?;
    sweep_with(&work, provider.as_ref(), &source, axis, values)
}

/// Overall accuracy of each method in a report, in method order.
pub fn method_accuracies(report: &ExperimentReport) -> Vec<(Method, f64)> {
    report
        .methods
        .iter()
        .map(|m: &MethodSummary| (m.method, m.accuracy))
        .collect()
}

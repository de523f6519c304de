//! Acceptance checks. Prints one PASS or FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use mvp_core::csa::{mean_latency, CsaPolicy, CsaVariant};
use mvp_core::domain::{
    AugmentedView, LayerStats, SensorConfig, SensorGrid, SourceStats, VoteMember, VoteSet,
};
use mvp_core::harness::config::IlluminationSpec;
use mvp_core::harness::{
    build_provider, reference_source_stats, resolve_source_stats, run_benchmark,
    run_benchmark_with, run_suite_with, ExperimentConfig, ExperimentReport, ProviderKind,
    SweepAxis, SweepValue, Workload,
};
use mvp_core::pipeline::run::{capture_candidates, mvp_decide};
use mvp_core::pipeline::{
    affinity_score, confident_subset, entropy_filter, hard_vote, marginalized_vote, select_top_k,
    shannon_entropy, AffinityScore, CaptureViews, Method, PooledView, StageTimings,
};
use mvp_core::provider::format::{read_mvpf, read_mvps, save_source_stats, write_mvpf, write_mvps};
use mvp_core::provider::{FeatureProvider, RecordingProvider, SyntheticProvider};
use mvp_core::Error;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check, Duration);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn err(e: Error) -> String {
    e.to_string()
}

/// Correct decisions per method on the default benchmark (1000 scenes, six
/// lights, seed 42), frozen from the first passing build.
const GOLDEN_CORRECT: [(Method, u64); 6] = [
    (Method::Ae, 21911),
    (Method::AePhoto, 26040),
    (Method::Lens, 4177),
    (Method::LensVote, 4278),
    (Method::Mvp, 5628),
    (Method::MvpMarginalized, 5628),
];

fn latency_constants() -> Check {
    let grid = SensorGrid::default_grid();
    let policy = |variant, m| CsaPolicy {
        variant,
        m,
        seed: 42,
    };
    let full = mean_latency(&policy(CsaVariant::Full, 27), &grid, 1).map_err(err)?;
    ensure!((full - 2.409).abs() < 1e-9, "full grid latency {full}");
    let csa3 = mean_latency(&policy(CsaVariant::Csa3, 21), &grid, 1).map_err(err)?;
    ensure!((csa3 - 0.909).abs() < 1e-9, "csa3 m=21 latency {csa3}");
    let csa1 = mean_latency(&policy(CsaVariant::Csa1, 12), &grid, 10_000).map_err(err)?;
    ensure!(
        (csa1 / 1.0707 - 1.0).abs() < 0.01,
        "csa1 m=12 mean latency {csa1}"
    );
    Ok(format!(
        "full {full:.3} s, csa3 {csa3:.3} s, csa1 {csa1:.4} s"
    ))
}

fn random_layers(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<LayerStats> {
    (1..=n)
        .map(|l| {
            let mean = (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect();
            let var = (0..dim).map(|_| rng.random_range(0.0..5.0)).collect();
            LayerStats::new(l, mean, var).expect("valid layer")
        })
        .collect()
}

fn scalar_entropy(p: &[f64]) -> f64 {
    let mut h = 0.0;
    for &x in p {
        if x != 0.0 {
            h -= x * x.ln();
        }
    }
    h
}

fn scoring_primitives() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    for case in 0..1000 {
        let (n, dim) = (rng.random_range(1..=4), rng.random_range(1..=8));
        let source =
            SourceStats::new(random_layers(&mut rng, n, dim), "acceptance").map_err(err)?;
        let stored = source.layers().to_vec();
        let agg = random_layers(&mut rng, n, dim);
        let s = affinity_score(&agg, &source).map_err(err)?;
        ensure!(s <= 0.0, "case {case}: positive score {s}");
        ensure!(
            s < 0.0 || agg == stored,
            "case {case}: zero score on different stats"
        );
        ensure!(
            affinity_score(&stored, &source).map_err(err)? == 0.0,
            "case {case}: source does not score zero"
        );

        let c = rng.random_range(2..=60);
        let w: Vec<f64> = (0..c).map(|_| rng.random_range(0.0..1.0)).collect();
        let total: f64 = w.iter().sum();
        let p: Vec<f64> = w.iter().map(|x| x / total).collect();
        let h = shannon_entropy(&p).map_err(err)?;
        ensure!(
            h >= 0.0 && h <= (c as f64).ln() + 1e-12,
            "case {case}: entropy {h} outside [0, ln {c}]"
        );
    }

    let l = |layer, m: Vec<f64>, v: Vec<f64>| LayerStats::new(layer, m, v).expect("valid layer");
    let src = SourceStats::new(
        vec![l(1, vec![0.0], vec![1.0]), l(2, vec![0.0], vec![1.0])],
        "b",
    )
    .map_err(err)?;
    let s = affinity_score(
        &[l(1, vec![1.0], vec![2.0]), l(2, vec![2.0], vec![1.0])],
        &src,
    )
    .map_err(err)?;
    ensure!(s == -3.0, "constructed distance case scored {s}");
    let s = affinity_score(&[l(1, vec![0.0], vec![1.0 + 1e-9])], &src).map_err(err)?;
    ensure!(s < 0.0, "variance-only difference scored {s}");

    for c in [2usize, 3, 10, 50] {
        let mut one_hot = vec![0.0; c];
        one_hot[0] = 1.0;
        ensure!(
            shannon_entropy(&one_hot).map_err(err)? == 0.0,
            "one-hot entropy is not zero"
        );
        let h = shannon_entropy(&vec![1.0 / c as f64; c]).map_err(err)?;
        ensure!(
            (h - (c as f64).ln()).abs() < 1e-12,
            "uniform entropy {h} is not ln {c}"
        );
    }
    let p = [0.7, 0.2, 0.1];
    let (h, reference) = (shannon_entropy(&p).map_err(err)?, scalar_entropy(&p));
    ensure!(
        (h - 0.801819).abs() < 1e-6 && (reference - 0.801819).abs() < 1e-6,
        "entropy {h}, reference {reference}"
    );
    Ok(format!("1000 random instances, H(0.7, 0.2, 0.1) = {h:.6}"))
}

fn oracle_equivalence() -> Check {
    common::oracle::check_cases(20_240_501, 500)?;
    Ok("500 instances bit-exact".into())
}

fn default_benchmark() -> Check {
    let cfg = ExperimentConfig {
        workers: 1,
        ..ExperimentConfig::default()
    };
    let start = Instant::now();
    let report = run_benchmark(cfg).map_err(err)?.report;
    let elapsed = start.elapsed();
    let acc = |m| {
        report
            .method(m)
            .map(|s| s.accuracy)
            .ok_or(format!("no {m:?} summary"))
    };
    let (ae, photo) = (acc(Method::Ae)?, acc(Method::AePhoto)?);
    let (lens, lens_vote) = (acc(Method::Lens)?, acc(Method::LensVote)?);
    let (mvp, marg) = (acc(Method::Mvp)?, acc(Method::MvpMarginalized)?);
    let counts: Vec<String> = report
        .methods
        .iter()
        .map(|s| format!("{}={}", s.method.name(), s.correct))
        .collect();
    let summary = format!(
        "ae {ae:.4}, ae_photo {photo:.4}, lens {lens:.4}, lens_vote {lens_vote:.4}, mvp {mvp:.4}, marginalized {marg:.4}"
    );
    ensure!(
        mvp - ae >= 0.10,
        "mvp does not beat ae by 10 points: {summary}"
    );
    ensure!(
        mvp - lens.max(lens_vote) >= 0.02,
        "mvp does not beat confidence-only selection by 2 points: {summary}"
    );
    ensure!(mvp >= marg, "hard vote below marginalized vote: {summary}");
    ensure!(photo <= mvp, "ae_photo beats mvp: {summary}");
    for (m, want) in GOLDEN_CORRECT {
        let got = report.method(m).map(|s| s.correct).unwrap_or(0);
        ensure!(
            got == want,
            "golden mismatch for {}: {} (all: {})",
            m.name(),
            got,
            counts.join(" ")
        );
    }
    ensure!(
        elapsed < Duration::from_secs(120),
        "benchmark took {elapsed:.1?}"
    );
    Ok(format!("{summary}; bench {elapsed:.1?}"))
}

fn ablation_shapes() -> Check {
    let work = Workload::new(ExperimentConfig::default()).map_err(err)?;
    let provider = build_provider(&work.config).map_err(err)?;
    let source = resolve_source_stats(&work.config, provider.as_ref()).map_err(err)?;
    let layers = ["1-3", "4-6"]
        .map(|s| SweepValue::Layers(s.parse().expect("valid range")))
        .to_vec();
    let sweeps = [
        (SweepAxis::K, SweepAxis::K.default_values()),
        (
            SweepAxis::Gamma,
            vec![SweepValue::Gamma(3.0), SweepValue::Gamma(90.0)],
        ),
        (SweepAxis::Layers, layers),
    ];
    let report = run_suite_with(&work, provider.as_ref(), &source, &[], &sweeps)
        .map_err(err)?
        .report;
    let acc = |axis: &str, value: &str| {
        report
            .ablation
            .iter()
            .find(|r| r.axis == axis && r.value == value)
            .map(|r| r.accuracy)
            .ok_or(format!("no {axis} = {value} row"))
    };
    let ks = ["1", "2", "3", "5", "9", "15", "27"];
    let k_acc = ks
        .iter()
        .map(|k| acc("k", k))
        .collect::<Result<Vec<_>, _>>()?;
    let best = k_acc.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let k_line = ks
        .iter()
        .zip(&k_acc)
        .map(|(k, a)| format!("{k}:{a:.3}"))
        .collect::<Vec<_>>()
        .join(" ");
    ensure!(k_acc[0] < best, "k sweep peaks at k=1: {k_line}");
    ensure!(k_acc[6] <= best, "k sweep rises at k=27: {k_line}");
    let (g3, g90) = (acc("gamma", "3")?, acc("gamma", "90")?);
    ensure!(g90 < g3, "gamma 90 {g90} not below gamma 3 {g3}");
    let (shallow, deep) = (acc("layers", "1-3")?, acc("layers", "4-6")?);
    ensure!(shallow > deep, "layers 1-3 {shallow} not above 4-6 {deep}");
    Ok(format!(
        "k {k_line}; gamma 3:{g3:.3} 90:{g90:.3}; layers 1-3:{shallow:.3} 4-6:{deep:.3}"
    ))
}

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.scenes.n_scenes = 6;
    cfg.scenes.illuminations = vec![
        IlluminationSpec::Preset("L1".into()),
        IlluminationSpec::Preset("L4".into()),
    ];
    cfg.pipeline.n_augs = 16;
    cfg.ae.shots = 2;
    cfg
}

fn cfg_at(rank: u32) -> SensorConfig {
    SensorGrid::default_grid().configs()[rank as usize]
}

fn tie_breaks() -> Result<(), String> {
    let configs = SensorGrid::default_grid().configs();
    let flat: Vec<AffinityScore> = configs
        .iter()
        .rev()
        .map(|&c| AffinityScore {
            config: c,
            score: -1.0,
        })
        .collect();
    let top = select_top_k(&flat, 3).map_err(err)?;
    let chosen: Vec<SensorConfig> = top.iter().map(|&i| flat[i].config).collect();
    ensure!(
        chosen == configs[..3],
        "equal scores did not go to the first canonical configs"
    );

    let view = |aug, probs: Vec<f64>| AugmentedView::new(aug, probs, vec![]).expect("valid view");
    let views = vec![
        view(0, vec![0.6, 0.2, 0.2]),
        view(1, vec![0.6, 0.4, 0.0]),
        view(2, vec![0.6, 0.4, 0.0]),
        view(3, vec![0.1, 0.45, 0.45]),
    ];
    let subset = confident_subset(&views, 0.5);
    ensure!(
        subset == [1, 2],
        "confident subset with tied confidence picked {subset:?}"
    );

    let same = [view(4, vec![0.5, 0.5, 0.0]), view(1, vec![0.5, 0.5, 0.0])];
    let pool = [
        PooledView {
            config: cfg_at(5),
            view: &same[0],
        },
        PooledView {
            config: cfg_at(2),
            view: &same[0],
        },
        PooledView {
            config: cfg_at(2),
            view: &same[1],
        },
    ];
    let kept: Vec<(SensorConfig, u16)> = entropy_filter(&pool, 66.7)
        .members
        .iter()
        .map(|m| (m.config, m.aug_index))
        .collect();
    ensure!(
        kept == [(cfg_at(2), 1), (cfg_at(2), 4)],
        "equal entropies kept {kept:?}"
    );

    let member = |label, probs: Vec<f64>| VoteMember {
        config: cfg_at(0),
        aug_index: 0,
        probs,
        label,
    };
    let by_mass = VoteSet {
        members: vec![
            member(1, vec![0.0, 0.9, 0.1]),
            member(0, vec![0.6, 0.4, 0.0]),
        ],
    };
    ensure!(
        hard_vote(&by_mass).map_err(err)? == 1,
        "vote tie not broken by summed probability"
    );
    let by_index = VoteSet {
        members: vec![
            member(2, vec![0.0, 0.4, 0.6]),
            member(1, vec![0.0, 0.6, 0.4]),
        ],
    };
    ensure!(
        hard_vote(&by_index).map_err(err)? == 1,
        "vote and mass tie not broken by class index"
    );
    ensure!(
        marginalized_vote(&by_index).map_err(err)? == 1,
        "mean tie not broken by class index"
    );
    Ok(())
}

fn determinism() -> Check {
    let run = |workers| -> Result<ExperimentReport, String> {
        let cfg = ExperimentConfig {
            workers,
            ..small_config()
        };
        let mut report = run_benchmark(cfg).map_err(err)?.report;
        // The echoed config records the worker count; nothing else may differ.
        report.config.workers = 0;
        Ok(report)
    };
    let base = run(1)?;
    let json = base.to_json().map_err(err)?;
    for w in [4, 8] {
        let other = run(w)?;
        ensure!(
            other.to_json().map_err(err)? == json,
            "report differs at {w} workers"
        );
        ensure!(
            other.accuracy_csv() == base.accuracy_csv(),
            "csv differs at {w} workers"
        );
    }

    let work = Workload::new(small_config()).map_err(err)?;
    let provider = build_provider(&work.config).map_err(err)?;
    let source = resolve_source_stats(&work.config, provider.as_ref()).map_err(err)?;
    let params = &work.config.pipeline;
    let configs = work.ctx.grid.configs();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut shuffles = 0;
    for scene in &work.scenes {
        for illum in &work.illuminations {
            let caps = capture_candidates(
                scene,
                illum,
                &configs,
                provider.as_ref(),
                params,
                &work.ctx,
                Some(params.layers),
                &mut StageTimings::default(),
            )
            .map_err(err)?;
            let mut refs: Vec<&CaptureViews> = caps.iter().collect();
            let want =
                mvp_decide(&refs, &source, params, &mut StageTimings::default()).map_err(err)?;
            for _ in 0..4 {
                refs.shuffle(&mut rng);
                let got = mvp_decide(&refs, &source, params, &mut StageTimings::default())
                    .map_err(err)?;
                ensure!(
                    got == want,
                    "shuffled candidates changed scene {}",
                    scene.scene_id
                );
                shuffles += 1;
            }
        }
    }
    tie_breaks()?;
    Ok(format!(
        "workers 1/4/8 identical, {shuffles} shuffles, tie-breaks as documented"
    ))
}

fn format_error_offset(e: Error) -> Result<u64, String> {
    match e {
        Error::Format { offset, .. } => Ok(offset),
        other => Err(format!("expected a positioned format error, got {other}")),
    }
}

fn format_round_trips() -> Check {
    let work = Workload::new(small_config()).map_err(err)?;
    let synth = SyntheticProvider::new(work.config.provider.synthetic.clone()).map_err(err)?;
    let source = resolve_source_stats(&work.config, &synth).map_err(err)?;
    let recorder = RecordingProvider::new(&synth);
    let live = run_benchmark_with(&work, &recorder, &source)
        .map_err(err)?
        .report;
    let records = recorder.into_records();
    let dims = (
        synth.n_classes() as u32,
        synth.n_layers() as u32,
        synth.feat_dim() as u32,
    );

    let mut mvpf = Vec::new();
    write_mvpf(&mut mvpf, dims.0, dims.1, dims.2, &records).map_err(err)?;
    let (header, back) = read_mvpf(&mvpf).map_err(err)?;
    ensure!(
        header.count == records.len() as u64 && back == records,
        "embedding file did not round trip"
    );

    let mut mvps = Vec::new();
    write_mvps(&mut mvps, &source).map_err(err)?;
    let stats = read_mvps(&mvps, "round trip").map_err(err)?;
    ensure!(
        stats.layers() == source.layers(),
        "source statistics did not round trip"
    );

    let mut bad = mvpf.clone();
    bad[0] = b'X';
    ensure!(
        format_error_offset(read_mvpf(&bad).unwrap_err())? == 0,
        "bad magic not reported at offset 0"
    );
    let cut = mvpf.len() - 3;
    let off = format_error_offset(read_mvpf(&mvpf[..cut]).unwrap_err())?;
    ensure!(
        off == cut as u64,
        "truncated embedding file reported at {off}, length {cut}"
    );
    let mut bad = mvps.clone();
    bad[3] = b'F';
    ensure!(
        format_error_offset(read_mvps(&bad, "x").unwrap_err())? == 0,
        "bad stats magic not reported at offset 0"
    );
    ensure!(
        read_mvps(&mvps[..mvps.len() - 1], "x").is_err(),
        "truncated stats file accepted"
    );

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let stats_path = dir.path().join("source.mvps");
    let views_path = dir.path().join("views.mvpf");
    let resolved = small_config().resolve().map_err(err)?;
    let provider = build_provider(&resolved).map_err(err)?;
    save_source_stats(
        &stats_path,
        &reference_source_stats(&resolved, provider.as_ref()).map_err(err)?,
    )
    .map_err(err)?;
    std::fs::write(&views_path, &mvpf).map_err(|e| e.to_string())?;

    let in_memory = run_benchmark(small_config()).map_err(err)?.report;
    let mut file_cfg = small_config();
    file_cfg.provider.source_stats = Some(stats_path.clone());
    let from_stats = run_benchmark(file_cfg.clone()).map_err(err)?.report;
    ensure!(
        from_stats.decisions == in_memory.decisions,
        "stats-file run differs from in-memory run"
    );
    ensure!(
        from_stats.accuracy_csv() == in_memory.accuracy_csv(),
        "stats-file report differs"
    );
    file_cfg.provider.kind = ProviderKind::Embeddings;
    file_cfg.provider.embeddings = Some(views_path);
    let from_views = run_benchmark(file_cfg).map_err(err)?.report;
    ensure!(
        from_views.decisions == live.decisions,
        "embedding-file run differs from live run"
    );
    Ok(format!(
        "{} records, stats and embedding runs identical",
        records.len()
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        (
            "latency constants",
            latency_constants,
            Duration::from_secs(5),
        ),
        (
            "scoring primitives",
            scoring_primitives,
            Duration::from_secs(1),
        ),
        (
            "oracle equivalence",
            oracle_equivalence,
            Duration::from_secs(30),
        ),
        (
            "default benchmark",
            default_benchmark,
            Duration::from_secs(120),
        ),
        ("ablation shapes", ablation_shapes, Duration::from_secs(300)),
        (
            "determinism and invariance",
            determinism,
            Duration::from_secs(300),
        ),
        (
            "format round trips",
            format_round_trips,
            Duration::from_secs(300),
        ),
    ];
    // Optional criterion numbers on the command line restrict the run.
    let only: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (i, (name, check, budget)) in criteria.into_iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|_| Err("panicked".into()))
            .and_then(|detail| {
                let t = start.elapsed();
                if t > budget {
                    Err(format!("took {t:.1?}, budget {budget:?}; {detail}"))
                } else {
                    Ok(detail)
                }
            });
        let t = start.elapsed();
        match outcome {
            Ok(detail) => println!("PASS {} {name} ({t:.2?}): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name} ({t:.2?}): {detail}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

//! Properties of the synthetic encoder over real simulated captures.

use mvp_core::capture::{capture, capture_stream, exposure, Illumination, Scene};
use mvp_core::domain::{argmax, LayerRange, SensorConfig, SourceStats};
use mvp_core::harness::{build_provider, resolve_source_stats, ExperimentConfig, Workload};
use mvp_core::pipeline::affinity_score;
use mvp_core::provider::{ViewInput, ViewKey};

struct EncodedView {
    /// |E - e_opt| for the subject of the scene.
    exposure_error: f64,
    distance: f64,
    probs: Vec<f64>,
    label: usize,
}

fn subject_exposure(
    scene: &Scene,
    illum: &Illumination,
    cfg: &SensorConfig,
    work: &Workload,
) -> f64 {
    let frame = exposure(scene, illum, cfg, &work.config.exposure);
    frame - scene.radiance.mean().ln() + scene.radiance.subject_mean().ln()
}

fn encoded_views(n_scenes: usize) -> (Vec<EncodedView>, f64) {
    let mut cfg = ExperimentConfig::default();
    cfg.scenes.n_scenes = n_scenes;
    let work = Workload::new(cfg).unwrap();
    let provider = build_provider(&work.config).unwrap();
    let source: SourceStats = resolve_source_stats(&work.config, provider.as_ref()).unwrap();
    let layers = work.config.pipeline.layers;
    let model = &work.config.exposure;
    let mut out = Vec::new();
    for scene in &work.scenes {
        for illum in &work.illuminations {
            let key = ViewKey::scene_key(scene.scene_id, illum);
            for (rank, cfg) in work.ctx.grid.configs().iter().enumerate() {
                let mut rng = capture_stream(model, scene, illum, rank as u16, 0);
                let view = capture(scene, illum, cfg, model, &mut rng);
                let input = ViewInput {
                    key: ViewKey::grid(key, rank as u16, 0),
                    image: &view.image,
                    signature: &scene.signature,
                };
                let (stats, probs) = provider.encode(&input, layers).unwrap();
                out.push(EncodedView {
                    exposure_error: (subject_exposure(scene, illum, cfg, &work) - model.e_opt)
                        .abs(),
                    distance: -affinity_score(&stats, &source).unwrap(),
                    probs,
                    label: scene.true_label,
                });
            }
        }
    }
    let bad = work.config.provider.synthetic.bad_threshold;
    assert_eq!(layers, LayerRange::first_n(3).unwrap());
    (out, bad)
}

/// Ranks with ties sharing their mean rank.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let mean = (i + j) as f64 / 2.0;
        for &o in &order[i..=j] {
            r[o] = mean;
        }
        i = j + 1;
    }
    r
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn source_distance_tracks_exposure_error() {
    let (views, _) = encoded_views(4);
    assert!(views.len() >= 500);
    let err: Vec<f64> = views.iter().map(|v| v.exposure_error).collect();
    let dist: Vec<f64> = views.iter().map(|v| v.distance).collect();
    let rho = spearman(&err, &dist);
    assert!(rho >= 0.8, "rank correlation {rho}");
}

#[test]
fn badly_exposed_views_are_often_confidently_wrong() {
    let (views, bad) = encoded_views(4);
    let badly: Vec<&EncodedView> = views.iter().filter(|v| v.exposure_error > bad).collect();
    assert!(
        badly.len() >= 100,
        "only {} badly exposed views",
        badly.len()
    );
    let confident_wrong = badly
        .iter()
        .filter(|v| v.probs[argmax(&v.probs)] > 0.95 && argmax(&v.probs) != v.label)
        .count();
    let share = confident_wrong as f64 / badly.len() as f64;
    assert!(share >= 0.10, "confidently wrong share {share}");
}

#[test]
fn spearman_of_a_monotone_map_is_one() {
    let a = [1.0, 2.0, 2.0, 5.0, 9.0];
    let b: Vec<f64> = a.iter().map(|x: &f64| x.exp()).collect();
    assert!((spearman(&a, &b) - 1.0).abs() < 1e-12);
    assert_eq!(ranks(&a), [0.0, 1.5, 1.5, 3.0, 4.0]);
}

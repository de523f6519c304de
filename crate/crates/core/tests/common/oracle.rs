//! Exhaustive reference implementation of the selection-then-vote decision,
//! compared bit for bit against the library on small random instances.
//!
//! Every ranked selection (confident subset, top-k captures, voting set) is
//! found by enumerating all subsets of the required size and keeping the one
//! whose members all precede all non-members under the documented order.
//! Sums run in the documented order so floating-point results must agree
//! exactly.

use std::cmp::Ordering;

use mvp_core::domain::{
    AggregationMode, AugmentedView, LayerRange, LayerStats, PipelineParams, SensorConfig,
    SensorGrid, SourceStats,
};
use mvp_core::pipeline::run::mvp_decide;
use mvp_core::pipeline::{CaptureViews, StageTimings};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DIM: usize = 2;
const PROVIDER_LAYERS: usize = 2;

pub struct Instance {
    captures: Vec<CaptureViews>,
    source: SourceStats,
    params: PipelineParams,
}

/// Values drawn from a tiny set so that confidences, entropies and scores tie often.
fn coarse(rng: &mut ChaCha8Rng) -> f64 {
    [0.0, 0.5, 1.0][rng.random_range(0..3)]
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let m = rng.random_range(1..=5);
    let n = rng.random_range(1..=4);
    let c = rng.random_range(2..=3);
    let mut configs = SensorGrid::default_grid().configs();
    configs.shuffle(rng);
    configs.truncate(m);

    let captures = configs
        .iter()
        .map(|&config| {
            let views = (0..n)
                .map(|aug| {
                    let w: Vec<f64> = (0..c).map(|_| rng.random_range(0..3) as f64).collect();
                    let total: f64 = w.iter().sum();
                    let probs = if total == 0.0 {
                        vec![1.0 / c as f64; c]
                    } else {
                        w.iter().map(|x| x / total).collect()
                    };
                    let stats = (1..=PROVIDER_LAYERS)
                        .map(|layer| {
                            let mean = (0..DIM).map(|_| coarse(rng)).collect();
                            let var = (0..DIM).map(|_| coarse(rng)).collect();
                            LayerStats::new(layer, mean, var).unwrap()
                        })
                        .collect();
                    AugmentedView::new(aug as u16, probs, stats).unwrap()
                })
                .collect();
            CaptureViews { config, views }
        })
        .collect();

    let source = SourceStats::new(
        (1..=PROVIDER_LAYERS)
            .map(|layer| {
                let mean = (0..DIM).map(|_| coarse(rng)).collect();
                let var = (0..DIM).map(|_| coarse(rng)).collect();
                LayerStats::new(layer, mean, var).unwrap()
            })
            .collect(),
        "oracle",
    )
    .unwrap();

    let first = rng.random_range(1..=PROVIDER_LAYERS);
    let last = rng.random_range(first..=PROVIDER_LAYERS);
    let params = PipelineParams {
        n_augs: n,
        alpha: [0.25, 0.3, 0.5, 0.75, 1.0][rng.random_range(0..5)],
        top_k: rng.random_range(1..=m),
        gamma_pct: [1.0, 3.0, 25.0, 50.0, 90.0, 100.0][rng.random_range(0..6)],
        layers: LayerRange::new(first, last).unwrap(),
        n_captures: m,
        aggregation: if rng.random_bool(0.5) {
            AggregationMode::HardVote
        } else {
            AggregationMode::Marginalized
        },
        seed: 0,
    };
    Instance {
        captures,
        source,
        params,
    }
}

/// All subsets of `0..n` with `k` elements.
fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    (0u32..1 << n)
        .filter(|mask| mask.count_ones() as usize == k)
        .map(|mask| (0..n).filter(|i| mask & (1 << i) != 0).collect())
        .collect()
}

/// The unique `k`-subset whose members all precede every non-member.
fn dominant_subset(n: usize, k: usize, precedes: impl Fn(usize, usize) -> bool) -> Vec<usize> {
    let found: Vec<Vec<usize>> = subsets(n, k)
        .into_iter()
        .filter(|s| {
            s.iter()
                .all(|&i| (0..n).filter(|j| !s.contains(j)).all(|j| precedes(i, j)))
        })
        .collect();
    assert_eq!(found.len(), 1, "ranking must be a strict total order");
    found.into_iter().next().unwrap()
}

fn entropy(p: &[f64]) -> f64 {
    let mut acc = 0.0;
    for &x in p {
        if x > 0.0 {
            acc += x * x.ln();
        }
    }
    (-acc).max(0.0)
}

fn max_prob(p: &[f64]) -> f64 {
    p.iter().copied().fold(0.0, f64::max)
}

fn first_argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in p.iter().enumerate() {
        if x > p[best] {
            best = i;
        }
    }
    best
}

fn oracle_score(c: &CaptureViews, src: &SourceStats, p: &PipelineParams) -> f64 {
    let n = c.views.len();
    let want = (((p.alpha * n as f64) - 1e-9).ceil() as usize).clamp(1, n);
    let key = |i: usize| {
        let v = &c.views[i];
        (max_prob(&v.probs), entropy(&v.probs), v.aug_index)
    };
    let precedes = |a: usize, b: usize| {
        let (ca, ea, ia) = key(a);
        let (cb, eb, ib) = key(b);
        ca > cb || (ca == cb && (ea < eb || (ea == eb && ia < ib)))
    };
    let mut subset = dominant_subset(n, want, precedes);
    subset.sort_by_key(|&i| c.views[i].aug_index);

    let mut total = 0.0;
    for layer in p.layers.first()..=p.layers.last() {
        let s = &src.layers()[layer - 1];
        let mut d_mean = 0.0;
        let mut d_var = 0.0;
        for d in 0..DIM {
            let mut m = 0.0;
            let mut v = 0.0;
            for &i in &subset {
                let ls = c.views[i]
                    .layer_stats
                    .iter()
                    .find(|l| l.layer == layer)
                    .unwrap();
                m += ls.mean[d];
                v += ls.var[d];
            }
            m /= subset.len() as f64;
            v /= subset.len() as f64;
            d_mean += (m - s.mean[d]) * (m - s.mean[d]);
            d_var += (v - s.var[d]) * (v - s.var[d]);
        }
        total += d_mean + d_var;
    }
    -(total / p.layers.len() as f64)
}

pub struct OracleDecision {
    pub scores: Vec<f64>,
    pub selected: Vec<SensorConfig>,
    pub voters: Vec<(SensorConfig, u16)>,
    pub predicted: usize,
}

pub fn oracle(inst: &Instance) -> OracleDecision {
    let p = &inst.params;
    let mut caps: Vec<&CaptureViews> = inst.captures.iter().collect();
    caps.sort_by_key(|c| c.config);
    let scores: Vec<f64> = caps
        .iter()
        .map(|c| oracle_score(c, &inst.source, p))
        .collect();

    let top = dominant_subset(caps.len(), p.top_k, |a, b| {
        scores[a] > scores[b] || (scores[a] == scores[b] && caps[a].config < caps[b].config)
    });

    let pool: Vec<(SensorConfig, &AugmentedView)> = top
        .iter()
        .flat_map(|&i| {
            let cap = caps[i];
            cap.views.iter().map(move |v| (cap.config, v))
        })
        .collect();
    let keep =
        (((p.gamma_pct * pool.len() as f64) / 100.0 + 1e-9).floor() as usize).clamp(1, pool.len());
    let rank = |a: usize, b: usize| -> Ordering {
        let (ca, va) = pool[a];
        let (cb, vb) = pool[b];
        entropy(&va.probs)
            .total_cmp(&entropy(&vb.probs))
            .then(ca.cmp(&cb))
            .then(va.aug_index.cmp(&vb.aug_index))
    };
    let mut voters = dominant_subset(pool.len(), keep, |a, b| rank(a, b) == Ordering::Less);
    voters.sort_by(|&a, &b| rank(a, b));

    let c = pool[0].1.probs.len();
    let predicted = match p.aggregation {
        AggregationMode::HardVote => {
            let votes = |y: usize| {
                voters
                    .iter()
                    .filter(|&&i| first_argmax(&pool[i].1.probs) == y)
                    .count()
            };
            let mass = |y: usize| {
                let mut s = 0.0;
                for &i in &voters {
                    s += pool[i].1.probs[y];
                }
                s
            };
            let mut best = 0;
            for y in 1..c {
                let better =
                    votes(y) > votes(best) || (votes(y) == votes(best) && mass(y) > mass(best));
                if better {
                    best = y;
                }
            }
            best
        }
        AggregationMode::Marginalized => {
            let mean: Vec<f64> = (0..c)
                .map(|y| {
                    let mut s = 0.0;
                    for &i in &voters {
                        s += pool[i].1.probs[y];
                    }
                    s / voters.len() as f64
                })
                .collect();
            first_argmax(&mean)
        }
    };

    OracleDecision {
        scores,
        selected: top.iter().map(|&i| caps[i].config).collect(),
        voters: voters
            .iter()
            .map(|&i| (pool[i].0, pool[i].1.aug_index))
            .collect(),
        predicted,
    }
}

/// Compare the library against the oracle on `cases` random instances.
pub fn check_cases(seed: u64, cases: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let inst = random_instance(&mut rng);
        let expected = oracle(&inst);
        let refs: Vec<&CaptureViews> = inst.captures.iter().collect();
        let got = mvp_decide(
            &refs,
            &inst.source,
            &inst.params,
            &mut StageTimings::default(),
        )
        .map_err(|e| format!("case {case}: {e}"))?;
        let got_scores: Vec<u64> = got.scores.iter().map(|s| s.score.to_bits()).collect();
        let want_scores: Vec<u64> = expected.scores.iter().map(|s| s.to_bits()).collect();
        if got_scores != want_scores {
            return Err(format!(
                "case {case}: scores {:?} vs {:?}",
                got.scores, expected.scores
            ));
        }
        if got.selected != expected.selected {
            return Err(format!(
                "case {case}: selected {:?} vs {:?}",
                got.selected, expected.selected
            ));
        }
        let got_voters: Vec<(SensorConfig, u16)> = got
            .vote_set
            .members
            .iter()
            .map(|m| (m.config, m.aug_index))
            .collect();
        if got_voters != expected.voters {
            return Err(format!(
                "case {case}: voters {got_voters:?} vs {:?}",
                expected.voters
            ));
        }
        if got.predicted != expected.predicted {
            return Err(format!(
                "case {case}: predicted {} vs {}",
                got.predicted, expected.predicted
            ));
        }
    }
    Ok(())
}

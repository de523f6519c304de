//! Scoring, selection and aggregation stages.
//!
//! Tie-breaks never depend on storage order: captures are ordered by their
//! sensor config, views by aug index.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::domain::{
    confident_count, is_nonnegative, retained_count, AugmentedView, LayerRange, LayerStats,
    SensorConfig, SourceStats, VoteMember, VoteSet,
};
use crate::{Error, Result};

/// Shannon entropy in nats, with 0 ln 0 = 0.
pub fn shannon_entropy(probs: &[f64]) -> Result<f64> {
    let sum: f64 = probs.iter().sum();
    if probs.is_empty() || probs.iter().any(|p| !is_nonnegative(*p)) || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::NotNormalized { sum });
    }
    let h = -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>();
    Ok(h.max(0.0))
}

/// Indices (into `views`) of the `max(1, ceil(alpha N))` most confident views,
/// ranked by max probability desc, then entropy asc, then aug index asc.
/// The result is sorted by aug index.
pub fn confident_subset(views: &[AugmentedView], alpha: f64) -> Vec<usize> {
    if views.is_empty() {
        return Vec::new();
    }
    let n = confident_count(alpha, views.len());
    let conf: Vec<f64> = views.iter().map(AugmentedView::confidence).collect();
    let mut order: Vec<usize> = (0..views.len()).collect();
    order.sort_by(|&a, &b| {
        let (va, vb) = (&views[a], &views[b]);
        conf[b]
            .total_cmp(&conf[a])
            .then_with(|| va.entropy_nats.total_cmp(&vb.entropy_nats))
            .then_with(|| va.aug_index.cmp(&vb.aug_index))
    });
    order.truncate(n);
    order.sort_by_key(|&i| views[i].aug_index);
    order
}

/// Per-layer mean of member means and mean of member variances.
///
/// Members contribute in the order given; `layers` selects which of each
/// view's stored layers are aggregated.
pub fn aggregate_stats(subset: &[&AugmentedView], layers: LayerRange) -> Result<Vec<LayerStats>> {
    let first = subset
        .first()
        .ok_or_else(|| Error::InvalidParam("cannot aggregate an empty subset".into()))?;
    let mut out = Vec::with_capacity(layers.len());
    for layer in layers.iter() {
        let dim = find_layer(first, layer)?.dim();
        let mut mean = vec![0.0; dim];
        let mut var = vec![0.0; dim];
        for v in subset {
            let ls = find_layer(v, layer)?;
            if ls.dim() != dim {
                return Err(Error::Dimension(format!(
                    "layer {layer}: view {} has {} dims, expected {dim}",
                    v.aug_index,
                    ls.dim()
                )));
            }
            for d in 0..dim {
                mean[d] += ls.mean[d];
                var[d] += ls.var[d];
            }
        }
        let n = subset.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        var.iter_mut().for_each(|v| *v /= n);
        out.push(LayerStats { layer, mean, var });
    }
    Ok(out)
}

fn find_layer(view: &AugmentedView, layer: usize) -> Result<&LayerStats> {
    view.layer_stats
        .iter()
        .find(|l| l.layer == layer)
        .ok_or_else(|| Error::LayerBound {
            requested: layer.to_string(),
            available: view.layer_stats.iter().map(|l| l.layer).max().unwrap_or(0),
        })
}

/// Source affinity: minus the layer-averaged squared distance between the
/// aggregated statistics and the source reference, for layers in `agg`.
pub fn affinity_score(agg: &[LayerStats], src: &SourceStats) -> Result<f64> {
    if agg.is_empty() {
        return Err(Error::InvalidParam("no layers to score".into()));
    }
    let mut total = 0.0;
    for a in agg {
        let s = src
            .layers()
            .get(a.layer.wrapping_sub(1))
            .ok_or(Error::LayerBound {
                requested: a.layer.to_string(),
                available: src.n_layers(),
            })?;
        if s.dim() != a.dim() {
            return Err(Error::Dimension(format!(
                "layer {}: aggregated stats have {} dims, source has {}",
                a.layer,
                a.dim(),
                s.dim()
            )));
        }
        let mut d_mean = 0.0;
        let mut d_var = 0.0;
        for d in 0..a.dim() {
            d_mean += (a.mean[d] - s.mean[d]).powi(2);
            d_var += (a.var[d] - s.var[d]).powi(2);
        }
        total += d_mean + d_var;
    }
    Ok(-(total / agg.len() as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffinityScore {
    pub config: SensorConfig,
    pub score: f64,
}

/// Positions (into `scores`) of the k largest scores, ties to the canonically
/// smaller config. Output is in canonical config order.
pub fn select_top_k(scores: &[AffinityScore], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > scores.len() {
        return Err(Error::InvalidParam(format!(
            "top_k = {k} outside [1, {}]",
            scores.len()
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .score
            .total_cmp(&scores[a].score)
            .then_with(|| scores[a].config.cmp(&scores[b].config))
    });
    order.truncate(k);
    order.sort_by(|&a, &b| scores[a].config.cmp(&scores[b].config));
    Ok(order)
}

/// A view in the pooled candidate set for entropy filtering.
#[derive(Clone, Copy, Debug)]
pub struct PooledView<'a> {
    pub config: SensorConfig,
    pub view: &'a AugmentedView,
}

fn pool_order(a: &PooledView, b: &PooledView) -> Ordering {
    a.view
        .entropy_nats
        .total_cmp(&b.view.entropy_nats)
        .then_with(|| a.config.cmp(&b.config))
        .then_with(|| a.view.aug_index.cmp(&b.view.aug_index))
}

/// Keep the `max(1, floor(gamma/100 |pool|))` lowest-entropy views, ties by
/// (config, aug index). Members are returned in that rank order.
pub fn entropy_filter(pool: &[PooledView], gamma_pct: f64) -> VoteSet {
    if pool.is_empty() {
        return VoteSet::default();
    }
    let keep = retained_count(gamma_pct, pool.len());
    let mut ranked: Vec<&PooledView> = pool.iter().collect();
    ranked.sort_by(|a, b| pool_order(a, b));
    VoteSet {
        members: ranked[..keep]
            .iter()
            .map(|p| VoteMember {
                config: p.config,
                aug_index: p.view.aug_index,
                probs: p.view.probs.clone(),
                label: p.view.label(),
            })
            .collect(),
    }
}

/// Plurality of member argmax labels. Vote ties go to the label with more
/// summed probability over the set, then to the lowest class index.
pub fn hard_vote(fset: &VoteSet) -> Result<usize> {
    let first = fset
        .members
        .first()
        .ok_or_else(|| Error::InvalidParam("cannot vote over an empty set".into()))?;
    let c = first.probs.len();
    let mut votes = vec![0usize; c];
    for m in &fset.members {
        votes[m.label] += 1;
    }
    let top = *votes.iter().max().expect("c > 0");
    let tied: Vec<usize> = (0..c).filter(|&y| votes[y] == top).collect();
    if tied.len() == 1 {
        return Ok(tied[0]);
    }
    let mut best = tied[0];
    let mut best_mass = mass(fset, best);
    for &y in &tied[1..] {
        let m = mass(fset, y);
        if m > best_mass {
            best = y;
            best_mass = m;
        }
    }
    Ok(best)
}

fn mass(fset: &VoteSet, label: usize) -> f64 {
    fset.members.iter().map(|m| m.probs[label]).sum()
}

/// Argmax of the mean member distribution, ties to the lowest class index.
pub fn marginalized_vote(fset: &VoteSet) -> Result<usize> {
    let first = fset
        .members
        .first()
        .ok_or_else(|| Error::InvalidParam("cannot vote over an empty set".into()))?;
    let mut mean = vec![0.0; first.probs.len()];
    for m in &fset.members {
        for (acc, p) in mean.iter_mut().zip(&m.probs) {
            *acc += p;
        }
    }
    let n = fset.members.len() as f64;
    mean.iter_mut().for_each(|x| *x /= n);
    Ok(crate::domain::argmax(&mean))
}

//! Candidate selection policies that shrink the capture grid to M configs
//! before anything is captured, and the capture-latency model.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{SensorConfig, SensorGrid};
use crate::rng::{self, purpose};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsaVariant {
    /// Every grid config; `m` must equal the grid size.
    Full,
    /// Uniform sampling without replacement.
    Csa1,
    /// Stratified over 2 x 2 x 2 cells of the grid.
    Csa2,
    /// Cheapest shutter tiers first.
    Csa3,
}

impl CsaVariant {
    pub const ALL: [CsaVariant; 4] = [
        CsaVariant::Full,
        CsaVariant::Csa1,
        CsaVariant::Csa2,
        CsaVariant::Csa3,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            CsaVariant::Full => "full",
            CsaVariant::Csa1 => "csa1",
            CsaVariant::Csa2 => "csa2",
            CsaVariant::Csa3 => "csa3",
        }
    }

    /// Candidate count used when none is given: 12 / 6 / 21, or the whole grid.
    pub fn default_m(&self, grid: &SensorGrid) -> usize {
        match self {
            CsaVariant::Full => grid.len(),
            CsaVariant::Csa1 => 12.min(grid.len()),
            CsaVariant::Csa2 => 6.min(grid.len()),
            CsaVariant::Csa3 => 21.min(grid.len()),
        }
    }

    pub fn is_random(&self) -> bool {
        !matches!(self, CsaVariant::Full)
    }
}

impl fmt::Display for CsaVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CsaVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CsaVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidParam(format!("unknown CSA variant {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsaPolicy {
    pub variant: CsaVariant,
    pub m: usize,
    pub seed: u64,
}

impl CsaPolicy {
    pub fn full(grid: &SensorGrid) -> Self {
        CsaPolicy {
            variant: CsaVariant::Full,
            m: grid.len(),
            seed: 0,
        }
    }

    pub fn validate(&self, grid: &SensorGrid) -> Result<()> {
        check_m(grid, self.m)?;
        if self.variant == CsaVariant::Full && self.m != grid.len() {
            return Err(Error::InvalidParam(format!(
                "the full policy captures all {} configs, got m = {}",
                grid.len(),
                self.m
            )));
        }
        Ok(())
    }

    /// Candidate set for one draw (typically one scene), canonical order.
    pub fn select(&self, grid: &SensorGrid, draw: u64) -> Result<Vec<SensorConfig>> {
        self.validate(grid)?;
        let mut r = rng::stream(
            self.seed,
            &[purpose::CSA, self.variant as u64, self.m as u64, draw],
        );
        match self.variant {
            CsaVariant::Full => Ok(grid.configs()),
            CsaVariant::Csa1 => csa1(grid, self.m, &mut r),
            CsaVariant::Csa2 => csa2(grid, self.m, &mut r),
            CsaVariant::Csa3 => csa3(grid, self.m, &mut r),
        }
    }
}

fn check_m(grid: &SensorGrid, m: usize) -> Result<()> {
    if m == 0 || m > grid.len() {
        return Err(Error::InvalidParam(format!(
            "m = {m} must lie in [1, {}]",
            grid.len()
        )));
    }
    Ok(())
}

/// Uniform random m-subset of the grid.
pub fn csa1<R: Rng + ?Sized>(
    grid: &SensorGrid,
    m: usize,
    rng: &mut R,
) -> Result<Vec<SensorConfig>> {
    check_m(grid, m)?;
    let all = grid.configs();
    let mut picked: Vec<usize> = index::sample(rng, all.len(), m).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| all[i]).collect())
}

/// Cell of a config: every axis is split into its lower levels and its top
/// level, so a 3-level axis splits as {0, 1} | {2}.
pub fn csa2_cell(grid: &SensorGrid, cfg: &SensorConfig) -> Option<[usize; 3]> {
    let idx = grid.level_indices(cfg)?;
    let sizes = [
        grid.iso_levels().len(),
        grid.shutter_levels().len(),
        grid.aperture_levels().len(),
    ];
    let mut cell = [0; 3];
    for a in 0..3 {
        cell[a] = usize::from(sizes[a] > 1 && idx[a] == sizes[a] - 1);
    }
    Some(cell)
}

/// Visit the cells in a seeded random order, drawing one unused config per
/// visited cell, cycling until m configs are drawn.
pub fn csa2<R: Rng + ?Sized>(
    grid: &SensorGrid,
    m: usize,
    rng: &mut R,
) -> Result<Vec<SensorConfig>> {
    check_m(grid, m)?;
    let mut cells: BTreeMap<[usize; 3], Vec<SensorConfig>> = BTreeMap::new();
    for cfg in grid.configs() {
        let cell = csa2_cell(grid, &cfg).expect("config is on its own grid");
        cells.entry(cell).or_default().push(cfg);
    }
    let mut order: Vec<Vec<SensorConfig>> = cells.into_values().collect();
    order.shuffle(rng);
    let mut out = Vec::with_capacity(m);
    while out.len() < m {
        for pool in order.iter_mut() {
            if out.len() == m {
                break;
            }
            if !pool.is_empty() {
                let i = rng.random_range(0..pool.len());
                out.push(pool.remove(i));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// The m configs with the shortest shutters; a partially used tier is
/// sampled uniformly.
pub fn csa3<R: Rng + ?Sized>(
    grid: &SensorGrid,
    m: usize,
    rng: &mut R,
) -> Result<Vec<SensorConfig>> {
    check_m(grid, m)?;
    let mut tiers: BTreeMap<_, Vec<SensorConfig>> = BTreeMap::new();
    for cfg in grid.configs() {
        tiers.entry(cfg.shutter).or_default().push(cfg);
    }
    let mut out = Vec::with_capacity(m);
    for tier in tiers.into_values() {
        let need = m - out.len();
        if need == 0 {
            break;
        }
        if tier.len() <= need {
            out.extend(tier);
        } else {
            out.extend(
                index::sample(rng, tier.len(), need)
                    .into_iter()
                    .map(|i| tier[i]),
            );
        }
    }
    out.sort();
    Ok(out)
}

/// Total shutter time as an exact fraction of a second.
pub fn capture_latency_exact(configs: &[SensorConfig]) -> Ratio<u64> {
    configs
        .iter()
        .fold(Ratio::from_integer(0), |acc, c| acc + c.shutter.ratio())
}

/// Total shutter time in seconds.
pub fn capture_latency(configs: &[SensorConfig]) -> f64 {
    let r = capture_latency_exact(configs);
    *r.numer() as f64 / *r.denom() as f64
}

/// Mean capture latency of a policy over `draws` seeded draws.
pub fn mean_latency(policy: &CsaPolicy, grid: &SensorGrid, draws: u64) -> Result<f64> {
    if draws == 0 {
        return Err(Error::InvalidParam("draws must be positive".into()));
    }
    if !policy.variant.is_random() || policy.variant == CsaVariant::Csa3 {
        // CSA3 latency does not depend on the draw: only tier members vary.
        return Ok(capture_latency(&policy.select(grid, 0)?));
    }
    let mut sum = Ratio::from_integer(0u64);
    for d in 0..draws {
        sum += capture_latency_exact(&policy.select(grid, d)?);
    }
    Ok(*sum.numer() as f64 / *sum.denom() as f64 / draws as f64)
}

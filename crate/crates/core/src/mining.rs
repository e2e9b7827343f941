//! Matching and non-matching pair mining.
//!
//! Matches: for each training query, one image drawn uniformly from the
//! same-model images co-observing at least `tau` points. Matches are mined
//! once and kept for the whole run.
//!
//! Negatives: the `k` nearest training images from other models form a
//! pool (ties broken by ascending image id), and `m` of them are drawn
//! uniformly among the subsets holding at most one image per model. The
//! offline pass measures distance on input features; online passes use the
//! Hamming distance between current codes.
//!
//! Each query samples from its own stream derived from one master draw, so
//! results do not depend on the order queries are processed in.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{FeatureStore, ModelWorld, Split};
use crate::error::{Error, Result};
use crate::numkit::{squared_distance, Rng};
use crate::retrieval::{hamming_unchecked, CodeDatabase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct TrainingPair {
    /// World index of the query image.
    pub query: usize,
    /// World index of the paired image.
    pub other: usize,
    pub matching: bool,
}

impl TrainingPair {
    /// The label `y` as a number: 1 for matching, 0 otherwise.
    pub fn y(&self) -> f64 {
        if self.matching {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MiningParams {
    /// Size of the hard-negative candidate pool.
    pub k: usize,
    /// Negatives sampled per query.
    pub m: usize,
    /// Minimum co-observed points for a match.
    pub tau: usize,
}

impl Default for MiningParams {
    fn default() -> Self {
        Self {
            k: 70,
            m: 6,
            tau: 10,
        }
    }
}

impl MiningParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.tau == 0 {
            return Err(Error::Param("mining needs k >= 1 and tau >= 1".into()));
        }
        if self.m > self.k {
            return Err(Error::Param(format!(
                "m = {} exceeds k = {}",
                self.m, self.k
            )));
        }
        Ok(())
    }
}

pub type NegativeMap = BTreeMap<usize, Vec<TrainingPair>>;

#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    /// One matching pair per training query, in query order.
    pub matches: Vec<TrainingPair>,
    pub negatives: NegativeMap,
    /// 0 for offline negatives, incremented by each online regeneration.
    pub generation: u32,
}

impl PairSet {
    pub fn queries(&self) -> Vec<usize> {
        self.matches.iter().map(|p| p.query).collect()
    }

    pub fn len(&self) -> usize {
        self.matches.len() + self.negatives.values().map(Vec::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every pair, grouped by query: the match first, then its negatives.
    pub fn all_pairs(&self) -> Vec<TrainingPair> {
        let mut out = Vec::with_capacity(self.len());
        for m in &self.matches {
            out.push(*m);
            if let Some(neg) = self.negatives.get(&m.query) {
                out.extend_from_slice(neg);
            }
        }
        out
    }

    /// One JSON object per line: `{query, other, y, generation}`.
    pub fn dump_jsonl<W: Write>(&self, world: &ModelWorld, mut out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Line<'a> {
            query: &'a str,
            other: &'a str,
            y: u8,
            generation: u32,
        }
        for p in self.all_pairs() {
            let line = Line {
                query: world.image_id(p.query),
                other: world.image_id(p.other),
                y: p.matching as u8,
                generation: self.generation,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Training images of the same model as `q` co-observing at least `tau`
/// points with it, by ascending index.
pub fn match_candidates(world: &ModelWorld, q: usize, tau: usize) -> Vec<usize> {
    world
        .training_images()
        .into_iter()
        .filter(|&j| world.is_match(q, j, tau))
        .collect()
}

pub fn mine_matches(world: &ModelWorld, rng: &mut Rng, tau: usize) -> Result<Vec<TrainingPair>> {
    let master = Rng::new(rng.next_u64());
    world
        .with_split(Split::TrainQuery)
        .into_iter()
        .map(|q| {
            let candidates = match_candidates(world, q, tau);
            if candidates.is_empty() {
                return Err(Error::Mining(format!(
                    "query `{}` has no same-model image co-observing >= {tau} points",
                    world.image_id(q)
                )));
            }
            let pick = master.derive(q as u64).index(candidates.len());
            Ok(TrainingPair {
                query: q,
                other: candidates[pick],
                matching: true,
            })
        })
        .collect()
}

/// The `k` nearest foreign-model training images to `q` under `distance`,
/// sorted by `(distance, index)`.
pub fn nearest_foreign<F>(world: &ModelWorld, q: usize, k: usize, distance: F) -> Vec<usize>
where
    F: Fn(usize) -> f64,
{
    let model = world.model_of(q);
    let mut scored: Vec<(f64, usize)> = world
        .training_images()
        .into_iter()
        .filter(|&j| world.model_of(j) != model)
        .map(|j| (distance(j), j))
        .collect();
    scored.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.truncate(k);
    scored.into_iter().map(|(_, j)| j).collect()
}

pub fn offline_pool(world: &ModelWorld, store: &FeatureStore, q: usize, k: usize) -> Vec<usize> {
    let x = store.features();
    nearest_foreign(world, q, k, |j| squared_distance(x.row(q), x.row(j)))
}

pub fn online_pool(world: &ModelWorld, codes: &CodeDatabase, q: usize, k: usize) -> Vec<usize> {
    let qrow = codes.row(q);
    nearest_foreign(world, q, k, |j| {
        hamming_unchecked(qrow, codes.row(j)) as f64
    })
}

/// Draws `m` pool members uniformly among the subsets with at most one
/// image per model. Returns `None` when the pool spans fewer than `m`
/// models. The result keeps pool order.
pub fn sample_model_distinct(
    world: &ModelWorld,
    pool: &[usize],
    m: usize,
    rng: &mut Rng,
) -> Option<Vec<usize>> {
    // group pool positions by model, in order of first appearance
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for (pos, &img) in pool.iter().enumerate() {
        let model = world.model_of(img);
        match groups.iter_mut().find(|(g, _)| *g == model) {
            Some((_, members)) => members.push(pos),
            None => groups.push((model, vec![pos])),
        }
    }
    if groups.len() < m {
        return None;
    }
    // ways[g][j]: number of valid j-subsets using only the first g groups
    let g_count = groups.len();
    let mut ways = vec![vec![0.0f64; m + 1]; g_count + 1];
    ways[0][0] = 1.0;
    for g in 1..=g_count {
        let c = groups[g - 1].1.len() as f64;
        ways[g][0] = 1.0;
        for j in 1..=m {
            ways[g][j] = ways[g - 1][j] + c * ways[g - 1][j - 1];
        }
    }
    let mut chosen = Vec::with_capacity(m);
    let mut remaining = m;
    for g in (1..=g_count).rev() {
        if remaining == 0 {
            break;
        }
        let members = &groups[g - 1].1;
        let include = members.len() as f64 * ways[g - 1][remaining - 1];
        if rng.uniform() * ways[g][remaining] < include {
            chosen.push(members[rng.index(members.len())]);
            remaining -= 1;
        }
    }
    debug_assert_eq!(remaining, 0);
    chosen.sort_unstable();
    Some(chosen.into_iter().map(|pos| pool[pos]).collect())
}

fn mine_negatives_with<P>(
    world: &ModelWorld,
    p: &MiningParams,
    rng: &mut Rng,
    pool_of: P,
) -> Result<NegativeMap>
where
    P: Fn(usize, usize) -> Vec<usize> + Sync,
{
    p.validate()?;
    let master = Rng::new(rng.next_u64());
    let queries = world.with_split(Split::TrainQuery);
    let mined: Vec<Result<(usize, Vec<TrainingPair>)>> = queries
        .par_iter()
        .map(|&q| {
            let mut sub = master.derive(q as u64);
            let picked = sample_model_distinct(world, &pool_of(q, p.k), p.m, &mut sub)
                .or_else(|| sample_model_distinct(world, &pool_of(q, 2 * p.k), p.m, &mut sub))
                .ok_or_else(|| {
                    Error::Mining(format!(
                        "query `{}`: pool of {} nearest spans fewer than m = {} models",
                        world.image_id(q),
                        2 * p.k,
                        p.m
                    ))
                })?;
            let pairs = picked
                .into_iter()
                .map(|other| TrainingPair {
                    query: q,
                    other,
                    matching: false,
                })
                .collect();
            Ok((q, pairs))
        })
        .collect();
    mined.into_iter().collect()
}

/// Negatives from Euclidean distance on the input features.
pub fn mine_negatives_offline(
    world: &ModelWorld,
    store: &FeatureStore,
    p: &MiningParams,
    rng: &mut Rng,
) -> Result<NegativeMap> {
    if !store.is_aligned_with(world) {
        return Err(Error::Shape(
            "feature store rows do not follow world image order".into(),
        ));
    }
    mine_negatives_with(world, p, rng, |q, k| offline_pool(world, store, q, k))
}

/// Negatives from Hamming distance on the current codes.
pub fn mine_negatives_online(
    world: &ModelWorld,
    codes: &CodeDatabase,
    p: &MiningParams,
    rng: &mut Rng,
) -> Result<NegativeMap> {
    if codes.len() != world.num_images() {
        return Err(Error::Shape(format!(
            "{} codes for {} images",
            codes.len(),
            world.num_images()
        )));
    }
    mine_negatives_with(world, p, rng, |q, k| online_pool(world, codes, q, k))
}

/// One epoch of batches: training queries in shuffled order, grouped
/// `queries_per_batch` at a time, each bringing its match and negatives.
pub fn assemble_batches(
    pairs: &PairSet,
    queries_per_batch: usize,
    rng: &mut Rng,
) -> Vec<Vec<TrainingPair>> {
    let queries_per_batch = queries_per_batch.max(1);
    let mut order: Vec<usize> = (0..pairs.matches.len()).collect();
    rng.shuffle(&mut order);
    order
        .chunks(queries_per_batch)
        .map(|chunk| {
            let mut batch = Vec::new();
            for &i in chunk {
                let m = pairs.matches[i];
                batch.push(m);
                if let Some(neg) = pairs.negatives.get(&m.query) {
                    batch.extend_from_slice(neg);
                }
            }
            batch
        })
        .collect()
}

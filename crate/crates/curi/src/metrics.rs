//! Evaluation metrics: class-balanced accuracy, average precision over a
//! large test pool, and the strong/weak compositionality gap.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::episode::NegativesMode;
use crate::exec::evaluate;
use crate::filter::HypothesisSpace;
use crate::rng::substream;
use crate::scene::{sample_scene, Scene, ScenePool, DEFAULT_OBJECT_RANGE};
use crate::splits::SplitKind;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("class-balanced accuracy needs both classes present")]
    SingleClass,
    #[error("average precision needs at least one positive")]
    NoPositives,
    #[error("scores and labels disagree in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("strong and weak reports cover different episodes")]
    MismatchedEpisodes,
    #[error("could not find {need} scenes satisfying concept {concept}")]
    PoolConstruction { concept: u64, need: usize },
}

/// Mean of per-class accuracies. A prediction is positive iff its score is
/// strictly above the threshold, so an uninformative 0.5 score predicts
/// negative and lands exactly at chance.
pub fn class_balanced_accuracy(
    scores: &[f64],
    labels: &[bool],
    threshold: f64,
) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch(scores.len(), labels.len()));
    }
    let (mut tp, mut tn, mut p, mut n) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &y) in scores.iter().zip(labels) {
        let predicted = s > threshold;
        if y {
            p += 1;
            if predicted {
                tp += 1;
            }
        } else {
            n += 1;
            if !predicted {
                tn += 1;
            }
        }
    }
    if p == 0 || n == 0 {
        return Err(MetricError::SingleClass);
    }
    Ok((tp as f64 / p as f64 + tn as f64 / n as f64) / 2.0)
}

/// Interpolation-free average precision: the mean of precision values at
/// each positive's rank, with items ordered by descending score and ties
/// broken by ascending id.
pub fn average_precision(items: &[(u64, f64, bool)]) -> Result<f64, MetricError> {
    let positives = items.iter().filter(|(_, _, y)| *y).count();
    if positives == 0 {
        return Err(MetricError::NoPositives);
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| {
        items[b].1
            .partial_cmp(&items[a].1)
            .expect("scores must not be NaN")
            .then(items[a].0.cmp(&items[b].0))
    });
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if items[i].2 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

/// The large evaluation scene set `T`: for every concept in the space, `k`
/// scenes where it holds, deduplicated. Scenes normally come from the
/// filter pool; fresh scenes are rejection-sampled only when the pool lacks
/// `k` positives for some concept.
#[derive(Debug, Clone, PartialEq)]
pub struct MapPool {
    /// Ids into the filter pool, ascending.
    pub pool_ids: Vec<u64>,
    /// Extra scenes minted outside the pool (rare; tiny pools only).
    pub fresh: Vec<Scene>,
    pub k: usize,
}

pub const DEFAULT_MAP_K: usize = 3;
const FRESH_SCENE_ATTEMPTS: usize = 1_000_000;

impl MapPool {
    pub fn len(&self) -> usize {
        self.pool_ids.len() + self.fresh.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Ground-truth labels of one concept over the whole target set:
    /// signature bits for pool scenes, direct evaluation for fresh ones.
    pub fn concept_labels(&self, space: &HypothesisSpace, concept: u64) -> Vec<bool> {
        let c = space.concept(concept);
        let mut labels: Vec<bool> = self
            .pool_ids
            .iter()
            .map(|&s| c.signature.bits.get(s as usize))
            .collect();
        labels.extend(self.fresh.iter().map(|s| evaluate(&c.ast, s)));
        labels
    }

    /// Stable per-item ids for ranking: pool ids, then fresh ids starting
    /// past the pool.
    pub fn item_ids(&self, pool_len: usize) -> Vec<u64> {
        let mut ids = self.pool_ids.clone();
        ids.extend((0..self.fresh.len() as u64).map(|i| pool_len as u64 + i));
        ids
    }
}

/// Builds the mAP target set.
pub fn build_map_pool(
    space: &HypothesisSpace,
    pool: &ScenePool,
    k: usize,
    seed: u64,
) -> Result<MapPool, MetricError> {
    let mut chosen: Vec<u64> = Vec::with_capacity(space.len() * k);
    let mut fresh: Vec<Scene> = Vec::new();
    for c in &space.concepts {
        let trues = c.signature.bits.ones();
        let mut rng = substream(seed, "map_pool", c.id);
        if trues.len() >= k {
            let picks = rand::seq::index::sample(&mut rng, trues.len(), k);
            chosen.extend(picks.iter().map(|i| trues[i] as u64));
        } else {
            chosen.extend(trues.iter().map(|&i| i as u64));
            let mut minted = 0usize;
            let mut attempts = 0usize;
            while minted < k - trues.len() {
                attempts += 1;
                if attempts > FRESH_SCENE_ATTEMPTS {
                    return Err(MetricError::PoolConstruction {
                        concept: c.id,
                        need: k,
                    });
                }
                let id = (pool.len() + fresh.len()) as u64;
                let scene = sample_scene(&mut rng, id, DEFAULT_OBJECT_RANGE)
                    .expect("default range is feasible");
                if evaluate(&c.ast, &scene) {
                    fresh.push(scene);
                    minted += 1;
                }
            }
        }
    }
    chosen.sort_unstable();
    chosen.dedup();
    Ok(MapPool {
        pool_ids: chosen,
        fresh,
        k,
    })
}

/// Mean AP across episodes: each row pairs one episode's score vector over
/// the target set with that episode's ground-truth labels.
pub fn map_over_episodes(
    ids: &[u64],
    rows: &[(Vec<f64>, Vec<bool>)],
) -> Result<f64, MetricError> {
    if rows.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (scores, labels) in rows {
        if scores.len() != labels.len() || scores.len() != ids.len() {
            return Err(MetricError::LengthMismatch(scores.len(), labels.len()));
        }
        let items: Vec<(u64, f64, bool)> = ids
            .iter()
            .zip(scores.iter().zip(labels))
            .map(|(&id, (&s, &y))| (id, s, y))
            .collect();
        total += average_precision(&items)?;
    }
    Ok(total / rows.len() as f64)
}

/// Signed difference between two aggregates of the same metric over the
/// same episodes.
pub fn comp_gap(
    strong: &[(u64, f64)],
    weak: &[(u64, f64)],
) -> Result<f64, MetricError> {
    if strong.len() != weak.len()
        || strong.iter().zip(weak).any(|((a, _), (b, _))| a != b)
    {
        return Err(MetricError::MismatchedEpisodes);
    }
    if strong.is_empty() {
        return Ok(0.0);
    }
    let mean = |v: &[(u64, f64)]| v.iter().map(|(_, x)| *x).sum::<f64>() / v.len() as f64;
    Ok(mean(strong) - mean(weak))
}

/// Aggregates for one oracle on one split/mode evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleMetrics {
    pub map: f64,
    pub cba: f64,
    pub fallback_fraction: f64,
}

/// The per-(split, negatives-mode) comparison of both oracles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: SplitKind,
    pub negatives: NegativesMode,
    pub strong: OracleMetrics,
    pub weak: OracleMetrics,
    pub comp_gap_map: f64,
    pub comp_gap_cba: f64,
    pub episodes: usize,
    pub seed: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn items(scores: &[f64], labels: &[bool]) -> Vec<(u64, f64, bool)> {
        scores
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (&s, &y))| (i as u64, s, y))
            .collect()
    }

    #[test]
    fn cba_basics() {
        // All correct.
        let labels = [true, true, false, false];
        assert_eq!(
            class_balanced_accuracy(&[0.9, 0.8, 0.1, 0.2], &labels, 0.5).unwrap(),
            1.0
        );
        // Predict-all-positive on 5 pos / 20 neg averages to 0.5.
        let mut labels = vec![true; 5];
        labels.extend(vec![false; 20]);
        let scores = vec![0.9; 25];
        assert_eq!(class_balanced_accuracy(&scores, &labels, 0.5).unwrap(), 0.5);
        // Uninformative 0.5 scores land exactly at chance under the strict
        // threshold: negatives right, positives wrong.
        let scores = vec![0.5; 25];
        assert_eq!(class_balanced_accuracy(&scores, &labels, 0.5).unwrap(), 0.5);
        // Single-class input is an error.
        assert_eq!(
            class_balanced_accuracy(&[0.9, 0.1], &[true, true], 0.5),
            Err(MetricError::SingleClass)
        );
    }

    #[test]
    fn ap_hand_cases() {
        // All positives ranked first.
        let v = items(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]);
        assert_eq!(average_precision(&v).unwrap(), 1.0);
        // Positive at rank 2 of 2.
        let v = items(&[0.2, 0.9], &[true, false]);
        assert_eq!(average_precision(&v).unwrap(), 0.5);
        // No positives.
        let v = items(&[0.2, 0.9], &[false, false]);
        assert_eq!(average_precision(&v), Err(MetricError::NoPositives));
    }

    #[test]
    fn ap_tie_break_is_id_ascending_and_order_invariant() {
        // Two tied scores; the positive has the smaller id, so it ranks first.
        let v = vec![(0u64, 0.7, true), (1u64, 0.7, false)];
        assert_eq!(average_precision(&v).unwrap(), 1.0);
        let mut shuffled = v.clone();
        shuffled.swap(0, 1);
        assert_eq!(average_precision(&shuffled).unwrap(), 1.0);
        // With the positive on the larger id it ranks second.
        let v = vec![(0u64, 0.7, false), (1u64, 0.7, true)];
        assert_eq!(average_precision(&v).unwrap(), 0.5);
    }

    /// Independent quadratic oracle: recompute precision from scratch at
    /// every rank of the same canonical ordering, then average over the
    /// ranks that hold positives.
    fn ap_brute_force(items: &[(u64, f64, bool)]) -> f64 {
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.sort_by(|&a, &b| {
            items[b].1
                .partial_cmp(&items[a].1)
                .unwrap()
                .then(items[a].0.cmp(&items[b].0))
        });
        let positives = items.iter().filter(|(_, _, y)| *y).count();
        let mut sum = 0.0;
        for rank in 1..=order.len() {
            if items[order[rank - 1]].2 {
                let hits_at_rank = order[..rank]
                    .iter()
                    .filter(|&&i| items[i].2)
                    .count();
                sum += hits_at_rank as f64 / rank as f64;
            }
        }
        sum / positives as f64
    }

    #[test]
    fn ap_matches_brute_force_including_ties() {
        let mut rng = substream(7, "ap_oracle", 0);
        for round in 0..500 {
            let n = rng.gen_range(2..60);
            // Coarse score grid to force ties.
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..5) as f64 / 4.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
            labels[0] = true;
            let v = items(&scores, &labels);
            let fast = average_precision(&v).unwrap();
            let slow = ap_brute_force(&v);
            assert!(
                (fast - slow).abs() < 1e-12,
                "round {round}: {fast} vs {slow}"
            );
        }
    }

    #[test]
    fn comp_gap_requires_matching_episodes() {
        let strong = vec![(0u64, 0.9), (1, 0.8)];
        let weak = vec![(0u64, 0.4), (1, 0.6)];
        let gap = comp_gap(&strong, &weak).unwrap();
        assert!((gap - 0.35).abs() < 1e-12);
        let other = vec![(0u64, 0.4), (2, 0.6)];
        assert_eq!(
            comp_gap(&strong, &other),
            Err(MetricError::MismatchedEpisodes)
        );
    }

    #[test]
    fn map_pool_covers_every_concept() {
        use crate::filter::{build_space, FilterThresholds};
        use crate::grammar::{CompiledGrammar, GrammarConfig};
        use crate::scene::build_pool;

        let g = CompiledGrammar::new(GrammarConfig::default()).unwrap();
        let mut rng = substream(300, "map_pool_test", 0);
        let raw: Vec<_> = (0..4000).map(|_| g.sample(&mut rng)).collect();
        let pool = build_pool(4000, 300);
        let space = build_space(&raw, &pool, FilterThresholds::default()).unwrap();
        let t = build_map_pool(&space, &pool, DEFAULT_MAP_K, 0).unwrap();
        assert!(t.len() <= DEFAULT_MAP_K * space.len());
        assert!(t.fresh.is_empty(), "pool has >=10 positives per concept");
        // Every concept keeps at least one positive after dedup, and the
        // stored ground truth matches direct evaluation.
        for c in &space.concepts {
            let labels = t.concept_labels(&space, c.id);
            assert!(labels.iter().any(|&y| y), "concept {} lost positives", c.id);
            for (&scene, &y) in t.pool_ids.iter().zip(&labels) {
                assert_eq!(evaluate(&c.ast, &pool.scenes[scene as usize]), y);
            }
        }
        // Deterministic.
        assert_eq!(t, build_map_pool(&space, &pool, DEFAULT_MAP_K, 0).unwrap());
    }
}

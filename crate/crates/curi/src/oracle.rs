//! Exact strong/weak ideal-learner inference.
//!
//! Both oracles share a length prior `w(h) ∝ exp(-0.2 * tokens(h))` over
//! their hypothesis sets; the strong oracle sees train ∪ test concepts, the
//! weak oracle train only. The likelihood is deterministic 0/1, so the
//! posterior is the prior restricted to hypotheses consistent with every
//! support label and renormalized. An empty consistent set (possible for
//! the weak oracle on held-out concepts) falls back to a flat 0.5
//! predictive, reported per run.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::HypothesisSpace;

pub const LENGTH_PRIOR_RATE: f64 = 0.2;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("cannot build a prior over an empty hypothesis set")]
    EmptyHypothesisSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleKind {
    Strong,
    Weak,
}

impl OracleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OracleKind::Strong => "strong",
            OracleKind::Weak => "weak",
        }
    }
}

/// A normalized length prior over a hypothesis id set.
#[derive(Debug, Clone, PartialEq)]
pub struct OraclePrior {
    pub kind: OracleKind,
    /// Ascending, deduplicated concept ids.
    pub ids: Vec<u64>,
    /// Normalized weights aligned with `ids`.
    pub weights: Vec<f64>,
}

impl OraclePrior {
    /// Builds the prior from `(id, postfix length)` entries. Duplicate ids
    /// collapse to one slot (the strong set is a union of two sides).
    pub fn new(kind: OracleKind, entries: &[(u64, usize)]) -> Result<Self, OracleError> {
        let mut entries: Vec<(u64, usize)> = entries.to_vec();
        entries.sort_unstable();
        entries.dedup();
        if entries.is_empty() {
            return Err(OracleError::EmptyHypothesisSet);
        }
        let raw: Vec<f64> = entries
            .iter()
            .map(|(_, len)| (-LENGTH_PRIOR_RATE * *len as f64).exp())
            .collect();
        let total: f64 = raw.iter().sum();
        Ok(OraclePrior {
            kind,
            ids: entries.into_iter().map(|(id, _)| id).collect(),
            weights: raw.into_iter().map(|w| w / total).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// The prior restricted to support-consistent hypotheses.
#[derive(Debug, Clone, PartialEq)]
pub struct OraclePosterior {
    /// `(index into the prior, normalized weight)`, ascending by index.
    pub consistent: Vec<(usize, f64)>,
    /// Set when no hypothesis is consistent; the predictive is then 0.5.
    pub fallback: bool,
}

impl OraclePosterior {
    pub fn consistent_count(&self) -> usize {
        self.consistent.len()
    }
}

/// Conditions the prior on a labeled support set. `truth(id, scene)` is the
/// deterministic evaluation of hypothesis `id` on a scene reference;
/// signature-backed and direct-evaluation callers must agree bit-exactly.
pub fn posterior<F>(prior: &OraclePrior, support: &[(u64, bool)], truth: F) -> OraclePosterior
where
    F: Fn(u64, u64) -> bool,
{
    let mut consistent: Vec<(usize, f64)> = Vec::new();
    let mut total = 0.0;
    for (i, (&id, &w)) in prior.ids.iter().zip(&prior.weights).enumerate() {
        if support.iter().all(|&(scene, y)| truth(id, scene) == y) {
            consistent.push((i, w));
            total += w;
        }
    }
    if consistent.is_empty() {
        return OraclePosterior {
            consistent,
            fallback: true,
        };
    }
    for (_, w) in consistent.iter_mut() {
        *w /= total;
    }
    OraclePosterior {
        consistent,
        fallback: false,
    }
}

/// Posterior predictive probability that the scene is a positive:
/// the posterior mass of hypotheses true on it, or 0.5 under fallback.
pub fn predictive<F>(prior: &OraclePrior, post: &OraclePosterior, scene: u64, truth: F) -> f64
where
    F: Fn(u64, u64) -> bool,
{
    if post.fallback {
        return 0.5;
    }
    post.consistent
        .iter()
        .filter(|(i, _)| truth(prior.ids[*i], scene))
        .map(|(_, w)| *w)
        .sum()
}

/// Per-episode oracle output over a target scene list.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredEpisode {
    pub scores: Vec<f64>,
    pub consistent: usize,
    pub fallback: bool,
}

/// Conditions on the support set and scores every target scene.
pub fn score_episode<F>(
    prior: &OraclePrior,
    support: &[(u64, bool)],
    targets: &[u64],
    truth: F,
) -> ScoredEpisode
where
    F: Fn(u64, u64) -> bool,
{
    let post = posterior(prior, support, &truth);
    let scores = targets
        .iter()
        .map(|&scene| predictive(prior, &post, scene, &truth))
        .collect();
    ScoredEpisode {
        scores,
        consistent: post.consistent_count(),
        fallback: post.fallback,
    }
}

/// Signature-backed truth lookup for scenes drawn from the filter pool.
pub fn pool_truth(space: &HypothesisSpace) -> impl Fn(u64, u64) -> bool + '_ {
    |id, scene| space.concept(id).signature.bits.get(scene as usize)
}

/// Per-episode oracle record as persisted to JSONL.
#[derive(Debug, Clone, Serialize)]
pub struct OracleRecord {
    pub idx: u64,
    pub oracle: OracleKind,
    pub consistent: usize,
    pub fallback: bool,
    pub scores: Vec<f64>,
}

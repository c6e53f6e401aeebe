//! Few-shot episode construction: support and query sets of labeled scenes
//! for one concept, with hard or easy negatives.
//!
//! Hard negatives come from scenes where some alternative hypothesis
//! consistent with the positives is true but the episode concept is false,
//! topped up with random concept-false scenes when the mined set runs out.

use rand::seq::index::sample as index_sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use thiserror::Error;

use crate::bits::BitVec;
use crate::exec::evaluate;
use crate::filter::HypothesisSpace;
use crate::oracle::{OracleKind, OraclePrior};
use crate::rng::substream;
use crate::scene::Scene;
use crate::splits::{Side, SplitAssignment, SplitKind};

pub const POSITIVES_PER_SET: usize = 5;
pub const NEGATIVES_PER_SET: usize = 20;
pub const SET_SIZE: usize = POSITIVES_PER_SET + NEGATIVES_PER_SET;

#[derive(Debug, Error, PartialEq)]
pub enum EpisodeError {
    #[error("cannot draw concepts from an empty split side")]
    EmptySide,
    #[error("concept {concept} is true on {have} pool scenes, {need} needed")]
    InsufficientPositives {
        concept: u64,
        have: usize,
        need: usize,
    },
    #[error("concept {concept} is false on {have} pool scenes, {need} needed")]
    InsufficientScenes {
        concept: u64,
        have: usize,
        need: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativesMode {
    Hard,
    Easy,
}

impl NegativesMode {
    pub const ALL: [NegativesMode; 2] = [NegativesMode::Hard, NegativesMode::Easy];

    pub fn as_str(self) -> &'static str {
        match self {
            NegativesMode::Hard => "hard",
            NegativesMode::Easy => "easy",
        }
    }

    pub fn parse(s: &str) -> Option<NegativesMode> {
        NegativesMode::ALL.iter().copied().find(|m| m.as_str() == s)
    }
}

/// One meta-learning episode. Scene ids index the filter pool.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub idx: u64,
    pub concept_id: u64,
    pub kind: SplitKind,
    pub mode: NegativesMode,
    pub support: Vec<(u64, bool)>,
    pub query: Vec<(u64, bool)>,
    /// Alternative hypotheses consistent with the support positives.
    pub alt_support: Vec<u64>,
    /// Alternatives recomputed from the query positives.
    pub alt_query: Vec<u64>,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledScene {
    pub scene: u64,
    pub y: u8,
}

/// Episode as persisted to JSONL.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub idx: u64,
    pub concept_id: u64,
    pub mode: NegativesMode,
    pub support: Vec<LabeledScene>,
    pub query: Vec<LabeledScene>,
    pub alt_support: Vec<u64>,
    pub alt_query: Vec<u64>,
}

impl From<&Episode> for EpisodeRecord {
    fn from(e: &Episode) -> Self {
        let pairs = |v: &[(u64, bool)]| {
            v.iter()
                .map(|&(scene, y)| LabeledScene {
                    scene,
                    y: y as u8,
                })
                .collect()
        };
        EpisodeRecord {
            idx: e.idx,
            concept_id: e.concept_id,
            mode: e.mode,
            support: pairs(&e.support),
            query: pairs(&e.query),
            alt_support: e.alt_support.clone(),
            alt_query: e.alt_query.clone(),
        }
    }
}

/// Draws a concept id proportional to the normalized length prior.
pub fn draw_concept(prior: &OraclePrior, rng: &mut impl Rng) -> u64 {
    let t = rng.gen::<f64>();
    let mut acc = 0.0;
    for (&id, &w) in prior.ids.iter().zip(&prior.weights) {
        acc += w;
        if t < acc {
            return id;
        }
    }
    *prior.ids.last().expect("prior is nonempty")
}

/// All hypotheses other than `h` whose pool signature is true on every
/// positive scene. Synonyms of `h` qualify; they simply mine no negatives.
pub fn find_alternatives(space: &HypothesisSpace, h: u64, positives: &[u64]) -> Vec<u64> {
    space
        .concepts
        .iter()
        .filter(|c| {
            c.id != h
                && positives
                    .iter()
                    .all(|&scene| c.signature.bits.get(scene as usize))
        })
        .map(|c| c.id)
        .collect()
}

/// Direct-evaluation variant for positives that are not pool scenes.
pub fn find_alternatives_scenes(space: &HypothesisSpace, h: u64, positives: &[Scene]) -> Vec<u64> {
    space
        .concepts
        .iter()
        .filter(|c| c.id != h && positives.iter().all(|s| evaluate(&c.ast, s)))
        .map(|c| c.id)
        .collect()
}

struct EpisodeSampler<'a> {
    space: &'a HypothesisSpace,
    h_bits: &'a BitVec,
    trues: Vec<u64>,
    pool_len: usize,
    distinct: bool,
    used: HashSet<u64>,
}

impl<'a> EpisodeSampler<'a> {
    fn available_positives(&self) -> Vec<u64> {
        self.trues
            .iter()
            .copied()
            .filter(|s| !self.used.contains(s))
            .collect()
    }

    fn mark(&mut self, scenes: &[u64]) {
        if self.distinct {
            self.used.extend(scenes.iter().copied());
        }
    }

    fn draw_positives(&mut self, rng: &mut (impl Rng + ?Sized)) -> Result<Vec<u64>, EpisodeError> {
        let avail = if self.distinct {
            self.available_positives()
        } else {
            self.trues.clone()
        };
        if avail.len() < POSITIVES_PER_SET {
            return Err(EpisodeError::InsufficientPositives {
                concept: 0,
                have: avail.len(),
                need: POSITIVES_PER_SET,
            });
        }
        let picks: Vec<u64> = index_sample(rng, avail.len(), POSITIVES_PER_SET)
            .iter()
            .map(|i| avail[i])
            .collect();
        self.mark(&picks);
        Ok(picks)
    }

    /// Uniform concept-false scenes, avoiding already-used ids. Rejection
    /// sampling with a deterministic enumeration fallback.
    fn draw_random_negatives(
        &mut self,
        n: usize,
        exclude: &HashSet<u64>,
        rng: &mut (impl Rng + ?Sized),
    ) -> Vec<u64> {
        let mut picks: Vec<u64> = Vec::with_capacity(n);
        let mut local: HashSet<u64> = HashSet::with_capacity(n);
        let mut tries = 0usize;
        while picks.len() < n && tries < 10_000 {
            tries += 1;
            let s = rng.gen_range(0..self.pool_len as u64);
            if self.h_bits.get(s as usize)
                || local.contains(&s)
                || exclude.contains(&s)
                || (self.distinct && self.used.contains(&s))
            {
                continue;
            }
            local.insert(s);
            picks.push(s);
        }
        if picks.len() < n {
            let mut avail: Vec<u64> = (0..self.pool_len as u64)
                .filter(|&s| {
                    !self.h_bits.get(s as usize)
                        && !local.contains(&s)
                        && !exclude.contains(&s)
                        && !(self.distinct && self.used.contains(&s))
                })
                .collect();
            let missing = n - picks.len();
            for i in index_sample(rng, avail.len(), missing.min(avail.len())).iter() {
                picks.push(avail[i]);
            }
            avail.clear();
        }
        self.mark(&picks);
        picks
    }

    /// Hard negatives: uniform over scenes where some alternative is true
    /// and the concept is false, topped up with random concept-false scenes.
    fn draw_hard_negatives(
        &mut self,
        alternatives: &[u64],
        rng: &mut (impl Rng + ?Sized),
    ) -> Vec<u64> {
        let mut union = BitVec::zeros(self.pool_len);
        for &alt in alternatives {
            union.or_and_not(&self.space.concept(alt).signature.bits, self.h_bits);
        }
        let avail: Vec<u64> = union
            .ones()
            .into_iter()
            .map(|s| s as u64)
            .filter(|s| !(self.distinct && self.used.contains(s)))
            .collect();
        let mut picks: Vec<u64> = if avail.len() >= NEGATIVES_PER_SET {
            index_sample(rng, avail.len(), NEGATIVES_PER_SET)
                .iter()
                .map(|i| avail[i])
                .collect()
        } else {
            avail
        };
        self.mark(&picks);
        if picks.len() < NEGATIVES_PER_SET {
            let exclude: HashSet<u64> = picks.iter().copied().collect();
            let top_up =
                self.draw_random_negatives(NEGATIVES_PER_SET - picks.len(), &exclude, rng);
            picks.extend(top_up);
        }
        picks
    }

    fn draw_negatives(
        &mut self,
        mode: NegativesMode,
        alternatives: &[u64],
        rng: &mut (impl Rng + ?Sized),
    ) -> Vec<u64> {
        match mode {
            NegativesMode::Easy => self.draw_random_negatives(NEGATIVES_PER_SET, &HashSet::new(), rng),
            NegativesMode::Hard => self.draw_hard_negatives(alternatives, rng),
        }
    }
}

/// Samples one episode for concept `h`. The support set is built first;
/// the query set repeats every step (fresh positives, alternatives
/// recomputed from them, fresh negatives). With `distinct_scenes` set, no
/// scene id repeats anywhere in the episode.
pub fn sample_episode(
    space: &HypothesisSpace,
    h: u64,
    mode: NegativesMode,
    distinct_scenes: bool,
    rng: &mut impl Rng,
) -> Result<(Vec<(u64, bool)>, Vec<(u64, bool)>, Vec<u64>, Vec<u64>), EpisodeError> {
    let concept = space.concept(h);
    let trues: Vec<u64> = concept.signature.bits.ones().iter().map(|&i| i as u64).collect();
    let falses = space.pool_len - trues.len();
    let (need_pos, need_neg) = if distinct_scenes {
        (2 * POSITIVES_PER_SET, 2 * NEGATIVES_PER_SET)
    } else {
        (POSITIVES_PER_SET, NEGATIVES_PER_SET)
    };
    if trues.len() < need_pos {
        return Err(EpisodeError::InsufficientPositives {
            concept: h,
            have: trues.len(),
            need: need_pos,
        });
    }
    if falses < need_neg {
        return Err(EpisodeError::InsufficientScenes {
            concept: h,
            have: falses,
            need: need_neg,
        });
    }

    let mut sampler = EpisodeSampler {
        space,
        h_bits: &concept.signature.bits,
        trues,
        pool_len: space.pool_len,
        distinct: distinct_scenes,
        used: HashSet::new(),
    };

    let mut build_set = |rng: &mut dyn rand::RngCore| -> Result<(Vec<(u64, bool)>, Vec<u64>), EpisodeError> {
        let positives = sampler.draw_positives(rng).map_err(|e| match e {
            EpisodeError::InsufficientPositives { have, need, .. } => {
                EpisodeError::InsufficientPositives {
                    concept: h,
                    have,
                    need,
                }
            }
            other => other,
        })?;
        let alternatives = find_alternatives(space, h, &positives);
        let negatives = sampler.draw_negatives(mode, &alternatives, rng);
        debug_assert_eq!(negatives.len(), NEGATIVES_PER_SET);
        let mut set: Vec<(u64, bool)> = positives.into_iter().map(|s| (s, true)).collect();
        set.extend(negatives.into_iter().map(|s| (s, false)));
        Ok((set, alternatives))
    };

    let (support, alt_support) = build_set(rng)?;
    let (query, alt_query) = build_set(rng)?;

    debug_assert!(support
        .iter()
        .chain(&query)
        .all(|&(s, y)| concept.signature.bits.get(s as usize) == y));

    Ok((support, query, alt_support, alt_query))
}

/// Builds the ordered episode list for one split side. Episode `i` uses the
/// stream `(seed, "episodes/<kind>/<mode>/<side>", i)`, so generation
/// parallelizes without affecting content.
pub fn build_episode_set(
    space: &HypothesisSpace,
    assignment: &SplitAssignment,
    side: Side,
    count: usize,
    mode: NegativesMode,
    seed: u64,
    distinct_scenes: bool,
) -> Result<Vec<Episode>, EpisodeError> {
    let ids = assignment.side(side);
    if ids.is_empty() {
        return Err(EpisodeError::EmptySide);
    }
    let entries: Vec<(u64, usize)> = ids
        .iter()
        .map(|&id| (id, space.concept(id).length))
        .collect();
    let prior = OraclePrior::new(OracleKind::Weak, &entries)
        .expect("nonempty side checked above");
    let tag = format!(
        "episodes/{}/{}/{}",
        assignment.kind.as_str(),
        mode.as_str(),
        side.as_str()
    );
    (0..count as u64)
        .into_par_iter()
        .map(|idx| {
            let mut rng = substream(seed, &tag, idx);
            let h = draw_concept(&prior, &mut rng);
            let (support, query, alt_support, alt_query) =
                sample_episode(space, h, mode, distinct_scenes, &mut rng)?;
            Ok(Episode {
                idx,
                concept_id: h,
                kind: assignment.kind,
                mode,
                support,
                query,
                alt_support,
                alt_query,
                seed,
            })
        })
        .collect()
}

/// Re-derived soundness facts about an emitted episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeAudit {
    /// Stored labels that disagree with re-evaluating the concept.
    pub label_violations: usize,
    /// Exactly 5 positives and 20 negatives in each of support and query.
    pub class_counts_ok: bool,
    /// All 50 scene ids pairwise distinct.
    pub distinct_ok: bool,
    /// Hard mode: the negatives include every minable alternative-true
    /// scene up to 20, i.e. top-ups happen only on exhaustion.
    pub hard_negatives_ok: bool,
}

impl EpisodeAudit {
    pub fn is_clean(&self) -> bool {
        self.label_violations == 0
            && self.class_counts_ok
            && self.distinct_ok
            && self.hard_negatives_ok
    }
}

/// Audits one episode against the space it was generated from, assuming the
/// default distinct-scene policy.
pub fn audit_episode(space: &HypothesisSpace, e: &Episode) -> EpisodeAudit {
    let bits = &space.concept(e.concept_id).signature.bits;
    let label_violations = e
        .support
        .iter()
        .chain(&e.query)
        .filter(|&&(s, y)| bits.get(s as usize) != y)
        .count();

    let count_ok = |set: &[(u64, bool)]| {
        set.len() == SET_SIZE
            && set.iter().filter(|&&(_, y)| y).count() == POSITIVES_PER_SET
            && set.iter().filter(|&&(_, y)| !y).count() == NEGATIVES_PER_SET
    };
    let class_counts_ok = count_ok(&e.support) && count_ok(&e.query);

    let mut ids: Vec<u64> = e.support.iter().chain(&e.query).map(|&(s, _)| s).collect();
    ids.sort_unstable();
    let distinct_before = ids.len();
    ids.dedup();
    let distinct_ok = ids.len() == distinct_before;

    let hard_negatives_ok = match e.mode {
        NegativesMode::Easy => true,
        NegativesMode::Hard => {
            let union_of = |alts: &[u64]| {
                let mut union = BitVec::zeros(space.pool_len);
                for &alt in alts {
                    union.or_and_not(&space.concept(alt).signature.bits, bits);
                }
                union
            };
            let mined = |set: &[(u64, bool)], union: &BitVec| {
                set.iter()
                    .filter(|&&(s, y)| !y && union.get(s as usize))
                    .count()
            };
            let union_supp = union_of(&e.alt_support);
            let supp_ok = mined(&e.support, &union_supp)
                == NEGATIVES_PER_SET.min(union_supp.count_ones());

            let union_query = union_of(&e.alt_query);
            let support_negs: HashSet<u64> = e
                .support
                .iter()
                .filter(|&&(_, y)| !y)
                .map(|&(s, _)| s)
                .collect();
            let avail_query = union_query
                .ones()
                .iter()
                .filter(|&&s| !support_negs.contains(&(s as u64)))
                .count();
            let query_ok =
                mined(&e.query, &union_query) == NEGATIVES_PER_SET.min(avail_query);
            supp_ok && query_ok
        }
    };

    EpisodeAudit {
        label_violations,
        class_counts_ok,
        distinct_ok,
        hard_negatives_ok,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{build_space, FilterThresholds};
    use crate::grammar::{CompiledGrammar, GrammarConfig};
    use crate::scene::build_pool;
    use crate::splits::{assign, HoldoutSpec};

    fn fixture() -> (HypothesisSpace, SplitAssignment) {
        let g = CompiledGrammar::new(GrammarConfig::default()).unwrap();
        let mut rng = substream(200, "episode_test", 0);
        let raw: Vec<_> = (0..6000).map(|_| g.sample(&mut rng)).collect();
        let pool = build_pool(5000, 200);
        let space = build_space(&raw, &pool, FilterThresholds::default()).unwrap();
        let a = assign(&space, &HoldoutSpec::default_for(SplitKind::ConceptIid), 1).unwrap();
        (space, a)
    }

    #[test]
    fn draw_concept_prefers_short_hypotheses() {
        // Two concepts, lengths 5 and 10: expected ratio e over many draws.
        let prior =
            OraclePrior::new(OracleKind::Weak, &[(0, 5), (1, 10)]).unwrap();
        let mut rng = substream(1, "draw", 0);
        let n = 100_000;
        let short = (0..n)
            .filter(|_| draw_concept(&prior, &mut rng) == 0)
            .count();
        let p = std::f64::consts::E / (1.0 + std::f64::consts::E); // ~0.73106
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        let freq = short as f64 / n as f64;
        assert!(
            (freq - p).abs() <= 3.0 * sigma,
            "short-draw frequency {freq} not within 3 sigma of {p}"
        );
    }

    #[test]
    fn draw_concept_single_and_deterministic() {
        let prior = OraclePrior::new(OracleKind::Weak, &[(7, 5)]).unwrap();
        let mut rng = substream(2, "draw", 0);
        assert_eq!(draw_concept(&prior, &mut rng), 7);
        let many = OraclePrior::new(
            OracleKind::Weak,
            &(0..50u64).map(|i| (i, 5 + (i % 7) as usize)).collect::<Vec<_>>(),
        )
        .unwrap();
        let a: Vec<u64> = {
            let mut r = substream(3, "draw", 1);
            (0..100).map(|_| draw_concept(&many, &mut r)).collect()
        };
        let b: Vec<u64> = {
            let mut r = substream(3, "draw", 1);
            (0..100).map(|_| draw_concept(&many, &mut r)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn alternatives_exclude_h_and_match_brute_force() {
        let (space, _) = fixture();
        let mut rng = substream(5, "alts", 0);
        for _ in 0..20 {
            let h = rng.gen_range(0..space.len()) as u64;
            let trues = space.concept(h).signature.bits.ones();
            if trues.len() < POSITIVES_PER_SET {
                continue;
            }
            let positives: Vec<u64> = trues[..POSITIVES_PER_SET]
                .iter()
                .map(|&i| i as u64)
                .collect();
            let alts = find_alternatives(&space, h, &positives);
            assert!(!alts.contains(&h));
            // Brute force over every concept in the space.
            for c in &space.concepts {
                let consistent = positives
                    .iter()
                    .all(|&s| c.signature.bits.get(s as usize));
                assert_eq!(
                    alts.contains(&c.id),
                    consistent && c.id != h,
                    "alternative mismatch for concept {}",
                    c.id
                );
            }
        }
    }

    #[test]
    fn synonyms_are_alternatives() {
        let (space, _) = fixture();
        if let Some(cluster) = space.clusters.iter().find(|c| c.len() >= 2) {
            let h = cluster[0] as u64;
            let twin = cluster[1] as u64;
            let positives: Vec<u64> = space.concept(h).signature.bits.ones()[..POSITIVES_PER_SET]
                .iter()
                .map(|&i| i as u64)
                .collect();
            let alts = find_alternatives(&space, h, &positives);
            assert!(alts.contains(&twin));
        }
    }

    #[test]
    fn episodes_are_sound() {
        let (space, a) = fixture();
        for mode in NegativesMode::ALL {
            let eps =
                build_episode_set(&space, &a, Side::Test, 40, mode, 77, true).unwrap();
            assert_eq!(eps.len(), 40);
            for e in &eps {
                let audit = audit_episode(&space, e);
                assert!(audit.is_clean(), "{mode:?} episode {}: {audit:?}", e.idx);
                assert!(a.test.binary_search(&e.concept_id).is_ok());
            }
        }
    }

    #[test]
    fn easy_mode_records_no_mined_negative_requirement() {
        let (space, a) = fixture();
        let eps = build_episode_set(&space, &a, Side::Train, 20, NegativesMode::Easy, 3, true)
            .unwrap();
        for e in &eps {
            // Labels sound and counts exact even with random negatives.
            assert!(audit_episode(&space, e).is_clean());
        }
    }

    #[test]
    fn build_is_deterministic_and_order_stable() {
        let (space, a) = fixture();
        let x = build_episode_set(&space, &a, Side::Val, 30, NegativesMode::Hard, 9, true)
            .unwrap();
        let y = build_episode_set(&space, &a, Side::Val, 30, NegativesMode::Hard, 9, true)
            .unwrap();
        assert_eq!(x, y);
        for (i, e) in x.iter().enumerate() {
            assert_eq!(e.idx, i as u64);
        }
    }

    #[test]
    fn empty_side_is_an_error() {
        let (space, mut a) = fixture();
        a.val.clear();
        assert_eq!(
            build_episode_set(&space, &a, Side::Val, 5, NegativesMode::Easy, 1, true),
            Err(EpisodeError::EmptySide)
        );
    }

    #[test]
    fn no_alternatives_means_all_negatives_random() {
        let (space, _) = fixture();
        // Fabricate an episode for a concept with alternatives disabled by
        // passing an empty alternative list through the hard path.
        let h = 0u64;
        let concept = space.concept(h);
        let trues: Vec<u64> = concept.signature.bits.ones().iter().map(|&i| i as u64).collect();
        if trues.len() < 2 * POSITIVES_PER_SET {
            return;
        }
        let mut sampler = EpisodeSampler {
            space: &space,
            h_bits: &concept.signature.bits,
            trues,
            pool_len: space.pool_len,
            distinct: true,
            used: HashSet::new(),
        };
        let mut rng = substream(4, "noalt", 0);
        let negs = sampler.draw_hard_negatives(&[], &mut rng);
        assert_eq!(negs.len(), NEGATIVES_PER_SET);
        for s in negs {
            assert!(!concept.signature.bits.get(s as usize));
        }
    }
}

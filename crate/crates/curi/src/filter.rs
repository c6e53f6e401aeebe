//! Structural rejection, interestingness thresholds, deduplication, and
//! synonym clustering: raw grammar samples in, hypothesis space out.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::collections::HashMap;
use thiserror::Error;

use crate::exec::{signature, Signature};
use crate::grammar::{Atom, ConceptAst, Quantifier, ScalarExpr, SetVar};
use crate::scene::ScenePool;

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("no raw concepts to filter")]
    EmptyInput,
    #[error("cannot filter against an empty scene pool")]
    EmptyPool,
    #[error("no concept survived filtering; thresholds or pool too small")]
    EmptySpace,
}

/// Structural rejection rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RejectReason {
    /// R1: a `for-all` quantifier together with any use of `S_{-x}`;
    /// quantifying over everything-but-x under for-all collapses to
    /// quantifying over everything.
    ForAllWithComplement,
    /// R2: a property of the bound object compared against the same
    /// property of the same object, e.g. `color?(x) = color?(x)`.
    SelfComparison,
    /// R3: `all`/`any` over the full set with the same accessor applied to
    /// the bound object, e.g. `any(color?(S), color?(x))`; x belongs to S,
    /// so the `any` form is vacuous.
    FullSetSelfPredicate,
}

/// Returns the first rejection rule the concept trips, if any.
pub fn structural_reject(c: &ConceptAst) -> Option<RejectReason> {
    if c.quantifier == Quantifier::ForAll && c.uses_minus_bound() {
        return Some(RejectReason::ForAllWithComplement);
    }
    let mut self_comparison = false;
    c.for_each_comparison(|_, lhs, rhs| {
        if let (ScalarExpr::Access(p), ScalarExpr::Access(q)) = (lhs, rhs) {
            if p == q {
                self_comparison = true;
            }
        }
    });
    if self_comparison {
        return Some(RejectReason::SelfComparison);
    }
    let mut full_set_self = false;
    c.for_each_set_predicate(|_, sa, atom| {
        if sa.set == SetVar::Full && matches!(atom, Atom::Access(q) if *q == sa.property) {
            full_set_self = true;
        }
    });
    if full_set_self {
        return Some(RejectReason::FullSetSelfPredicate);
    }
    None
}

/// Interestingness window over a pool signature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterThresholds {
    /// Reject concepts true on more than this fraction of the pool.
    pub max_true_rate: f64,
    /// Reject concepts true on fewer than this many scenes.
    pub min_true_count: usize,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        FilterThresholds {
            max_true_rate: 0.10,
            min_true_count: 10,
        }
    }
}

/// Boundary-inclusive: a rate of exactly `max_true_rate` and a count of
/// exactly `min_true_count` are both accepted.
pub fn interesting(sig: &Signature, thresholds: &FilterThresholds) -> bool {
    sig.true_rate <= thresholds.max_true_rate && sig.true_count >= thresholds.min_true_count
}

/// Where each raw sample went; per-rule counts sum to the raw count.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub raw: usize,
    pub duplicates: usize,
    pub reject_forall_complement: usize,
    pub reject_self_comparison: usize,
    pub reject_full_set_self: usize,
    pub reject_too_frequent: usize,
    pub reject_too_rare: usize,
    pub accepted: usize,
}

impl Provenance {
    pub fn total(&self) -> usize {
        self.duplicates
            + self.reject_forall_complement
            + self.reject_self_comparison
            + self.reject_full_set_self
            + self.reject_too_frequent
            + self.reject_too_rare
            + self.accepted
    }
}

/// One accepted concept with its serialized form and pool signature.
#[derive(Debug, Clone)]
pub struct SpaceConcept {
    pub id: u64,
    pub ast: ConceptAst,
    pub tokens: Vec<String>,
    pub length: usize,
    pub signature: Signature,
}

/// The filtered hypothesis space over a fixed scene pool.
#[derive(Debug, Clone)]
pub struct HypothesisSpace {
    pub concepts: Vec<SpaceConcept>,
    /// Partition of concept indices by bit-identical signatures.
    pub clusters: Vec<Vec<usize>>,
    /// Concept index -> cluster index.
    pub cluster_of: Vec<usize>,
    pub provenance: Provenance,
    pub thresholds: FilterThresholds,
    pub pool_seed: u64,
    pub pool_len: usize,
}

impl HypothesisSpace {
    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn concept(&self, id: u64) -> &SpaceConcept {
        &self.concepts[id as usize]
    }

    /// Histogram of synonym-cluster sizes: size -> number of clusters.
    pub fn cluster_histogram(&self) -> BTreeMap<usize, usize> {
        let mut hist = BTreeMap::new();
        for cluster in &self.clusters {
            *hist.entry(cluster.len()).or_insert(0) += 1;
        }
        hist
    }

    pub fn ids_and_lengths(&self) -> Vec<(u64, usize)> {
        self.concepts.iter().map(|c| (c.id, c.length)).collect()
    }
}

/// Runs the full funnel: exact-string dedup, structural rejection, pool
/// signatures, the interestingness window, then synonym clustering.
pub fn build_space(
    raw: &[ConceptAst],
    pool: &ScenePool,
    thresholds: FilterThresholds,
) -> Result<HypothesisSpace, FilterError> {
    if raw.is_empty() {
        return Err(FilterError::EmptyInput);
    }
    if pool.is_empty() {
        return Err(FilterError::EmptyPool);
    }

    let mut provenance = Provenance {
        raw: raw.len(),
        ..Default::default()
    };

    let mut seen: HashMap<String, ()> = HashMap::with_capacity(raw.len());
    let mut unique: Vec<&ConceptAst> = Vec::with_capacity(raw.len());
    for c in raw {
        if seen.insert(c.key(), ()).is_some() {
            provenance.duplicates += 1;
        } else {
            unique.push(c);
        }
    }

    let mut clean: Vec<&ConceptAst> = Vec::with_capacity(unique.len());
    for c in unique {
        match structural_reject(c) {
            Some(RejectReason::ForAllWithComplement) => provenance.reject_forall_complement += 1,
            Some(RejectReason::SelfComparison) => provenance.reject_self_comparison += 1,
            Some(RejectReason::FullSetSelfPredicate) => provenance.reject_full_set_self += 1,
            None => clean.push(c),
        }
    }

    // The interestingness check runs inside the parallel pass so rejected
    // bit vectors are dropped immediately instead of accumulating.
    enum Outcome {
        Accepted(Signature),
        TooFrequent,
        TooRare,
    }
    let outcomes: Vec<Outcome> = clean
        .par_iter()
        .map(|c| {
            let sig = signature(c, pool).expect("pool checked nonempty");
            if interesting(&sig, &thresholds) {
                Outcome::Accepted(sig)
            } else if sig.true_rate > thresholds.max_true_rate {
                Outcome::TooFrequent
            } else {
                Outcome::TooRare
            }
        })
        .collect();

    let mut concepts: Vec<SpaceConcept> = Vec::new();
    for (c, outcome) in clean.into_iter().zip(outcomes) {
        let sig = match outcome {
            Outcome::Accepted(sig) => sig,
            Outcome::TooFrequent => {
                provenance.reject_too_frequent += 1;
                continue;
            }
            Outcome::TooRare => {
                provenance.reject_too_rare += 1;
                continue;
            }
        };
        let tokens = c.tokens();
        concepts.push(SpaceConcept {
            id: concepts.len() as u64,
            ast: c.clone(),
            length: tokens.len(),
            tokens,
            signature: sig,
        });
    }
    provenance.accepted = concepts.len();
    debug_assert_eq!(provenance.total(), provenance.raw);

    if concepts.is_empty() {
        return Err(FilterError::EmptySpace);
    }

    let (clusters, cluster_of) = cluster_synonyms(&concepts);
    Ok(HypothesisSpace {
        concepts,
        clusters,
        cluster_of,
        provenance,
        thresholds,
        pool_seed: pool.seed,
        pool_len: pool.len(),
    })
}

/// Reassembles a space from already-filtered parts (artifact loading);
/// clustering is recomputed from the signatures.
pub fn assemble_space(
    concepts: Vec<SpaceConcept>,
    provenance: Provenance,
    thresholds: FilterThresholds,
    pool_seed: u64,
    pool_len: usize,
) -> Result<HypothesisSpace, FilterError> {
    if concepts.is_empty() {
        return Err(FilterError::EmptySpace);
    }
    let (clusters, cluster_of) = cluster_synonyms(&concepts);
    Ok(HypothesisSpace {
        concepts,
        clusters,
        cluster_of,
        provenance,
        thresholds,
        pool_seed,
        pool_len,
    })
}

/// Groups concepts by signature hash, then confirms membership with a full
/// bit-vector comparison so hash collisions cannot merge distinct meanings.
fn cluster_synonyms(concepts: &[SpaceConcept]) -> (Vec<Vec<usize>>, Vec<usize>) {
    let mut by_hash: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, c) in concepts.iter().enumerate() {
        by_hash.entry(c.signature.hash.as_str()).or_default().push(i);
    }
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut buckets: Vec<Vec<usize>> = by_hash.into_values().collect();
    buckets.sort_by_key(|b| b[0]);
    for bucket in buckets {
        let mut subgroups: Vec<Vec<usize>> = Vec::new();
        for i in bucket {
            match subgroups
                .iter_mut()
                .find(|g| concepts[g[0]].signature.bits == concepts[i].signature.bits)
            {
                Some(g) => g.push(i),
                None => subgroups.push(vec![i]),
            }
        }
        clusters.extend(subgroups);
    }
    let mut cluster_of = vec![0usize; concepts.len()];
    for (ci, cluster) in clusters.iter().enumerate() {
        for &i in cluster {
            cluster_of[i] = ci;
        }
    }
    (clusters, cluster_of)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::*;
    use crate::rng::substream;
    use crate::scene::build_pool;

    fn exists(body: BoolExpr) -> ConceptAst {
        ConceptAst {
            quantifier: Quantifier::Exists,
            body,
        }
    }

    fn forall(body: BoolExpr) -> ConceptAst {
        ConceptAst {
            quantifier: Quantifier::ForAll,
            body,
        }
    }

    #[test]
    fn forall_with_complement_rejected() {
        let c = forall(BoolExpr::All(
            SetAccess {
                set: SetVar::MinusBound,
                property: Property::Color,
            },
            Atom::Const(Value::Color(Color::Red)),
        ));
        assert_eq!(
            structural_reject(&c),
            Some(RejectReason::ForAllWithComplement)
        );
        // exists with the complement set is fine.
        let ok = exists(BoolExpr::All(
            SetAccess {
                set: SetVar::MinusBound,
                property: Property::Color,
            },
            Atom::Const(Value::Color(Color::Red)),
        ));
        assert_eq!(structural_reject(&ok), None);
    }

    #[test]
    fn self_comparison_rejected_only_for_identical_accessors() {
        let bad = exists(BoolExpr::Eq(
            ScalarExpr::Access(Property::Color),
            ScalarExpr::Access(Property::Color),
        ));
        assert_eq!(structural_reject(&bad), Some(RejectReason::SelfComparison));
        let bad_gt = exists(BoolExpr::Gt(
            ScalarExpr::Access(Property::LocationX),
            ScalarExpr::Access(Property::LocationX),
        ));
        assert_eq!(
            structural_reject(&bad_gt),
            Some(RejectReason::SelfComparison)
        );
        // Different accessors on the same object are allowed.
        let ok = exists(BoolExpr::Eq(
            ScalarExpr::Access(Property::LocationX),
            ScalarExpr::Access(Property::LocationY),
        ));
        assert_eq!(structural_reject(&ok), None);
    }

    #[test]
    fn full_set_self_predicate_rejected() {
        let bad = exists(BoolExpr::Any(
            SetAccess {
                set: SetVar::Full,
                property: Property::Color,
            },
            Atom::Access(Property::Color),
        ));
        assert_eq!(
            structural_reject(&bad),
            Some(RejectReason::FullSetSelfPredicate)
        );
        // Over the complement set the predicate is informative and kept.
        let ok = exists(BoolExpr::All(
            SetAccess {
                set: SetVar::MinusBound,
                property: Property::Color,
            },
            Atom::Access(Property::Color),
        ));
        assert_eq!(structural_reject(&ok), None);
        // Different accessor families over the full set are kept.
        let ok2 = exists(BoolExpr::Any(
            SetAccess {
                set: SetVar::Full,
                property: Property::LocationY,
            },
            Atom::Access(Property::LocationX),
        ));
        assert_eq!(structural_reject(&ok2), None);
    }

    #[test]
    fn interestingness_window_boundaries() {
        let mk = |true_count: usize, len: usize| Signature {
            bits: crate::bits::BitVec::zeros(len),
            true_count,
            true_rate: true_count as f64 / len as f64,
            hash: String::new(),
        };
        let t = FilterThresholds::default();
        assert!(!interesting(&mk(50_000, 100_000), &t)); // rate 0.5
        assert!(!interesting(&mk(3, 100_000), &t)); // count 3
        assert!(interesting(&mk(10_000, 100_000), &t)); // rate exactly 0.10
        assert!(interesting(&mk(10, 100_000), &t)); // count exactly 10
        assert!(!interesting(&mk(10_001, 100_000), &t));
        assert!(!interesting(&mk(9, 100_000), &t));
    }

    fn sample_raw(n: usize, seed: u64) -> Vec<ConceptAst> {
        let g = CompiledGrammar::new(GrammarConfig::default()).unwrap();
        let mut rng = substream(seed, "filter_test", 0);
        (0..n).map(|_| g.sample(&mut rng)).collect()
    }

    #[test]
    fn duplicate_concepts_kept_once() {
        let pool = build_pool(2000, 1);
        let c = exists(BoolExpr::Eq(
            ScalarExpr::Access(Property::Color),
            ScalarExpr::Const(Value::Color(Color::Blue)),
        ));
        // A low-rate companion so the space is nonempty if the first is filtered.
        let mut raw = sample_raw(500, 2);
        raw.push(c.clone());
        raw.push(c.clone());
        let space = build_space(&raw, &pool, FilterThresholds::default()).unwrap();
        assert!(space.provenance.duplicates >= 1);
        let occurrences = space
            .concepts
            .iter()
            .filter(|sc| sc.ast == c)
            .count();
        assert!(occurrences <= 1);
    }

    #[test]
    fn provenance_sums_and_survivors_recheck_clean() {
        let pool = build_pool(5000, 3);
        let raw = sample_raw(3000, 4);
        let space = build_space(&raw, &pool, FilterThresholds::default()).unwrap();
        assert_eq!(space.provenance.total(), raw.len());
        assert!(space.provenance.accepted > 0);
        assert!(space.provenance.accepted < raw.len());
        for sc in &space.concepts {
            assert_eq!(structural_reject(&sc.ast), None);
            assert!(interesting(&sc.signature, &space.thresholds));
            assert_eq!(sc.length, sc.tokens.len());
        }
    }

    #[test]
    fn filtering_is_idempotent() {
        let pool = build_pool(3000, 5);
        let raw = sample_raw(2000, 6);
        let space = build_space(&raw, &pool, FilterThresholds::default()).unwrap();
        let again: Vec<ConceptAst> = space.concepts.iter().map(|c| c.ast.clone()).collect();
        let space2 = build_space(&again, &pool, FilterThresholds::default()).unwrap();
        assert_eq!(space2.provenance.accepted, space.provenance.accepted);
        assert_eq!(space2.provenance.duplicates, 0);
        for (a, b) in space.concepts.iter().zip(&space2.concepts) {
            assert_eq!(a.ast, b.ast);
            assert_eq!(a.signature.bits, b.signature.bits);
        }
    }

    #[test]
    fn synonym_clusters_group_identical_signatures() {
        let pool = build_pool(2000, 7);
        // An engineered co-evaluating pair, rare enough to pass the
        // interestingness window: >(locationX?(x), 6) under for-all and its
        // operand-swapped complement.
        let a = forall(BoolExpr::Gt(
            ScalarExpr::Access(Property::LocationX),
            ScalarExpr::Const(Value::Int(6)),
        ));
        let b = forall(BoolExpr::Not(Box::new(BoolExpr::Or(
            Box::new(BoolExpr::Gt(
                ScalarExpr::Const(Value::Int(6)),
                ScalarExpr::Access(Property::LocationX),
            )),
            Box::new(BoolExpr::Eq(
                ScalarExpr::Access(Property::LocationX),
                ScalarExpr::Const(Value::Int(6)),
            )),
        ))));
        let mut raw = sample_raw(800, 8);
        raw.push(a.clone());
        raw.push(b.clone());
        let space = build_space(&raw, &pool, FilterThresholds::default()).unwrap();
        let ia = space.concepts.iter().position(|c| c.ast == a);
        let ib = space.concepts.iter().position(|c| c.ast == b);
        let (ia, ib) = (ia.expect("a accepted"), ib.expect("b accepted"));
        assert_eq!(space.cluster_of[ia], space.cluster_of[ib]);
        // Cluster soundness: within a cluster bits identical, across clusters not.
        for cluster in &space.clusters {
            for &i in cluster {
                assert_eq!(
                    space.concepts[i].signature.bits,
                    space.concepts[cluster[0]].signature.bits
                );
            }
        }
        let hist = space.cluster_histogram();
        let modal = hist.iter().max_by_key(|(_, &count)| count).map(|(&s, _)| s);
        assert_eq!(modal, Some(1), "modal cluster size should be 1: {hist:?}");
    }

    #[test]
    fn empty_inputs_error() {
        let pool = build_pool(100, 9);
        assert!(matches!(
            build_space(&[], &pool, FilterThresholds::default()),
            Err(FilterError::EmptyInput)
        ));
        let raw = sample_raw(10, 10);
        let empty = build_pool(0, 9);
        assert!(matches!(
            build_space(&raw, &empty, FilterThresholds::default()),
            Err(FilterError::EmptyPool)
        ));
        // Impossible window: nothing survives.
        let tiny = build_pool(50, 11);
        let res = build_space(
            &raw,
            &tiny,
            FilterThresholds {
                max_true_rate: 0.0,
                min_true_count: 1,
            },
        );
        assert!(matches!(res, Err(FilterError::EmptySpace)));
    }
}

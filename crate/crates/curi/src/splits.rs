//! Structured generalization splits: partitions of the hypothesis space
//! into train/val/test for nine regimes, with synonym-aware validation.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::HypothesisSpace;
use crate::grammar::{vocabulary, Atom, ScalarExpr, Value};
use crate::rng::substream;
use crate::scene::GRID;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    InstanceIid,
    ConceptIid,
    Counting,
    Extrinsic,
    Intrinsic,
    Boolean,
    Complexity,
    BindingColor,
    BindingShape,
}

impl SplitKind {
    pub const ALL: [SplitKind; 9] = [
        SplitKind::InstanceIid,
        SplitKind::ConceptIid,
        SplitKind::Counting,
        SplitKind::Extrinsic,
        SplitKind::Intrinsic,
        SplitKind::Boolean,
        SplitKind::Complexity,
        SplitKind::BindingColor,
        SplitKind::BindingShape,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitKind::InstanceIid => "instance_iid",
            SplitKind::ConceptIid => "concept_iid",
            SplitKind::Counting => "counting",
            SplitKind::Extrinsic => "extrinsic",
            SplitKind::Intrinsic => "intrinsic",
            SplitKind::Boolean => "boolean",
            SplitKind::Complexity => "complexity",
            SplitKind::BindingColor => "binding_color",
            SplitKind::BindingShape => "binding_shape",
        }
    }

    pub fn parse(s: &str) -> Option<SplitKind> {
        SplitKind::ALL.iter().copied().find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SplitError {
    #[error("split {0} left an empty train or test side")]
    DegenerateSplit(&'static str),
    #[error("holdout token {0:?} is not in the grammar vocabulary")]
    UnknownToken(String),
}

/// What a split holds out. One struct covers all nine kinds; only the
/// fields relevant to a kind are consulted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutSpec {
    pub kind: SplitKind,
    /// Token pairs whose joint occurrence sends a concept to test
    /// (boolean, intrinsic, extrinsic).
    #[serde(default)]
    pub token_pairs: Vec<(String, String)>,
    /// Single tokens that send a concept to test (binding splits).
    #[serde(default)]
    pub held_tokens: Vec<String>,
    /// Complexity: concepts with at most this many tokens train.
    #[serde(default)]
    pub length_threshold: usize,
    /// Counting: held (count value, counted property value) pairs.
    #[serde(default)]
    pub count_pairs: Vec<(u8, String)>,
    /// Concept-IID test share of all concepts.
    #[serde(default)]
    pub test_fraction: f64,
    /// Share of the train side carved out for validation.
    #[serde(default)]
    pub val_fraction: f64,
}

pub const DEFAULT_TEST_FRACTION: f64 = 0.2;
pub const DEFAULT_VAL_FRACTION: f64 = 0.1;
pub const DEFAULT_COMPLEXITY_THRESHOLD: usize = 10;

/// Candidate property-value tokens for the counting holdout: every color,
/// shape, material, size, and grid coordinate.
fn property_value_tokens() -> Vec<String> {
    use crate::grammar::{Color, Material, Shape, Size};
    let mut v: Vec<String> = Vec::new();
    v.extend(Color::ALL.iter().map(|c| c.as_str().to_string()));
    v.extend(Shape::ALL.iter().map(|s| s.as_str().to_string()));
    v.extend(Material::ALL.iter().map(|m| m.as_str().to_string()));
    v.extend(Size::ALL.iter().map(|s| s.as_str().to_string()));
    v.extend((1..=GRID).map(|n| n.to_string()));
    v
}

/// The published counting holdout list is not available, so the default
/// draws 5 (number, property-value) pairs deterministically from a fixed
/// stream over {1,2,3} x all property constants.
fn default_count_pairs() -> Vec<(u8, String)> {
    let values = property_value_tokens();
    let mut combos: Vec<(u8, String)> = Vec::new();
    for n in 1..=3u8 {
        for v in &values {
            combos.push((n, v.clone()));
        }
    }
    let mut rng = substream(0, "counting_holdout", 0);
    let mut picks: Vec<(u8, String)> = Vec::new();
    for _ in 0..5 {
        let i = rng.gen_range(0..combos.len());
        picks.push(combos.swap_remove(i));
    }
    picks.sort();
    picks
}

impl HoldoutSpec {
    pub fn default_for(kind: SplitKind) -> HoldoutSpec {
        let mut spec = HoldoutSpec {
            kind,
            token_pairs: Vec::new(),
            held_tokens: Vec::new(),
            length_threshold: DEFAULT_COMPLEXITY_THRESHOLD,
            count_pairs: Vec::new(),
            test_fraction: DEFAULT_TEST_FRACTION,
            val_fraction: DEFAULT_VAL_FRACTION,
        };
        let pairs = |ps: &[(&str, &str)]| {
            ps.iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect::<Vec<_>>()
        };
        match kind {
            SplitKind::InstanceIid | SplitKind::ConceptIid | SplitKind::Complexity => {}
            SplitKind::Boolean => {
                spec.token_pairs = pairs(&[
                    ("green", "or"),
                    ("purple", "and"),
                    ("cyan", "and"),
                    ("red", "or"),
                    ("green", "and"),
                ]);
            }
            SplitKind::Intrinsic => {
                spec.token_pairs = pairs(&[
                    ("green", "metal"),
                    ("purple", "rubber"),
                    ("cyan", "rubber"),
                    ("red", "metal"),
                    ("green", "rubber"),
                ]);
            }
            SplitKind::Extrinsic => {
                spec.token_pairs = pairs(&[
                    ("7", "gray"),
                    ("1", "red"),
                    ("3", "purple"),
                    ("1", "blue"),
                    ("8", "cyan"),
                    ("5", "yellow"),
                    ("5", "green"),
                    ("3", "yellow"),
                    ("7", "purple"),
                    ("2", "blue"),
                    ("3", "cyan"),
                ]);
            }
            SplitKind::BindingColor => {
                spec.held_tokens = vec!["purple".into(), "cyan".into(), "yellow".into()];
            }
            SplitKind::BindingShape => {
                spec.held_tokens = vec!["cylinder".into()];
            }
            SplitKind::Counting => {
                spec.count_pairs = default_count_pairs();
            }
        }
        spec
    }

    fn validate(&self) -> Result<(), SplitError> {
        let vocab = vocabulary();
        let check = |t: &String| {
            if vocab.contains(&t.as_str()) {
                Ok(())
            } else {
                Err(SplitError::UnknownToken(t.clone()))
            }
        };
        for (a, b) in &self.token_pairs {
            check(a)?;
            check(b)?;
        }
        for t in &self.held_tokens {
            check(t)?;
        }
        for (_, v) in &self.count_pairs {
            check(v)?;
        }
        Ok(())
    }
}

/// True when the concept belongs to the split's test side.
pub fn matches_holdout(space: &HypothesisSpace, idx: usize, spec: &HoldoutSpec) -> bool {
    let concept = &space.concepts[idx];
    let has = |t: &str| concept.tokens.iter().any(|tok| tok == t);
    match spec.kind {
        SplitKind::InstanceIid | SplitKind::ConceptIid => false,
        SplitKind::Boolean => spec
            .token_pairs
            .iter()
            .any(|(a, b)| has(a) && has(b)),
        SplitKind::Intrinsic => {
            has("material?")
                && spec
                    .token_pairs
                    .iter()
                    .any(|(a, b)| has(a) && has(b))
        }
        SplitKind::Extrinsic => {
            (has("locationX?") || has("locationY?"))
                && spec
                    .token_pairs
                    .iter()
                    .any(|(loc, color)| has(loc) && has(color))
        }
        SplitKind::BindingColor | SplitKind::BindingShape => {
            spec.held_tokens.iter().any(|t| has(t))
        }
        SplitKind::Complexity => concept.length > spec.length_threshold,
        SplitKind::Counting => {
            let mut held = false;
            concept.ast.for_each_comparison(|is_eq, lhs, rhs| {
                if !is_eq || held {
                    return;
                }
                for (a, b) in [(lhs, rhs), (rhs, lhs)] {
                    if let (ScalarExpr::Count(_, Atom::Const(v)), ScalarExpr::Const(Value::Int(n))) =
                        (a, b)
                    {
                        if spec
                            .count_pairs
                            .iter()
                            .any(|(hn, hv)| hn == n && *hv == v.token())
                        {
                            held = true;
                        }
                    }
                }
            });
            held
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub kind: SplitKind,
    pub spec: HoldoutSpec,
    pub train: Vec<u64>,
    pub val: Vec<u64>,
    pub test: Vec<u64>,
}

impl SplitAssignment {
    pub fn side(&self, side: Side) -> &[u64] {
        match side {
            Side::Train => &self.train,
            Side::Val => &self.val,
            Side::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Train,
    Val,
    Test,
}

impl Side {
    pub const ALL: [Side; 3] = [Side::Train, Side::Val, Side::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Train => "train",
            Side::Val => "val",
            Side::Test => "test",
        }
    }
}

/// Groups ids by synonym cluster (restricted to the given ids), ordered by
/// smallest member for determinism.
fn cluster_groups(space: &HypothesisSpace, ids: &[u64]) -> Vec<Vec<u64>> {
    let mut by_cluster: std::collections::BTreeMap<usize, Vec<u64>> = Default::default();
    for &id in ids {
        by_cluster
            .entry(space.cluster_of[id as usize])
            .or_default()
            .push(id);
    }
    by_cluster.into_values().collect()
}

/// Carves roughly `fraction` of `from` into a validation side, whole
/// synonym clusters at a time, never emptying the remainder.
fn carve_val(
    space: &HypothesisSpace,
    from: &[u64],
    fraction: f64,
    rng: &mut impl Rng,
) -> (Vec<u64>, Vec<u64>) {
    let target = (from.len() as f64 * fraction).round() as usize;
    if target == 0 || from.len() < 2 {
        return (from.to_vec(), Vec::new());
    }
    let mut groups = cluster_groups(space, from);
    groups.shuffle(rng);
    let mut val: Vec<u64> = Vec::new();
    let mut kept: Vec<u64> = Vec::new();
    for g in groups {
        if val.len() < target && from.len() - val.len() - g.len() >= 1 {
            val.extend(g);
        } else {
            kept.extend(g);
        }
    }
    kept.sort_unstable();
    val.sort_unstable();
    (kept, val)
}

/// Partitions the space for one split kind.
pub fn assign(
    space: &HypothesisSpace,
    spec: &HoldoutSpec,
    seed: u64,
) -> Result<SplitAssignment, SplitError> {
    spec.validate()?;
    let kind = spec.kind;
    let all_ids: Vec<u64> = (0..space.len() as u64).collect();

    if kind == SplitKind::InstanceIid {
        // The one split where train, val, and test share every concept;
        // episodes differ, concepts do not.
        return Ok(SplitAssignment {
            kind,
            spec: spec.clone(),
            train: all_ids.clone(),
            val: all_ids.clone(),
            test: all_ids,
        });
    }

    let mut rng = substream(seed, &format!("split/{}", kind.as_str()), 0);

    let (train0, test) = if kind == SplitKind::ConceptIid {
        // Random cluster-level partition so synonym clusters never straddle sides.
        let mut groups = cluster_groups(space, &all_ids);
        groups.shuffle(&mut rng);
        let target = (all_ids.len() as f64 * spec.test_fraction).round() as usize;
        let mut test: Vec<u64> = Vec::new();
        let mut train: Vec<u64> = Vec::new();
        for g in groups {
            if test.len() < target && all_ids.len() - test.len() - g.len() >= 1 {
                test.extend(g);
            } else {
                train.extend(g);
            }
        }
        train.sort_unstable();
        test.sort_unstable();
        (train, test)
    } else {
        let mut test: Vec<u64> = Vec::new();
        let mut train: Vec<u64> = Vec::new();
        for &id in &all_ids {
            if matches_holdout(space, id as usize, spec) {
                test.push(id);
            } else {
                train.push(id);
            }
        }
        (train, test)
    };

    if test.is_empty() || train0.is_empty() {
        return Err(SplitError::DegenerateSplit(kind.as_str()));
    }

    let (train, val) = carve_val(space, &train0, spec.val_fraction, &mut rng);
    if train.is_empty() {
        return Err(SplitError::DegenerateSplit(kind.as_str()));
    }

    Ok(SplitAssignment {
        kind,
        spec: spec.clone(),
        train,
        val,
        test,
    })
}

/// One violated invariant found by validation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Finding {
    pub code: &'static str,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitReport {
    pub kind: SplitKind,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub findings: Vec<Finding>,
}

impl SplitReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }
}

/// Checks the assignment's invariants and reports violations as structured
/// findings; never silently passes.
pub fn validate(a: &SplitAssignment, space: &HypothesisSpace) -> SplitReport {
    let mut findings: Vec<Finding> = Vec::new();
    let n = space.len();
    let mut push = |code: &'static str, message: String| findings.push(Finding { code, message });

    let in_range = |ids: &[u64]| ids.iter().all(|&id| (id as usize) < n);
    if !in_range(&a.train) || !in_range(&a.val) || !in_range(&a.test) {
        push("id_range", "assignment references ids outside the space".into());
    }

    if a.kind == SplitKind::InstanceIid {
        let all: Vec<u64> = (0..n as u64).collect();
        if a.train != all || a.test != all {
            push(
                "instance_iid_identity",
                "instance_iid train and test must both equal the full space".into(),
            );
        }
    } else {
        let mut seen = vec![0u8; n];
        for (side, ids) in [("train", &a.train), ("val", &a.val), ("test", &a.test)] {
            for &id in ids.iter() {
                if seen[id as usize] != 0 {
                    push("overlap", format!("concept {id} appears in {side} and an earlier side"));
                }
                seen[id as usize] += 1;
            }
        }
        if seen.iter().any(|&c| c == 0) {
            push("coverage", "some concepts are assigned to no side".into());
        }

        if a.kind == SplitKind::ConceptIid {
            for cluster in &space.clusters {
                let sides: std::collections::BTreeSet<u8> = cluster
                    .iter()
                    .map(|&i| {
                        if a.test.binary_search(&(i as u64)).is_ok() {
                            2
                        } else if a.val.binary_search(&(i as u64)).is_ok() {
                            1
                        } else {
                            0
                        }
                    })
                    .collect();
                if sides.len() > 1 {
                    push(
                        "synonym_straddle",
                        format!("synonym cluster {cluster:?} spans multiple sides"),
                    );
                }
            }
        } else {
            for &id in a.train.iter().chain(&a.val) {
                if matches_holdout(space, id as usize, &a.spec) {
                    push(
                        "holdout_leak",
                        format!("concept {id} matches the test predicate but is not in test"),
                    );
                }
            }
            for &id in &a.test {
                if !matches_holdout(space, id as usize, &a.spec) {
                    push(
                        "test_mismatch",
                        format!("concept {id} is in test but does not match the predicate"),
                    );
                }
            }
        }
    }

    SplitReport {
        kind: a.kind,
        train_size: a.train.len(),
        val_size: a.val.len(),
        test_size: a.test.len(),
        findings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{build_space, FilterThresholds};
    use crate::grammar::{CompiledGrammar, GrammarConfig};
    use crate::scene::build_pool;

    fn small_space() -> HypothesisSpace {
        let g = CompiledGrammar::new(GrammarConfig::default()).unwrap();
        let mut rng = substream(100, "splits_test", 0);
        let raw: Vec<_> = (0..6000).map(|_| g.sample(&mut rng)).collect();
        let pool = build_pool(4000, 100);
        build_space(&raw, &pool, FilterThresholds::default()).unwrap()
    }

    #[test]
    fn default_specs_use_vocabulary_tokens() {
        for kind in SplitKind::ALL {
            HoldoutSpec::default_for(kind).validate().unwrap();
        }
    }

    #[test]
    fn counting_default_draws_five_distinct_pairs() {
        let pairs = default_count_pairs();
        assert_eq!(pairs.len(), 5);
        let mut dedup = pairs.clone();
        dedup.dedup();
        assert_eq!(dedup.len(), 5);
        assert_eq!(pairs, default_count_pairs());
    }

    #[test]
    fn instance_iid_is_identity() {
        let space = small_space();
        let spec = HoldoutSpec::default_for(SplitKind::InstanceIid);
        let a = assign(&space, &spec, 0).unwrap();
        assert_eq!(a.train, a.test);
        assert_eq!(a.train, a.val);
        assert_eq!(a.train.len(), space.len());
        assert!(validate(&a, &space).is_clean());
    }

    #[test]
    fn holdout_splits_partition_cleanly() {
        let space = small_space();
        for kind in [
            SplitKind::Boolean,
            SplitKind::BindingColor,
            SplitKind::BindingShape,
            SplitKind::Complexity,
            SplitKind::ConceptIid,
        ] {
            let spec = HoldoutSpec::default_for(kind);
            let a = assign(&space, &spec, 7).unwrap();
            let report = validate(&a, &space);
            assert!(report.is_clean(), "{kind:?}: {:?}", report.findings);
            assert!(!a.train.is_empty() && !a.test.is_empty());
        }
    }

    #[test]
    fn boolean_predicate_matches_green_or() {
        let space = small_space();
        let spec = HoldoutSpec::default_for(SplitKind::Boolean);
        let a = assign(&space, &spec, 3).unwrap();
        for &id in &a.test {
            let c = &space.concepts[id as usize];
            let has = |t: &str| c.tokens.iter().any(|tok| tok == t);
            assert!(
                spec.token_pairs.iter().any(|(x, y)| has(x) && has(y)),
                "test concept without a held pair: {:?}",
                c.tokens
            );
        }
        for &id in &a.train {
            let c = &space.concepts[id as usize];
            let has = |t: &str| c.tokens.iter().any(|tok| tok == t);
            assert!(!(has("green") && has("or")), "train leak: {:?}", c.tokens);
        }
    }

    #[test]
    fn binding_shape_quarantines_cylinder() {
        let space = small_space();
        let a = assign(&space, &HoldoutSpec::default_for(SplitKind::BindingShape), 3).unwrap();
        for &id in &a.train {
            assert!(!space.concepts[id as usize]
                .tokens
                .iter()
                .any(|t| t == "cylinder"));
        }
        for &id in &a.test {
            assert!(space.concepts[id as usize]
                .tokens
                .iter()
                .any(|t| t == "cylinder"));
        }
    }

    #[test]
    fn complexity_threshold_is_inclusive_for_train() {
        let space = small_space();
        let a = assign(&space, &HoldoutSpec::default_for(SplitKind::Complexity), 3).unwrap();
        for &id in a.train.iter().chain(&a.val) {
            assert!(space.concepts[id as usize].length <= 10);
        }
        for &id in &a.test {
            assert!(space.concepts[id as usize].length > 10);
        }
        // Specific lengths from the contract: 9 trains, 11 tests.
        for c in &space.concepts {
            let matches = matches_holdout(&space, c.id as usize, &a.spec);
            if c.length == 9 {
                assert!(!matches);
            }
            if c.length == 11 {
                assert!(matches);
            }
        }
    }

    #[test]
    fn concept_iid_respects_synonym_clusters() {
        let space = small_space();
        let a = assign(&space, &HoldoutSpec::default_for(SplitKind::ConceptIid), 11).unwrap();
        let report = validate(&a, &space);
        assert!(report.is_clean(), "{:?}", report.findings);
        // Direct check on a multi-member cluster if one exists.
        if let Some(cluster) = space.clusters.iter().find(|c| c.len() >= 2) {
            let in_test = |id: usize| a.test.binary_search(&(id as u64)).is_ok();
            let first = in_test(cluster[0]);
            for &m in cluster {
                assert_eq!(in_test(m), first, "cluster straddles test boundary");
            }
        }
    }

    #[test]
    fn assignment_is_deterministic() {
        let space = small_space();
        for kind in SplitKind::ALL {
            let spec = HoldoutSpec::default_for(kind);
            let a = assign(&space, &spec, 9);
            let b = assign(&space, &spec, 9);
            match (a, b) {
                (Ok(a), Ok(b)) => assert_eq!(a, b),
                (Err(ea), Err(eb)) => assert_eq!(ea, eb),
                _ => panic!("nondeterministic assignment for {kind:?}"),
            }
        }
    }

    #[test]
    fn validate_flags_leaks() {
        let space = small_space();
        let spec = HoldoutSpec::default_for(SplitKind::BindingColor);
        let mut a = assign(&space, &spec, 5).unwrap();
        // Move one test concept into train: must be reported.
        let leaked = a.test.pop().unwrap();
        a.train.push(leaked);
        a.train.sort_unstable();
        let report = validate(&a, &space);
        assert!(report
            .findings
            .iter()
            .any(|f| f.code == "holdout_leak"));
    }

    #[test]
    fn unknown_holdout_token_rejected() {
        let space = small_space();
        let mut spec = HoldoutSpec::default_for(SplitKind::BindingColor);
        spec.held_tokens.push("chartreuse".into());
        assert_eq!(
            assign(&space, &spec, 0),
            Err(SplitError::UnknownToken("chartreuse".into()))
        );
    }
}

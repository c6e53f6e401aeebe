//! Exact evaluation of concepts on scenes, and evaluation signatures over
//! scene pools.
//!
//! Evaluation is a pure function: the quantifier binds `x` to each object in
//! turn (`exists` = disjunction over bindings, `for-all` = conjunction), `S`
//! denotes the full object set and `S_{-x}` everything except the bound
//! object. `all` is vacuously true on an empty set, `any` false. Sizes order
//! as `large > small`.

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bits::BitVec;
use crate::grammar::*;
use crate::scene::{Scene, SceneObject, ScenePool};

#[derive(Debug, Error, PartialEq)]
pub enum ExecError {
    #[error("cannot compute a signature over an empty pool")]
    EmptyPool,
}

#[inline]
fn property_value(o: &SceneObject, p: Property) -> Value {
    match p {
        Property::Color => Value::Color(o.color),
        Property::Shape => Value::Shape(o.shape),
        Property::Material => Value::Material(o.material),
        Property::Size => Value::Size(o.size),
        Property::LocationX => Value::Int(o.locx),
        Property::LocationY => Value::Int(o.locy),
    }
}

#[inline]
fn atom_value(a: &Atom, scene: &Scene, bound: usize) -> Value {
    match a {
        Atom::Const(v) => *v,
        Atom::Access(p) => property_value(&scene.objects[bound], *p),
    }
}

/// Iterates the members of `S` or `S_{-x}` under the current binding.
#[inline]
fn set_members<'a>(
    scene: &'a Scene,
    set: SetVar,
    bound: usize,
) -> impl Iterator<Item = &'a SceneObject> {
    scene
        .objects
        .iter()
        .enumerate()
        .filter(move |(i, _)| set == SetVar::Full || *i != bound)
        .map(|(_, o)| o)
}

#[inline]
fn count_matching(sa: &SetAccess, target: Value, scene: &Scene, bound: usize) -> u8 {
    set_members(scene, sa.set, bound)
        .filter(|o| property_value(o, sa.property) == target)
        .count() as u8
}

fn scalar_value(s: &ScalarExpr, scene: &Scene, bound: usize) -> Value {
    match s {
        ScalarExpr::Const(v) => *v,
        ScalarExpr::Access(p) => property_value(&scene.objects[bound], *p),
        ScalarExpr::Count(sa, a) => {
            Value::Int(count_matching(sa, atom_value(a, scene, bound), scene, bound))
        }
    }
}

#[inline]
fn value_gt(a: Value, b: Value) -> bool {
    match (a, b) {
        (Value::Int(x), Value::Int(y)) => x > y,
        (Value::Size(x), Value::Size(y)) => x.rank() > y.rank(),
        // Unreachable for type-checked ASTs; keeps evaluation total.
        _ => false,
    }
}

fn eval_bool(b: &BoolExpr, scene: &Scene, bound: usize) -> bool {
    match b {
        BoolExpr::And(l, r) => eval_bool(l, scene, bound) && eval_bool(r, scene, bound),
        BoolExpr::Or(l, r) => eval_bool(l, scene, bound) || eval_bool(r, scene, bound),
        BoolExpr::Not(inner) => !eval_bool(inner, scene, bound),
        BoolExpr::Eq(a, b) => scalar_value(a, scene, bound) == scalar_value(b, scene, bound),
        BoolExpr::Gt(a, b) => value_gt(scalar_value(a, scene, bound), scalar_value(b, scene, bound)),
        BoolExpr::All(sa, atom) => {
            let target = atom_value(atom, scene, bound);
            set_members(scene, sa.set, bound).all(|o| property_value(o, sa.property) == target)
        }
        BoolExpr::Any(sa, atom) => {
            let target = atom_value(atom, scene, bound);
            set_members(scene, sa.set, bound).any(|o| property_value(o, sa.property) == target)
        }
    }
}

/// Evaluates the concept body under one specific binding of `x`.
pub fn evaluate_binding(c: &ConceptAst, scene: &Scene, bound: usize) -> bool {
    eval_bool(&c.body, scene, bound)
}

/// Evaluates a concept on a scene.
pub fn evaluate(c: &ConceptAst, scene: &Scene) -> bool {
    let n = scene.objects.len();
    match c.quantifier {
        Quantifier::Exists => (0..n).any(|i| eval_bool(&c.body, scene, i)),
        Quantifier::ForAll => (0..n).all(|i| eval_bool(&c.body, scene, i)),
    }
}

/// A concept's truth values over a scene pool.
#[derive(Debug, Clone, PartialEq)]
pub struct Signature {
    pub bits: BitVec,
    pub true_count: usize,
    pub true_rate: f64,
    /// 128-bit hex digest of the packed bit vector, for synonym grouping.
    pub hash: String,
}

/// Signature record as persisted to JSONL; the bit vectors themselves live
/// in a separate packed binary file.
#[derive(Debug, Clone, Serialize)]
pub struct SignatureRecord {
    pub concept_id: u64,
    pub true_count: usize,
    pub true_rate: f64,
    pub sig_hash: String,
}

pub fn hash_bits(bits: &BitVec) -> String {
    let digest = Sha256::digest(bits.to_le_bytes());
    hex::encode(&digest[..16])
}

fn signature_from_bits(bits: BitVec, pool_len: usize) -> Signature {
    let true_count = bits.count_ones();
    Signature {
        true_rate: true_count as f64 / pool_len as f64,
        hash: hash_bits(&bits),
        bits,
        true_count,
    }
}

/// Computes the signature with scene evaluation partitioned across threads.
/// Each 64-scene word is an independent pure computation, so the result is
/// bit-identical regardless of scheduling.
pub fn signature(c: &ConceptAst, pool: &ScenePool) -> Result<Signature, ExecError> {
    if pool.is_empty() {
        return Err(ExecError::EmptyPool);
    }
    let words: Vec<u64> = pool
        .scenes
        .par_chunks(64)
        .map(|chunk| {
            let mut w = 0u64;
            for (j, scene) in chunk.iter().enumerate() {
                if evaluate(c, scene) {
                    w |= 1 << j;
                }
            }
            w
        })
        .collect();
    Ok(signature_from_bits(
        BitVec::from_words(words, pool.len()),
        pool.len(),
    ))
}

/// Single-threaded reference path for the signature computation.
pub fn signature_serial(c: &ConceptAst, pool: &ScenePool) -> Result<Signature, ExecError> {
    if pool.is_empty() {
        return Err(ExecError::EmptyPool);
    }
    let bools: Vec<bool> = pool.scenes.iter().map(|s| evaluate(c, s)).collect();
    Ok(signature_from_bits(BitVec::from_bools(&bools), pool.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use crate::scene::build_pool;

    fn obj(color: Color, shape: Shape, locx: u8, locy: u8) -> SceneObject {
        SceneObject {
            color,
            shape,
            material: Material::Rubber,
            size: Size::Small,
            locx,
            locy,
        }
    }

    fn scene(objects: Vec<SceneObject>) -> Scene {
        Scene { id: 0, objects }
    }

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
    fn universal_color_on_all_red_scene() {
        let c = forall(BoolExpr::Eq(
            ScalarExpr::Access(Property::Color),
            ScalarExpr::Const(Value::Color(Color::Red)),
        ));
        let s = scene(vec![
            obj(Color::Red, Shape::Cube, 1, 1),
            obj(Color::Red, Shape::Sphere, 2, 1),
            obj(Color::Red, Shape::Cube, 3, 1),
        ]);
        assert!(evaluate(&c, &s));
    }

    #[test]
    fn exists_blue_fails_without_blue() {
        let c = exists(BoolExpr::Eq(
            ScalarExpr::Access(Property::Color),
            ScalarExpr::Const(Value::Color(Color::Blue)),
        ));
        let s = scene(vec![
            obj(Color::Red, Shape::Cube, 1, 1),
            obj(Color::Green, Shape::Cube, 2, 1),
        ]);
        assert!(!evaluate(&c, &s));
    }

    #[test]
    fn count_equality_follows_multiset_semantics() {
        // =(count=(color?(S), gray), 2)
        let c = exists(BoolExpr::Eq(
            ScalarExpr::Count(
                SetAccess {
                    set: SetVar::Full,
                    property: Property::Color,
                },
                Atom::Const(Value::Color(Color::Gray)),
            ),
            ScalarExpr::Const(Value::Int(2)),
        ));
        let two_gray = scene(vec![
            obj(Color::Gray, Shape::Cube, 1, 1),
            obj(Color::Gray, Shape::Cube, 2, 1),
            obj(Color::Red, Shape::Cube, 3, 1),
            obj(Color::Blue, Shape::Cube, 4, 1),
        ]);
        let three_gray = scene(vec![
            obj(Color::Gray, Shape::Cube, 1, 1),
            obj(Color::Gray, Shape::Cube, 2, 1),
            obj(Color::Gray, Shape::Cube, 3, 1),
            obj(Color::Blue, Shape::Cube, 4, 1),
        ]);
        assert!(evaluate(&c, &two_gray));
        assert!(!evaluate(&c, &three_gray));
    }

    #[test]
    fn binding_with_rest_predicate() {
        // exists x: and(color?(x) = blue, all(shape?(S-x), cube))
        let c = exists(BoolExpr::And(
            Box::new(BoolExpr::Eq(
                ScalarExpr::Access(Property::Color),
                ScalarExpr::Const(Value::Color(Color::Blue)),
            )),
            Box::new(BoolExpr::All(
                SetAccess {
                    set: SetVar::MinusBound,
                    property: Property::Shape,
                },
                Atom::Const(Value::Shape(Shape::Cube)),
            )),
        ));
        // Binding x to the blue cube leaves {red cube, green cube}: true.
        let s = scene(vec![
            obj(Color::Blue, Shape::Cube, 1, 1),
            obj(Color::Red, Shape::Cube, 2, 1),
            obj(Color::Green, Shape::Cube, 3, 1),
        ]);
        assert!(evaluate(&c, &s));
        // No blue object: false.
        let s2 = scene(vec![
            obj(Color::Red, Shape::Cube, 1, 1),
            obj(Color::Green, Shape::Cube, 2, 1),
        ]);
        assert!(!evaluate(&c, &s2));
        // Blue object present but another non-cube remains: false.
        let s3 = scene(vec![
            obj(Color::Blue, Shape::Cube, 1, 1),
            obj(Color::Red, Shape::Sphere, 2, 1),
        ]);
        assert!(!evaluate(&c, &s3));
    }

    #[test]
    fn quantifier_equals_fold_over_bindings() {
        let g = CompiledGrammar::new(GrammarConfig::default()).unwrap();
        let pool = build_pool(200, 5);
        let mut rng = substream(23, "bindings", 0);
        for _ in 0..200 {
            let c = g.sample(&mut rng);
            for s in &pool.scenes[..50] {
                let per_binding: Vec<bool> = (0..s.objects.len())
                    .map(|i| evaluate_binding(&c, s, i))
                    .collect();
                let expected = match c.quantifier {
                    Quantifier::Exists => per_binding.iter().any(|&b| b),
                    Quantifier::ForAll => per_binding.iter().all(|&b| b),
                };
                assert_eq!(evaluate(&c, s), expected);
            }
        }
    }

    #[test]
    fn complement_set_excludes_exactly_the_bound_object() {
        let pool = build_pool(100, 9);
        for s in &pool.scenes {
            for bound in 0..s.objects.len() {
                let members: Vec<_> = set_members(s, SetVar::MinusBound, bound).collect();
                assert_eq!(members.len(), s.objects.len() - 1);
                assert!(!members
                    .iter()
                    .any(|o| std::ptr::eq(*o, &s.objects[bound])));
                let full: Vec<_> = set_members(s, SetVar::Full, bound).collect();
                assert_eq!(full.len(), s.objects.len());
            }
        }
    }

    #[test]
    fn any_and_all_are_consistent_with_count() {
        let g = CompiledGrammar::new(GrammarConfig::default()).unwrap();
        let pool = build_pool(100, 11);
        let mut rng = substream(29, "count_consistency", 0);
        let mut checked = 0usize;
        while checked < 100 {
            let c = g.sample(&mut rng);
            let mut preds: Vec<(bool, SetAccess, Atom)> = Vec::new();
            c.for_each_set_predicate(|is_all, sa, atom| preds.push((is_all, *sa, *atom)));
            if preds.is_empty() {
                continue;
            }
            checked += 1;
            for s in &pool.scenes[..20] {
                for bound in 0..s.objects.len() {
                    for &(is_all, sa, atom) in &preds {
                        let target = atom_value(&atom, s, bound);
                        let count = count_matching(&sa, target, s, bound) as usize;
                        let set_len = set_members(s, sa.set, bound).count();
                        let node = if is_all {
                            BoolExpr::All(sa, atom)
                        } else {
                            BoolExpr::Any(sa, atom)
                        };
                        let got = eval_bool(&node, s, bound);
                        let expected = if is_all { count == set_len } else { count >= 1 };
                        assert_eq!(got, expected);
                    }
                }
            }
        }
    }

    #[test]
    fn parallel_signature_matches_serial() {
        let g = CompiledGrammar::new(GrammarConfig::default()).unwrap();
        let pool = build_pool(1000, 13);
        let mut rng = substream(31, "sig", 0);
        for _ in 0..50 {
            let c = g.sample(&mut rng);
            let a = signature(&c, &pool).unwrap();
            let b = signature_serial(&c, &pool).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.true_count, a.bits.count_ones());
            assert!((a.true_rate - a.true_count as f64 / 1000.0).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_pool_is_an_error() {
        let c = exists(BoolExpr::Eq(
            ScalarExpr::Access(Property::Color),
            ScalarExpr::Const(Value::Color(Color::Blue)),
        ));
        let pool = build_pool(0, 1);
        assert_eq!(signature(&c, &pool), Err(ExecError::EmptyPool));
    }

    #[test]
    fn tautology_has_unit_true_rate() {
        // or(=(size?(x), large), not(=(size?(x), large))) is true everywhere.
        let eq = BoolExpr::Eq(
            ScalarExpr::Access(Property::Size),
            ScalarExpr::Const(Value::Size(Size::Large)),
        );
        let c = exists(BoolExpr::Or(
            Box::new(eq.clone()),
            Box::new(BoolExpr::Not(Box::new(eq))),
        ));
        let pool = build_pool(500, 17);
        let sig = signature(&c, &pool).unwrap();
        assert_eq!(sig.true_count, 500);
        assert_eq!(sig.true_rate, 1.0);
    }

    #[test]
    fn mirrored_comparison_pair_shares_signatures() {
        // >(locationX?(x), 4) versus not(or(>(4, locationX?(x)), =(locationX?(x), 4)))
        let a = exists(BoolExpr::Gt(
            ScalarExpr::Access(Property::LocationX),
            ScalarExpr::Const(Value::Int(4)),
        ));
        let b = exists(BoolExpr::Not(Box::new(BoolExpr::Or(
            Box::new(BoolExpr::Gt(
                ScalarExpr::Const(Value::Int(4)),
                ScalarExpr::Access(Property::LocationX),
            )),
            Box::new(BoolExpr::Eq(
                ScalarExpr::Access(Property::LocationX),
                ScalarExpr::Const(Value::Int(4)),
            )),
        ))));
        let pool = build_pool(1000, 19);
        let sa = signature(&a, &pool).unwrap();
        let sb = signature(&b, &pool).unwrap();
        assert_eq!(sa.bits, sb.bits);
        assert_eq!(sa.hash, sb.hash);
    }

    #[test]
    fn size_ordering_is_large_over_small() {
        let c = exists(BoolExpr::Gt(
            ScalarExpr::Access(Property::Size),
            ScalarExpr::Const(Value::Size(Size::Small)),
        ));
        let large = scene(vec![
            SceneObject {
                size: Size::Large,
                ..obj(Color::Red, Shape::Cube, 1, 1)
            },
            obj(Color::Red, Shape::Cube, 2, 2),
        ]);
        let all_small = scene(vec![
            obj(Color::Red, Shape::Cube, 1, 1),
            obj(Color::Red, Shape::Cube, 2, 2),
        ]);
        assert!(evaluate(&c, &large));
        assert!(!evaluate(&c, &all_small));
    }
}

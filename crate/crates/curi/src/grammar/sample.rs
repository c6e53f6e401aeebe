//! Depth-bounded weighted sampling of concept ASTs.
//!
//! Derivation depth counts every symbol node, with the start symbol at
//! depth 0; no node may sit deeper than `max_depth`. Near the limit the
//! sampler restricts each nonterminal's alternatives to those whose minimal
//! completion still fits, renormalizing the configured weights over the
//! feasible subset. This slightly biases tail depths versus rejection
//! sampling, which is accepted and documented.

use rand::Rng;

use super::ast::*;
use super::config::{GrammarConfig, GrammarConfigError};

/// A validated grammar ready for sampling.
#[derive(Debug, Clone)]
pub struct CompiledGrammar {
    max_depth: usize,
    cfg: GrammarConfig,
}

impl CompiledGrammar {
    pub fn new(cfg: GrammarConfig) -> Result<Self, GrammarConfigError> {
        cfg.validate()?;
        Ok(CompiledGrammar {
            max_depth: cfg.max_depth,
            cfg,
        })
    }

    pub fn config(&self) -> &GrammarConfig {
        &self.cfg
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    /// Samples one type-correct AST. Deterministic given the rng state.
    pub fn sample(&self, rng: &mut impl Rng) -> ConceptAst {
        let quantifier = match pick(rng, &self.cfg.weights.start, &[true, true]) {
            0 => Quantifier::Exists,
            _ => Quantifier::ForAll,
        };
        // START at depth 0; the body nonterminal and quantifier token at depth 1.
        let body = self.sample_bool(1, rng);
        ConceptAst { quantifier, body }
    }

    /// Levels still available below a node at depth `d`.
    fn rem(&self, d: usize) -> usize {
        self.max_depth - d
    }

    fn sample_bool(&self, d: usize, rng: &mut impl Rng) -> BoolExpr {
        let rem = self.rem(d);
        // Connectives and set predicates need 3 levels below this node;
        // comparisons complete within 2 (constant operands).
        let deep = rem >= 3;
        let cmp = rem >= 2;
        let mut feasible = [false; 22];
        for (i, slot) in feasible.iter_mut().enumerate() {
            *slot = match i {
                0..=2 => deep,   // and, or, not
                3..=11 => cmp,   // = and > families
                _ => deep,       // all/any families
            };
        }
        match pick(rng, &self.cfg.weights.boolean, &feasible) {
            0 => BoolExpr::And(
                Box::new(self.sample_bool(d + 1, rng)),
                Box::new(self.sample_bool(d + 1, rng)),
            ),
            1 => BoolExpr::Or(
                Box::new(self.sample_bool(d + 1, rng)),
                Box::new(self.sample_bool(d + 1, rng)),
            ),
            2 => BoolExpr::Not(Box::new(self.sample_bool(d + 1, rng))),
            3 => self.comparison(true, ValueKind::Color, d, rng),
            4 => self.comparison(true, ValueKind::Shape, d, rng),
            5 => self.comparison(true, ValueKind::Material, d, rng),
            6 => self.comparison(true, ValueKind::Size, d, rng),
            7 => self.comparison(true, ValueKind::Int, d, rng), // locations
            8 => self.num_comparison(true, d, rng),
            9 => self.comparison(false, ValueKind::Size, d, rng),
            10 => self.comparison(false, ValueKind::Int, d, rng), // locations
            11 => self.num_comparison(false, d, rng),
            i @ 12..=16 => {
                let (sa, atom) = self.set_predicate(prop_for(i - 12), d, rng);
                BoolExpr::All(sa, atom)
            }
            i => {
                let (sa, atom) = self.set_predicate(prop_for(i - 17), d, rng);
                BoolExpr::Any(sa, atom)
            }
        }
    }

    /// `C C =`-style comparison over one property family (operands at d+1).
    fn comparison(&self, eq: bool, kind: ValueKind, d: usize, rng: &mut impl Rng) -> BoolExpr {
        let a = self.sample_atom_scalar(kind, d + 1, rng);
        let b = self.sample_atom_scalar(kind, d + 1, rng);
        if eq {
            BoolExpr::Eq(a, b)
        } else {
            BoolExpr::Gt(a, b)
        }
    }

    /// `NUM NUM =` / `NUM NUM >`: operands are count expressions or 1-3 literals.
    fn num_comparison(&self, eq: bool, d: usize, rng: &mut impl Rng) -> BoolExpr {
        let a = self.sample_num(d + 1, rng);
        let b = self.sample_num(d + 1, rng);
        if eq {
            BoolExpr::Eq(a, b)
        } else {
            BoolExpr::Gt(a, b)
        }
    }

    /// A C/SH/M/SI/L operand as a comparison scalar.
    fn sample_atom_scalar(&self, kind: ValueKind, d: usize, rng: &mut impl Rng) -> ScalarExpr {
        match self.sample_atom(kind, d, rng) {
            Atom::Const(v) => ScalarExpr::Const(v),
            Atom::Access(p) => ScalarExpr::Access(p),
        }
    }

    /// One atom of the given family: a constant, or an accessor on the bound
    /// object (needs two levels: OBJECT/F at d+1, terminals at d+2).
    fn sample_atom(&self, kind: ValueKind, d: usize, rng: &mut impl Rng) -> Atom {
        let access_ok = self.rem(d) >= 2;
        match kind {
            ValueKind::Color => {
                let mut feasible = [true; 9];
                feasible[8] = access_ok;
                match pick(rng, &self.cfg.weights.color, &feasible) {
                    8 => Atom::Access(Property::Color),
                    i => Atom::Const(Value::Color(Color::ALL[i])),
                }
            }
            ValueKind::Shape => {
                let mut feasible = [true; 4];
                feasible[3] = access_ok;
                match pick(rng, &self.cfg.weights.shape, &feasible) {
                    3 => Atom::Access(Property::Shape),
                    i => Atom::Const(Value::Shape(Shape::ALL[i])),
                }
            }
            ValueKind::Material => {
                let mut feasible = [true; 3];
                feasible[2] = access_ok;
                match pick(rng, &self.cfg.weights.material, &feasible) {
                    2 => Atom::Access(Property::Material),
                    i => Atom::Const(Value::Material(Material::ALL[i])),
                }
            }
            ValueKind::Size => {
                let mut feasible = [true; 3];
                feasible[2] = access_ok;
                match pick(rng, &self.cfg.weights.size, &feasible) {
                    2 => Atom::Access(Property::Size),
                    i => Atom::Const(Value::Size(Size::ALL[i])),
                }
            }
            ValueKind::Int => {
                // The location family: literals 1-8 or a location accessor.
                let mut feasible = [true; 9];
                feasible[8] = access_ok;
                match pick(rng, &self.cfg.weights.location, &feasible) {
                    8 => Atom::Access(self.sample_axis(rng)),
                    i => Atom::Const(Value::Int(i as u8 + 1)),
                }
            }
        }
    }

    fn sample_axis(&self, rng: &mut impl Rng) -> Property {
        match pick(rng, &self.cfg.weights.location_axis, &[true, true]) {
            0 => Property::LocationX,
            _ => Property::LocationY,
        }
    }

    /// A NUM operand: `count=` over a set accessor, or a 1-3 literal.
    fn sample_num(&self, d: usize, rng: &mut impl Rng) -> ScalarExpr {
        // count= completes in 3 levels (SETF at d+1, SET/F at d+2, terminals at d+3).
        let count_ok = self.rem(d) >= 3;
        let mut feasible = [true; 8];
        for slot in feasible.iter_mut().take(5) {
            *slot = count_ok;
        }
        match pick(rng, &self.cfg.weights.number, &feasible) {
            i @ 0..=4 => {
                let (sa, atom) = self.set_accessor_pair(prop_for(i), d, rng);
                ScalarExpr::Count(sa, atom)
            }
            i => ScalarExpr::Const(Value::Int(i as u8 - 4)), // 5,6,7 -> 1,2,3
        }
    }

    /// `SETF <atom>` for all/any (children at d+1).
    fn set_predicate(&self, p: Property, d: usize, rng: &mut impl Rng) -> (SetAccess, Atom) {
        self.set_accessor_pair(p, d, rng)
    }

    fn set_accessor_pair(&self, p: Property, d: usize, rng: &mut impl Rng) -> (SetAccess, Atom) {
        // SETF node at d+1: its SET child and accessor token land at d+2.
        let set = match pick(rng, &self.cfg.weights.set, &[true, true]) {
            0 => SetVar::Full,
            _ => SetVar::MinusBound,
        };
        let property = if p.value_kind() == ValueKind::Int {
            self.sample_axis(rng)
        } else {
            p
        };
        // The value argument is a sibling nonterminal at d+1.
        let atom = self.sample_atom(p.value_kind(), d + 1, rng);
        (SetAccess { set, property }, atom)
    }
}

/// Property family for alternative offsets (color, shape, material, size, location).
fn prop_for(offset: usize) -> Property {
    match offset {
        0 => Property::Color,
        1 => Property::Shape,
        2 => Property::Material,
        3 => Property::Size,
        _ => Property::LocationX, // axis resolved by location_axis weights
    }
}

/// Weighted choice over the feasible alternatives. Validated configs
/// guarantee at least one feasible slot at any reachable depth.
fn pick(rng: &mut impl Rng, weights: &[f64], feasible: &[bool]) -> usize {
    debug_assert_eq!(weights.len(), feasible.len());
    let total: f64 = weights
        .iter()
        .zip(feasible)
        .filter(|(_, &f)| f)
        .map(|(w, _)| *w)
        .sum();
    assert!(total > 0.0, "no feasible grammar alternative at this depth");
    let mut t = rng.gen::<f64>() * total;
    let mut last = 0;
    for (i, (w, &f)) in weights.iter().zip(feasible).enumerate() {
        if !f {
            continue;
        }
        if t < *w {
            return i;
        }
        t -= *w;
        last = i;
    }
    last
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn grammar(max_depth: usize) -> CompiledGrammar {
        CompiledGrammar::new(GrammarConfig {
            max_depth,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn same_seed_same_ast() {
        let g = grammar(6);
        for i in 0..50 {
            let a = g.sample(&mut substream(7, "g", i));
            let b = g.sample(&mut substream(7, "g", i));
            assert_eq!(a, b);
        }
    }

    #[test]
    fn depth_bound_holds_for_10k_samples() {
        let g = grammar(6);
        let mut rng = substream(11, "depth", 0);
        for _ in 0..10_000 {
            let c = g.sample(&mut rng);
            assert!(
                c.derivation_depth() <= 6,
                "depth {} > 6 for {}",
                c.derivation_depth(),
                c
            );
        }
    }

    #[test]
    fn minimal_depth_grammar_samples_flat_comparisons() {
        let g = grammar(3);
        let mut rng = substream(3, "shallow", 0);
        for _ in 0..200 {
            let c = g.sample(&mut rng);
            assert!(c.derivation_depth() <= 3);
            // Only constant-operand comparisons fit in three levels.
            match c.body {
                BoolExpr::Eq(ScalarExpr::Const(_), ScalarExpr::Const(_)) => {}
                BoolExpr::Gt(ScalarExpr::Const(_), ScalarExpr::Const(_)) => {}
                ref other => panic!("unexpected body at depth 3: {:?}", other),
            }
        }
    }

    #[test]
    fn quantifier_frequency_matches_weights_within_3_sigma() {
        let g = grammar(6);
        let mut rng = substream(5, "quant", 0);
        let n = 10_000;
        let exists = (0..n)
            .filter(|_| matches!(g.sample(&mut rng).quantifier, Quantifier::Exists))
            .count();
        // Default start weights are uniform: p = 0.5.
        let p = 0.5f64;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        let freq = exists as f64 / n as f64;
        assert!(
            (freq - p).abs() <= 3.0 * sigma,
            "exists frequency {} outside 3 sigma of {}",
            freq,
            p
        );
    }

    #[test]
    fn or_sampled_less_often_than_and() {
        let g = grammar(6);
        let mut rng = substream(5, "or", 0);
        let (mut ands, mut ors) = (0usize, 0usize);
        for _ in 0..20_000 {
            match g.sample(&mut rng).body {
                BoolExpr::And(_, _) => ands += 1,
                BoolExpr::Or(_, _) => ors += 1,
                _ => {}
            }
        }
        // Weight ratio is 2:1; binomial check among and/or outcomes.
        let n = (ands + ors) as f64;
        let p = 2.0 / 3.0;
        let sigma = (p * (1.0 - p) / n).sqrt();
        let freq = ands as f64 / n;
        assert!((freq - p).abs() <= 3.0 * sigma, "and freq {}", freq);
    }
}

//! Typed expression trees for scene concepts.
//!
//! A concept is a quantified boolean predicate over the objects of a scene.
//! The node vocabulary mirrors the sampling grammar exactly: boolean
//! connectives, typed equality/ordering comparisons, set predicates
//! (`all`/`any`), and a counting operator, over six object properties.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Object colors, in grammar listing order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Gray,
    Red,
    Blue,
    Green,
    Brown,
    Purple,
    Cyan,
    Yellow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Cube,
    Sphere,
    Cylinder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Material {
    Rubber,
    Metal,
}

/// Two-point ordinal scale: `small < large`, so `>` over sizes is well-defined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Size {
    Small,
    Large,
}

impl Color {
    pub const ALL: [Color; 8] = [
        Color::Gray,
        Color::Red,
        Color::Blue,
        Color::Green,
        Color::Brown,
        Color::Purple,
        Color::Cyan,
        Color::Yellow,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Color::Gray => "gray",
            Color::Red => "red",
            Color::Blue => "blue",
            Color::Green => "green",
            Color::Brown => "brown",
            Color::Purple => "purple",
            Color::Cyan => "cyan",
            Color::Yellow => "yellow",
        }
    }
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Cube, Shape::Sphere, Shape::Cylinder];

    pub fn as_str(self) -> &'static str {
        match self {
            Shape::Cube => "cube",
            Shape::Sphere => "sphere",
            Shape::Cylinder => "cylinder",
        }
    }
}

impl Material {
    pub const ALL: [Material; 2] = [Material::Rubber, Material::Metal];

    pub fn as_str(self) -> &'static str {
        match self {
            Material::Rubber => "rubber",
            Material::Metal => "metal",
        }
    }
}

impl Size {
    pub const ALL: [Size; 2] = [Size::Large, Size::Small];

    pub fn as_str(self) -> &'static str {
        match self {
            Size::Large => "large",
            Size::Small => "small",
        }
    }

    /// Ordinal rank used by `>`: small=0, large=1.
    pub fn rank(self) -> u8 {
        match self {
            Size::Small => 0,
            Size::Large => 1,
        }
    }
}

/// The six object properties a concept may access.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Property {
    Color,
    Shape,
    Material,
    Size,
    LocationX,
    LocationY,
}

impl Property {
    /// Accessor token spelling, e.g. `color?`.
    pub fn token(self) -> &'static str {
        match self {
            Property::Color => "color?",
            Property::Shape => "shape?",
            Property::Material => "material?",
            Property::Size => "size?",
            Property::LocationX => "locationX?",
            Property::LocationY => "locationY?",
        }
    }

    pub fn value_kind(self) -> ValueKind {
        match self {
            Property::Color => ValueKind::Color,
            Property::Shape => ValueKind::Shape,
            Property::Material => ValueKind::Material,
            Property::Size => ValueKind::Size,
            Property::LocationX | Property::LocationY => ValueKind::Int,
        }
    }
}

/// A constant value.
///
/// Number literals (1-3) and grid locations (1-8) share the `Int`
/// representation: both are integers with identical comparison semantics,
/// and merging them removes the only ambiguity in postfix parsing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Value {
    Color(Color),
    Shape(Shape),
    Material(Material),
    Size(Size),
    Int(u8),
}

/// Scalar type tags used by the type checker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueKind {
    Color,
    Shape,
    Material,
    Size,
    Int,
}

impl Value {
    pub fn kind(self) -> ValueKind {
        match self {
            Value::Color(_) => ValueKind::Color,
            Value::Shape(_) => ValueKind::Shape,
            Value::Material(_) => ValueKind::Material,
            Value::Size(_) => ValueKind::Size,
            Value::Int(_) => ValueKind::Int,
        }
    }

    pub fn token(self) -> String {
        match self {
            Value::Color(c) => c.as_str().to_string(),
            Value::Shape(s) => s.as_str().to_string(),
            Value::Material(m) => m.as_str().to_string(),
            Value::Size(s) => s.as_str().to_string(),
            Value::Int(n) => n.to_string(),
        }
    }
}

/// The set an accessor ranges over: all objects, or all but the bound one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SetVar {
    /// `S`
    Full,
    /// `S_{-x}`
    MinusBound,
}

impl SetVar {
    pub fn token(self) -> &'static str {
        match self {
            SetVar::Full => "S",
            SetVar::MinusBound => "S_{-x}",
        }
    }
}

/// A property accessor applied to a set, yielding a value multiset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SetAccess {
    pub set: SetVar,
    pub property: Property,
}

/// An atomic scalar: a constant, or a property of the quantifier-bound
/// object. This is the argument type of `all`, `any`, and `count=`, e.g.
/// `all(color?(S-x), color?(x))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Atom {
    Const(Value),
    Access(Property),
}

impl Atom {
    pub fn kind(self) -> ValueKind {
        match self {
            Atom::Const(v) => v.kind(),
            Atom::Access(p) => p.value_kind(),
        }
    }
}

/// A scalar-typed comparison operand.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ScalarExpr {
    Const(Value),
    /// `property?(x)` on the quantifier-bound object.
    Access(Property),
    /// `count=(property?(set), atom)`, integer-valued.
    Count(SetAccess, Atom),
}

impl ScalarExpr {
    pub fn kind(&self) -> ValueKind {
        match self {
            ScalarExpr::Const(v) => v.kind(),
            ScalarExpr::Access(p) => p.value_kind(),
            ScalarExpr::Count(_, _) => ValueKind::Int,
        }
    }
}

/// Boolean-typed body expressions.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum BoolExpr {
    And(Box<BoolExpr>, Box<BoolExpr>),
    Or(Box<BoolExpr>, Box<BoolExpr>),
    Not(Box<BoolExpr>),
    Eq(ScalarExpr, ScalarExpr),
    Gt(ScalarExpr, ScalarExpr),
    /// Every element of the multiset equals the atom (vacuously true when empty).
    All(SetAccess, Atom),
    /// Some element of the multiset equals the atom (false when empty).
    Any(SetAccess, Atom),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Quantifier {
    Exists,
    ForAll,
}

impl Quantifier {
    pub fn token(self) -> &'static str {
        match self {
            Quantifier::Exists => "exists=",
            Quantifier::ForAll => "for-all=",
        }
    }
}

/// One complete concept: a quantifier binding `x` over the scene set with a
/// boolean body.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ConceptAst {
    pub quantifier: Quantifier,
    pub body: BoolExpr,
}

impl ConceptAst {
    /// Canonical postfix serialization: operands left-to-right, then the operator.
    pub fn tokens(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(16);
        push_bool(&self.body, &mut out);
        out.push(self.quantifier.token().to_string());
        out
    }

    /// Token count of the postfix serialization.
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        1 + bool_len(&self.body)
    }

    /// Joined token string; the exact-dedup key.
    pub fn key(&self) -> String {
        self.tokens().join(" ")
    }

    /// True if the body references `S_{-x}` anywhere.
    pub fn uses_minus_bound(&self) -> bool {
        fn scalar(s: &ScalarExpr) -> bool {
            matches!(s, ScalarExpr::Count(sa, _) if sa.set == SetVar::MinusBound)
        }
        fn walk(b: &BoolExpr) -> bool {
            match b {
                BoolExpr::And(l, r) | BoolExpr::Or(l, r) => walk(l) || walk(r),
                BoolExpr::Not(inner) => walk(inner),
                BoolExpr::Eq(a, b) | BoolExpr::Gt(a, b) => scalar(a) || scalar(b),
                BoolExpr::All(sa, _) | BoolExpr::Any(sa, _) => sa.set == SetVar::MinusBound,
            }
        }
        walk(&self.body)
    }

    /// Visits every `=`/`>` node; the flag is true for `=`.
    pub fn for_each_comparison<F: FnMut(bool, &ScalarExpr, &ScalarExpr)>(&self, mut f: F) {
        fn walk<F: FnMut(bool, &ScalarExpr, &ScalarExpr)>(b: &BoolExpr, f: &mut F) {
            match b {
                BoolExpr::And(l, r) | BoolExpr::Or(l, r) => {
                    walk(l, f);
                    walk(r, f);
                }
                BoolExpr::Not(inner) => walk(inner, f),
                BoolExpr::Eq(a, b) => f(true, a, b),
                BoolExpr::Gt(a, b) => f(false, a, b),
                BoolExpr::All(_, _) | BoolExpr::Any(_, _) => {}
            }
        }
        walk(&self.body, &mut f);
    }

    /// Visits every `all`/`any` node; the flag is true for `all`.
    pub fn for_each_set_predicate<F: FnMut(bool, &SetAccess, &Atom)>(&self, mut f: F) {
        fn walk<F: FnMut(bool, &SetAccess, &Atom)>(b: &BoolExpr, f: &mut F) {
            match b {
                BoolExpr::And(l, r) | BoolExpr::Or(l, r) => {
                    walk(l, f);
                    walk(r, f);
                }
                BoolExpr::Not(inner) => walk(inner, f),
                BoolExpr::Eq(_, _) | BoolExpr::Gt(_, _) => {}
                BoolExpr::All(sa, atom) => f(true, sa, atom),
                BoolExpr::Any(sa, atom) => f(false, sa, atom),
            }
        }
        walk(&self.body, &mut f);
    }

    /// Depth of the canonical derivation tree producing this AST, with the
    /// start symbol at depth 0 and terminal symbols counted as nodes.
    pub fn derivation_depth(&self) -> usize {
        // START(0) expands to the BOOL body and the quantifier token at depth 1.
        1 + bool_height(&self.body)
    }
}

// Height = number of derivation-tree levels strictly below a node. These
// constants mirror the sampler's depth-feasibility table.

fn atom_height(a: &Atom) -> usize {
    match a {
        Atom::Const(_) => 1,  // C -> terminal
        Atom::Access(_) => 2, // C -> OBJECT FC -> terminals
    }
}

fn scalar_height(s: &ScalarExpr) -> usize {
    match s {
        ScalarExpr::Const(_) => 1,
        ScalarExpr::Access(_) => 2,
        // NUM -> SETF C count= ; SETF -> SET F -> terminals
        ScalarExpr::Count(_, a) => 1 + 2.max(atom_height(a)),
    }
}

fn bool_height(b: &BoolExpr) -> usize {
    match b {
        BoolExpr::And(l, r) | BoolExpr::Or(l, r) => 1 + bool_height(l).max(bool_height(r)),
        BoolExpr::Not(inner) => 1 + bool_height(inner),
        BoolExpr::Eq(a, b) | BoolExpr::Gt(a, b) => 1 + scalar_height(a).max(scalar_height(b)),
        BoolExpr::All(_, a) | BoolExpr::Any(_, a) => 1 + 2.max(atom_height(a)),
    }
}

fn push_atom(a: &Atom, out: &mut Vec<String>) {
    match a {
        Atom::Const(v) => out.push(v.token()),
        Atom::Access(p) => {
            out.push("x".to_string());
            out.push(p.token().to_string());
        }
    }
}

fn push_scalar(s: &ScalarExpr, out: &mut Vec<String>) {
    match s {
        ScalarExpr::Const(v) => out.push(v.token()),
        ScalarExpr::Access(p) => {
            out.push("x".to_string());
            out.push(p.token().to_string());
        }
        ScalarExpr::Count(sa, a) => {
            out.push(sa.set.token().to_string());
            out.push(sa.property.token().to_string());
            push_atom(a, out);
            out.push("count=".to_string());
        }
    }
}

fn push_bool(b: &BoolExpr, out: &mut Vec<String>) {
    match b {
        BoolExpr::And(l, r) => {
            push_bool(l, out);
            push_bool(r, out);
            out.push("and".to_string());
        }
        BoolExpr::Or(l, r) => {
            push_bool(l, out);
            push_bool(r, out);
            out.push("or".to_string());
        }
        BoolExpr::Not(inner) => {
            push_bool(inner, out);
            out.push("not".to_string());
        }
        BoolExpr::Eq(a, b) => {
            push_scalar(a, out);
            push_scalar(b, out);
            out.push("=".to_string());
        }
        BoolExpr::Gt(a, b) => {
            push_scalar(a, out);
            push_scalar(b, out);
            out.push(">".to_string());
        }
        BoolExpr::All(sa, a) => {
            out.push(sa.set.token().to_string());
            out.push(sa.property.token().to_string());
            push_atom(a, out);
            out.push("all".to_string());
        }
        BoolExpr::Any(sa, a) => {
            out.push(sa.set.token().to_string());
            out.push(sa.property.token().to_string());
            push_atom(a, out);
            out.push("any".to_string());
        }
    }
}

fn atom_len(a: &Atom) -> usize {
    match a {
        Atom::Const(_) => 1,
        Atom::Access(_) => 2,
    }
}

fn scalar_len(s: &ScalarExpr) -> usize {
    match s {
        ScalarExpr::Const(_) => 1,
        ScalarExpr::Access(_) => 2,
        ScalarExpr::Count(_, a) => 3 + atom_len(a),
    }
}

fn bool_len(b: &BoolExpr) -> usize {
    match b {
        BoolExpr::And(l, r) | BoolExpr::Or(l, r) => 1 + bool_len(l) + bool_len(r),
        BoolExpr::Not(inner) => 1 + bool_len(inner),
        BoolExpr::Eq(a, b) | BoolExpr::Gt(a, b) => 1 + scalar_len(a) + scalar_len(b),
        BoolExpr::All(_, a) | BoolExpr::Any(_, a) => 3 + atom_len(a),
    }
}

// Human-readable infix-style rendering, e.g.
// `exists x in S =(2, count=(color?(S-x), cyan))`. Display only, never parsed.

struct PrettyAtom<'a>(&'a Atom);
struct PrettyScalar<'a>(&'a ScalarExpr);
struct PrettyBool<'a>(&'a BoolExpr);

fn set_display(sv: SetVar) -> &'static str {
    match sv {
        SetVar::Full => "S",
        SetVar::MinusBound => "S-x",
    }
}

impl fmt::Display for PrettyAtom<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Atom::Const(v) => write!(f, "{}", v.token()),
            Atom::Access(p) => write!(f, "{}(x)", p.token()),
        }
    }
}

impl fmt::Display for PrettyScalar<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            ScalarExpr::Const(v) => write!(f, "{}", v.token()),
            ScalarExpr::Access(p) => write!(f, "{}(x)", p.token()),
            ScalarExpr::Count(sa, a) => write!(
                f,
                "count=({}({}), {})",
                sa.property.token(),
                set_display(sa.set),
                PrettyAtom(a)
            ),
        }
    }
}

impl fmt::Display for PrettyBool<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            BoolExpr::And(l, r) => write!(f, "and({}, {})", PrettyBool(l), PrettyBool(r)),
            BoolExpr::Or(l, r) => write!(f, "or({}, {})", PrettyBool(l), PrettyBool(r)),
            BoolExpr::Not(inner) => write!(f, "not({})", PrettyBool(inner)),
            BoolExpr::Eq(a, b) => write!(f, "=({}, {})", PrettyScalar(a), PrettyScalar(b)),
            BoolExpr::Gt(a, b) => write!(f, ">({}, {})", PrettyScalar(a), PrettyScalar(b)),
            BoolExpr::All(sa, a) => write!(
                f,
                "all({}({}), {})",
                sa.property.token(),
                set_display(sa.set),
                PrettyAtom(a)
            ),
            BoolExpr::Any(sa, a) => write!(
                f,
                "any({}({}), {})",
                sa.property.token(),
                set_display(sa.set),
                PrettyAtom(a)
            ),
        }
    }
}

impl fmt::Display for ConceptAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let q = match self.quantifier {
            Quantifier::Exists => "exists",
            Quantifier::ForAll => "for-all",
        };
        write!(f, "{} x in S {}", q, PrettyBool(&self.body))
    }
}

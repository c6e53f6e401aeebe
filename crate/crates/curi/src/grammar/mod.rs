//! Concept grammar: typed ASTs, weighted depth-bounded sampling, and
//! bidirectional postfix (de)serialization.

mod ast;
mod config;
mod postfix;
mod sample;

pub use ast::{
    Atom, BoolExpr, Color, ConceptAst, Material, Property, Quantifier, ScalarExpr, SetAccess,
    SetVar, Shape, Size, Value, ValueKind,
};
pub use config::{labels, GrammarConfig, GrammarConfigError, GrammarWeights, DEFAULT_MAX_DEPTH};
pub use postfix::{parse_postfix, vocabulary, ParseError};
pub use sample::CompiledGrammar;

//! Stack-based typed parsing of postfix token strings.
//!
//! The parser is the inverse of [`ConceptAst::tokens`] and accepts exactly
//! one AST per well-typed token string. Integer literals are typed as plain
//! integers and accepted wherever a number or location is expected, which is
//! what makes the postfix form unambiguous.

use thiserror::Error;

use super::ast::*;

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("unknown token {token:?} at position {pos}")]
    UnknownToken { token: String, pos: usize },
    #[error("operator {token:?} at position {pos} lacks operands")]
    StackUnderflow { token: String, pos: usize },
    #[error("type mismatch at token {token:?}, position {pos}: {detail}")]
    TypeMismatch {
        token: String,
        pos: usize,
        detail: String,
    },
    #[error("{remaining} operands left on the stack after the final token")]
    TrailingOperands { remaining: usize },
}

/// Every token the grammar can emit.
pub fn vocabulary() -> Vec<&'static str> {
    let mut v = vec![
        "x", "S", "S_{-x}", "and", "or", "not", "=", ">", "all", "any", "count=", "exists=",
        "for-all=",
    ];
    v.extend([
        "color?",
        "shape?",
        "material?",
        "size?",
        "locationX?",
        "locationY?",
    ]);
    v.extend(Color::ALL.iter().map(|c| c.as_str()));
    v.extend(Shape::ALL.iter().map(|s| s.as_str()));
    v.extend(Material::ALL.iter().map(|m| m.as_str()));
    v.extend(Size::ALL.iter().map(|s| s.as_str()));
    v.extend(["1", "2", "3", "4", "5", "6", "7", "8"]);
    v
}

#[derive(Debug)]
enum Item {
    Object,
    Set(SetVar),
    SetAccess(SetAccess),
    Scalar(ScalarExpr),
    Bool(BoolExpr),
    Concept(ConceptAst),
}

fn item_name(item: &Item) -> &'static str {
    match item {
        Item::Object => "object variable",
        Item::Set(_) => "object set",
        Item::SetAccess(_) => "set accessor",
        Item::Scalar(_) => "scalar",
        Item::Bool(_) => "boolean",
        Item::Concept(_) => "concept",
    }
}

struct Parser {
    stack: Vec<Item>,
}

impl Parser {
    fn pop(&mut self, token: &str, pos: usize) -> Result<Item, ParseError> {
        self.stack.pop().ok_or_else(|| ParseError::StackUnderflow {
            token: token.to_string(),
            pos,
        })
    }

    fn pop_scalar(&mut self, token: &str, pos: usize) -> Result<ScalarExpr, ParseError> {
        match self.pop(token, pos)? {
            Item::Scalar(s) => Ok(s),
            other => Err(mismatch(token, pos, "scalar operand", &other)),
        }
    }

    fn pop_bool(&mut self, token: &str, pos: usize) -> Result<BoolExpr, ParseError> {
        match self.pop(token, pos)? {
            Item::Bool(b) => Ok(b),
            other => Err(mismatch(token, pos, "boolean operand", &other)),
        }
    }

    /// Pops the value argument of all/any/count= (a constant or an accessor
    /// on the bound object) followed by the set accessor, checking that the
    /// argument's type matches the accessed property.
    fn pop_set_args(&mut self, token: &str, pos: usize) -> Result<(SetAccess, Atom), ParseError> {
        let atom = match self.pop(token, pos)? {
            Item::Scalar(ScalarExpr::Const(v)) => Atom::Const(v),
            Item::Scalar(ScalarExpr::Access(p)) => Atom::Access(p),
            other => return Err(mismatch(token, pos, "constant or object accessor", &other)),
        };
        let sa = match self.pop(token, pos)? {
            Item::SetAccess(sa) => sa,
            other => return Err(mismatch(token, pos, "set accessor", &other)),
        };
        if atom.kind() != sa.property.value_kind() {
            return Err(ParseError::TypeMismatch {
                token: token.to_string(),
                pos,
                detail: format!(
                    "argument type {:?} does not match accessed property {}",
                    atom.kind(),
                    sa.property.token()
                ),
            });
        }
        Ok((sa, atom))
    }
}

fn mismatch(token: &str, pos: usize, expected: &str, got: &Item) -> ParseError {
    ParseError::TypeMismatch {
        token: token.to_string(),
        pos,
        detail: format!("expected {expected}, found {}", item_name(got)),
    }
}

fn constant_for(token: &str) -> Option<Value> {
    if let Some(c) = Color::ALL.iter().find(|c| c.as_str() == token) {
        return Some(Value::Color(*c));
    }
    if let Some(s) = Shape::ALL.iter().find(|s| s.as_str() == token) {
        return Some(Value::Shape(*s));
    }
    if let Some(m) = Material::ALL.iter().find(|m| m.as_str() == token) {
        return Some(Value::Material(*m));
    }
    if let Some(s) = Size::ALL.iter().find(|s| s.as_str() == token) {
        return Some(Value::Size(*s));
    }
    match token {
        "1" | "2" | "3" | "4" | "5" | "6" | "7" | "8" => {
            Some(Value::Int(token.parse::<u8>().unwrap()))
        }
        _ => None,
    }
}

fn accessor_for(token: &str) -> Option<Property> {
    match token {
        "color?" => Some(Property::Color),
        "shape?" => Some(Property::Shape),
        "material?" => Some(Property::Material),
        "size?" => Some(Property::Size),
        "locationX?" => Some(Property::LocationX),
        "locationY?" => Some(Property::LocationY),
        _ => None,
    }
}

/// Parses a postfix token sequence into the unique AST it denotes.
pub fn parse_postfix<S: AsRef<str>>(tokens: &[S]) -> Result<ConceptAst, ParseError> {
    let mut p = Parser { stack: Vec::new() };
    for (pos, raw) in tokens.iter().enumerate() {
        let token = raw.as_ref();
        match token {
            "x" => p.stack.push(Item::Object),
            "S" => p.stack.push(Item::Set(SetVar::Full)),
            "S_{-x}" => p.stack.push(Item::Set(SetVar::MinusBound)),
            "and" | "or" => {
                let rhs = p.pop_bool(token, pos)?;
                let lhs = p.pop_bool(token, pos)?;
                let node = if token == "and" {
                    BoolExpr::And(Box::new(lhs), Box::new(rhs))
                } else {
                    BoolExpr::Or(Box::new(lhs), Box::new(rhs))
                };
                p.stack.push(Item::Bool(node));
            }
            "not" => {
                let inner = p.pop_bool(token, pos)?;
                p.stack.push(Item::Bool(BoolExpr::Not(Box::new(inner))));
            }
            "=" | ">" => {
                let rhs = p.pop_scalar(token, pos)?;
                let lhs = p.pop_scalar(token, pos)?;
                let (lk, rk) = (lhs.kind(), rhs.kind());
                if lk != rk {
                    return Err(ParseError::TypeMismatch {
                        token: token.to_string(),
                        pos,
                        detail: format!("operand types {lk:?} and {rk:?} differ"),
                    });
                }
                if token == ">" && !matches!(lk, ValueKind::Size | ValueKind::Int) {
                    return Err(ParseError::TypeMismatch {
                        token: token.to_string(),
                        pos,
                        detail: format!("`>` is not defined on {lk:?} operands"),
                    });
                }
                let node = if token == "=" {
                    BoolExpr::Eq(lhs, rhs)
                } else {
                    BoolExpr::Gt(lhs, rhs)
                };
                p.stack.push(Item::Bool(node));
            }
            "all" | "any" => {
                let (sa, atom) = p.pop_set_args(token, pos)?;
                let node = if token == "all" {
                    BoolExpr::All(sa, atom)
                } else {
                    BoolExpr::Any(sa, atom)
                };
                p.stack.push(Item::Bool(node));
            }
            "count=" => {
                let (sa, atom) = p.pop_set_args(token, pos)?;
                p.stack.push(Item::Scalar(ScalarExpr::Count(sa, atom)));
            }
            "exists=" | "for-all=" => {
                let body = p.pop_bool(token, pos)?;
                let quantifier = if token == "exists=" {
                    Quantifier::Exists
                } else {
                    Quantifier::ForAll
                };
                p.stack.push(Item::Concept(ConceptAst { quantifier, body }));
            }
            _ => {
                if let Some(prop) = accessor_for(token) {
                    match p.pop(token, pos)? {
                        Item::Object => p.stack.push(Item::Scalar(ScalarExpr::Access(prop))),
                        Item::Set(set) => {
                            p.stack.push(Item::SetAccess(SetAccess { set, property: prop }))
                        }
                        other => {
                            return Err(mismatch(token, pos, "object or set", &other));
                        }
                    }
                } else if let Some(v) = constant_for(token) {
                    p.stack.push(Item::Scalar(ScalarExpr::Const(v)));
                } else {
                    return Err(ParseError::UnknownToken {
                        token: token.to_string(),
                        pos,
                    });
                }
            }
        }
    }
    match p.stack.len() {
        0 => Err(ParseError::StackUnderflow {
            token: String::new(),
            pos: 0,
        }),
        1 => match p.stack.pop().unwrap() {
            Item::Concept(c) => Ok(c),
            other => Err(ParseError::TypeMismatch {
                token: String::new(),
                pos: tokens.len(),
                detail: format!("program ends with {}, not a quantified concept", item_name(&other)),
            }),
        },
        n => Err(ParseError::TrailingOperands { remaining: n }),
    }
}

//! Expressions, typed variables and the standard-form problem.

mod diff;
mod document;
mod eval;
mod expr;
mod parse;
mod print;
mod standard;

pub use diff::{differentiate, gradient};
pub use document::{ConstraintDoc, ModelDocument, ObjectiveDoc, ScaSection, VariableDoc};
pub use eval::{evaluate, Env, EvalError, SliceEnv};
pub use expr::{apply_pow, BinaryAtom, Expr, UnaryAtom, CALL_ATOMS};
pub use parse::{parse_with, ParseError};
pub use print::format_number;
pub use standard::{
    is_identifier,
    canonicalize, parse_expression, Constraint, Metadata, ModelError, Provenance, RawConstraint, RawRelation,
    Relation, Sense, StandardForm, VarType, Variable,
};

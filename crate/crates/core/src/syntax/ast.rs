//! Abstract syntax of Dalarna programs, including the run-time-only forms
//! (locations, the blocked-send marker and inlined method bodies) that appear
//! once a program starts reducing.

use std::fmt;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::state::{Capability, Loc, MsgId, Value};

/// Variable, field, method and channel names.
pub type Name = String;

/// The distinguished receiver variable inside method bodies.
pub const SELF: &str = "self";

/// Source position of a node. Spans never participate in equality so that
/// re-parsed and generated trees compare structurally.
#[derive(Debug, Clone, Copy, Default)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl Span {
    pub fn new(line: u32, col: u32) -> Self {
        Span { line, col }
    }
}

impl PartialEq for Span {
    fn eq(&self, _other: &Span) -> bool {
        true
    }
}

impl Eq for Span {}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

/// A program is its top-level term.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub body: Term,
}

/// The `w` position of the grammar, extended with run-time values.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Operand {
    Var(Name),
    Consume(Name),
    Val(Value),
}

impl Operand {
    pub fn as_value(&self) -> Option<Value> {
        match self {
            Operand::Val(v) => Some(*v),
            _ => None,
        }
    }

    pub fn is_value(&self) -> bool {
        matches!(self, Operand::Val(_))
    }

    pub fn var_name(&self) -> Option<&str> {
        match self {
            Operand::Var(x) | Operand::Consume(x) => Some(x),
            Operand::Val(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Term {
    Ret { value: Operand, span: Span },
    Let { binder: Name, bound: Expr, body: Rc<Term>, span: Span },
}

impl Term {
    pub fn ret(value: Operand) -> Term {
        Term::Ret { value, span: Span::default() }
    }

    pub fn let_in(binder: impl Into<Name>, bound: Expr, body: Term) -> Term {
        Term::Let { binder: binder.into(), bound, body: Rc::new(body), span: Span::default() }
    }

    pub fn span(&self) -> Span {
        match self {
            Term::Ret { span, .. } | Term::Let { span, .. } => *span,
        }
    }

    /// The value of a fully reduced term.
    pub fn as_value(&self) -> Option<Value> {
        match self {
            Term::Ret { value, .. } => value.as_value(),
            Term::Let { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldInit {
    pub name: Name,
    pub value: Operand,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Method {
    pub name: Name,
    pub param: Name,
    pub body: Term,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    /// A variable use, a consume, or a value.
    Atom(Operand),
    FieldRead { target: Name, field: Name },
    FieldWrite { target: Name, field: Name, value: Operand },
    Call { target: Name, method: Name, arg: Operand },
    Send { chan: Operand, payload: Operand },
    Recv { chan: Operand },
    Spawn { binder: Name, body: Rc<Term> },
    /// Run-time marker of a sender waiting for message `msg` on `chan` to be taken.
    Blocked { msg: MsgId, chan: Loc },
    Copy { cap: Capability, source: Name },
    Object { cap: Capability, fields: Vec<FieldInit>, methods: Rc<Vec<Method>> },
    Cast { cap: Capability, value: Operand },
    /// Run-time only: a method body inlined at its call site.
    Block(Rc<Term>),
}

impl Expr {
    pub fn as_value(&self) -> Option<Value> {
        match self {
            Expr::Atom(op) => op.as_value(),
            _ => None,
        }
    }

    pub fn value(v: Value) -> Expr {
        Expr::Atom(Operand::Val(v))
    }
}

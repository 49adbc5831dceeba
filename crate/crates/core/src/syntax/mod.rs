//! Surface syntax: AST, lexer, parser, printer and the static
//! well-formedness judgment over declarations, terms and expressions.

pub mod ast;
mod lexer;
mod parser;
pub mod printer;
pub mod wf;

use std::fmt;

use thiserror::Error;

pub use ast::*;
pub use parser::parse;
pub use printer::{print_program, print_term};
pub use wf::{check_program, free_vars};

#[derive(Debug, Clone, Error)]
#[error("{span}: {message}")]
pub struct ParseError {
    pub span: Span,
    pub message: String,
}

impl ParseError {
    pub fn new(span: Span, message: impl Into<String>) -> Self {
        ParseError { span, message: message.into() }
    }

    /// `FILE:LINE:COL: parse error: message`
    pub fn render(&self, file: &str) -> String {
        format!("{file}:{}: parse error: {}", self.span, self.message)
    }
}

/// A violation of one well-formedness rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub rule: &'static str,
    pub span: Span,
    pub message: String,
}

impl Diagnostic {
    pub fn render(&self, file: &str) -> String {
        format!("{file}:{}: {}: {}", self.span, self.rule, self.message)
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}: {}", self.span, self.rule, self.message)
    }
}

//! Recursive descent parser for `.dala` source.
//!
//! The parser validates A-normal form instead of normalizing: every operand
//! position accepts only a name or `consume name`, so nested expressions are
//! rejected with a positioned error.

use std::collections::BTreeSet;
use std::rc::Rc;

use super::ast::*;
use super::lexer::{tokenize, Tok, Token};
use super::ParseError;
use crate::state::Capability;

pub fn parse(source: &str) -> Result<Program, ParseError> {
    let mut parser = Parser { tokens: tokenize(source)?, pos: 0 };
    let body = parser.term()?;
    parser.expect(Tok::Eof)?;
    Ok(Program { body })
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek_at(&self, offset: usize) -> &Tok {
        let idx = (self.pos + offset).min(self.tokens.len() - 1);
        &self.tokens[idx].tok
    }

    fn span(&self) -> Span {
        self.tokens[self.pos].span
    }

    fn bump(&mut self) -> Token {
        let tok = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        tok
    }

    fn unexpected(&self, expected: &str) -> ParseError {
        ParseError::new(
            self.span(),
            format!("expected {expected}, found {}", self.peek().describe()),
        )
    }

    fn expect(&mut self, tok: Tok) -> Result<Span, ParseError> {
        if *self.peek() == tok {
            Ok(self.bump().span)
        } else {
            Err(self.unexpected(&tok.describe()))
        }
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == tok {
            self.bump();
            true
        } else {
            false
        }
    }

    fn ident(&mut self, what: &str) -> Result<Name, ParseError> {
        match self.peek().clone() {
            Tok::Ident(name) => {
                self.bump();
                Ok(name)
            }
            Tok::SelfKw => Err(ParseError::new(self.span(), format!("`self` cannot be used as {what}"))),
            _ => Err(self.unexpected(what)),
        }
    }

    /// A variable reference: an identifier or `self`.
    fn name(&mut self) -> Result<Name, ParseError> {
        if self.eat(&Tok::SelfKw) {
            return Ok(SELF.to_string());
        }
        self.ident("a variable")
    }

    fn consumed_name(&mut self) -> Result<Name, ParseError> {
        if *self.peek() == Tok::SelfKw {
            return Err(ParseError::new(self.span(), "`self` cannot be consumed"));
        }
        self.ident("a variable to consume")
    }

    fn operand(&mut self) -> Result<Operand, ParseError> {
        if self.eat(&Tok::Consume) {
            return Ok(Operand::Consume(self.consumed_name()?));
        }
        match self.peek() {
            Tok::Ident(_) | Tok::SelfKw => Ok(Operand::Var(self.name()?)),
            _ => Err(self.unexpected("a variable or `consume x` (programs must be in A-normal form)")),
        }
    }

    fn capability(&mut self) -> Result<Capability, ParseError> {
        let cap = match self.peek() {
            Tok::Imm => Capability::Imm,
            Tok::Iso => Capability::Iso,
            Tok::Local => Capability::Local,
            Tok::Unsafe => Capability::Unsafe,
            _ => return Err(self.unexpected("a capability (imm, iso, local or unsafe)")),
        };
        self.bump();
        Ok(cap)
    }

    fn term(&mut self) -> Result<Term, ParseError> {
        let span = self.span();
        if self.eat(&Tok::Let) {
            let binder = self.ident("a let binder")?;
            self.expect(Tok::Eq)?;
            let bound = self.expr()?;
            self.expect(Tok::In)?;
            let body = self.term()?;
            return Ok(Term::Let { binder, bound, body: Rc::new(body), span });
        }
        let value = self.operand()?;
        Ok(Term::Ret { value, span })
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        match self.peek().clone() {
            Tok::Consume => Ok(Expr::Atom(self.operand()?)),
            Tok::Ident(_) | Tok::SelfKw => self.name_expr(),
            Tok::Send => {
                self.bump();
                self.expect(Tok::LParen)?;
                let chan = Operand::Var(self.name()?);
                self.expect(Tok::Comma)?;
                let payload = self.operand()?;
                self.expect(Tok::RParen)?;
                Ok(Expr::Send { chan, payload })
            }
            Tok::Recv => {
                self.bump();
                self.expect(Tok::LParen)?;
                let chan = Operand::Var(self.name()?);
                self.expect(Tok::RParen)?;
                Ok(Expr::Recv { chan })
            }
            Tok::Spawn => {
                self.bump();
                let binder = self.ident("a channel binder")?;
                self.expect(Tok::LBrace)?;
                let body = self.term()?;
                self.expect(Tok::RBrace)?;
                Ok(Expr::Spawn { binder, body: Rc::new(body) })
            }
            Tok::Copy => {
                self.bump();
                let cap = self.capability()?;
                let source = self.name()?;
                Ok(Expr::Copy { cap, source })
            }
            Tok::Freeze => {
                self.bump();
                self.expect(Tok::LParen)?;
                let source = self.name()?;
                self.expect(Tok::RParen)?;
                Ok(Expr::Copy { cap: Capability::Imm, source })
            }
            Tok::Cast => {
                self.bump();
                let cap = self.capability()?;
                let value = self.operand()?;
                Ok(Expr::Cast { cap, value })
            }
            Tok::Object => self.object(),
            _ => Err(self.unexpected("an expression")),
        }
    }

    fn name_expr(&mut self) -> Result<Expr, ParseError> {
        let target = self.name()?;
        if !self.eat(&Tok::Dot) {
            return Ok(Expr::Atom(Operand::Var(target)));
        }
        let member = self.ident("a field or method name")?;
        if self.eat(&Tok::LParen) {
            let arg = self.operand()?;
            self.expect(Tok::RParen)?;
            return Ok(Expr::Call { target, method: member, arg });
        }
        if self.eat(&Tok::Eq) {
            let value = self.operand()?;
            return Ok(Expr::FieldWrite { target, field: member, value });
        }
        Ok(Expr::FieldRead { target, field: member })
    }

    fn object(&mut self) -> Result<Expr, ParseError> {
        self.expect(Tok::Object)?;
        // An unannotated literal is unsafe.
        let cap = match self.peek() {
            Tok::LBrace => Capability::Unsafe,
            _ => self.capability()?,
        };
        self.expect(Tok::LBrace)?;
        let mut fields = Vec::new();
        let mut methods = Vec::new();
        let mut field_names = BTreeSet::new();
        let mut method_names = BTreeSet::new();
        loop {
            match self.peek() {
                Tok::RBrace => {
                    self.bump();
                    break;
                }
                Tok::Method => {
                    let span = self.bump().span;
                    let name_span = self.span();
                    let name = self.ident("a method name")?;
                    if !method_names.insert(name.clone()) {
                        return Err(ParseError::new(name_span, format!("duplicate method `{name}`")));
                    }
                    self.expect(Tok::LParen)?;
                    let param = self.ident("a method parameter")?;
                    self.expect(Tok::RParen)?;
                    self.expect(Tok::LBrace)?;
                    let body = self.term()?;
                    self.expect(Tok::RBrace)?;
                    methods.push(Method { name, param, body, span });
                }
                Tok::Ident(_) => {
                    if *self.peek_at(1) != Tok::Eq {
                        self.bump();
                        return Err(self.unexpected("`=`"));
                    }
                    let name_span = self.span();
                    let name = self.ident("a field name")?;
                    if !field_names.insert(name.clone()) {
                        return Err(ParseError::new(name_span, format!("duplicate field `{name}`")));
                    }
                    self.expect(Tok::Eq)?;
                    let value = self.operand()?;
                    fields.push(FieldInit { name, value });
                }
                _ => return Err(self.unexpected("a field, a method or `}`")),
            }
            // Members may be separated by `;` or `,`.
            if !self.eat(&Tok::Semi) {
                self.eat(&Tok::Comma);
            }
        }
        Ok(Expr::Object { cap, fields, methods: Rc::new(methods) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_object_program() {
        let p = parse("let x = object unsafe { } in x").unwrap();
        let expected = Term::let_in(
            "x",
            Expr::Object { cap: Capability::Unsafe, fields: vec![], methods: Default::default() },
            Term::ret(Operand::Var("x".into())),
        );
        assert_eq!(p.body, expected);
    }

    #[test]
    fn unannotated_object_is_unsafe() {
        let p = parse("let x = object { } in x").unwrap();
        let Term::Let { bound: Expr::Object { cap, .. }, .. } = p.body else { panic!() };
        assert_eq!(cap, Capability::Unsafe);
    }

    #[test]
    fn consume_self_is_rejected() {
        let err = parse("let x = consume self in x").unwrap_err();
        assert_eq!((err.span.line, err.span.col), (1, 17));
        assert!(err.message.contains("self"));
    }

    #[test]
    fn self_binder_is_rejected() {
        assert!(parse("let self = object imm { } in self").is_err());
    }

    #[test]
    fn nested_expressions_are_rejected() {
        let err = parse("let x = object imm { } in let y = x.f.g in y").unwrap_err();
        assert!(err.message.contains("expected `in`"), "{}", err.message);
        assert!(parse("let y = send(c, x.f) in y").is_err());
    }

    #[test]
    fn freeze_is_copy_imm() {
        let p = parse("let x = object { } in let y = freeze(x) in y").unwrap();
        let Term::Let { body, .. } = p.body else { panic!() };
        let Term::Let { bound, .. } = Rc::unwrap_or_clone(body) else { panic!() };
        assert_eq!(bound, Expr::Copy { cap: Capability::Imm, source: "x".into() });
    }

    #[test]
    fn positions_are_reported() {
        let err = parse("let x = object imm {\n  f = ;\n} in x").unwrap_err();
        assert_eq!((err.span.line, err.span.col), (2, 7));
    }

    #[test]
    fn duplicate_fields_are_rejected() {
        assert!(parse("let x = object { f = a; f = b } in x").is_err());
    }

    #[test]
    fn members_and_calls() {
        let src = "let o = object local { method m(p) { let q = self.f = consume p in q } } in \
                   let r = o.m(consume z) in r";
        let p = parse(src).unwrap();
        let Term::Let { bound: Expr::Object { methods, .. }, body, .. } = p.body else { panic!() };
        assert_eq!(methods.len(), 1);
        assert_eq!(methods[0].param, "p");
        let Term::Let { bound, .. } = Rc::unwrap_or_clone(body) else { panic!() };
        assert_eq!(
            bound,
            Expr::Call { target: "o".into(), method: "m".into(), arg: Operand::Consume("z".into()) }
        );
    }
}

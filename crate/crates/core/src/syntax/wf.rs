//! Static well-formedness of source programs and the free-variable helper.
//!
//! `check_program` derives `⊢ t` from the empty environment. On top of the
//! scoping rules it enforces that every binder in the program (let, spawn and
//! method parameter) is globally unique and never `self`, which is what the
//! reducer relies on when it binds names in the shared heap.

use std::collections::BTreeSet;

use super::ast::*;
use super::Diagnostic;
use crate::state::Capability;

/// Free variables of a term. `consume x` contributes `x`; a method body
/// contributes its free names other than `self` and its parameter.
pub fn free_vars(t: &Term) -> BTreeSet<Name> {
    let mut out = BTreeSet::new();
    term_fv(t, &mut out);
    out
}

pub fn expr_free_vars(e: &Expr) -> BTreeSet<Name> {
    let mut out = BTreeSet::new();
    expr_fv(e, &mut out);
    out
}

fn operand_fv(op: &Operand, out: &mut BTreeSet<Name>) {
    if let Some(x) = op.var_name() {
        out.insert(x.to_string());
    }
}

fn term_fv(t: &Term, out: &mut BTreeSet<Name>) {
    match t {
        Term::Ret { value, .. } => operand_fv(value, out),
        Term::Let { binder, bound, body, .. } => {
            expr_fv(bound, out);
            let mut inner = BTreeSet::new();
            term_fv(body, &mut inner);
            inner.remove(binder);
            out.extend(inner);
        }
    }
}

fn expr_fv(e: &Expr, out: &mut BTreeSet<Name>) {
    match e {
        Expr::Atom(op) => operand_fv(op, out),
        Expr::FieldRead { target, .. } => {
            out.insert(target.clone());
        }
        Expr::FieldWrite { target, value, .. } => {
            out.insert(target.clone());
            operand_fv(value, out);
        }
        Expr::Call { target, arg, .. } => {
            out.insert(target.clone());
            operand_fv(arg, out);
        }
        Expr::Send { chan, payload } => {
            operand_fv(chan, out);
            operand_fv(payload, out);
        }
        Expr::Recv { chan } => operand_fv(chan, out),
        Expr::Spawn { binder, body } => {
            let mut inner = free_vars(body);
            inner.remove(binder);
            out.extend(inner);
        }
        Expr::Blocked { .. } => {}
        Expr::Copy { source, .. } => {
            out.insert(source.clone());
        }
        Expr::Cast { value, .. } => operand_fv(value, out),
        Expr::Object { fields, methods, .. } => {
            for f in fields {
                operand_fv(&f.value, out);
            }
            for m in methods.iter() {
                let mut inner = free_vars(&m.body);
                inner.remove(SELF);
                inner.remove(&m.param);
                out.extend(inner);
            }
        }
        Expr::Block(t) => term_fv(t, out),
    }
}

/// Accepts `p` or returns one diagnostic per violation found.
pub fn check_program(p: &Program) -> Result<(), Vec<Diagnostic>> {
    let mut cx = Checker { diags: Vec::new(), binders: BTreeSet::new() };
    let scope = Scope::default();
    cx.term(&p.body, &scope);
    if cx.diags.is_empty() {
        Ok(())
    } else {
        Err(cx.diags)
    }
}

/// Names visible at a point, plus the names hidden by the nearest enclosing
/// spawn or method boundary so that a leak across it can be reported by the
/// boundary's rule instead of as a plain unbound variable.
#[derive(Clone, Default)]
struct Scope {
    visible: BTreeSet<Name>,
    hidden: BTreeSet<Name>,
    boundary: Option<&'static str>,
}

impl Scope {
    fn with(&self, name: &str) -> Scope {
        let mut s = self.clone();
        s.visible.insert(name.to_string());
        s
    }

    fn enter(&self, rule: &'static str, names: &[&str]) -> Scope {
        let mut hidden = self.hidden.clone();
        hidden.extend(self.visible.iter().cloned());
        Scope {
            visible: names.iter().map(|n| n.to_string()).collect(),
            hidden,
            boundary: Some(rule),
        }
    }
}

struct Checker {
    diags: Vec<Diagnostic>,
    binders: BTreeSet<Name>,
}

impl Checker {
    fn report(&mut self, rule: &'static str, span: Span, message: String) {
        self.diags.push(Diagnostic { rule, span, message });
    }

    fn bind(&mut self, rule: &'static str, name: &str, span: Span, scope: &Scope) {
        if name == SELF {
            self.report(rule, span, "`self` cannot be bound".to_string());
        } else if scope.visible.contains(name) || !self.binders.insert(name.to_string()) {
            self.report(rule, span, format!("duplicate binder {name}"));
        }
    }

    fn use_var(&mut self, name: &str, span: Span, scope: &Scope) {
        if scope.visible.contains(name) {
            return;
        }
        match scope.boundary {
            Some(rule) if scope.hidden.contains(name) => {
                let place = if rule == "WF-Spawn" { "spawn body" } else { "method body" };
                self.report(rule, span, format!("{place} refers to outer variable {name}"));
            }
            _ => self.report("WF-Var", span, format!("unbound variable {name}")),
        }
    }

    fn operand(&mut self, op: &Operand, span: Span, scope: &Scope) {
        match op {
            Operand::Var(x) => self.use_var(x, span, scope),
            Operand::Consume(x) => {
                if x == SELF {
                    self.report("WF-Consume", span, "`self` cannot be consumed".to_string());
                }
                self.use_var(x, span, scope)
            }
            Operand::Val(v) => {
                self.report("WF-Program", span, format!("run-time value {v} in source"));
            }
        }
    }

    fn term(&mut self, t: &Term, scope: &Scope) {
        match t {
            Term::Ret { value, span } => self.operand(value, *span, scope),
            Term::Let { binder, bound, body, span } => {
                self.bind("WF-Let", binder, *span, scope);
                self.expr(bound, *span, scope);
                self.term(body, &scope.with(binder));
            }
        }
    }

    fn expr(&mut self, e: &Expr, span: Span, scope: &Scope) {
        match e {
            Expr::Atom(op) => self.operand(op, span, scope),
            Expr::FieldRead { target, .. } => self.use_var(target, span, scope),
            Expr::FieldWrite { target, value, .. } => {
                self.use_var(target, span, scope);
                self.operand(value, span, scope);
            }
            Expr::Call { target, arg, .. } => {
                self.use_var(target, span, scope);
                self.operand(arg, span, scope);
            }
            Expr::Send { chan, payload } => {
                self.operand(chan, span, scope);
                self.operand(payload, span, scope);
            }
            Expr::Recv { chan } => self.operand(chan, span, scope),
            Expr::Spawn { binder, body } => {
                self.bind("WF-Spawn", binder, span, scope);
                let inner = scope.enter("WF-Spawn", &[binder]);
                self.term(body, &inner);
            }
            Expr::Blocked { .. } | Expr::Block(_) => {
                self.report("WF-Program", span, "run-time form in source".to_string());
            }
            Expr::Copy { cap, source } => {
                if *cap == Capability::Iso {
                    self.report("WF-Copy", span, format!("cannot copy {source} at iso"));
                }
                self.use_var(source, span, scope);
            }
            Expr::Cast { value, .. } => self.operand(value, span, scope),
            Expr::Object { fields, methods, .. } => {
                for f in fields {
                    self.operand(&f.value, span, scope);
                }
                for m in methods.iter() {
                    self.bind("WF-Method", &m.param, m.span, scope);
                    let inner = scope.enter("WF-Object", &[SELF, &m.param]);
                    self.term(&m.body, &inner);
                }
            }
        }
    }
}

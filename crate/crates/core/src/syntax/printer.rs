//! Pretty-printer producing source the parser accepts again.
//!
//! Run-time forms have a printed shape too (`@3` for a location, `absent`,
//! `empty`, `blocked(#2, @3)` and `{ ... }` for an inlined method body) so
//! that configurations can be shown, but those shapes do not parse.

use std::fmt::Write;

use super::ast::*;

pub fn print_program(p: &Program) -> String {
    let mut out = String::new();
    term(&mut out, &p.body, 0);
    out.push('\n');
    out
}

pub fn print_term(t: &Term) -> String {
    let mut out = String::new();
    term(&mut out, t, 0);
    out
}

pub fn print_expr(e: &Expr) -> String {
    let mut out = String::new();
    expr(&mut out, e, 0);
    out
}

fn indent(out: &mut String, level: usize) {
    for _ in 0..level {
        out.push_str("  ");
    }
}

pub fn operand_text(op: &Operand) -> String {
    match op {
        Operand::Var(x) => x.clone(),
        Operand::Consume(x) => format!("consume {x}"),
        Operand::Val(v) => v.to_string(),
    }
}

fn term(out: &mut String, t: &Term, level: usize) {
    let mut cur = t;
    loop {
        match cur {
            Term::Ret { value, .. } => {
                out.push_str(&operand_text(value));
                return;
            }
            Term::Let { binder, bound, body, .. } => {
                let _ = write!(out, "let {binder} = ");
                expr(out, bound, level);
                out.push_str(" in\n");
                indent(out, level);
                cur = body;
            }
        }
    }
}

fn nested_term(out: &mut String, t: &Term, level: usize) {
    out.push_str("{\n");
    indent(out, level + 1);
    term(out, t, level + 1);
    out.push('\n');
    indent(out, level);
    out.push('}');
}

fn expr(out: &mut String, e: &Expr, level: usize) {
    match e {
        Expr::Atom(op) => out.push_str(&operand_text(op)),
        Expr::FieldRead { target, field } => {
            let _ = write!(out, "{target}.{field}");
        }
        Expr::FieldWrite { target, field, value } => {
            let _ = write!(out, "{target}.{field} = {}", operand_text(value));
        }
        Expr::Call { target, method, arg } => {
            let _ = write!(out, "{target}.{method}({})", operand_text(arg));
        }
        Expr::Send { chan, payload } => {
            let _ = write!(out, "send({}, {})", operand_text(chan), operand_text(payload));
        }
        Expr::Recv { chan } => {
            let _ = write!(out, "recv({})", operand_text(chan));
        }
        Expr::Spawn { binder, body } => {
            let _ = write!(out, "spawn {binder} ");
            nested_term(out, body, level);
        }
        Expr::Blocked { msg, chan } => {
            let _ = write!(out, "blocked({msg}, {chan})");
        }
        Expr::Copy { cap, source } => {
            let _ = write!(out, "copy {cap} {source}");
        }
        Expr::Cast { cap, value } => {
            let _ = write!(out, "cast {cap} {}", operand_text(value));
        }
        Expr::Block(t) => nested_term(out, t, level),
        Expr::Object { cap, fields, methods } => {
            let _ = write!(out, "object {cap} {{");
            if fields.is_empty() && methods.is_empty() {
                out.push_str(" }");
                return;
            }
            out.push('\n');
            for f in fields {
                indent(out, level + 1);
                let _ = writeln!(out, "{} = {};", f.name, operand_text(&f.value));
            }
            for m in methods.iter() {
                indent(out, level + 1);
                let _ = write!(out, "method {}({}) ", m.name, m.param);
                nested_term(out, &m.body, level + 1);
                out.push('\n');
            }
            indent(out, level);
            out.push('}');
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse;
    use super::*;

    #[test]
    fn round_trips_a_worker() {
        let src = "let o = object iso { method go(p) { let q = self.f = consume p in q } } in \
                   let c = spawn ch { let m = recv(ch) in let r = send(ch, consume m) in r } in \
                   let s = send(c, consume o) in let back = recv(c) in let z = cast iso back in z";
        let p = parse(src).unwrap();
        let printed = print_program(&p);
        assert_eq!(parse(&printed).unwrap(), p, "{printed}");
    }

    #[test]
    fn empty_object_on_one_line() {
        let p = parse("let x = object imm { } in x").unwrap();
        assert_eq!(print_program(&p), "let x = object imm { } in\nx\n");
    }
}

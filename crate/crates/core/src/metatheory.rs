//! Executable store typing and configuration well-formedness.
//!
//! These checks are run as an oracle: a configuration reached by reduction
//! from a well-formed program must pass [`check_configuration`], and
//! [`check_preservation`] additionally compares consecutive configurations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use crate::state::{Capability, Configuration, Entry, Heap, Loc, Status, Tag, Thread, ThreadId, Value};
use crate::syntax::{free_vars, Expr, Name, Operand, Term, SELF};

/// A key of the store typing.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Key {
    Var(Name),
    Loc(Loc),
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Key::Var(x) => f.write_str(x),
            Key::Loc(l) => write!(f, "{l}"),
        }
    }
}

/// Γ as a list so that duplicate entries can be represented and rejected.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct StoreType {
    pub entries: Vec<(Key, Tag)>,
}

impl StoreType {
    pub fn get(&self, key: &Key) -> Option<Tag> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, t)| *t)
    }

    pub fn get_loc(&self, l: Loc) -> Option<Tag> {
        self.get(&Key::Loc(l))
    }

    pub fn keys(&self) -> BTreeSet<Key> {
        self.entries.iter().map(|(k, _)| k.clone()).collect()
    }

    pub fn push(&mut self, key: Key, tag: Tag) {
        self.entries.push((key, tag));
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub rule: &'static str,
    pub subject: String,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}: {}", self.rule, self.subject, self.detail)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct WfReport {
    pub violations: Vec<Violation>,
}

impl WfReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn add(&mut self, rule: &'static str, subject: impl fmt::Display, detail: impl Into<String>) {
        self.violations.push(Violation { rule, subject: subject.to_string(), detail: detail.into() });
    }

    fn merge(&mut self, other: WfReport) {
        self.violations.extend(other.violations);
    }
}

impl fmt::Display for WfReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ok() {
            return f.write_str("ok");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Γ read off the heap: objects by capability, channels as channels, and
/// consumed variables by the tag recorded when they were consumed.
pub fn infer_gamma(h: &Heap) -> StoreType {
    let mut g = StoreType::default();
    for (x, v) in &h.vars {
        let tag = match v {
            Value::Loc(_) => h.tag_of(*v),
            Value::Absent => h.consumed.get(x).copied(),
            Value::Empty => None,
        };
        if let Some(tag) = tag {
            g.push(Key::Var(x.clone()), tag);
        }
    }
    for (l, e) in &h.locs {
        g.push(Key::Loc(*l), e.tag());
    }
    g
}

fn ok_ref_env(g: &StoreType, k: Capability, v: Value) -> bool {
    match v.loc().and_then(|l| g.get_loc(l)) {
        Some(tag) => crate::state::ok_field(k, tag.capability()),
        None => false,
    }
}

pub fn check_store(g: &StoreType, h: &Heap) -> WfReport {
    let mut r = WfReport::default();
    let mut seen = BTreeSet::new();
    for (k, _) in &g.entries {
        if !seen.insert(k.clone()) {
            let rule = match k {
                Key::Var(_) => "WF-Env-Var",
                Key::Loc(_) => "WF-Env-Loc",
            };
            r.add(rule, k, "duplicate entry");
        }
    }
    for (x, v) in &h.vars {
        let gx = g.get(&Key::Var(x.clone()));
        match v {
            Value::Loc(l) => {
                if !h.locs.contains_key(l) {
                    r.add("WF-H-Var", x, format!("{l} is not allocated"));
                } else if gx.is_none() || gx != g.get_loc(*l) {
                    r.add("WF-H-Var", x, format!("typed {gx:?} but {l} is typed {:?}", g.get_loc(*l)));
                }
            }
            Value::Absent => {
                if gx.is_none() {
                    r.add("WF-H-Absent", x, "consumed variable has no type");
                }
            }
            Value::Empty => r.add("WF-H-Var", x, "variable holds the empty-channel token"),
        }
    }
    for (l, e) in &h.locs {
        let gl = g.get_loc(*l);
        match e {
            Entry::Object(o) => {
                if gl != Some(Tag::Object(o.cap)) {
                    r.add("WF-H-Object", l, format!("{} object typed {gl:?}", o.cap));
                }
                for (f, v) in &o.fields {
                    if v.loc().is_none_or(|fl| !h.locs.contains_key(&fl)) {
                        r.add("WF-H-Object", format!("{l}.{f}"), format!("field holds {v}"));
                    } else if !ok_ref_env(g, o.cap, *v) {
                        r.add("WF-H-Object", format!("{l}.{f}"), format!("{} object cannot hold {v}", o.cap));
                    }
                }
            }
            Entry::Channel(c) => {
                if gl != Some(Tag::Channel) {
                    r.add("WF-H-Chan", l, format!("channel typed {gl:?}"));
                }
                match c.payload {
                    Value::Empty => {}
                    Value::Absent => r.add("WF-H-Chan", l, "payload is absent"),
                    Value::Loc(p) => match g.get_loc(p) {
                        None => r.add("WF-H-Chan", l, format!("payload {p} is not typed")),
                        Some(t) if t.capability() == Capability::Local => {
                            r.add("WF-H-Chan", l, format!("payload {p} is {t}"))
                        }
                        Some(_) => {}
                    },
                }
            }
        }
    }
    r
}

/// Names and locations a run-time term may mention.
struct TermEnv<'a> {
    gamma: Option<&'a BTreeSet<Key>>,
    locals: BTreeSet<Name>,
}

impl TermEnv<'_> {
    fn bound(&self, x: &str) -> bool {
        self.locals.contains(x) || self.gamma.is_some_and(|g| g.contains(&Key::Var(x.to_string())))
    }
}

fn check_term(t: &Term, env: &TermEnv<'_>, subject: &str, r: &mut WfReport) {
    match t {
        Term::Ret { value, .. } => check_operand(value, env, subject, r),
        Term::Let { binder, bound, body, .. } => {
            if env.bound(binder) {
                r.add("WF-Let", subject, format!("binder {binder} is already bound"));
            }
            check_expr(bound, env, subject, r);
            let mut locals = env.locals.clone();
            locals.insert(binder.clone());
            check_term(body, &TermEnv { gamma: env.gamma, locals }, subject, r);
        }
    }
}

fn check_var(x: &str, env: &TermEnv<'_>, subject: &str, r: &mut WfReport) {
    if !env.bound(x) {
        r.add("WF-Var", subject, format!("unbound variable {x}"));
    }
}

fn check_operand(op: &Operand, env: &TermEnv<'_>, subject: &str, r: &mut WfReport) {
    match op {
        Operand::Var(x) | Operand::Consume(x) => check_var(x, env, subject, r),
        Operand::Val(Value::Loc(l)) => {
            if !env.gamma.is_some_and(|g| g.contains(&Key::Loc(*l))) {
                r.add("WF-Loc", subject, format!("location {l} is not typed"));
            }
        }
        Operand::Val(v) => r.add("WF-Loc", subject, format!("term holds {v}")),
    }
}

fn check_expr(e: &Expr, env: &TermEnv<'_>, subject: &str, r: &mut WfReport) {
    match e {
        Expr::Atom(op) | Expr::Recv { chan: op } | Expr::Cast { value: op, .. } => {
            check_operand(op, env, subject, r)
        }
        Expr::FieldRead { target, .. } => check_var(target, env, subject, r),
        Expr::FieldWrite { target, value, .. } => {
            check_var(target, env, subject, r);
            check_operand(value, env, subject, r);
        }
        Expr::Call { target, arg, .. } => {
            check_var(target, env, subject, r);
            check_operand(arg, env, subject, r);
        }
        Expr::Send { chan, payload } => {
            check_operand(chan, env, subject, r);
            check_operand(payload, env, subject, r);
        }
        Expr::Spawn { binder, body } => {
            if env.bound(binder) {
                r.add("WF-Spawn", subject, format!("binder {binder} is already bound"));
            }
            let extra: Vec<Name> = free_vars(body).into_iter().filter(|x| x != binder).collect();
            if !extra.is_empty() {
                r.add("WF-Spawn", subject, format!("spawn body refers to {}", extra.join(", ")));
            }
            let inner = TermEnv { gamma: None, locals: BTreeSet::from([binder.clone()]) };
            check_term(body, &inner, subject, r);
        }
        Expr::Blocked { chan, .. } => {
            if !env.gamma.is_some_and(|g| g.contains(&Key::Loc(*chan))) {
                r.add("WF-Unblock", subject, format!("channel {chan} is not typed"));
            }
        }
        Expr::Copy { cap, source } => {
            if *cap == Capability::Iso {
                r.add("WF-Copy", subject, "copy at iso");
            }
            check_var(source, env, subject, r);
        }
        Expr::Object { fields, methods, .. } => {
            for f in fields {
                check_operand(&f.value, env, subject, r);
            }
            for m in methods.iter() {
                if m.param == SELF {
                    r.add("WF-Method", subject, "parameter named self");
                }
                let inner = TermEnv { gamma: None, locals: BTreeSet::from([SELF.to_string(), m.param.clone()]) };
                check_term(&m.body, &inner, subject, r);
            }
        }
        Expr::Block(t) => check_term(t, env, subject, r),
    }
}

/// Well-formedness of a run-time thread term under Γ.
pub fn check_thread_term(g: &StoreType, th: &Thread) -> WfReport {
    let keys = g.keys();
    let mut r = WfReport::default();
    let env = TermEnv { gamma: Some(&keys), locals: BTreeSet::new() };
    check_term(&th.term, &env, &format!("thread {}", th.id), &mut r);
    r
}

fn shared_locals(h: &Heap, threads: &[Thread], allowed: impl Fn(ThreadId, ThreadId, ThreadId) -> bool) -> WfReport {
    let mut r = WfReport::default();
    let rogs: Vec<(ThreadId, BTreeSet<Loc>)> = threads.iter().map(|t| (t.id, h.rog_term(&t.term))).collect();
    for (i, (a, ra)) in rogs.iter().enumerate() {
        for (b, rb) in &rogs[i + 1..] {
            for l in ra.intersection(rb) {
                let Some(o) = h.object(*l) else { continue };
                if o.cap == Capability::Local && !allowed(o.owner, *a, *b) {
                    r.add("Local", l, format!("local object of {} reachable from {a} and {b}", o.owner));
                }
            }
        }
    }
    r
}

/// No local object is reachable from two distinct threads.
pub fn check_local(h: &Heap, threads: &[Thread]) -> WfReport {
    shared_locals(h, threads, |_, _, _| false)
}

/// A weaker reading of [`check_local`]: a local object may be reachable from
/// two threads if one of them owns it, since ownership checks then leave a
/// single thread able to dereference it.
pub fn check_local_owner_exclusive(h: &Heap, threads: &[Thread]) -> WfReport {
    shared_locals(h, threads, |owner, a, b| owner == a || owner == b)
}

/// One incoming reference to a location.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Incoming {
    Var(Name),
    Field(Loc, Name),
    Chan(Loc),
    /// The location written literally in the term of a thread.
    Lit(ThreadId),
}

pub fn heap_incoming(h: &Heap, target: Loc) -> BTreeSet<Incoming> {
    let mut out = BTreeSet::new();
    for (l, e) in &h.locs {
        match e {
            Entry::Object(o) => {
                for (f, v) in &o.fields {
                    if *v == Value::Loc(target) {
                        out.insert(Incoming::Field(*l, f.clone()));
                    }
                }
            }
            Entry::Channel(c) => {
                if c.payload == Value::Loc(target) {
                    out.insert(Incoming::Chan(*l));
                }
            }
        }
    }
    out
}

pub fn thread_incoming(h: &Heap, th: &Thread, target: Loc) -> BTreeSet<Incoming> {
    let mut out: BTreeSet<Incoming> = free_vars(&th.term)
        .into_iter()
        .filter(|x| h.var(x) == Some(Value::Loc(target)))
        .map(Incoming::Var)
        .collect();
    if crate::state::term_values(&th.term).contains(&Value::Loc(target)) {
        out.insert(Incoming::Lit(th.id));
    }
    out
}

/// Every iso object has at most one incoming reference, except that several
/// references may all live on the stack of one thread (borrowing).
pub fn check_isolated(h: &Heap, threads: &[Thread]) -> WfReport {
    let mut r = WfReport::default();
    for (l, e) in &h.locs {
        match e {
            Entry::Object(o) if o.cap == Capability::Iso => {}
            _ => continue,
        }
        let heap_inc = heap_incoming(h, *l);
        let per_thread: Vec<BTreeSet<Incoming>> = threads.iter().map(|t| thread_incoming(h, t, *l)).collect();
        let all_threads: BTreeSet<Incoming> = per_thread.iter().flatten().cloned().collect();
        let total = heap_inc.len() + all_threads.len();
        if total <= 1 {
            continue;
        }
        let borrowed = heap_inc.is_empty() && per_thread.iter().any(|s| *s == all_threads);
        if !borrowed {
            r.add("Isolated", l, format!("{total} incoming references: {heap_inc:?} {all_threads:?}"));
        }
    }
    r
}

/// Local objects only hold local objects of the same owner.
pub fn check_thread_affinity(h: &Heap) -> WfReport {
    let mut r = WfReport::default();
    for (l, e) in &h.locs {
        let Entry::Object(o) = e else { continue };
        if o.cap != Capability::Local {
            continue;
        }
        for (f, v) in &o.fields {
            let Some(inner) = v.loc().and_then(|fl| h.object(fl)) else { continue };
            if inner.cap == Capability::Local && inner.owner != o.owner {
                r.add("Thread-Affinity", format!("{l}.{f}"), format!("local of {} holds local of {}", o.owner, inner.owner));
            }
        }
    }
    r
}

pub fn check_configuration(cfg: &Configuration) -> WfReport {
    let g = infer_gamma(&cfg.heap);
    check_configuration_under(&g, cfg)
}

pub fn check_configuration_under(g: &StoreType, cfg: &Configuration) -> WfReport {
    let mut r = WfReport::default();
    let heap_keys: BTreeSet<Key> = cfg
        .heap
        .vars
        .keys()
        .map(|x| Key::Var(x.clone()))
        .chain(cfg.heap.locs.keys().map(|l| Key::Loc(*l)))
        .collect();
    if g.keys() != heap_keys {
        r.add("WF-Configuration", "Γ", "dom(Γ) differs from dom(H)");
    }
    r.merge(check_store(g, &cfg.heap));
    if let Status::Error(..) = cfg.status {
        return r;
    }
    let mut ids = BTreeSet::new();
    for th in &cfg.threads {
        if !ids.insert(th.id) {
            r.add("WF-Configuration", th.id, "duplicate thread id");
        }
        r.merge(check_thread_term(g, th));
    }
    r.merge(check_local(&cfg.heap, &cfg.threads));
    r.merge(check_isolated(&cfg.heap, &cfg.threads));
    r
}

/// Checks `after` and that it extends `before`: Γ grows and allocated
/// objects keep their capability and owner.
pub fn check_preservation(before: &Configuration, after: &Configuration) -> WfReport {
    let g0 = infer_gamma(&before.heap);
    let g1 = infer_gamma(&after.heap);
    let mut r = check_configuration_under(&g1, after);
    let later: BTreeMap<&Key, Tag> = g1.entries.iter().map(|(k, t)| (k, *t)).collect();
    for (k, t) in &g0.entries {
        if later.get(k) != Some(t) {
            r.add("Preservation", k, format!("Γ entry {t} not kept"));
        }
    }
    for (l, e) in &before.heap.locs {
        if let (Entry::Object(o0), Some(o1)) = (e, after.heap.object(*l)) {
            if o0.cap != o1.cap || o0.owner != o1.owner {
                r.add("Preservation", l, "capability or owner changed");
            }
        }
    }
    r
}

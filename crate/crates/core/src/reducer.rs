//! Single-thread small-step reduction.
//!
//! A thread term is split into an evaluation context and a redex by
//! [`decompose`]; [`step_thread`] reduces the redex with the one applicable
//! rule and plugs the result back. When several error premises hold at once
//! they are checked in the order absent (ErrA), existence (ErrN), then
//! permission (ErrP).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::rc::Rc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::state::{
    ok_field, Capability, Channel, Entry, ErrorKind, Heap, HeapObject, IdGen, Loc, Tag,
    Thread, ThreadId, Value,
};
use crate::syntax::{Expr, FieldInit, Name, Operand, Span, Term, SELF};

macro_rules! rules {
    ($($variant:ident => $label:literal,)*) => {
        /// Reduction and error rule labels.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum Rule {
            $($variant,)*
        }

        impl Rule {
            pub const ALL: &'static [Rule] = &[$(Rule::$variant,)*];

            pub fn label(self) -> &'static str {
                match self {
                    $(Rule::$variant => $label,)*
                }
            }

            pub fn from_label(s: &str) -> Option<Rule> {
                match s {
                    $($label => Some(Rule::$variant),)*
                    _ => None,
                }
            }
        }
    };
}

rules! {
    RLet => "R-Let",
    RVar => "R-Var",
    RConsume => "R-Consume",
    RField => "R-Field",
    RFieldAssign => "R-FieldAssign",
    RNew => "R-New",
    RCall => "R-Call",
    RCastLoc => "R-CastLoc",
    RSpawn => "R-Spawn",
    RRecv => "R-Recv",
    RSendBlock => "R-SendBlock",
    RSendUnblock => "R-SendUnblock",
    RCopy => "R-Copy",
    ENoSuchField => "E-NoSuchField",
    ENoSuchMethod => "E-NoSuchMethod",
    ENoSuchFieldAssign => "E-NoSuchFieldAssign",
    ESendBadTargetOrArgument => "E-SendBadTargetOrArgument",
    ERecvBadTarget => "E-RecvBadTarget",
    ECastError => "E-CastError",
    EAbsentVar => "E-AbsentVar",
    EConsume => "E-Consume",
    EAbsentTarget => "E-AbsentTarget",
    EAbsentTargetAccess => "E-AbsentTargetAccess",
    EAbsentFieldAssign => "E-AbsentFieldAssign",
    EAbsentCopyTarget => "E-AbsentCopyTarget",
    EAliasIso => "E-AliasIso",
    EIsoField => "E-IsoField",
    EBadInstantiation => "E-BadInstantiation",
    EBadFieldAssign => "E-BadFieldAssign",
    ECopyTarget => "E-CopyTarget",
    ELocalField => "E-LocalField",
    ESendingLocal => "E-SendingLocal",
    ECastBadTarget => "E-CastBadTarget",
    ECopyBadTarget => "E-CopyBadTarget",
}

impl Rule {
    /// The thirteen reduction rules.
    pub const REDUCTIONS: [Rule; 13] = [
        Rule::RLet,
        Rule::RVar,
        Rule::RConsume,
        Rule::RField,
        Rule::RFieldAssign,
        Rule::RNew,
        Rule::RCall,
        Rule::RCastLoc,
        Rule::RSpawn,
        Rule::RRecv,
        Rule::RSendBlock,
        Rule::RSendUnblock,
        Rule::RCopy,
    ];

    /// Error rules of the calculus proper. `E-CastBadTarget` and
    /// `E-CopyBadTarget` are additions covering casts and copies of channels,
    /// which no rule of the calculus handles.
    pub const CALCULUS_ERRORS: [Rule; 19] = [
        Rule::ENoSuchField,
        Rule::ENoSuchMethod,
        Rule::ENoSuchFieldAssign,
        Rule::ESendBadTargetOrArgument,
        Rule::ERecvBadTarget,
        Rule::ECastError,
        Rule::EAbsentVar,
        Rule::EConsume,
        Rule::EAbsentTarget,
        Rule::EAbsentTargetAccess,
        Rule::EAbsentFieldAssign,
        Rule::EAbsentCopyTarget,
        Rule::EAliasIso,
        Rule::EIsoField,
        Rule::EBadInstantiation,
        Rule::EBadFieldAssign,
        Rule::ECopyTarget,
        Rule::ELocalField,
        Rule::ESendingLocal,
    ];

    pub fn error_kind(self) -> Option<ErrorKind> {
        use Rule::*;
        Some(match self {
            ENoSuchField | ENoSuchMethod | ENoSuchFieldAssign | ESendBadTargetOrArgument
            | ERecvBadTarget | ECastBadTarget | ECopyBadTarget => ErrorKind::ErrN,
            EAbsentVar | EConsume | EAbsentTarget | EAbsentTargetAccess | EAbsentFieldAssign
            | EAbsentCopyTarget => ErrorKind::ErrA,
            EAliasIso | EIsoField | EBadInstantiation | EBadFieldAssign | ECopyTarget
            | ELocalField | ESendingLocal => ErrorKind::ErrP,
            ECastError => ErrorKind::ErrC,
            _ => return None,
        })
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl Serialize for Rule {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for Rule {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Rule::from_label(&s).ok_or_else(|| serde::de::Error::custom(format!("unknown rule `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockReason {
    WaitingRecv,
    WaitingSendFree,
    WaitingSendAck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessKind {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Send,
    Recv,
}

/// Observable side effect of a step, consumed by the race detector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Effect {
    Access { kind: AccessKind, loc: Loc, field: Name },
    /// ROG of the payload at the time of the step.
    Transfer { direction: Direction, rog: BTreeSet<Loc> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub heap: Heap,
    pub ids: IdGen,
    /// The stepping thread's new term, then the spawned thread's for R-Spawn.
    pub threads: Vec<Thread>,
    pub rule: Rule,
    pub effect: Option<Effect>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepOutcome {
    Stepped(Step),
    Blocked(BlockReason),
    Finished(Value),
    Erred(ErrorKind, Rule),
    /// No rule applies. Never produced from a well-formed configuration.
    Stuck(String),
}

/// One layer of an evaluation context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Frame {
    /// `let x = • in t`
    Let { binder: Name, body: Rc<Term>, span: Span },
    /// `x.f = •`
    FieldWrite { target: Name, field: Name },
    /// `send(•, w)`
    SendChan { payload: Operand },
    /// `send(v, •)`
    SendPayload { chan: Value },
    /// `recv(•)`
    Recv,
    /// `object K { f̄ = v̄, f = •, F̄ }`
    ObjectField {
        cap: Capability,
        before: Vec<FieldInit>,
        name: Name,
        after: Vec<FieldInit>,
        methods: Rc<Vec<crate::syntax::Method>>,
    },
    /// `x.m(•)`
    CallArg { target: Name, method: Name },
    /// `cast K •`
    Cast { cap: Capability },
    /// The term position inside an inlined method body.
    Block,
}

/// Evaluation context, outermost frame first.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EvalContext {
    pub frames: Vec<Frame>,
}

/// What gets plugged into a hole.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Filling {
    Term(Term),
    Expr(Expr),
}

impl Filling {
    pub fn value(v: Value) -> Filling {
        Filling::Expr(Expr::value(v))
    }

    fn into_term(self) -> Term {
        match self {
            Filling::Term(t) => t,
            Filling::Expr(Expr::Atom(op)) => Term::ret(op),
            Filling::Expr(Expr::Block(t)) => Rc::unwrap_or_clone(t),
            Filling::Expr(e) => panic!("expression {e:?} in term position"),
        }
    }

    fn into_expr(self) -> Expr {
        match self {
            Filling::Expr(e) => e,
            Filling::Term(Term::Ret { value, .. }) => Expr::Atom(value),
            Filling::Term(t) => Expr::Block(Rc::new(t)),
        }
    }

    fn into_operand(self) -> Operand {
        match self.into_expr() {
            Expr::Atom(op) => op,
            e => panic!("expression {e:?} in operand position"),
        }
    }
}

impl EvalContext {
    /// Rebuilds the term with `filling` in the hole.
    pub fn plug(&self, filling: Filling) -> Term {
        let mut cur = filling;
        for frame in self.frames.iter().rev() {
            let e = match frame {
                Frame::Let { binder, body, span } => {
                    let t = Term::Let {
                        binder: binder.clone(),
                        bound: cur.into_expr(),
                        body: Rc::clone(body),
                        span: *span,
                    };
                    cur = Filling::Term(t);
                    continue;
                }
                Frame::FieldWrite { target, field } => Expr::FieldWrite {
                    target: target.clone(),
                    field: field.clone(),
                    value: cur.into_operand(),
                },
                Frame::SendChan { payload } => {
                    Expr::Send { chan: cur.into_operand(), payload: payload.clone() }
                }
                Frame::SendPayload { chan } => {
                    Expr::Send { chan: Operand::Val(*chan), payload: cur.into_operand() }
                }
                Frame::Recv => Expr::Recv { chan: cur.into_operand() },
                Frame::ObjectField { cap, before, name, after, methods } => {
                    let mut fields = before.clone();
                    fields.push(FieldInit { name: name.clone(), value: cur.into_operand() });
                    fields.extend(after.iter().cloned());
                    Expr::Object { cap: *cap, fields, methods: methods.clone() }
                }
                Frame::CallArg { target, method } => Expr::Call {
                    target: target.clone(),
                    method: method.clone(),
                    arg: cur.into_operand(),
                },
                Frame::Cast { cap } => Expr::Cast { cap: *cap, value: cur.into_operand() },
                Frame::Block => match cur.into_term() {
                    // A finished method body is just its value.
                    Term::Ret { value, .. } => Expr::Atom(value),
                    t => Expr::Block(Rc::new(t)),
                },
            };
            cur = Filling::Expr(e);
        }
        cur.into_term()
    }
}

/// The next thing to reduce.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Redex {
    /// `let x = v in t`
    Let { binder: Name, value: Value, body: Rc<Term> },
    Expr(Expr),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decomposition {
    Value(Value),
    Redex(EvalContext, Redex),
}

pub fn decompose(t: &Term) -> Decomposition {
    let mut frames = Vec::new();
    match decompose_term(t, &mut frames) {
        Ok(redex) => Decomposition::Redex(EvalContext { frames }, redex),
        Err(v) => Decomposition::Value(v),
    }
}

fn decompose_term(t: &Term, frames: &mut Vec<Frame>) -> Result<Redex, Value> {
    match t {
        Term::Ret { value: Operand::Val(v), .. } => Err(*v),
        Term::Ret { value, .. } => Ok(Redex::Expr(Expr::Atom(value.clone()))),
        Term::Let { binder, bound, body, span } => {
            if let Some(v) = bound.as_value() {
                return Ok(Redex::Let { binder: binder.clone(), value: v, body: Rc::clone(body) });
            }
            frames.push(Frame::Let { binder: binder.clone(), body: Rc::clone(body), span: *span });
            Ok(decompose_expr(bound, frames))
        }
    }
}

fn operand_hole(op: &Operand, frame: Frame, frames: &mut Vec<Frame>) -> Option<Redex> {
    if op.is_value() {
        return None;
    }
    frames.push(frame);
    Some(Redex::Expr(Expr::Atom(op.clone())))
}

/// `e` must not be a value.
fn decompose_expr(e: &Expr, frames: &mut Vec<Frame>) -> Redex {
    let whole = || Redex::Expr(e.clone());
    match e {
        Expr::FieldWrite { target, field, value } => operand_hole(
            value,
            Frame::FieldWrite { target: target.clone(), field: field.clone() },
            frames,
        )
        .unwrap_or_else(whole),
        Expr::Call { target, method, arg } => operand_hole(
            arg,
            Frame::CallArg { target: target.clone(), method: method.clone() },
            frames,
        )
        .unwrap_or_else(whole),
        Expr::Send { chan, payload } => {
            if !chan.is_value() {
                frames.push(Frame::SendChan { payload: payload.clone() });
                return Redex::Expr(Expr::Atom(chan.clone()));
            }
            let chan = chan.as_value().expect("checked");
            operand_hole(payload, Frame::SendPayload { chan }, frames).unwrap_or_else(whole)
        }
        Expr::Recv { chan } => operand_hole(chan, Frame::Recv, frames).unwrap_or_else(whole),
        Expr::Cast { cap, value } => {
            operand_hole(value, Frame::Cast { cap: *cap }, frames).unwrap_or_else(whole)
        }
        Expr::Object { cap, fields, methods } => {
            match fields.iter().position(|f| !f.value.is_value()) {
                None => whole(),
                Some(i) => {
                    frames.push(Frame::ObjectField {
                        cap: *cap,
                        before: fields[..i].to_vec(),
                        name: fields[i].name.clone(),
                        after: fields[i + 1..].to_vec(),
                        methods: methods.clone(),
                    });
                    Redex::Expr(Expr::Atom(fields[i].value.clone()))
                }
            }
        }
        Expr::Block(t) => {
            frames.push(Frame::Block);
            match decompose_term(t, frames) {
                Ok(r) => r,
                // Blocks are collapsed when plugged, so this is not reached
                // from terms built by the reducer.
                Err(v) => {
                    frames.pop();
                    Redex::Expr(Expr::value(v))
                }
            }
        }
        _ => whole(),
    }
}

struct Reduction {
    heap: Option<Heap>,
    filling: Filling,
    rule: Rule,
    effect: Option<Effect>,
    spawned: Option<Thread>,
}

impl Reduction {
    fn pure(filling: Filling, rule: Rule) -> Self {
        Reduction { heap: None, filling, rule, effect: None, spawned: None }
    }

    fn with_heap(heap: Heap, filling: Filling, rule: Rule) -> Self {
        Reduction { heap: Some(heap), filling, rule, effect: None, spawned: None }
    }
}

fn err(rule: Rule) -> StepOutcome {
    StepOutcome::Erred(rule.error_kind().expect("error rule"), rule)
}

fn stuck(msg: impl Into<String>) -> StepOutcome {
    StepOutcome::Stuck(msg.into())
}

/// Reduces one step of `thread` against `heap`.
pub fn step_thread(heap: &Heap, ids: &IdGen, thread: &Thread) -> StepOutcome {
    let (ctx, redex) = match decompose(&thread.term) {
        Decomposition::Value(v) => return StepOutcome::Finished(v),
        Decomposition::Redex(ctx, r) => (ctx, r),
    };
    let mut ids = ids.clone();
    let red = match reduce(heap, &mut ids, thread.id, redex) {
        Ok(r) => r,
        Err(outcome) => return outcome,
    };
    let mut threads = vec![Thread { id: thread.id, term: ctx.plug(red.filling) }];
    threads.extend(red.spawned);
    StepOutcome::Stepped(Step {
        heap: red.heap.unwrap_or_else(|| heap.clone()),
        ids,
        threads,
        rule: red.rule,
        effect: red.effect,
    })
}

fn lookup(heap: &Heap, x: &str) -> Result<Value, StepOutcome> {
    heap.var(x).ok_or_else(|| stuck(format!("unbound variable {x}")))
}

fn resolve<'h>(heap: &'h Heap, v: Value) -> Result<(Loc, &'h Entry), StepOutcome> {
    let l = v.loc().ok_or_else(|| stuck(format!("{v} is not a location")))?;
    let e = heap.locs.get(&l).ok_or_else(|| stuck(format!("dangling location {l}")))?;
    Ok((l, e))
}

fn reduce(heap: &Heap, ids: &mut IdGen, tid: ThreadId, redex: Redex) -> Result<Reduction, StepOutcome> {
    let e = match redex {
        Redex::Let { binder, value, body } => {
            if heap.vars.contains_key(&binder) {
                return Err(stuck(format!("let binder {binder} already bound")));
            }
            let mut h = heap.clone();
            h.vars.insert(binder, value);
            return Ok(Reduction::with_heap(h, Filling::Term(Rc::unwrap_or_clone(body)), Rule::RLet));
        }
        Redex::Expr(e) => e,
    };
    match e {
        Expr::Atom(Operand::Var(x)) => {
            let v = lookup(heap, &x)?;
            if v == Value::Absent {
                return Err(err(Rule::EAbsentVar));
            }
            resolve(heap, v)?;
            if heap.is_iso(v) {
                return Err(err(Rule::EAliasIso));
            }
            Ok(Reduction::pure(Filling::value(v), Rule::RVar))
        }
        Expr::Atom(Operand::Consume(x)) => {
            let v = lookup(heap, &x)?;
            if v == Value::Absent {
                return Err(err(Rule::EConsume));
            }
            let (_, entry) = resolve(heap, v)?;
            let tag = entry.tag();
            let mut h = heap.clone();
            h.vars.insert(x.clone(), Value::Absent);
            h.consumed.insert(x, tag);
            Ok(Reduction::with_heap(h, Filling::value(v), Rule::RConsume))
        }
        Expr::FieldRead { target, field } => {
            let v = lookup(heap, &target)?;
            if v == Value::Absent {
                return Err(err(Rule::EAbsentTargetAccess));
            }
            let (l, entry) = resolve(heap, v)?;
            let Entry::Object(obj) = entry else { return Err(err(Rule::ENoSuchField)) };
            let Some(fv) = obj.field(&field) else { return Err(err(Rule::ENoSuchField)) };
            if !heap.local_owner(tid, v) {
                return Err(err(Rule::ELocalField));
            }
            if heap.is_iso(fv) {
                return Err(err(Rule::EIsoField));
            }
            let mut r = Reduction::pure(Filling::value(fv), Rule::RField);
            r.effect = Some(Effect::Access { kind: AccessKind::Read, loc: l, field });
            Ok(r)
        }
        Expr::FieldWrite { target, field, value: Operand::Val(nv) } => {
            let v = lookup(heap, &target)?;
            if v == Value::Absent {
                return Err(err(Rule::EAbsentFieldAssign));
            }
            let (l, entry) = resolve(heap, v)?;
            let Entry::Object(obj) = entry else { return Err(err(Rule::ENoSuchFieldAssign)) };
            let Some(old) = obj.field(&field) else { return Err(err(Rule::ENoSuchFieldAssign)) };
            let bad = heap.is_imm(v)
                || !heap.ok_ref(obj.cap, nv)
                || !heap.local_owner(tid, v)
                || (heap.is_local(v) && heap.is_owner(tid, v) && !heap.local_owner(tid, nv));
            if bad {
                return Err(err(Rule::EBadFieldAssign));
            }
            let mut h = heap.clone();
            *h.object_mut(l).and_then(|o| o.field_mut(&field)).expect("field exists") = nv;
            let mut r = Reduction::with_heap(h, Filling::value(old), Rule::RFieldAssign);
            r.effect = Some(Effect::Access { kind: AccessKind::Write, loc: l, field });
            Ok(r)
        }
        Expr::Call { target, method, arg: Operand::Val(av) } => {
            let v = lookup(heap, &target)?;
            if v == Value::Absent {
                return Err(err(Rule::EAbsentTarget));
            }
            let (_, entry) = resolve(heap, v)?;
            let Entry::Object(obj) = entry else { return Err(err(Rule::ENoSuchMethod)) };
            let Some(m) = obj.method(&method) else { return Err(err(Rule::ENoSuchMethod)) };
            let this = ids.fresh_var(SELF);
            let param = ids.fresh_var(&m.param);
            let mut renaming = BTreeMap::new();
            renaming.insert(SELF.to_string(), this.clone());
            renaming.insert(m.param.clone(), param.clone());
            let body = freshen_term(&m.body, &mut renaming, ids);
            let mut h = heap.clone();
            h.vars.insert(this, v);
            h.vars.insert(param, av);
            Ok(Reduction::with_heap(h, Filling::Term(body), Rule::RCall))
        }
        Expr::Send { chan: Operand::Val(cv), payload: Operand::Val(pv) } => {
            let (l, entry) = resolve(heap, cv)?;
            let Entry::Channel(ch) = entry else { return Err(err(Rule::ESendBadTargetOrArgument)) };
            let (_, payload) = resolve(heap, pv)?;
            if payload.tag() == Tag::Channel {
                return Err(err(Rule::ESendBadTargetOrArgument));
            }
            // A full channel blocks before the payload is inspected, so that
            // erasing capabilities never turns a blocked send into a step.
            if ch.payload != Value::Empty {
                return Err(StepOutcome::Blocked(BlockReason::WaitingSendFree));
            }
            if heap.is_local(pv) {
                return Err(err(Rule::ESendingLocal));
            }
            let msg = ids.fresh_msg_id();
            let mut h = heap.clone();
            h.locs.insert(l, Entry::Channel(Channel { msg, payload: pv }));
            let mut r = Reduction::with_heap(h, Filling::Expr(Expr::Blocked { msg, chan: l }), Rule::RSendBlock);
            r.effect = Some(Effect::Transfer { direction: Direction::Send, rog: heap.rog(pv) });
            Ok(r)
        }
        Expr::Recv { chan: Operand::Val(cv) } => {
            let (l, entry) = resolve(heap, cv)?;
            let Entry::Channel(ch) = entry else { return Err(err(Rule::ERecvBadTarget)) };
            if ch.payload == Value::Empty {
                return Err(StepOutcome::Blocked(BlockReason::WaitingRecv));
            }
            let mut h = heap.clone();
            h.locs.insert(l, Entry::Channel(Channel { msg: ch.msg, payload: Value::Empty }));
            let mut r = Reduction::with_heap(h, Filling::value(ch.payload), Rule::RRecv);
            r.effect = Some(Effect::Transfer { direction: Direction::Recv, rog: heap.rog(ch.payload) });
            Ok(r)
        }
        Expr::Blocked { msg, chan } => {
            let ch = heap.channel(chan).ok_or_else(|| stuck(format!("blocked on non-channel {chan}")))?;
            if ch.payload == Value::Empty || ch.msg != msg {
                Ok(Reduction::pure(Filling::value(Value::Loc(chan)), Rule::RSendUnblock))
            } else {
                Err(StepOutcome::Blocked(BlockReason::WaitingSendAck))
            }
        }
        Expr::Spawn { binder, body } => {
            if heap.vars.contains_key(&binder) {
                return Err(stuck(format!("spawn binder {binder} already bound")));
            }
            let l = ids.fresh_location();
            let msg = ids.fresh_msg_id();
            let child = ids.fresh_thread_id();
            let mut h = heap.clone();
            h.vars.insert(binder, Value::Loc(l));
            h.locs.insert(l, Entry::Channel(Channel { msg, payload: Value::Empty }));
            let mut r = Reduction::with_heap(h, Filling::value(Value::Loc(l)), Rule::RSpawn);
            r.spawned = Some(Thread { id: child, term: Rc::unwrap_or_clone(body) });
            Ok(r)
        }
        Expr::Copy { cap, source } => {
            let v = lookup(heap, &source)?;
            if v == Value::Absent {
                return Err(err(Rule::EAbsentCopyTarget));
            }
            let (l, entry) = resolve(heap, v)?;
            if entry.tag() == Tag::Channel {
                return Err(err(Rule::ECopyBadTarget));
            }
            if !heap.local_owner(tid, v) {
                return Err(err(Rule::ECopyTarget));
            }
            // Channels are shared, not copied; a copy that cannot hold one fails.
            if !ok_field(cap, Capability::Local) && holds_channel(heap, l) {
                return Err(err(Rule::ECopyTarget));
            }
            if cap == Capability::Iso {
                return Err(stuck("copy at iso"));
            }
            let (h, root) = deep_copy(heap, ids, cap, tid, l);
            Ok(Reduction::with_heap(h, Filling::value(Value::Loc(root)), Rule::RCopy))
        }
        Expr::Object { cap, fields, methods } => {
            let mut values = Vec::with_capacity(fields.len());
            for f in &fields {
                let v = f.value.as_value().expect("object fields are values");
                if !heap.ok_ref(cap, v) || (cap == Capability::Local && !heap.local_owner(tid, v)) {
                    return Err(err(Rule::EBadInstantiation));
                }
                values.push((f.name.clone(), v));
            }
            let l = ids.fresh_location();
            let mut h = heap.clone();
            h.locs.insert(l, Entry::Object(HeapObject { cap, owner: tid, fields: values, methods }));
            Ok(Reduction::with_heap(h, Filling::value(Value::Loc(l)), Rule::RNew))
        }
        Expr::Cast { cap, value: Operand::Val(v) } => {
            let (_, entry) = resolve(heap, v)?;
            match entry {
                Entry::Channel(_) => Err(err(Rule::ECastBadTarget)),
                Entry::Object(o) if o.cap == cap => {
                    Ok(Reduction::pure(Filling::value(v), Rule::RCastLoc))
                }
                Entry::Object(_) => Err(err(Rule::ECastError)),
            }
        }
        other => Err(stuck(format!("no rule for {other:?}"))),
    }
}

fn holds_channel(heap: &Heap, root: Loc) -> bool {
    heap.rog(Value::Loc(root)).iter().any(|l| {
        heap.object(*l)
            .is_some_and(|o| o.fields.iter().any(|(_, v)| heap.tag_of(*v) == Some(Tag::Channel)))
    })
}

/// Copies the object graph reachable from `root`, retagging every copy with
/// capability `k` and owner `owner`. Fields are visited in declaration order
/// and fresh locations are handed out in visit order; shared substructure is
/// copied once and channels are kept as references.
pub fn deep_copy(heap: &Heap, ids: &mut IdGen, k: Capability, owner: ThreadId, root: Loc) -> (Heap, Loc) {
    let mut out = heap.clone();
    let mut map = BTreeMap::new();
    let new_root = copy_visit(heap, &mut out, ids, k, owner, root, &mut map);
    (out, new_root)
}

fn copy_visit(
    src: &Heap,
    out: &mut Heap,
    ids: &mut IdGen,
    k: Capability,
    owner: ThreadId,
    l: Loc,
    map: &mut BTreeMap<Loc, Loc>,
) -> Loc {
    if let Some(n) = map.get(&l) {
        return *n;
    }
    let obj = src.object(l).expect("copy visits objects only");
    let fresh = ids.fresh_location();
    map.insert(l, fresh);
    let mut fields = Vec::with_capacity(obj.fields.len());
    for (f, v) in &obj.fields {
        let nv = match v.loc() {
            Some(child) if src.object(child).is_some() => {
                Value::Loc(copy_visit(src, out, ids, k, owner, child, map))
            }
            _ => *v,
        };
        fields.push((f.clone(), nv));
    }
    out.locs.insert(
        fresh,
        Entry::Object(HeapObject { cap: k, owner, fields, methods: obj.methods.clone() }),
    );
    fresh
}

fn rename(name: &str, map: &BTreeMap<Name, Name>) -> Name {
    map.get(name).cloned().unwrap_or_else(|| name.to_string())
}

fn rename_operand(op: &Operand, map: &BTreeMap<Name, Name>) -> Operand {
    match op {
        Operand::Var(x) => Operand::Var(rename(x, map)),
        Operand::Consume(x) => Operand::Consume(rename(x, map)),
        Operand::Val(v) => Operand::Val(*v),
    }
}

/// Renames `self`, the parameter and every binder of a method body so that
/// each call binds distinct heap variables. Method bodies of nested object
/// literals are left alone; they are renamed when they are called.
fn freshen_term(t: &Term, map: &mut BTreeMap<Name, Name>, ids: &mut IdGen) -> Term {
    match t {
        Term::Ret { value, span } => Term::Ret { value: rename_operand(value, map), span: *span },
        Term::Let { binder, bound, body, span } => {
            let bound = freshen_expr(bound, map, ids);
            let fresh = ids.fresh_var(binder);
            map.insert(binder.clone(), fresh.clone());
            let body = freshen_term(body, map, ids);
            Term::Let { binder: fresh, bound, body: Rc::new(body), span: *span }
        }
    }
}

fn freshen_expr(e: &Expr, map: &mut BTreeMap<Name, Name>, ids: &mut IdGen) -> Expr {
    match e {
        Expr::Atom(op) => Expr::Atom(rename_operand(op, map)),
        Expr::FieldRead { target, field } => {
            Expr::FieldRead { target: rename(target, map), field: field.clone() }
        }
        Expr::FieldWrite { target, field, value } => Expr::FieldWrite {
            target: rename(target, map),
            field: field.clone(),
            value: rename_operand(value, map),
        },
        Expr::Call { target, method, arg } => Expr::Call {
            target: rename(target, map),
            method: method.clone(),
            arg: rename_operand(arg, map),
        },
        Expr::Send { chan, payload } => {
            Expr::Send { chan: rename_operand(chan, map), payload: rename_operand(payload, map) }
        }
        Expr::Recv { chan } => Expr::Recv { chan: rename_operand(chan, map) },
        Expr::Spawn { binder, body } => {
            let fresh = ids.fresh_var(binder);
            map.insert(binder.clone(), fresh.clone());
            Expr::Spawn { binder: fresh, body: Rc::new(freshen_term(body, map, ids)) }
        }
        Expr::Blocked { msg, chan } => Expr::Blocked { msg: *msg, chan: *chan },
        Expr::Copy { cap, source } => Expr::Copy { cap: *cap, source: rename(source, map) },
        Expr::Cast { cap, value } => Expr::Cast { cap: *cap, value: rename_operand(value, map) },
        Expr::Object { cap, fields, methods } => Expr::Object {
            cap: *cap,
            fields: fields
                .iter()
                .map(|f| FieldInit { name: f.name.clone(), value: rename_operand(&f.value, map) })
                .collect(),
            methods: methods.clone(),
        },
        Expr::Block(t) => Expr::Block(Rc::new(freshen_term(t, map, ids))),
    }
}

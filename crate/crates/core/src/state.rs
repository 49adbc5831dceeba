//! Run-time state: capabilities, values, the heap, threads and
//! configurations, plus reachability and ownership helpers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::reducer::Rule;
use crate::syntax::{free_vars, Expr, Method, Name, Operand, Term};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Capability {
    Imm,
    Iso,
    Local,
    Unsafe,
}

impl Capability {
    pub const ALL: [Capability; 4] =
        [Capability::Imm, Capability::Iso, Capability::Local, Capability::Unsafe];

    fn rank(self) -> u8 {
        match self {
            Capability::Unsafe => 0,
            Capability::Local => 1,
            Capability::Iso => 2,
            Capability::Imm => 3,
        }
    }

    pub fn keyword(self) -> &'static str {
        match self {
            Capability::Imm => "imm",
            Capability::Iso => "iso",
            Capability::Local => "local",
            Capability::Unsafe => "unsafe",
        }
    }
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

/// `a ≤ b` in the chain `unsafe ≤ local ≤ iso ≤ imm`.
pub fn cap_le(a: Capability, b: Capability) -> bool {
    a.rank() <= b.rank()
}

/// Whether an object of capability `container` may hold a reference to an
/// object of capability `member`.
pub fn ok_field(container: Capability, member: Capability) -> bool {
    cap_le(container, member)
}

macro_rules! id_type {
    ($name:ident, $prefix:literal) => {
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u64);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(Loc, "@");
id_type!(ThreadId, "t");
id_type!(MsgId, "#");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Value {
    Loc(Loc),
    /// ⊤, left behind by `consume`.
    Absent,
    /// ∅, the payload of a free channel.
    Empty,
}

impl Value {
    pub fn loc(self) -> Option<Loc> {
        match self {
            Value::Loc(l) => Some(l),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Loc(l) => write!(f, "{l}"),
            Value::Absent => f.write_str("absent"),
            Value::Empty => f.write_str("empty"),
        }
    }
}

/// What a location holds, as seen by store typing. Channels are not
/// objects but take part in capability checks as `local`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tag {
    Object(Capability),
    Channel,
}

impl Tag {
    pub fn capability(self) -> Capability {
        match self {
            Tag::Object(k) => k,
            Tag::Channel => Capability::Local,
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::Object(k) => write!(f, "{k}"),
            Tag::Channel => f.write_str("channel"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeapObject {
    pub cap: Capability,
    pub owner: ThreadId,
    /// Fields in declaration order.
    pub fields: Vec<(Name, Value)>,
    /// Shared with the literal that created the object.
    pub methods: Rc<Vec<Method>>,
}

impl HeapObject {
    pub fn field(&self, name: &str) -> Option<Value> {
        self.fields.iter().find(|(f, _)| f == name).map(|(_, v)| *v)
    }

    pub fn field_mut(&mut self, name: &str) -> Option<&mut Value> {
        self.fields.iter_mut().find(|(f, _)| f == name).map(|(_, v)| v)
    }

    pub fn method(&self, name: &str) -> Option<&Method> {
        self.methods.iter().find(|m| m.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Channel {
    pub msg: MsgId,
    pub payload: Value,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Entry {
    Object(HeapObject),
    Channel(Channel),
}

impl Entry {
    pub fn tag(&self) -> Tag {
        match self {
            Entry::Object(o) => Tag::Object(o.cap),
            Entry::Channel(_) => Tag::Channel,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Heap {
    pub vars: BTreeMap<Name, Value>,
    pub locs: BTreeMap<Loc, Entry>,
    /// For each variable holding ⊤, the tag of the location it held when it
    /// was consumed.
    pub consumed: BTreeMap<Name, Tag>,
}

impl Heap {
    pub fn var(&self, x: &str) -> Option<Value> {
        self.vars.get(x).copied()
    }

    pub fn object(&self, l: Loc) -> Option<&HeapObject> {
        match self.locs.get(&l) {
            Some(Entry::Object(o)) => Some(o),
            _ => None,
        }
    }

    pub fn object_mut(&mut self, l: Loc) -> Option<&mut HeapObject> {
        match self.locs.get_mut(&l) {
            Some(Entry::Object(o)) => Some(o),
            _ => None,
        }
    }

    pub fn channel(&self, l: Loc) -> Option<Channel> {
        match self.locs.get(&l) {
            Some(Entry::Channel(c)) => Some(*c),
            _ => None,
        }
    }

    pub fn tag_of(&self, v: Value) -> Option<Tag> {
        v.loc().and_then(|l| self.locs.get(&l)).map(Entry::tag)
    }

    fn has_cap(&self, v: Value, k: Capability) -> bool {
        matches!(self.tag_of(v), Some(Tag::Object(c)) if c == k)
    }

    pub fn is_local(&self, v: Value) -> bool {
        self.has_cap(v, Capability::Local)
    }

    pub fn is_iso(&self, v: Value) -> bool {
        self.has_cap(v, Capability::Iso)
    }

    pub fn is_imm(&self, v: Value) -> bool {
        self.has_cap(v, Capability::Imm)
    }

    pub fn is_owner(&self, tid: ThreadId, v: Value) -> bool {
        matches!(v.loc().and_then(|l| self.object(l)), Some(o) if o.owner == tid)
    }

    /// `v` is not a local object, or `tid` owns it.
    pub fn local_owner(&self, tid: ThreadId, v: Value) -> bool {
        !self.is_local(v) || self.is_owner(tid, v)
    }

    /// OkRef: can an object of capability `k` hold `v`? Channels count as local.
    pub fn ok_ref(&self, k: Capability, v: Value) -> bool {
        match self.tag_of(v) {
            Some(tag) => ok_field(k, tag.capability()),
            None => false,
        }
    }

    /// Objects reachable from `v` through fields. Channels stop the walk and
    /// are not included.
    pub fn rog(&self, v: Value) -> BTreeSet<Loc> {
        self.rog_from(std::iter::once(v))
    }

    pub fn rog_from(&self, roots: impl IntoIterator<Item = Value>) -> BTreeSet<Loc> {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<Loc> = roots.into_iter().filter_map(Value::loc).collect();
        while let Some(l) = stack.pop() {
            let Some(obj) = self.object(l) else { continue };
            if !seen.insert(l) {
                continue;
            }
            stack.extend(obj.fields.iter().filter_map(|(_, v)| v.loc()));
        }
        seen
    }

    /// ROG of a term: through its free variables bound in the heap and the
    /// locations written literally inside it.
    pub fn rog_term(&self, t: &Term) -> BTreeSet<Loc> {
        let mut roots: Vec<Value> = free_vars(t).iter().filter_map(|x| self.var(x)).collect();
        roots.extend(term_values(t));
        self.rog_from(roots)
    }
}

/// Values written literally in a run-time term (including the channel of a
/// blocked-send marker).
pub fn term_values(t: &Term) -> Vec<Value> {
    let mut out = Vec::new();
    collect_term_values(t, &mut out);
    out
}

fn collect_operand(op: &Operand, out: &mut Vec<Value>) {
    if let Operand::Val(v) = op {
        out.push(*v);
    }
}

fn collect_term_values(t: &Term, out: &mut Vec<Value>) {
    match t {
        Term::Ret { value, .. } => collect_operand(value, out),
        Term::Let { bound, body, .. } => {
            collect_expr_values(bound, out);
            collect_term_values(body, out);
        }
    }
}

fn collect_expr_values(e: &Expr, out: &mut Vec<Value>) {
    match e {
        Expr::Atom(op) | Expr::Recv { chan: op } | Expr::Cast { value: op, .. } => {
            collect_operand(op, out)
        }
        Expr::FieldWrite { value, .. } => collect_operand(value, out),
        Expr::Call { arg, .. } => collect_operand(arg, out),
        Expr::Send { chan, payload } => {
            collect_operand(chan, out);
            collect_operand(payload, out);
        }
        Expr::Spawn { body, .. } | Expr::Block(body) => collect_term_values(body, out),
        Expr::Blocked { chan, .. } => out.push(Value::Loc(*chan)),
        Expr::Object { fields, methods, .. } => {
            for f in fields {
                collect_operand(&f.value, out);
            }
            for m in methods.iter() {
                collect_term_values(&m.body, out);
            }
        }
        Expr::FieldRead { .. } | Expr::Copy { .. } => {}
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ErrorKind {
    /// Normal errors: missing fields or methods, and misuse of channels.
    ErrN,
    /// Use of a consumed variable.
    ErrA,
    /// Capability violations.
    ErrP,
    /// Failed casts.
    ErrC,
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Thread {
    pub id: ThreadId,
    pub term: Term,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Running,
    Error(ErrorKind, Rule),
}

/// Fresh-id counters. Locations, message ids and spawned threads count from 1;
/// the main thread is 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdGen {
    next_loc: u64,
    next_thread: u64,
    next_msg: u64,
    next_var: u64,
}

impl Default for IdGen {
    fn default() -> Self {
        IdGen { next_loc: 1, next_thread: 1, next_msg: 1, next_var: 1 }
    }
}

impl IdGen {
    pub fn fresh_location(&mut self) -> Loc {
        let l = Loc(self.next_loc);
        self.next_loc += 1;
        l
    }

    pub fn fresh_thread_id(&mut self) -> ThreadId {
        let t = ThreadId(self.next_thread);
        self.next_thread += 1;
        t
    }

    pub fn fresh_msg_id(&mut self) -> MsgId {
        let m = MsgId(self.next_msg);
        self.next_msg += 1;
        m
    }

    /// A variable name that cannot clash with source names: `x#7`.
    pub fn fresh_var(&mut self, base: &str) -> Name {
        let stem = base.split('#').next().unwrap_or(base);
        let n = self.next_var;
        self.next_var += 1;
        format!("{stem}#{n}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Configuration {
    pub heap: Heap,
    pub threads: Vec<Thread>,
    pub status: Status,
    pub ids: IdGen,
}

impl Configuration {
    /// The empty heap running `t` as thread 0.
    pub fn initial(t: Term) -> Self {
        Configuration {
            heap: Heap::default(),
            threads: vec![Thread { id: ThreadId(0), term: t }],
            status: Status::Running,
            ids: IdGen::default(),
        }
    }

    pub fn thread(&self, id: ThreadId) -> Option<&Thread> {
        self.threads.iter().find(|t| t.id == id)
    }

    pub fn thread_ids(&self) -> Vec<ThreadId> {
        self.threads.iter().map(|t| t.id).collect()
    }

    pub fn snapshot(&self) -> HeapSnapshot {
        HeapSnapshot::of(&self.heap)
    }
}

/// Serializable view of a heap used for golden files and `--dump-heap`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeapSnapshot {
    pub vars: BTreeMap<Name, String>,
    pub locations: Vec<LocationSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LocationSnapshot {
    Object {
        loc: Loc,
        cap: Capability,
        owner: ThreadId,
        fields: Vec<(Name, String)>,
        methods: Vec<Name>,
    },
    Channel {
        loc: Loc,
        msg: MsgId,
        payload: String,
    },
}

impl HeapSnapshot {
    pub fn of(h: &Heap) -> Self {
        let vars = h.vars.iter().map(|(x, v)| (x.clone(), v.to_string())).collect();
        let locations = h
            .locs
            .iter()
            .map(|(l, e)| match e {
                Entry::Object(o) => LocationSnapshot::Object {
                    loc: *l,
                    cap: o.cap,
                    owner: o.owner,
                    fields: o.fields.iter().map(|(f, v)| (f.clone(), v.to_string())).collect(),
                    methods: o.methods.iter().map(|m| m.name.clone()).collect(),
                },
                Entry::Channel(c) => {
                    LocationSnapshot::Channel { loc: *l, msg: c.msg, payload: c.payload.to_string() }
                }
            })
            .collect();
        HeapSnapshot { vars, locations }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("snapshot serializes")
    }
}

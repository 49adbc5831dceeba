//! The example corpus and the random program generator.
//!
//! Each entry is a `corpus/NAME.dala` source whose leading `// tags:` line
//! names its categories, plus a golden `corpus/expected/NAME.json` holding the
//! terminal kind, the final rule, the trace and the final heap under
//! [`PINNED_SEED`]. Setting `DALA_BLESS=1` rewrites the goldens instead of
//! comparing against them.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reducer::Rule;
use crate::scheduler::{self, SchedError, SchedulePolicy, Trace};
use crate::state::{Capability, HeapSnapshot};
use crate::syntax::{self, Expr, FieldInit, Method, Name, Operand, Program, Term, SELF};

pub const PINNED_SEED: u64 = 0xDA1A;

/// Step bound for pinned corpus runs.
pub const CORPUS_MAX_STEPS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusTag {
    SafeOnly,
    Mixed,
    Erring,
    Deadlock,
}

impl CorpusTag {
    fn parse(s: &str) -> Option<CorpusTag> {
        Some(match s {
            "safe-only" => CorpusTag::SafeOnly,
            "mixed" => CorpusTag::Mixed,
            "erring" => CorpusTag::Erring,
            "deadlock" => CorpusTag::Deadlock,
            _ => return None,
        })
    }
}

/// What a pinned run of an entry produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Golden {
    pub terminal: Option<scheduler::TerminalKind>,
    pub final_rule: Option<Rule>,
    pub steps: usize,
    pub trace: Trace,
    pub snapshot: HeapSnapshot,
}

impl Golden {
    pub fn of_run(run: &scheduler::Run) -> Golden {
        Golden {
            terminal: run.terminal(),
            final_rule: run.trace.last().map(|e| e.rule),
            steps: run.trace.len(),
            trace: run.trace.clone(),
            snapshot: run.config.snapshot(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub name: String,
    pub path: PathBuf,
    pub program: Program,
    pub expected: scheduler::TerminalKind,
    pub golden: Golden,
    pub tags: BTreeSet<CorpusTag>,
}

impl CorpusEntry {
    pub fn has(&self, tag: CorpusTag) -> bool {
        self.tags.contains(&tag)
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("{name}: ill-formed: {diagnostics}")]
    IllFormed { name: String, diagnostics: String },
    #[error("{name}: unknown tag `{tag}`")]
    UnknownTag { name: String, tag: String },
    #[error("{name}: tagged safe-only but uses unsafe")]
    UnsafeInSafeOnly { name: String },
    #[error("{name}: no golden file; run with DALA_BLESS=1 to create it")]
    MissingGolden { name: String },
    #[error("{name}: unreadable golden: {source}")]
    BadGolden { name: String, source: serde_json::Error },
    #[error("{name}: {source}")]
    Sched { name: String, source: SchedError },
    #[error("{name}: did not reach a terminal configuration within {CORPUS_MAX_STEPS} steps")]
    NoTerminal { name: String },
    #[error("corpus drift in {name}: {detail}")]
    CorpusDrift { name: String, detail: String },
}

/// `$DALA_CORPUS_DIR`, or the `corpus/` directory at the workspace root.
pub fn corpus_dir() -> PathBuf {
    match std::env::var_os("DALA_CORPUS_DIR") {
        Some(d) => PathBuf::from(d),
        None => Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus"),
    }
}

pub fn load_corpus() -> Result<Vec<CorpusEntry>, CorpusError> {
    let bless = std::env::var("DALA_BLESS").is_ok_and(|v| v == "1");
    load_corpus_from(&corpus_dir(), bless)
}

pub fn load_corpus_from(dir: &Path, bless: bool) -> Result<Vec<CorpusEntry>, CorpusError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CorpusError::Io { path, source }
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "dala"))
        .collect();
    paths.sort();
    let mut out = Vec::with_capacity(paths.len());
    for path in paths {
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let source = fs::read_to_string(&path).map_err(io(&path))?;
        let tags = parse_tags(&name, &source)?;
        let program = syntax::parse(&source).map_err(|e| CorpusError::Parse(e.render(&path.display().to_string())))?;
        if let Err(ds) = syntax::check_program(&program) {
            let diagnostics = ds.iter().map(|d| d.render(&name)).collect::<Vec<_>>().join("; ");
            return Err(CorpusError::IllFormed { name, diagnostics });
        }
        if tags.contains(&CorpusTag::SafeOnly) && mentions_unsafe(&program) {
            return Err(CorpusError::UnsafeInSafeOnly { name });
        }
        let run = pinned_run(&program).map_err(|source| CorpusError::Sched { name: name.clone(), source })?;
        let actual = Golden::of_run(&run);
        let Some(expected) = actual.terminal else { return Err(CorpusError::NoTerminal { name }) };
        let golden_path = dir.join("expected").join(format!("{name}.json"));
        if bless {
            let text = serde_json::to_string_pretty(&actual).expect("golden serializes") + "\n";
            fs::create_dir_all(dir.join("expected")).map_err(io(dir))?;
            fs::write(&golden_path, text).map_err(io(&golden_path))?;
        } else {
            let text = match fs::read_to_string(&golden_path) {
                Ok(t) => t,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                    return Err(CorpusError::MissingGolden { name })
                }
                Err(e) => return Err(io(&golden_path)(e)),
            };
            let golden: Golden = serde_json::from_str(&text)
                .map_err(|source| CorpusError::BadGolden { name: name.clone(), source })?;
            if let Some(detail) = drift(&golden, &actual) {
                return Err(CorpusError::CorpusDrift { name, detail });
            }
        }
        out.push(CorpusEntry { name, path, program, expected, golden: actual, tags });
    }
    Ok(out)
}

pub fn pinned_run(p: &Program) -> Result<scheduler::Run, SchedError> {
    let opts = scheduler::RunOptions { max_steps: CORPUS_MAX_STEPS, observer: None };
    scheduler::run_with(
        crate::state::Configuration::initial(p.body.clone()),
        SchedulePolicy::Seeded(PINNED_SEED),
        opts,
    )
}

fn drift(want: &Golden, got: &Golden) -> Option<String> {
    if want.terminal != got.terminal {
        return Some(format!("expected {:?}, got {:?}", want.terminal, got.terminal));
    }
    if want.final_rule != got.final_rule {
        return Some(format!("expected final rule {:?}, got {:?}", want.final_rule, got.final_rule));
    }
    if want.trace != got.trace {
        let at = want.trace.iter().zip(&got.trace).position(|(a, b)| a != b).unwrap_or(want.trace.len().min(got.trace.len()));
        return Some(format!("traces differ from step {at}"));
    }
    if want.snapshot != got.snapshot {
        return Some("final heap differs".to_string());
    }
    None
}

fn parse_tags(name: &str, source: &str) -> Result<BTreeSet<CorpusTag>, CorpusError> {
    let mut tags = BTreeSet::new();
    for line in source.lines() {
        let Some(rest) = line.trim().strip_prefix("//") else { break };
        let Some(list) = rest.trim().strip_prefix("tags:") else { continue };
        for t in list.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let tag = CorpusTag::parse(t)
                .ok_or_else(|| CorpusError::UnknownTag { name: name.to_string(), tag: t.to_string() })?;
            tags.insert(tag);
        }
    }
    Ok(tags)
}

/// Whether any literal, copy or cast in `p` names the unsafe capability.
pub fn mentions_unsafe(p: &Program) -> bool {
    fn term(t: &Term) -> bool {
        match t {
            Term::Ret { .. } => false,
            Term::Let { bound, body, .. } => expr(bound) || term(body),
        }
    }
    fn expr(e: &Expr) -> bool {
        match e {
            Expr::Object { cap, methods, .. } => {
                *cap == Capability::Unsafe || methods.iter().any(|m| term(&m.body))
            }
            Expr::Copy { cap, .. } | Expr::Cast { cap, .. } => *cap == Capability::Unsafe,
            Expr::Spawn { body, .. } => term(body),
            Expr::Block(t) => term(t),
            _ => false,
        }
    }
    term(&p.body)
}

// ---------------------------------------------------------------------------
// Generator
//
// Binders are numbered globally, spawn bodies see only their channel and
// method bodies only `self` and the parameter, so every generated program is
// well formed. Method bodies make no calls, so every run terminates. The
// generator tracks what it knows about each variable and mostly aims at
// operations that succeed; a small fraction of choices ignore that knowledge
// so that error rules stay reachable.

const FIELDS: [&str; 2] = ["f", "g"];
const METHODS: [&str; 2] = ["m", "n"];

/// Probability that a choice ignores what the generator knows.
const SLOPPY: f64 = 0.015;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Kind {
    Object { cap: Capability, fields: Vec<(Name, Kind)>, methods: Vec<Name> },
    Chan,
    Unknown,
}

impl Kind {
    fn cap(&self) -> Option<Capability> {
        match self {
            Kind::Object { cap, .. } => Some(*cap),
            Kind::Chan => Some(Capability::Local),
            Kind::Unknown => None,
        }
    }

    fn is_iso(&self) -> bool {
        self.cap() == Some(Capability::Iso)
    }

    fn sendable(&self) -> bool {
        *self != Kind::Chan && self.cap() != Some(Capability::Local)
    }

    fn fits_in(&self, container: Capability) -> bool {
        self.cap().is_none_or(|c| crate::state::ok_field(container, c))
    }
}

#[derive(Debug, Clone)]
struct Var {
    name: Name,
    kind: Kind,
    consumed: bool,
    /// For channels: the operations this thread still owes its partner,
    /// `true` for a send.
    owed: Vec<bool>,
}

impl Var {
    fn new(name: Name, kind: Kind) -> Var {
        Var { name, kind, consumed: false, owed: Vec::new() }
    }
}

struct Made {
    expr: Expr,
    kind: Kind,
    /// Budget spent inside the expression.
    extra: usize,
    owed: Vec<bool>,
}

impl Made {
    fn plain(expr: Expr, kind: Kind) -> Made {
        Made { expr, kind, extra: 0, owed: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Place {
    Top,
    Spawned,
    Method,
}

struct Gen {
    rng: ChaCha8Rng,
    next: usize,
    caps: &'static [Capability],
}

const ALL_CAPS: &[Capability] = &Capability::ALL;
const SAFE_CAPS: &[Capability] = &[Capability::Local, Capability::Iso, Capability::Imm];

/// A well-formed program drawn from `seed`, roughly `budget` bindings long.
pub fn generate_random(seed: u64, budget: usize) -> Program {
    Gen::new(seed, ALL_CAPS).program(budget)
}

/// Like [`generate_random`], without any unsafe capability.
pub fn generate_safe(seed: u64, budget: usize) -> Program {
    Gen::new(seed, SAFE_CAPS).program(budget)
}

impl Gen {
    fn new(seed: u64, caps: &'static [Capability]) -> Gen {
        Gen { rng: ChaCha8Rng::seed_from_u64(seed), next: 0, caps }
    }

    fn fresh(&mut self, stem: &str) -> Name {
        self.next += 1;
        format!("{stem}{}", self.next)
    }

    fn sloppy(&mut self) -> bool {
        self.rng.gen_bool(SLOPPY)
    }

    fn cap(&mut self) -> Capability {
        *self.caps.choose(&mut self.rng).expect("non-empty")
    }

    fn program(&mut self, budget: usize) -> Program {
        Program { body: self.term(Vec::new(), budget, Place::Top) }
    }

    fn term(&mut self, mut scope: Vec<Var>, mut budget: usize, place: Place) -> Term {
        let mut lets = Vec::new();
        while budget > 0 {
            budget -= 1;
            let made = self.expr(&mut scope, budget, place);
            budget = budget.saturating_sub(made.extra);
            let x = self.fresh("x");
            lets.push((x.clone(), made.expr));
            scope.push(Var { owed: made.owed, ..Var::new(x, made.kind) });
        }
        // Settle what is still owed so that partners are not left waiting.
        while let Some(i) = scope.iter().position(|v| !v.owed.is_empty()) {
            let Some((e, kind)) = self.owed_op(&mut scope, i) else { continue };
            let x = self.fresh("x");
            lets.push((x.clone(), e));
            scope.push(Var::new(x, kind));
        }
        let ret = match self.pick(&scope, |v| !v.kind.is_iso() || v.name != SELF) {
            Some(v) if matches!(v.kind, Kind::Unknown | Kind::Object { cap: Capability::Iso, .. }) && v.name != SELF => {
                Operand::Consume(v.name)
            }
            Some(v) => Operand::Var(v.name),
            None => {
                let x = self.fresh("x");
                lets.push((x.clone(), Expr::Object { cap: Capability::Imm, fields: vec![], methods: Default::default() }));
                Operand::Var(x)
            }
        };
        lets.into_iter().rev().fold(Term::ret(ret), |body, (x, e)| Term::let_in(x, e, body))
    }

    /// A random live variable satisfying `pred`; a sloppy pick ignores both.
    fn pick(&mut self, scope: &[Var], pred: impl Fn(&Var) -> bool) -> Option<Var> {
        let sloppy = self.sloppy();
        let pool: Vec<&Var> = scope.iter().filter(|v| sloppy || (!v.consumed && pred(v))).collect();
        pool.choose(&mut self.rng).map(|v| (*v).clone())
    }

    /// An operand for `v`: iso variables are consumed, others occasionally.
    fn use_var(&mut self, scope: &mut [Var], v: &Var) -> Operand {
        let odds = if v.kind == Kind::Unknown { 0.9 } else { 0.05 };
        let consume = v.name != SELF && (v.kind.is_iso() || self.rng.gen_bool(odds));
        if !consume {
            return Operand::Var(v.name.clone());
        }
        if let Some(slot) = scope.iter_mut().find(|s| s.name == v.name) {
            slot.consumed = true;
        }
        Operand::Consume(v.name.clone())
    }

    fn operand(&mut self, scope: &mut [Var], pred: impl Fn(&Var) -> bool) -> Option<(Operand, Kind)> {
        let v = self.pick(scope, pred)?;
        Some((self.use_var(scope, &v), v.kind))
    }

    fn object(&mut self, scope: &mut [Var], place: Place) -> (Expr, Kind) {
        let cap = self.cap();
        let mut fields = Vec::new();
        let mut kinds = Vec::new();
        for f in FIELDS {
            if !self.rng.gen_bool(0.6) {
                continue;
            }
            let local_here = place != Place::Method;
            let fits = |v: &Var| {
                v.kind.cap().is_some()
                    && v.kind.fits_in(cap)
                    // A local object may only hold objects of its own thread.
                    && (cap != Capability::Local || local_here || v.kind.cap() != Some(Capability::Local))
            };
            if let Some((op, k)) = self.operand(scope, fits) {
                fields.push(FieldInit { name: f.to_string(), value: op });
                kinds.push((f.to_string(), k));
            }
        }
        let mut methods = Vec::new();
        if place != Place::Method {
            for m in METHODS {
                if !self.rng.gen_bool(0.3) {
                    continue;
                }
                let param = self.fresh("p");
                let this = Kind::Object { cap, fields: kinds.clone(), methods: Default::default() };
                let inner = vec![
                    Var::new(SELF.to_string(), this),
                    Var::new(param.clone(), Kind::Unknown),
                ];
                let n = self.rng.gen_range(0..3);
                let body = self.term(inner, n, Place::Method);
                methods.push(Method { name: m.to_string(), param, body, span: Default::default() });
            }
        }
        let names = methods.iter().map(|m| m.name.clone()).collect();
        (Expr::Object { cap, fields, methods: Rc::new(methods) }, Kind::Object { cap, fields: kinds, methods: names })
    }

    fn field_read(&mut self, scope: &mut [Var]) -> Option<(Expr, Kind)> {
        let readable = |v: &Var| match &v.kind {
            Kind::Object { fields, .. } => fields.iter().any(|(_, k)| !k.is_iso()),
            _ => false,
        };
        let v = self.pick(scope, readable)?;
        let choices: Vec<(Name, Kind)> = match &v.kind {
            Kind::Object { fields, .. } => fields.iter().filter(|(_, k)| !k.is_iso()).cloned().collect(),
            _ => vec![],
        };
        let (field, kind) = match choices.choose(&mut self.rng) {
            Some(c) if !self.sloppy() => c.clone(),
            _ => (FIELDS.choose(&mut self.rng).expect("fields").to_string(), Kind::Unknown),
        };
        Some((Expr::FieldRead { target: v.name, field }, kind))
    }

    fn field_write(&mut self, scope: &mut [Var]) -> Option<(Expr, Kind)> {
        let writable = |v: &Var| match &v.kind {
            Kind::Object { cap, fields, .. } => *cap != Capability::Imm && !fields.is_empty(),
            _ => false,
        };
        let target = self.pick(scope, writable)?;
        let (cap, fields) = match &target.kind {
            Kind::Object { cap, fields, .. } => (*cap, fields.clone()),
            _ => (Capability::Unsafe, vec![]),
        };
        let field = match fields.choose(&mut self.rng) {
            Some((f, _)) if !self.sloppy() => f.clone(),
            _ => FIELDS.choose(&mut self.rng).expect("fields").to_string(),
        };
        let (value, kind) = self.operand(scope, |v| v.name != target.name && v.kind.fits_in(cap))?;
        let old = fields.iter().find(|(f, _)| *f == field).map_or(Kind::Unknown, |(_, k)| k.clone());
        if let Some(slot) = scope.iter_mut().find(|s| s.name == target.name) {
            if let Kind::Object { fields, .. } = &mut slot.kind {
                if let Some(entry) = fields.iter_mut().find(|(f, _)| *f == field) {
                    entry.1 = kind;
                }
            }
        }
        Some((Expr::FieldWrite { target: target.name, field, value }, old))
    }

    fn call(&mut self, scope: &mut [Var]) -> Option<(Expr, Kind)> {
        let callable = |v: &Var| matches!(&v.kind, Kind::Object { methods, .. } if !methods.is_empty());
        let target = self.pick(scope, callable)?;
        let method = match &target.kind {
            Kind::Object { methods, .. } if !methods.is_empty() && !self.sloppy() => {
                methods.choose(&mut self.rng).expect("non-empty").clone()
            }
            _ => METHODS.choose(&mut self.rng).expect("methods").to_string(),
        };
        let (arg, _) = self.operand(scope, |v| v.name != target.name)?;
        Some((Expr::Call { target: target.name, method, arg }, Kind::Unknown))
    }

    /// Performs the next operation owed on the channel `scope[i]`.
    fn owed_op(&mut self, scope: &mut [Var], i: usize) -> Option<(Expr, Kind)> {
        if scope[i].consumed {
            scope[i].owed.clear();
            return None;
        }
        let send = scope[i].owed.remove(0);
        let chan = Operand::Var(scope[i].name.clone());
        if !send {
            return Some((Expr::Recv { chan }, Kind::Unknown));
        }
        let name = scope[i].name.clone();
        let sendable = |v: &Var| v.name != name && v.kind.sendable();
        match self.operand(scope, sendable) {
            Some((payload, _)) => Some((Expr::Send { chan, payload }, Kind::Chan)),
            None => {
                // Make something to send first.
                scope[i].owed.insert(0, true);
                let cap = if self.rng.gen_bool(0.5) { Capability::Iso } else { Capability::Imm };
                Some((Expr::Object { cap, fields: vec![], methods: Default::default() }, Kind::Object { cap, fields: vec![], methods: Default::default() }))
            }
        }
    }

    fn spawn(&mut self, budget: usize) -> Made {
        let binder = self.fresh("c");
        let size = self.rng.gen_range(1..=budget.min(6));
        // Sends from the child's point of view.
        let protocol: Vec<bool> = (0..self.rng.gen_range(0..=2)).map(|_| self.rng.gen_bool(0.5)).collect();
        let inner = vec![Var { owed: protocol.clone(), ..Var::new(binder.clone(), Kind::Chan) }];
        let body = self.term(inner, size, Place::Spawned);
        Made {
            expr: Expr::Spawn { binder, body: Rc::new(body) },
            kind: Kind::Chan,
            extra: size,
            owed: protocol.iter().map(|s| !s).collect(),
        }
    }

    /// One bound expression.
    fn expr(&mut self, scope: &mut Vec<Var>, budget: usize, place: Place) -> Made {
        let is_chan = |v: &Var| v.kind == Kind::Chan;
        if self.rng.gen_bool(0.3) {
            if let Some(i) = scope.iter().position(|v| !v.owed.is_empty()) {
                if let Some((expr, kind)) = self.owed_op(scope, i) {
                    return Made::plain(expr, kind);
                }
            }
        }
        for _ in 0..8 {
            let made = match self.rng.gen_range(0..100) {
                0..=21 => Some(self.object(scope, place)),
                22..=33 => self.field_read(scope),
                34..=45 => self.field_write(scope),
                46..=53 if place != Place::Method => self.call(scope),
                54..=58 => self.operand(scope, |_| true).map(|(op, k)| (Expr::Atom(op), k)),
                59..=63 => {
                    let v = self.pick(scope, |v| v.name != SELF && matches!(v.kind, Kind::Object { .. }));
                    v.map(|v| {
                        let cap = loop {
                            let c = self.cap();
                            if c != Capability::Iso {
                                break c;
                            }
                        };
                        let fields = match &v.kind {
                            Kind::Object { fields, .. } => fields.clone(),
                            _ => vec![],
                        };
                        (Expr::Copy { cap, source: v.name }, Kind::Object { cap, fields, methods: Default::default() })
                    })
                }
                64..=67 => self.operand(scope, |v| matches!(v.kind, Kind::Object { .. })).map(|(value, k)| {
                    let cap = match k.cap() {
                        Some(c) if !self.sloppy() => c,
                        _ => self.cap(),
                    };
                    (Expr::Cast { cap, value }, k)
                }),
                68..=77 if place != Place::Method && budget >= 2 => return self.spawn(budget),
                78..=88 if self.sloppy() => self.pick(scope, is_chan).and_then(|c| {
                    let sendable = |v: &Var| v.name != c.name && v.kind.sendable();
                    let (payload, _) = self.operand(scope, sendable)?;
                    Some((Expr::Send { chan: Operand::Var(c.name), payload }, Kind::Chan))
                }),
                89..=99 if self.sloppy() => self.pick(scope, is_chan).map(|c| (Expr::Recv { chan: Operand::Var(c.name) }, Kind::Unknown)),
                _ => None,
            };
            if let Some((e, k)) = made {
                return Made::plain(e, k);
            }
        }
        let (e, k) = self.object(scope, place);
        Made::plain(e, k)
    }
}

//! Safe erasure and differential runs of annotated and erased programs.
//!
//! Erasure turns every capability into `unsafe`. An erased configuration must
//! take the same steps as the annotated one, except where the annotated side
//! raises a permission or cast error.

use std::rc::Rc;

use serde::Serialize;
use thiserror::Error;

use crate::metatheory::{Key, StoreType};
use crate::reducer::Rule;
use crate::state::{Capability, Configuration, Entry, ErrorKind, Heap, Status, Tag, Thread, ThreadId};
use crate::syntax::{Expr, Method, Program, Term};
use crate::scheduler::{self, GlobalStep, Outcome, RunOptions, SchedulePolicy, TerminalKind, TraceEntry};

pub trait Erase {
    fn erase(&self) -> Self;
}

impl Erase for Capability {
    fn erase(&self) -> Self {
        Capability::Unsafe
    }
}

impl Erase for Tag {
    fn erase(&self) -> Self {
        match self {
            Tag::Object(_) => Tag::Object(Capability::Unsafe),
            Tag::Channel => Tag::Channel,
        }
    }
}

impl Erase for Program {
    fn erase(&self) -> Self {
        Program { body: self.body.erase() }
    }
}

impl Erase for Term {
    fn erase(&self) -> Self {
        match self {
            Term::Ret { .. } => self.clone(),
            Term::Let { binder, bound, body, span } => Term::Let {
                binder: binder.clone(),
                bound: bound.erase(),
                body: Rc::new(body.erase()),
                span: *span,
            },
        }
    }
}

impl Erase for Method {
    fn erase(&self) -> Self {
        Method { body: self.body.erase(), ..self.clone() }
    }
}

impl Erase for Expr {
    fn erase(&self) -> Self {
        match self {
            Expr::Object { fields, methods, .. } => Expr::Object {
                cap: Capability::Unsafe,
                fields: fields.clone(),
                methods: Rc::new(methods.iter().map(Erase::erase).collect()),
            },
            Expr::Cast { value, .. } => Expr::Cast { cap: Capability::Unsafe, value: value.clone() },
            Expr::Copy { source, .. } => Expr::Copy { cap: Capability::Unsafe, source: source.clone() },
            Expr::Spawn { binder, body } => Expr::Spawn { binder: binder.clone(), body: Rc::new(body.erase()) },
            Expr::Block(t) => Expr::Block(Rc::new(t.erase())),
            _ => self.clone(),
        }
    }
}

impl Erase for Heap {
    fn erase(&self) -> Self {
        let mut h = self.clone();
        for e in h.locs.values_mut() {
            if let Entry::Object(o) = e {
                o.cap = Capability::Unsafe;
                o.methods = Rc::new(o.methods.iter().map(Erase::erase).collect());
            }
        }
        for t in h.consumed.values_mut() {
            *t = t.erase();
        }
        h
    }
}

impl Erase for StoreType {
    fn erase(&self) -> Self {
        StoreType { entries: self.entries.iter().map(|(k, t): &(Key, Tag)| (k.clone(), t.erase())).collect() }
    }
}

impl Erase for Thread {
    fn erase(&self) -> Self {
        Thread { id: self.id, term: self.term.erase() }
    }
}

impl Erase for Configuration {
    fn erase(&self) -> Self {
        Configuration {
            heap: self.heap.erase(),
            threads: self.threads.iter().map(Erase::erase).collect(),
            status: self.status,
            ids: self.ids.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum DiffVerdict {
    SameStep(Rule),
    /// The annotated side raised a permission or cast error; the erased side stepped.
    SafeErred(ErrorKind, Rule),
    /// Both sides raised the same absent or normal error.
    BothErred(ErrorKind, Rule),
    /// Neither side can step the thread.
    BothBlocked,
    Mismatch(String),
}

fn describe(s: &GlobalStep) -> String {
    match s {
        GlobalStep::Stepped(cfg, rule, _) => match cfg.status {
            Status::Error(k, _) => format!("{rule} ({k})"),
            Status::Running => rule.to_string(),
        },
        GlobalStep::NotEnabled(r) => format!("blocked ({r:?})"),
        GlobalStep::NotLive => "not live".to_string(),
        GlobalStep::Stuck(why) => format!("stuck ({why})"),
    }
}

/// Steps thread `tid` of `cfg` and of its erasure and compares the results.
pub fn diff_step(cfg: &Configuration, tid: ThreadId) -> DiffVerdict {
    let erased = cfg.erase();
    let a = scheduler::global_step(cfg, tid);
    let e = scheduler::global_step(&erased, tid);
    match (&a, &e) {
        (GlobalStep::Stepped(ca, ra, _), GlobalStep::Stepped(ce, re, _)) => match (ca.status, ce.status) {
            (Status::Running, Status::Running) if ra == re && ca.erase() == **ce => DiffVerdict::SameStep(*ra),
            (Status::Error(k, r), Status::Running) if matches!(k, ErrorKind::ErrP | ErrorKind::ErrC) => {
                DiffVerdict::SafeErred(k, r)
            }
            (Status::Error(k, r), Status::Error(k2, r2))
                if k == k2 && r == r2 && matches!(k, ErrorKind::ErrA | ErrorKind::ErrN) =>
            {
                DiffVerdict::BothErred(k, r)
            }
            _ => DiffVerdict::Mismatch(format!("annotated {} vs erased {}", describe(&a), describe(&e))),
        },
        (GlobalStep::NotEnabled(x), GlobalStep::NotEnabled(y)) if x == y => DiffVerdict::BothBlocked,
        _ => DiffVerdict::Mismatch(format!("annotated {} vs erased {}", describe(&a), describe(&e))),
    }
}

/// Which program was run first and which was replayed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Direction {
    /// Annotated run, replayed on the erasure.
    AnnotatedFirst,
    /// Erased run, replayed on the annotated program.
    ErasedFirst,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[error("{direction:?}, step {step}: {detail}")]
pub struct TheoremViolation {
    pub direction: Direction,
    pub step: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DirectionSummary {
    /// Terminal of the run that was driven by the seed; `None` on step limit.
    pub leader: Option<TerminalKind>,
    /// Terminal reached by the replaying side, if it got that far.
    pub follower: Option<TerminalKind>,
    pub steps: usize,
    pub same_steps: usize,
    /// Index of the step where the annotated side raised ErrP or ErrC.
    pub diverged_at: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DiffRunReport {
    pub seed: u64,
    pub forward: DirectionSummary,
    pub backward: DirectionSummary,
    pub violations: Vec<TheoremViolation>,
}

impl DiffRunReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

fn kind_of(cfg: &Configuration) -> Option<ErrorKind> {
    match cfg.status {
        Status::Error(k, _) => Some(k),
        Status::Running => None,
    }
}

fn is_safe_error(k: Option<ErrorKind>) -> bool {
    matches!(k, Some(ErrorKind::ErrP | ErrorKind::ErrC))
}

/// Runs `p` under `seed`, replays the schedule on `erase(p)`, and the other
/// way round, checking the multistep gradual guarantee in both directions.
pub fn diff_run(p: &Program, seed: u64, max_steps: usize) -> DiffRunReport {
    let mut violations = Vec::new();
    let annotated = Configuration::initial(p.body.clone());
    let erased = annotated.erase();
    let forward =
        follow(Direction::AnnotatedFirst, &annotated, &erased, seed, max_steps, &mut violations);
    let backward =
        follow(Direction::ErasedFirst, &erased, &annotated, seed, max_steps, &mut violations);
    DiffRunReport { seed, forward, backward, violations }
}

fn follow(
    direction: Direction,
    lead_start: &Configuration,
    follow_start: &Configuration,
    seed: u64,
    max_steps: usize,
    violations: &mut Vec<TheoremViolation>,
) -> DirectionSummary {
    let mut fail =
        |step: usize, detail: String| violations.push(TheoremViolation { direction, step, detail });
    let opts = RunOptions { max_steps, observer: None };
    let mut summary =
        DirectionSummary { leader: None, follower: None, steps: 0, same_steps: 0, diverged_at: None };
    let lead = match scheduler::run_with(lead_start.clone(), SchedulePolicy::Seeded(seed), opts) {
        Ok(r) => r,
        Err(e) => {
            fail(0, format!("leading run failed: {e}"));
            return summary;
        }
    };
    summary.leader = match lead.outcome {
        Outcome::Terminal(k) => Some(k),
        Outcome::StepLimit => None,
    };
    summary.steps = lead.trace.len();
    if direction == Direction::ErasedFirst && is_safe_error(kind_of(&lead.config)) {
        fail(lead.trace.len(), format!("erased run raised {:?}", kind_of(&lead.config)));
    }

    // `lcfg` retraces the leading run while `fcfg` follows its schedule.
    let mut lcfg = lead_start.clone();
    let mut fcfg = follow_start.clone();
    scheduler::drop_finished(&mut lcfg);
    scheduler::drop_finished(&mut fcfg);
    for (k, TraceEntry { rule, thread }) in lead.trace.iter().enumerate() {
        let GlobalStep::Stepped(next_l, _, _) = scheduler::global_step(&lcfg, *thread) else {
            fail(k, "leading run did not retrace".to_string());
            return summary;
        };
        let next_f = match scheduler::global_step(&fcfg, *thread) {
            GlobalStep::Stepped(c, _, _) => c,
            other => {
                fail(k, format!("follower {} where leader took {rule} on {thread}", describe(&other)));
                return summary;
            }
        };
        let (annotated, erased) = match direction {
            Direction::AnnotatedFirst => (&*next_l, &*next_f),
            Direction::ErasedFirst => (&*next_f, &*next_l),
        };
        if is_safe_error(kind_of(annotated)) {
            // The annotated side stops with a permission or cast error; the
            // erased side must have reached some other configuration.
            summary.diverged_at = Some(k);
            if kind_of(erased).is_some() {
                fail(k, format!("both sides erred at {rule}"));
            }
            if direction == Direction::AnnotatedFirst && k + 1 != lead.trace.len() {
                fail(k, "annotated run continued after an error".to_string());
            }
            return summary;
        }
        if annotated.erase() != *erased {
            fail(k, format!("configurations differ after {rule} on {thread}"));
            return summary;
        }
        summary.same_steps += 1;
        lcfg = *next_l;
        fcfg = *next_f;
    }
    if let Some(kind) = summary.leader {
        let reached = scheduler::terminal_kind(&fcfg);
        summary.follower = reached;
        if reached != Some(kind) {
            fail(lead.trace.len(), format!("leader ended {kind:?}, follower {reached:?}"));
        }
        let (annotated, erased) = match direction {
            Direction::AnnotatedFirst => (&lcfg, &fcfg),
            Direction::ErasedFirst => (&fcfg, &lcfg),
        };
        if annotated.erase().snapshot().to_json() != erased.snapshot().to_json() {
            fail(lead.trace.len(), "terminal heap snapshots differ modulo erasure".to_string());
        }
    }
    summary
}

/// `diff_step` on every live thread of every configuration along the run of
/// `p` under `seed`.
pub fn diff_steps_along(p: &Program, seed: u64, max_steps: usize) -> Vec<(usize, DiffVerdict)> {
    let mut out = Vec::new();
    let opts = RunOptions { max_steps, observer: None };
    let Ok(run) = scheduler::run_with(Configuration::initial(p.body.clone()), SchedulePolicy::Seeded(seed), opts)
    else {
        return vec![(0, DiffVerdict::Mismatch("run failed".to_string()))];
    };
    let mut cfg = Configuration::initial(p.body.clone());
    scheduler::drop_finished(&mut cfg);
    for (k, entry) in run.trace.iter().enumerate() {
        for tid in cfg.thread_ids() {
            out.push((k, diff_step(&cfg, tid)));
        }
        match scheduler::global_step(&cfg, entry.thread) {
            GlobalStep::Stepped(next, _, _) => cfg = *next,
            other => {
                out.push((k, DiffVerdict::Mismatch(format!("retrace failed: {}", describe(&other)))));
                break;
            }
        }
    }
    out
}

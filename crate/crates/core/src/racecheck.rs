//! Data races over traces, and a bounded depth-first explorer of schedules.
//!
//! Two field accesses race when they touch the same field from different
//! threads, at least one writes, and the location was not handed from the
//! first thread to the second between them. A hand-off is a send by a thread
//! whose payload graph contains the location followed by a receive of a graph
//! containing it; receivers join the chain, so transfers with stop-overs
//! count.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::reducer::{AccessKind, Direction, Effect};
use crate::scheduler::{self, GlobalStep};
use crate::state::{Capability, Configuration, ErrorKind, Heap, Loc, Status, ThreadId, Value};
use crate::syntax::{Name, Program};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AccessEvent {
    pub step: usize,
    pub thread: ThreadId,
    pub kind: AccessKind,
    pub loc: Loc,
    pub field: Name,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TransferEvent {
    pub step: usize,
    pub thread: ThreadId,
    pub direction: Direction,
    pub rog: BTreeSet<Loc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Event {
    Access(AccessEvent),
    Transfer(TransferEvent),
}

impl Event {
    pub fn from_effect(step: usize, thread: ThreadId, effect: &Effect) -> Event {
        match effect {
            Effect::Access { kind, loc, field } => {
                Event::Access(AccessEvent { step, thread, kind: *kind, loc: *loc, field: field.clone() })
            }
            Effect::Transfer { direction, rog } => {
                Event::Transfer(TransferEvent { step, thread, direction: *direction, rog: rog.clone() })
            }
        }
    }

    pub fn step(&self) -> usize {
        match self {
            Event::Access(a) => a.step,
            Event::Transfer(t) => t.step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RaceWitness {
    pub loc: Loc,
    pub field: Name,
    pub first: AccessEvent,
    pub second: AccessEvent,
    pub involves_unsafe: bool,
}

/// For each location, the first step after which it was an unsafe object or
/// reachable from the fields of one.
pub type Taint = BTreeMap<Loc, usize>;

/// Objects that are unsafe or reachable from an unsafe object's fields.
pub fn unsafe_reach(h: &Heap) -> BTreeSet<Loc> {
    let roots = h
        .locs
        .iter()
        .filter(|(l, _)| h.object(**l).is_some_and(|o| o.cap == Capability::Unsafe))
        .map(|(l, _)| Value::Loc(*l));
    h.rog_from(roots)
}

pub fn update_taint(taint: &mut Taint, h: &Heap, step: usize) {
    for l in unsafe_reach(h) {
        taint.entry(l).or_insert(step);
    }
}

/// Whether `loc` was handed from thread `from` (after step `start`) to
/// thread `to` (before step `end`).
fn handed_over(events: &[Event], loc: Loc, from: ThreadId, to: ThreadId, start: usize, end: usize) -> bool {
    // Members of the chain, with the step at which they joined.
    let mut members: BTreeMap<ThreadId, usize> = BTreeMap::from([(from, start)]);
    let mut sends: Vec<usize> = Vec::new();
    for ev in events {
        let Event::Transfer(t) = ev else { continue };
        if t.step <= start || t.step >= end || !t.rog.contains(&loc) {
            continue;
        }
        match t.direction {
            Direction::Send => {
                if members.get(&t.thread).is_some_and(|joined| *joined < t.step) {
                    sends.push(t.step);
                }
            }
            Direction::Recv => {
                if sends.iter().any(|s| *s < t.step) {
                    members.entry(t.thread).or_insert(t.step);
                }
            }
        }
    }
    members.contains_key(&to)
}

/// All racing access pairs in `events` (one trace, in step order).
pub fn detect_races(events: &[Event], taint: &Taint) -> Vec<RaceWitness> {
    let accesses: Vec<&AccessEvent> = events
        .iter()
        .filter_map(|e| match e {
            Event::Access(a) => Some(a),
            Event::Transfer(_) => None,
        })
        .collect();
    let mut out = Vec::new();
    for (i, a) in accesses.iter().enumerate() {
        for b in &accesses[i + 1..] {
            if a.loc != b.loc || a.field != b.field || a.thread == b.thread || a.step >= b.step {
                continue;
            }
            if a.kind == AccessKind::Read && b.kind == AccessKind::Read {
                continue;
            }
            if handed_over(events, a.loc, a.thread, b.thread, a.step, b.step) {
                continue;
            }
            out.push(RaceWitness {
                loc: a.loc,
                field: a.field.clone(),
                first: (*a).clone(),
                second: (*b).clone(),
                involves_unsafe: taint.get(&a.loc).is_some_and(|s| *s <= b.step),
            });
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ExplorationReport {
    /// Maximal traces explored (terminal or cut at the step bound).
    pub traces: usize,
    /// Traces cut at the step bound.
    pub truncated: usize,
    /// Traces ending in each error kind.
    pub errors: BTreeMap<String, usize>,
    pub deadlocks: usize,
    pub racy_traces: usize,
    /// Distinct witnesses by (location, field, first step, second step).
    pub witnesses: Vec<RaceWitness>,
    pub witness_count: usize,
    pub unsafe_witnesses: usize,
    /// Set when the schedule bound stopped the search early.
    pub bound_exceeded: bool,
    /// States where no rule applied.
    pub stuck: Vec<String>,
}

impl ExplorationReport {
    pub fn all_witnesses_unsafe(&self) -> bool {
        self.unsafe_witnesses == self.witness_count
    }
}

const KEPT_WITNESSES: usize = 64;

struct Explorer {
    max_steps: usize,
    max_schedules: usize,
    report: ExplorationReport,
    seen: BTreeSet<(Loc, Name, usize, usize)>,
}

pub fn explore(p: &Program, max_steps: usize, max_schedules: usize) -> ExplorationReport {
    explore_config(Configuration::initial(p.body.clone()), max_steps, max_schedules)
}

pub fn explore_config(mut cfg: Configuration, max_steps: usize, max_schedules: usize) -> ExplorationReport {
    scheduler::drop_finished(&mut cfg);
    let mut ex = Explorer { max_steps, max_schedules, report: ExplorationReport::default(), seen: BTreeSet::new() };
    let mut taint = Taint::new();
    update_taint(&mut taint, &cfg.heap, 0);
    ex.dfs(&cfg, &mut Vec::new(), &taint, 0);
    ex.report
}

impl Explorer {
    fn leaf(&mut self, cfg: &Configuration, events: &[Event], taint: &Taint) {
        self.report.traces += 1;
        if let Status::Error(kind, _) = cfg.status {
            *self.report.errors.entry(kind.to_string()).or_default() += 1;
            if matches!(kind, ErrorKind::ErrP | ErrorKind::ErrC) {
                return;
            }
        }
        let races = detect_races(events, taint);
        if races.is_empty() {
            return;
        }
        self.report.racy_traces += 1;
        for w in races {
            if !self.seen.insert((w.loc, w.field.clone(), w.first.step, w.second.step)) {
                continue;
            }
            self.report.witness_count += 1;
            if w.involves_unsafe {
                self.report.unsafe_witnesses += 1;
            }
            if self.report.witnesses.len() < KEPT_WITNESSES || !w.involves_unsafe {
                self.report.witnesses.push(w);
            }
        }
    }

    fn dfs(&mut self, cfg: &Configuration, events: &mut Vec<Event>, taint: &Taint, depth: usize) {
        if self.report.traces >= self.max_schedules {
            self.report.bound_exceeded = true;
            return;
        }
        if cfg.status != Status::Running || cfg.threads.is_empty() {
            self.leaf(cfg, events, taint);
            return;
        }
        let mut children = Vec::new();
        for tid in cfg.thread_ids() {
            match scheduler::global_step(cfg, tid) {
                GlobalStep::Stepped(next, _, effect) => children.push((tid, next, effect)),
                GlobalStep::NotEnabled(_) | GlobalStep::NotLive => {}
                GlobalStep::Stuck(why) => self.report.stuck.push(format!("step {depth}, {tid}: {why}")),
            }
        }
        if children.is_empty() {
            self.report.deadlocks += 1;
            self.leaf(cfg, events, taint);
            return;
        }
        if depth >= self.max_steps {
            self.report.truncated += 1;
            self.leaf(cfg, events, taint);
            return;
        }
        for (tid, next, effect) in children {
            if self.report.traces >= self.max_schedules {
                self.report.bound_exceeded = true;
                return;
            }
            let pushed = effect.map(|e| events.push(Event::from_effect(depth, tid, &e))).is_some();
            let mut t = taint.clone();
            update_taint(&mut t, &next.heap, depth + 1);
            self.dfs(&next, events, &t, depth + 1);
            if pushed {
                events.pop();
            }
        }
    }
}

//! Brute-force reference implementations of the configuration predicates and
//! the race detector, shared by the test targets.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use dala_core::racecheck::{Event, Taint};
use dala_core::reducer::{AccessKind, Direction};
use dala_core::state::{term_values, Capability, Entry, Heap, Loc, Thread, ThreadId, Value};
use dala_core::syntax::free_vars;

/// `reach[a][b]`: object `b` is reachable from object `a` (reflexively),
/// by Warshall's algorithm over the field relation.
fn closure(h: &Heap) -> (Vec<Loc>, Vec<Vec<bool>>) {
    let objs: Vec<Loc> = h.locs.iter().filter(|(_, e)| matches!(e, Entry::Object(_))).map(|(l, _)| *l).collect();
    let n = objs.len();
    let idx: BTreeMap<Loc, usize> = objs.iter().enumerate().map(|(i, l)| (*l, i)).collect();
    let mut m = vec![vec![false; n]; n];
    for (i, l) in objs.iter().enumerate() {
        m[i][i] = true;
        for (_, v) in &h.object(*l).unwrap().fields {
            if let Some(j) = v.loc().and_then(|t| idx.get(&t)) {
                m[i][*j] = true;
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            if m[i][k] {
                for j in 0..n {
                    if m[k][j] {
                        m[i][j] = true;
                    }
                }
            }
        }
    }
    (objs, m)
}

fn thread_roots(h: &Heap, th: &Thread) -> BTreeSet<Loc> {
    let mut out: BTreeSet<Loc> = free_vars(&th.term).iter().filter_map(|x| h.var(x)).filter_map(Value::loc).collect();
    out.extend(term_values(&th.term).into_iter().filter_map(Value::loc));
    out
}

/// Objects reachable from each thread.
fn reach_sets(h: &Heap, threads: &[Thread]) -> Vec<(ThreadId, BTreeSet<Loc>)> {
    let (objs, m) = closure(h);
    threads
        .iter()
        .map(|th| {
            let roots = thread_roots(h, th);
            let set = objs
                .iter()
                .enumerate()
                .filter(|(j, _)| objs.iter().enumerate().any(|(i, r)| roots.contains(r) && m[i][*j]))
                .map(|(_, l)| *l)
                .collect();
            (th.id, set)
        })
        .collect()
}

/// Local objects reachable from two or more threads.
pub fn local_violations(h: &Heap, threads: &[Thread]) -> BTreeSet<Loc> {
    shared(h, threads, false)
}

/// Local objects reachable from two or more threads other than the owner.
pub fn local_violations_owner_exclusive(h: &Heap, threads: &[Thread]) -> BTreeSet<Loc> {
    shared(h, threads, true)
}

fn shared(h: &Heap, threads: &[Thread], skip_owner: bool) -> BTreeSet<Loc> {
    let sets = reach_sets(h, threads);
    h.locs
        .keys()
        .filter(|l| {
            let Some(o) = h.object(**l).filter(|o| o.cap == Capability::Local) else { return false };
            let readers = sets.iter().filter(|(t, s)| s.contains(l) && !(skip_owner && *t == o.owner)).count();
            readers >= 2
        })
        .copied()
        .collect()
}

/// Iso objects whose incoming references are not either a single reference
/// or a set of references living on one thread's stack.
pub fn isolation_violations(h: &Heap, threads: &[Thread]) -> BTreeSet<Loc> {
    let mut out = BTreeSet::new();
    for (l, e) in &h.locs {
        let Entry::Object(o) = e else { continue };
        if o.cap != Capability::Iso {
            continue;
        }
        let target = Value::Loc(*l);
        let mut heap_refs = 0;
        for e2 in h.locs.values() {
            match e2 {
                Entry::Object(o2) => heap_refs += o2.fields.iter().filter(|(_, v)| *v == target).count(),
                Entry::Channel(c) => heap_refs += usize::from(c.payload == target),
            }
        }
        // Distinct stack references, keyed by variable name or by thread for literals.
        let mut stack: BTreeSet<(Option<String>, Option<ThreadId>)> = BTreeSet::new();
        let mut holders: BTreeSet<ThreadId> = BTreeSet::new();
        for th in threads {
            for x in free_vars(&th.term) {
                if h.var(&x) == Some(target) {
                    stack.insert((Some(x), None));
                    holders.insert(th.id);
                }
            }
            if term_values(&th.term).contains(&target) {
                stack.insert((None, Some(th.id)));
                holders.insert(th.id);
            }
        }
        let total = heap_refs + stack.len();
        if total > 1 && !(heap_refs == 0 && holders.len() == 1) {
            out.insert(*l);
        }
    }
    out
}

/// Racing pairs as (loc, field, first step, second step, involves unsafe),
/// with synchronization decided by searching for a chain of hand-offs.
pub fn races(events: &[Event], taint: &Taint) -> BTreeSet<(Loc, String, usize, usize, bool)> {
    let accesses: Vec<_> = events
        .iter()
        .filter_map(|e| match e {
            Event::Access(a) => Some(a),
            Event::Transfer(_) => None,
        })
        .collect();
    let mut out = BTreeSet::new();
    for a in &accesses {
        for b in &accesses {
            if a.step >= b.step || a.loc != b.loc || a.field != b.field || a.thread == b.thread {
                continue;
            }
            if a.kind == AccessKind::Read && b.kind == AccessKind::Read {
                continue;
            }
            if chain(events, a.loc, a.thread, a.step, b.thread, b.step, &mut BTreeSet::new()) {
                continue;
            }
            let unsafe_ = taint.get(&a.loc).is_some_and(|s| *s <= b.step);
            out.insert((a.loc, a.field.clone(), a.step, b.step, unsafe_));
        }
    }
    out
}

/// Whether `holder`, holding `loc` since step `since`, can pass it along a
/// sequence of send/receive pairs reaching thread `to` before step `end`.
fn chain(
    events: &[Event],
    loc: Loc,
    holder: ThreadId,
    since: usize,
    to: ThreadId,
    end: usize,
    tried: &mut BTreeSet<(ThreadId, usize)>,
) -> bool {
    if !tried.insert((holder, since)) {
        return false;
    }
    let carries = |e: &&Event, dir: Direction| match e {
        Event::Transfer(t) => t.direction == dir && t.rog.contains(&loc) && t.step < end,
        Event::Access(_) => false,
    };
    for send in events.iter().filter(|e| carries(e, Direction::Send)) {
        let Event::Transfer(s) = send else { unreachable!() };
        if s.thread != holder || s.step <= since {
            continue;
        }
        for recv in events.iter().filter(|e| carries(e, Direction::Recv)) {
            let Event::Transfer(r) = recv else { unreachable!() };
            if r.step <= s.step {
                continue;
            }
            if r.thread == to || chain(events, loc, r.thread, r.step, to, end, tried) {
                return true;
            }
        }
    }
    false
}

/// Events and taint of the run of `p` under `seed`.
pub fn events_of(p: &dala_core::syntax::Program, seed: u64, max_steps: usize) -> (Vec<Event>, Taint) {
    use dala_core::racecheck::update_taint;
    use dala_core::scheduler::{run_with, RunOptions, SchedulePolicy, StepRecord};
    use dala_core::state::Configuration;

    let init = Configuration::initial(p.body.clone());
    let mut taint = Taint::new();
    update_taint(&mut taint, &init.heap, 0);
    let mut events = Vec::new();
    let obs = Box::new(|_: &Configuration, r: &StepRecord, a: &Configuration| {
        if let Some(e) = &r.effect {
            events.push(Event::from_effect(r.index, r.thread, e));
        }
        update_taint(&mut taint, &a.heap, r.index + 1);
        Ok(())
    });
    run_with(init, SchedulePolicy::Seeded(seed), RunOptions { max_steps, observer: Some(obs) }).expect("run");
    (events, taint)
}

use std::collections::{BTreeMap, BTreeSet};

use dala_core::corpus::{generate_random, load_corpus, PINNED_SEED};
use dala_core::reducer::*;
use dala_core::scheduler::{run_with, RunOptions, SchedulePolicy, StepRecord};
use dala_core::state::*;
use dala_core::syntax::*;

use Capability::*;

fn var(x: &str) -> Operand {
    Operand::Var(x.into())
}

fn val(l: u64) -> Operand {
    Operand::Val(Value::Loc(Loc(l)))
}

/// `let r = e in r`
fn hole(e: Expr) -> Term {
    Term::let_in("r", e, Term::ret(var("r")))
}

fn object(cap: Capability, owner: u64, fields: &[(&str, u64)]) -> Entry {
    Entry::Object(HeapObject {
        cap,
        owner: ThreadId(owner),
        fields: fields.iter().map(|(f, l)| (f.to_string(), Value::Loc(Loc(*l)))).collect(),
        methods: Default::default(),
    })
}

/// A heap with the given entries and variables, and ids past every location.
fn setup(entries: Vec<(u64, Entry)>, vars: &[(&str, Value)]) -> (Heap, IdGen) {
    let mut h = Heap::default();
    let mut ids = IdGen::default();
    let top = entries.iter().map(|(l, _)| *l).max().unwrap_or(0);
    for _ in 0..top {
        ids.fresh_location();
    }
    for (l, e) in entries {
        h.locs.insert(Loc(l), e);
    }
    for (x, v) in vars {
        h.vars.insert(x.to_string(), *v);
    }
    (h, ids)
}

fn step(h: &Heap, ids: &IdGen, tid: u64, t: Term) -> StepOutcome {
    step_thread(h, ids, &Thread { id: ThreadId(tid), term: t })
}

fn stepped(o: StepOutcome) -> Step {
    match o {
        StepOutcome::Stepped(s) => s,
        other => panic!("expected a step, got {other:?}"),
    }
}

#[test]
fn reading_an_iso_variable_errs() {
    let (h, ids) = setup(vec![(1, object(Iso, 0, &[]))], &[("x", Value::Loc(Loc(1)))]);
    let o = step(&h, &ids, 0, hole(Expr::Atom(var("x"))));
    assert_eq!(o, StepOutcome::Erred(ErrorKind::ErrP, Rule::EAliasIso));
}

#[test]
fn consuming_absent_errs() {
    let (h, ids) = setup(vec![], &[("x", Value::Absent)]);
    let o = step(&h, &ids, 0, hole(Expr::Atom(Operand::Consume("x".into()))));
    assert_eq!(o, StepOutcome::Erred(ErrorKind::ErrA, Rule::EConsume));
}

#[test]
fn writing_an_imm_target_errs() {
    let (h, ids) = setup(
        vec![(1, object(Imm, 0, &[("f", 2)])), (2, object(Imm, 0, &[])), (3, object(Imm, 0, &[]))],
        &[("x", Value::Loc(Loc(1)))],
    );
    let o = step(&h, &ids, 0, hole(Expr::FieldWrite { target: "x".into(), field: "f".into(), value: val(3) }));
    assert_eq!(o, StepOutcome::Erred(ErrorKind::ErrP, Rule::EBadFieldAssign));
}

#[test]
fn field_assignment_swaps() {
    let (h, ids) = setup(
        vec![(1, object(Unsafe, 0, &[("f", 2)])), (2, object(Unsafe, 0, &[])), (3, object(Unsafe, 0, &[]))],
        &[("x", Value::Loc(Loc(1)))],
    );
    let s = stepped(step(&h, &ids, 0, hole(Expr::FieldWrite { target: "x".into(), field: "f".into(), value: val(3) })));
    assert_eq!(s.rule, Rule::RFieldAssign);
    assert_eq!(s.heap.object(Loc(1)).unwrap().field("f"), Some(Value::Loc(Loc(3))));
    match decompose(&s.threads[0].term) {
        Decomposition::Redex(_, Redex::Let { value, .. }) => assert_eq!(value, Value::Loc(Loc(2))),
        other => panic!("{other:?}"),
    }
}

#[test]
fn spawn_adds_a_thread_and_a_channel() {
    let body = Term::let_in("y", Expr::Recv { chan: var("c") }, Term::ret(var("y")));
    let (h, ids) = setup(vec![], &[]);
    let s = stepped(step(&h, &ids, 0, hole(Expr::Spawn { binder: "c".into(), body: std::rc::Rc::new(body) })));
    assert_eq!(s.rule, Rule::RSpawn);
    assert_eq!(s.threads.len(), 2);
    assert_eq!(s.threads[0].id, ThreadId(0));
    assert_eq!(s.threads[1].id, ThreadId(1));
    let c = s.heap.var("c").and_then(Value::loc).unwrap();
    assert_eq!(s.heap.channel(c).unwrap().payload, Value::Empty);
}

#[test]
fn sending_a_local_errs() {
    let chan = Entry::Channel(Channel { msg: MsgId(1), payload: Value::Empty });
    let (h, ids) = setup(vec![(1, chan), (2, object(Local, 0, &[]))], &[]);
    let o = step(&h, &ids, 0, hole(Expr::Send { chan: val(1), payload: val(2) }));
    assert_eq!(o, StepOutcome::Erred(ErrorKind::ErrP, Rule::ESendingLocal));
}

#[test]
fn decomposition_examples() {
    let t = Term::let_in("x", Expr::Atom(var("y")), Term::ret(var("x")));
    match decompose(&t) {
        Decomposition::Redex(ctx, Redex::Expr(e)) => {
            assert_eq!(e, Expr::Atom(var("y")));
            assert!(matches!(ctx.frames.as_slice(), [Frame::Let { binder, .. }] if binder == "x"));
            assert_eq!(ctx.plug(Filling::Expr(e)), t);
        }
        other => panic!("{other:?}"),
    }
    let lit = Expr::Object {
        cap: Unsafe,
        fields: vec![FieldInit { name: "f1".into(), value: val(1) }, FieldInit { name: "f2".into(), value: var("y") }],
        methods: Default::default(),
    };
    match decompose(&hole(lit)) {
        Decomposition::Redex(ctx, Redex::Expr(e)) => {
            assert_eq!(e, Expr::Atom(var("y")));
            assert!(matches!(ctx.frames.last(), Some(Frame::ObjectField { name, .. }) if name == "f2"));
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(decompose(&Term::ret(val(4))), Decomposition::Value(Value::Loc(Loc(4))));
}

/// Shape of the graph under `root`: nodes numbered in first-visit order,
/// each with its capability, owner and fields pointing at node numbers.
type Shape = Vec<(Capability, ThreadId, Vec<(String, usize)>)>;

fn canonical(h: &Heap, root: Loc) -> Shape {
    let mut index: BTreeMap<Loc, usize> = BTreeMap::new();
    let mut order = vec![root];
    index.insert(root, 0);
    let mut i = 0;
    while i < order.len() {
        for (_, v) in &h.object(order[i]).unwrap().fields {
            let l = v.loc().unwrap();
            if !index.contains_key(&l) {
                index.insert(l, order.len());
                order.push(l);
            }
        }
        i += 1;
    }
    order
        .iter()
        .map(|l| {
            let o = h.object(*l).unwrap();
            (o.cap, o.owner, o.fields.iter().map(|(f, v)| (f.clone(), index[&v.loc().unwrap()])).collect())
        })
        .collect()
}

fn diamond() -> (Heap, IdGen) {
    setup(
        vec![
            (1, object(Local, 0, &[("l", 2), ("r", 3)])),
            (2, object(Local, 0, &[("d", 4)])),
            (3, object(Local, 0, &[("d", 4)])),
            (4, object(Local, 0, &[])),
        ],
        &[],
    )
}

#[test]
fn diamond_copy_is_isomorphic() {
    let (h, mut ids) = diamond();
    let (out, root) = deep_copy(&h, &mut ids, Unsafe, ThreadId(0), Loc(1));
    let new: BTreeSet<Loc> = out.locs.keys().filter(|l| !h.locs.contains_key(l)).copied().collect();
    assert_eq!(new.len(), 4);
    assert_eq!(out.rog(Value::Loc(root)), new);
    let orig = canonical(&h, Loc(1));
    let copy = canonical(&out, root);
    let strip = |s: &Shape| s.iter().map(|(_, _, f)| f.clone()).collect::<Vec<_>>();
    assert_eq!(strip(&orig), strip(&copy));
    assert!(copy.iter().all(|(k, o, _)| *k == Unsafe && *o == ThreadId(0)));
    let d_left = out.object(out.object(root).unwrap().field("l").unwrap().loc().unwrap()).unwrap().field("d");
    let d_right = out.object(out.object(root).unwrap().field("r").unwrap().loc().unwrap()).unwrap().field("d");
    assert_eq!(d_left, d_right);
    for l in h.locs.keys() {
        assert_eq!(out.locs[l], h.locs[l]);
    }
}

#[test]
fn two_imm_copies_are_disjoint() {
    let (h, mut ids) = diamond();
    let (h1, r1) = deep_copy(&h, &mut ids, Imm, ThreadId(0), Loc(1));
    let (h2, r2) = deep_copy(&h1, &mut ids, Imm, ThreadId(0), Loc(1));
    let a = h2.rog(Value::Loc(r1));
    let b = h2.rog(Value::Loc(r2));
    let orig = h.rog(Value::Loc(Loc(1)));
    assert!(a.is_disjoint(&b) && a.is_disjoint(&orig) && b.is_disjoint(&orig));
    assert_eq!(canonical(&h2, r1), canonical(&h2, r2));
}

#[test]
fn single_object_copy() {
    let (h, mut ids) = setup(vec![(1, object(Unsafe, 0, &[]))], &[]);
    let (out, root) = deep_copy(&h, &mut ids, Imm, ThreadId(0), Loc(1));
    assert_eq!(out.locs.len(), 2);
    assert_eq!(out.object(root).unwrap().cap, Imm);
}

/// Runs `p` and calls `check` on every step.
fn along(p: &Program, seed: u64, mut check: impl FnMut(&Configuration, &StepRecord, &Configuration)) {
    let obs = Box::new(|b: &Configuration, r: &StepRecord, a: &Configuration| {
        check(b, r, a);
        Ok(())
    });
    run_with(
        Configuration::initial(p.body.clone()),
        SchedulePolicy::Seeded(seed),
        RunOptions { max_steps: 2_000, observer: Some(obs) },
    )
    .unwrap();
}

fn programs() -> Vec<Program> {
    let mut ps: Vec<Program> = load_corpus().unwrap().into_iter().map(|e| e.program).collect();
    ps.extend((0..200).map(|s| generate_random(s, 30)));
    ps
}

#[test]
fn stepping_is_deterministic_and_preserves_tags() {
    for p in programs() {
        along(&p, PINNED_SEED, |before, r, after| {
            let th = before.thread(r.thread).unwrap();
            assert_eq!(step_thread(&before.heap, &before.ids, th), step_thread(&before.heap, &before.ids, th));
            if let (Rule::RField, Some(Effect::Access { loc, field, .. })) = (r.rule, &r.effect) {
                let read = before.heap.object(*loc).unwrap().field(field).unwrap();
                assert!(!before.heap.is_iso(read), "read an iso out of {loc}.{field}");
            }
            for (l, o) in before.heap.locs.iter().filter_map(|(l, _)| before.heap.object(*l).map(|o| (l, o))) {
                let o2 = after.heap.object(*l).unwrap();
                assert_eq!((o.cap, o.owner), (o2.cap, o2.owner));
            }
        });
    }
}

#[test]
fn field_assignment_swaps_along_runs() {
    let mut seen = 0;
    for p in programs() {
        along(&p, PINNED_SEED, |before, r, after| {
            if r.rule != Rule::RFieldAssign {
                return;
            }
            seen += 1;
            let Some(Effect::Access { loc, field, .. }) = &r.effect else { panic!("no access effect") };
            let old = before.heap.object(*loc).unwrap().field(field).unwrap();
            let Decomposition::Redex(_, Redex::Expr(Expr::FieldWrite { value, .. })) =
                decompose(&before.thread(r.thread).unwrap().term)
            else {
                panic!("not a field write")
            };
            assert_eq!(after.heap.object(*loc).unwrap().field(field), value.as_value());
            match decompose(&after.thread(r.thread).unwrap().term) {
                Decomposition::Redex(_, Redex::Let { value, .. }) => assert_eq!(value, old),
                other => panic!("{other:?}"),
            }
        });
    }
    assert!(seen > 0);
}

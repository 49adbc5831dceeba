use std::collections::BTreeSet;

use dala_core::state::*;
use proptest::prelude::*;

use Capability::*;

/// Reflexive-transitive closure of unsafe ≤ local ≤ iso ≤ imm, by fixpoint.
fn closure() -> BTreeSet<(Capability, Capability)> {
    let mut rel: BTreeSet<_> = [(Unsafe, Local), (Local, Iso), (Iso, Imm)].into_iter().collect();
    rel.extend(Capability::ALL.iter().map(|k| (*k, *k)));
    loop {
        let mut next = rel.clone();
        for (a, b) in &rel {
            for (c, d) in &rel {
                if b == c {
                    next.insert((*a, *d));
                }
            }
        }
        if next == rel {
            return rel;
        }
        rel = next;
    }
}

#[test]
fn cap_le_is_the_closure_of_the_base_order() {
    let rel = closure();
    assert_eq!(rel.len(), 10);
    for a in Capability::ALL {
        for b in Capability::ALL {
            assert_eq!(cap_le(a, b), rel.contains(&(a, b)), "{a} <= {b}");
        }
    }
}

#[test]
fn cap_le_is_a_partial_order() {
    let all = Capability::ALL;
    for a in all {
        assert!(cap_le(a, a));
        for b in all {
            if cap_le(a, b) && cap_le(b, a) {
                assert_eq!(a, b);
            }
            for c in all {
                if cap_le(a, b) && cap_le(b, c) {
                    assert!(cap_le(a, c));
                }
            }
        }
    }
}

#[test]
fn ok_field_reproduces_structural_restrictions() {
    // Rows: container; columns: field contents imm, iso, local, unsafe.
    let table = [
        (Imm, [true, false, false, false]),
        (Iso, [true, true, false, false]),
        (Local, [true, true, true, false]),
        (Unsafe, [true, true, true, true]),
    ];
    let cols = [Imm, Iso, Local, Unsafe];
    for (row, cells) in table {
        for (col, want) in cols.iter().zip(cells) {
            assert_eq!(ok_field(row, *col), want, "{row} holding {col}");
        }
    }
}

fn obj(cap: Capability, owner: u64, fields: &[(&str, Value)]) -> Entry {
    Entry::Object(HeapObject {
        cap,
        owner: ThreadId(owner),
        fields: fields.iter().map(|(f, v)| (f.to_string(), *v)).collect(),
        methods: Default::default(),
    })
}

fn heap(entries: Vec<(u64, Entry)>) -> Heap {
    let mut h = Heap::default();
    for (l, e) in entries {
        h.locs.insert(Loc(l), e);
    }
    h
}

#[test]
fn rog_examples() {
    let mut h = heap(vec![(1, obj(Unsafe, 0, &[]))]);
    h.vars.insert("x".into(), Value::Loc(Loc(1)));
    assert_eq!(h.rog(h.var("x").unwrap()), BTreeSet::from([Loc(1)]));

    let h = heap(vec![(1, obj(Local, 0, &[("f", Value::Loc(Loc(2)))])), (2, obj(Imm, 0, &[]))]);
    assert_eq!(h.rog(Value::Loc(Loc(1))), BTreeSet::from([Loc(1), Loc(2)]));

    let h = heap(vec![
        (1, Entry::Channel(Channel { msg: MsgId(1), payload: Value::Loc(Loc(2)) })),
        (2, obj(Imm, 0, &[])),
    ]);
    assert!(h.rog(Value::Loc(Loc(1))).is_empty());
}

#[test]
fn local_owner_examples() {
    let h = heap(vec![(1, obj(Local, 3, &[])), (2, obj(Imm, 3, &[]))]);
    assert!(h.local_owner(ThreadId(3), Value::Loc(Loc(1))));
    assert!(!h.local_owner(ThreadId(4), Value::Loc(Loc(1))));
    assert!(h.local_owner(ThreadId(4), Value::Loc(Loc(2))));
}

#[test]
fn fresh_ids_start_at_one_and_never_repeat() {
    let mut ids = IdGen::default();
    assert_eq!(ids.fresh_location(), Loc(1));
    assert_eq!(ids.fresh_location(), Loc(2));
    assert_eq!(ids.fresh_msg_id(), MsgId(1));
    assert_eq!(ids.fresh_thread_id(), ThreadId(1));
    assert_ne!(ids.fresh_var("x"), ids.fresh_var("x"));
}

fn cap_strategy() -> impl Strategy<Value = Capability> {
    prop::sample::select(Capability::ALL.to_vec())
}

/// Random object heaps over locations 1..=n with fields pointing anywhere.
fn heap_strategy() -> impl Strategy<Value = Heap> {
    (1u64..10).prop_flat_map(|n| {
        prop::collection::vec((cap_strategy(), prop::collection::vec(1..=n, 0..3)), n as usize).prop_map(
            move |objs| {
                let mut h = Heap::default();
                for (i, (cap, targets)) in objs.into_iter().enumerate() {
                    let fields = targets.iter().enumerate().map(|(k, t)| (format!("f{k}"), Value::Loc(Loc(*t)))).collect();
                    h.locs.insert(
                        Loc(i as u64 + 1),
                        Entry::Object(HeapObject { cap, owner: ThreadId(0), fields, methods: Default::default() }),
                    );
                }
                h
            },
        )
    })
}

proptest! {
    #[test]
    fn rog_is_monotone_under_unreachable_extension(h in heap_strategy(), extra in 1usize..4) {
        let before: Vec<_> = h.locs.keys().map(|l| h.rog(Value::Loc(*l))).collect();
        let mut bigger = h.clone();
        let base = h.locs.keys().max().map_or(0, |l| l.0);
        for k in 1..=extra as u64 {
            // Fresh entries may point into the old heap, but nothing points at them.
            bigger.locs.insert(Loc(base + k), obj(Unsafe, 0, &[("back", Value::Loc(Loc(1)))]));
        }
        let after: Vec<_> = h.locs.keys().map(|l| bigger.rog(Value::Loc(*l))).collect();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn rog_is_closed_under_fields(h in heap_strategy()) {
        for l in h.locs.keys() {
            let r = h.rog(Value::Loc(*l));
            prop_assert!(r.contains(l));
            for m in &r {
                for (_, v) in &h.object(*m).unwrap().fields {
                    prop_assert!(r.contains(&v.loc().unwrap()));
                }
            }
        }
    }
}

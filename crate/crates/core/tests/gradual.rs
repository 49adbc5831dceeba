use dala_core::corpus::{generate_random, generate_safe, load_corpus, mentions_unsafe, PINNED_SEED};
use dala_core::gradual::*;
use dala_core::metatheory::check_configuration;
use dala_core::scheduler::{run, run_with, RunOptions, SchedulePolicy, StepRecord, TerminalKind};
use dala_core::state::{Configuration, ErrorKind};
use dala_core::syntax::{check_program, parse, Program};

fn programs() -> Vec<Program> {
    let mut ps: Vec<Program> = load_corpus().unwrap().into_iter().map(|e| e.program).collect();
    ps.extend((0..150).map(|s| generate_random(s, 30)));
    ps.extend((0..50).map(|s| generate_safe(s, 30)));
    ps
}

#[test]
fn erasure_is_idempotent_and_removes_capabilities() {
    for p in programs() {
        let e = p.erase();
        assert_eq!(e.erase(), e);
        assert!(!dala_core::syntax::print_program(&e).contains("imm"));
        assert_eq!(check_program(&p).is_ok(), check_program(&e).is_ok());
    }
    let p = parse("let x = object unsafe { } in x").unwrap();
    assert_eq!(p.erase(), p);
    let p = parse("let x = object imm { } in let y = cast iso x in y").unwrap();
    let want = parse("let x = object unsafe { } in let y = cast unsafe x in y").unwrap();
    assert_eq!(p.erase(), want);
    assert!(mentions_unsafe(&want));
}

#[test]
fn erased_runs_never_raise_permission_errors() {
    for p in programs() {
        for seed in [PINNED_SEED, 1, 2] {
            let r = run(&p.erase(), SchedulePolicy::Seeded(seed)).unwrap();
            assert!(
                !matches!(r.terminal(), Some(TerminalKind::Error(ErrorKind::ErrP | ErrorKind::ErrC))),
                "{}",
                dala_core::syntax::print_program(&p)
            );
        }
    }
}

#[test]
fn erasure_preserves_well_formed_configurations() {
    for p in programs() {
        let obs = Box::new(|_: &Configuration, r: &StepRecord, a: &Configuration| {
            if check_configuration(a).ok() && !check_configuration(&a.erase()).ok() {
                return Err(format!("erasure broke step {}: {}", r.index, check_configuration(&a.erase())));
            }
            Ok(())
        });
        run_with(
            Configuration::initial(p.body.clone()),
            SchedulePolicy::Seeded(PINNED_SEED),
            RunOptions { max_steps: 2_000, observer: Some(obs) },
        )
        .unwrap();
    }
}

#[test]
fn single_steps_agree_along_corpus_runs() {
    for e in load_corpus().unwrap() {
        for (k, v) in diff_steps_along(&e.program, PINNED_SEED, 10_000) {
            assert!(!matches!(v, DiffVerdict::Mismatch(_)), "{} step {k}: {v:?}", e.name);
        }
    }
}

#[test]
fn multistep_guarantee_on_corpus_and_generated() {
    for p in programs() {
        for seed in [PINNED_SEED, 7] {
            let r = diff_run(&p, seed, 10_000);
            assert!(r.ok(), "{:?}", r.violations);
        }
    }
}

#[test]
fn bad_cast_stops_only_the_annotated_run() {
    let p = parse("let x = object imm { } in let y = cast iso x in y").unwrap();
    let r = diff_run(&p, PINNED_SEED, 100);
    assert!(r.ok());
    assert_eq!(r.forward.leader, Some(TerminalKind::Error(ErrorKind::ErrC)));
    assert_eq!(r.backward.leader, Some(TerminalKind::AllFinished));
}

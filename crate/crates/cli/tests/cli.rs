use std::path::PathBuf;
use std::process::{Command, Output};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn corpus(name: &str) -> String {
    root().join("corpus").join(format!("{name}.dala")).display().to_string()
}

fn dala(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dala")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn imm_write_exits_with_permission_error() {
    let o = dala(&["run", &corpus("imm_write")]);
    assert_eq!(code(&o), 12);
    assert!(stdout(&o).contains("E-BadFieldAssign"));
}

#[test]
fn exit_codes_follow_terminal_kinds() {
    for (entry, want) in [
        ("smallest", 0),
        ("err_no_such_field", 10),
        ("err_absent_var", 11),
        ("err_alias_iso", 12),
        ("err_cast", 13),
        ("recv_forever", 20),
    ] {
        assert_eq!(code(&dala(&["run", &corpus(entry)])), want, "{entry}");
    }
}

#[test]
fn step_limit_has_its_own_code() {
    assert_eq!(code(&dala(&["run", &corpus("iso_transfer"), "--max-steps", "3"])), 4);
}

#[test]
fn erase_replaces_every_capability() {
    let o = dala(&["erase", &corpus("iso_transfer")]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    for kw in ["iso", "imm", "local"] {
        assert!(!out.split(|c: char| !c.is_alphanumeric() && c != '_').any(|w| w == kw), "{kw} left in:\n{out}");
    }
    assert!(out.contains("object unsafe"));
}

#[test]
fn replay_reproduces_run() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.jsonl");
    let trace = trace.to_str().unwrap();
    let prog = corpus("worker_store_pipeline");
    let first = dala(&["run", &prog, "--trace", trace, "--seed", "7", "--dump-heap"]);
    let again = dala(&["replay", &prog, "--replay", trace, "--dump-heap"]);
    assert_eq!(code(&first), code(&again));
    let strip_seed = |s: String| s.lines().filter(|l| !l.starts_with("seed:")).collect::<Vec<_>>().join("\n");
    assert_eq!(strip_seed(stdout(&first)), strip_seed(stdout(&again)));
}

#[test]
fn replay_of_foreign_trace_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.jsonl");
    let trace = trace.to_str().unwrap();
    dala(&["run", &corpus("iso_transfer"), "--trace", trace]);
    let o = dala(&["replay", &corpus("smallest"), "--replay", trace]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("replay mismatch"));
}

#[test]
fn default_seed_is_printed() {
    let out = stdout(&dala(&["run", &corpus("smallest")]));
    assert!(out.starts_with(&format!("seed: {}\n", dala_core::corpus::PINNED_SEED)), "{out}");
}

#[test]
fn parse_errors_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("bad.dala");
    std::fs::write(&f, "let x = in x").unwrap();
    let o = dala(&["check", f.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.dala:1:9: parse error"));
    std::fs::write(&f, "let x = y in x").unwrap();
    let o = dala(&["check", f.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("WF-Var"));
    assert_eq!(code(&dala(&["frobnicate"])), 2);
}

#[test]
fn check_every_step_passes_on_corpus_entry() {
    let o = dala(&["run", &corpus("iso_relay"), "--check-every-step"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn explore_separates_safe_and_mixed() {
    let o = dala(&["explore", &corpus("iso_transfer"), "--report", "json"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["witness_count"], 0);
    let o = dala(&["explore", &corpus("unsafe_race"), "--report", "json"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["witness_count"].as_u64().unwrap() > 0);
    assert_eq!(v["witness_count"], v["unsafe_witnesses"]);
}

#[test]
fn diff_passes_on_corpus_entries() {
    for entry in ["imm_write", "err_sending_local", "worker_store_pipeline"] {
        let o = dala(&["diff", &corpus(entry)]);
        assert_eq!(code(&o), 0, "{entry}: {}", stdout(&o));
    }
}

#[test]
fn json_reports_match_schema() {
    let schema: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root().join("schema/run-report.schema.json")).unwrap()).unwrap();
    let compiled = jsonschema::JSONSchema::compile(&schema).unwrap();
    for entry in ["smallest", "imm_write", "recv_forever", "unsafe_race"] {
        for extra in [&[][..], &["--dump-heap"][..]] {
            let mut args = vec!["run", "--report", "json"];
            let path = corpus(entry);
            args.push(&path);
            args.extend_from_slice(extra);
            let v: serde_json::Value = serde_json::from_slice(&dala(&args).stdout).unwrap();
            assert!(compiled.is_valid(&v), "{entry}: {v}");
        }
    }
}

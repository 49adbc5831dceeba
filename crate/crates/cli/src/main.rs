//! `dala`: parse, check, run, replay, erase, diff and explore Dalarna programs.
//!
//! Exit codes depend only on the outcome: 0 when a run finishes (or a check
//! or analysis passes), 10-13 for ErrN, ErrA, ErrP and ErrC, 20 for a
//! deadlock, 4 when the step bound is hit first, 30 when an analysis finds a
//! theorem violation, and 2 for usage, parse and replay errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value as Json};

use dala_core::corpus::PINNED_SEED;
use dala_core::gradual::{self, Erase};
use dala_core::metatheory;
use dala_core::racecheck;
use dala_core::scheduler::{self, Outcome, SchedError, SchedulePolicy, TerminalKind};
use dala_core::state::{Configuration, ErrorKind};
use dala_core::syntax::{self, Program};

#[derive(Parser)]
#[command(name = "dala", version, about = "Reference interpreter for the Dalarna calculus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and check well-formedness.
    Check(Common),
    /// Run under a seeded scheduler.
    Run(RunArgs),
    /// Re-execute a recorded trace.
    Replay(ReplayArgs),
    /// Print the program with every capability replaced by `unsafe`.
    Erase(Common),
    /// Compare annotated and erased runs in both directions.
    Diff(RunArgs),
    /// Explore schedules exhaustively and look for data races.
    Explore(ExploreArgs),
}

#[derive(Args)]
struct Common {
    file: PathBuf,
    #[arg(long, value_enum, default_value_t = Report::Text)]
    report: Report,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = PINNED_SEED)]
    seed: u64,
    /// Write the trace as JSON lines.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    max_steps: usize,
    /// Check configuration well-formedness before and after every step.
    #[arg(long)]
    check_every_step: bool,
    /// Include the final heap in the report.
    #[arg(long)]
    dump_heap: bool,
}

#[derive(Args)]
struct ReplayArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    replay: PathBuf,
    #[arg(long)]
    dump_heap: bool,
}

#[derive(Args)]
struct ExploreArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 40)]
    max_steps: usize,
    #[arg(long, default_value_t = 100_000)]
    max_schedules: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Report {
    Text,
    Json,
}

const EXIT_OK: u8 = 0;
const EXIT_USAGE: u8 = 2;
const EXIT_STEP_LIMIT: u8 = 4;
const EXIT_DEADLOCK: u8 = 20;
const EXIT_VIOLATION: u8 = 30;

fn exit_for(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::ErrN => 10,
        ErrorKind::ErrA => 11,
        ErrorKind::ErrP => 12,
        ErrorKind::ErrC => 13,
    }
}

fn exit_for_outcome(o: Outcome) -> u8 {
    match o {
        Outcome::Terminal(TerminalKind::AllFinished) => EXIT_OK,
        Outcome::Terminal(TerminalKind::Error(k)) => exit_for(k),
        Outcome::Terminal(TerminalKind::Deadlock) => EXIT_DEADLOCK,
        Outcome::StepLimit => EXIT_STEP_LIMIT,
    }
}

fn outcome_label(o: Outcome) -> String {
    match o {
        Outcome::Terminal(TerminalKind::AllFinished) => "AllFinished".into(),
        Outcome::Terminal(TerminalKind::Error(k)) => format!("Error({k})"),
        Outcome::Terminal(TerminalKind::Deadlock) => "Deadlock".into(),
        Outcome::StepLimit => "StepLimit".into(),
    }
}

/// A failure that ends the command before a report: message and exit code.
struct Fail(String, u8);

fn usage(msg: impl Into<String>) -> Fail {
    Fail(msg.into(), EXIT_USAGE)
}

fn load(path: &Path) -> Result<Program, Fail> {
    let src = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let name = path.display().to_string();
    let p = syntax::parse(&src).map_err(|e| usage(e.render(&name)))?;
    if let Err(ds) = syntax::check_program(&p) {
        let text = ds.iter().map(|d| d.render(&name)).collect::<Vec<_>>().join("\n");
        return Err(usage(text));
    }
    Ok(p)
}

fn emit(report: Report, text: String, data: Json) {
    match report {
        Report::Text => print!("{text}"),
        Report::Json => println!("{}", serde_json::to_string_pretty(&data).expect("report serializes")),
    }
}

fn run_report(seed: Option<u64>, run: &scheduler::Run, dump_heap: bool) -> (String, Json) {
    let mut text = String::new();
    if let Some(s) = seed {
        text.push_str(&format!("seed: {s}\n"));
    }
    let label = outcome_label(run.outcome);
    text.push_str(&format!("terminal: {label}\n"));
    let rule = run.error_rule().map(|r| r.label());
    if let Some(r) = rule {
        text.push_str(&format!("rule: {r}\n"));
    }
    text.push_str(&format!("steps: {}\n", run.trace.len()));
    let snapshot = run.config.snapshot();
    if dump_heap {
        text.push_str(&snapshot.to_json());
        text.push('\n');
    }
    let mut data = json!({
        "seed": seed,
        "terminal": label,
        "rule": rule,
        "steps": run.trace.len(),
        "exit_code": exit_for_outcome(run.outcome),
    });
    if dump_heap {
        data["heap"] = serde_json::to_value(&snapshot).expect("snapshot serializes");
    }
    (text, data)
}

fn sched_fail(e: SchedError) -> Fail {
    match e {
        SchedError::ReplayMismatch { .. } => usage(e.to_string()),
        SchedError::Stuck { .. } | SchedError::Observer { .. } => Fail(e.to_string(), EXIT_VIOLATION),
    }
}

fn cmd_check(a: &Common) -> Result<u8, Fail> {
    load(&a.file)?;
    emit(a.report, "ok\n".into(), json!({ "ok": true, "exit_code": EXIT_OK }));
    Ok(EXIT_OK)
}

fn cmd_run(a: &RunArgs) -> Result<u8, Fail> {
    let p = load(&a.common.file)?;
    let observer: Option<Box<scheduler::Observer>> = if a.check_every_step {
        Some(Box::new(|before: &Configuration, _: &scheduler::StepRecord, after: &Configuration| {
            let r = metatheory::check_preservation(before, after);
            if r.ok() {
                Ok(())
            } else {
                Err(r.to_string())
            }
        }))
    } else {
        None
    };
    let opts = scheduler::RunOptions { max_steps: a.max_steps, observer };
    let run = scheduler::run_with(Configuration::initial(p.body.clone()), SchedulePolicy::Seeded(a.seed), opts)
        .map_err(sched_fail)?;
    if let Some(path) = &a.trace {
        fs::write(path, scheduler::trace_to_jsonl(&run.trace))
            .map_err(|e| usage(format!("{}: {e}", path.display())))?;
    }
    let (text, data) = run_report(Some(a.seed), &run, a.dump_heap);
    emit(a.common.report, text, data);
    Ok(exit_for_outcome(run.outcome))
}

fn cmd_replay(a: &ReplayArgs) -> Result<u8, Fail> {
    let p = load(&a.common.file)?;
    let text = fs::read_to_string(&a.replay).map_err(|e| usage(format!("{}: {e}", a.replay.display())))?;
    let trace = scheduler::trace_from_jsonl(&text).map_err(|e| usage(format!("{}: {e}", a.replay.display())))?;
    let opts = scheduler::RunOptions { max_steps: usize::MAX, observer: None };
    let run = scheduler::run_with(Configuration::initial(p.body.clone()), SchedulePolicy::Replay(trace), opts)
        .map_err(sched_fail)?;
    let (text, data) = run_report(None, &run, a.dump_heap);
    emit(a.common.report, text, data);
    Ok(exit_for_outcome(run.outcome))
}

fn cmd_erase(a: &Common) -> Result<u8, Fail> {
    let p = load(&a.file)?;
    let src = syntax::print_program(&p.erase());
    emit(a.report, src.clone(), json!({ "source": src, "exit_code": EXIT_OK }));
    Ok(EXIT_OK)
}

fn cmd_diff(a: &RunArgs) -> Result<u8, Fail> {
    let p = load(&a.common.file)?;
    let report = gradual::diff_run(&p, a.seed, a.max_steps);
    let code = if report.ok() { EXIT_OK } else { EXIT_VIOLATION };
    let side = |s: &gradual::DirectionSummary| {
        let t = |k: Option<TerminalKind>, none: &str| k.map_or(none.to_string(), |k| outcome_label(Outcome::Terminal(k)));
        format!(
            "leader {}, follower {}, {} steps, {} identical",
            t(s.leader, "StepLimit"),
            t(s.follower, "stopped"),
            s.steps,
            s.same_steps
        )
    };
    let mut text = format!(
        "seed: {}\nannotated first: {}\nerased first: {}\n",
        a.seed,
        side(&report.forward),
        side(&report.backward)
    );
    for v in &report.violations {
        text.push_str(&format!("violation: {v}\n"));
    }
    text.push_str(if report.ok() { "ok\n" } else { "FAILED\n" });
    let mut data = serde_json::to_value(&report).expect("report serializes");
    data["exit_code"] = json!(code);
    emit(a.common.report, text, data);
    Ok(code)
}

fn cmd_explore(a: &ExploreArgs) -> Result<u8, Fail> {
    let p = load(&a.common.file)?;
    let r = racecheck::explore(&p, a.max_steps, a.max_schedules);
    let safe_races = r.witness_count - r.unsafe_witnesses;
    let ok = safe_races == 0 && r.stuck.is_empty();
    let code = if ok { EXIT_OK } else { EXIT_VIOLATION };
    let mut text = format!(
        "traces: {} ({} cut at {} steps{})\nraces: {} ({} involving unsafe)\n",
        r.traces,
        r.truncated,
        a.max_steps,
        if r.bound_exceeded { ", schedule bound reached" } else { "" },
        r.witness_count,
        r.unsafe_witnesses,
    );
    for w in r.witnesses.iter().filter(|w| !w.involves_unsafe).chain(r.witnesses.iter().filter(|w| w.involves_unsafe).take(5)) {
        text.push_str(&format!(
            "  {}.{}: {:?} by {} at step {}, {:?} by {} at step {}{}\n",
            w.loc,
            w.field,
            w.first.kind,
            w.first.thread,
            w.first.step,
            w.second.kind,
            w.second.thread,
            w.second.step,
            if w.involves_unsafe { "" } else { "  (no unsafe object involved)" },
        ));
    }
    for s in &r.stuck {
        text.push_str(&format!("stuck: {s}\n"));
    }
    text.push_str(if ok { "ok\n" } else { "FAILED\n" });
    let mut data = serde_json::to_value(&r).expect("report serializes");
    data["exit_code"] = json!(code);
    emit(a.common.report, text, data);
    Ok(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Check(a) => cmd_check(a),
        Command::Run(a) => cmd_run(a),
        Command::Replay(a) => cmd_replay(a),
        Command::Erase(a) => cmd_erase(a),
        Command::Diff(a) => cmd_diff(a),
        Command::Explore(a) => cmd_explore(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Fail(msg, code)) => {
            eprintln!("{msg}");
            ExitCode::from(code)
        }
    }
}

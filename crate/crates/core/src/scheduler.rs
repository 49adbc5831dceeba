//! Global stepping of configurations, scheduling policies, traces and
//! terminal classification.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reducer::{step_thread, BlockReason, Effect, Rule, StepOutcome};
use crate::state::{Configuration, ErrorKind, Status, Thread, ThreadId};
use crate::syntax::Program;

/// One trace item: which rule fired on which thread.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TraceEntry {
    pub rule: Rule,
    pub thread: ThreadId,
}

pub type Trace = Vec<TraceEntry>;

pub fn trace_to_jsonl(trace: &[TraceEntry]) -> String {
    let mut out = String::new();
    for e in trace {
        out.push_str(&serde_json::to_string(e).expect("trace entry serializes"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Error)]
#[error("line {line}: {source}")]
pub struct TraceParseError {
    pub line: usize,
    #[source]
    pub source: serde_json::Error,
}

pub fn trace_from_jsonl(text: &str) -> Result<Trace, TraceParseError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|source| TraceParseError { line: i + 1, source }))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SchedulePolicy {
    /// Uniform choice among enabled threads from a ChaCha stream.
    Seeded(u64),
    /// Cycles through thread ids, skipping threads that cannot step.
    RoundRobin,
    /// Executes the given trace item by item.
    Replay(Trace),
    /// Always the lowest enabled thread id, with a step bound: the first
    /// schedule in the explorer's depth-first order.
    Enumerate(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TerminalKind {
    AllFinished,
    Error(ErrorKind),
    Deadlock,
}

/// A step as observed by analyses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepRecord {
    pub index: usize,
    pub thread: ThreadId,
    pub rule: Rule,
    pub effect: Option<Effect>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GlobalStep {
    Stepped(Box<Configuration>, Rule, Option<Effect>),
    NotEnabled(BlockReason),
    /// The thread does not exist or the configuration already erred.
    NotLive,
    /// No rule applies to the thread's redex.
    Stuck(String),
}

/// Removes threads that have reduced to a value.
pub fn drop_finished(cfg: &mut Configuration) {
    cfg.threads.retain(|t| t.term.as_value().is_none());
}

/// Applies one reduction of thread `tid`.
pub fn global_step(cfg: &Configuration, tid: ThreadId) -> GlobalStep {
    if cfg.status != Status::Running {
        return GlobalStep::NotLive;
    }
    let Some(pos) = cfg.threads.iter().position(|t| t.id == tid) else {
        return GlobalStep::NotLive;
    };
    match step_thread(&cfg.heap, &cfg.ids, &cfg.threads[pos]) {
        StepOutcome::Stepped(step) => {
            let mut threads: Vec<Thread> = Vec::with_capacity(cfg.threads.len() + 1);
            let mut produced = step.threads.into_iter();
            for (i, t) in cfg.threads.iter().enumerate() {
                if i == pos {
                    threads.push(produced.next().expect("stepped thread"));
                } else {
                    threads.push(t.clone());
                }
            }
            threads.extend(produced);
            let mut next = Configuration { heap: step.heap, threads, status: Status::Running, ids: step.ids };
            drop_finished(&mut next);
            GlobalStep::Stepped(Box::new(next), step.rule, step.effect)
        }
        StepOutcome::Blocked(reason) => GlobalStep::NotEnabled(reason),
        StepOutcome::Erred(kind, rule) => {
            let next = Configuration {
                heap: cfg.heap.clone(),
                threads: Vec::new(),
                status: Status::Error(kind, rule),
                ids: cfg.ids.clone(),
            };
            GlobalStep::Stepped(Box::new(next), rule, None)
        }
        StepOutcome::Finished(_) => GlobalStep::Stuck("thread is already a value".to_string()),
        StepOutcome::Stuck(reason) => GlobalStep::Stuck(reason),
    }
}

/// Threads whose next step is not blocked on a channel.
pub fn enabled_threads(cfg: &Configuration) -> Vec<ThreadId> {
    if cfg.status != Status::Running {
        return Vec::new();
    }
    cfg.threads
        .iter()
        .filter(|t| !matches!(step_thread(&cfg.heap, &cfg.ids, t), StepOutcome::Blocked(_)))
        .map(|t| t.id)
        .collect()
}

/// Classifies `cfg` if it is terminal.
pub fn terminal_kind(cfg: &Configuration) -> Option<TerminalKind> {
    match cfg.status {
        Status::Error(kind, _) => Some(TerminalKind::Error(kind)),
        Status::Running if cfg.threads.is_empty() => Some(TerminalKind::AllFinished),
        Status::Running if enabled_threads(cfg).is_empty() => Some(TerminalKind::Deadlock),
        Status::Running => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Terminal(TerminalKind),
    /// The step bound was reached first.
    StepLimit,
}

#[derive(Debug, Clone)]
pub struct Run {
    pub outcome: Outcome,
    pub config: Configuration,
    pub trace: Trace,
    pub records: Vec<StepRecord>,
}

impl Run {
    pub fn terminal(&self) -> Option<TerminalKind> {
        match self.outcome {
            Outcome::Terminal(k) => Some(k),
            Outcome::StepLimit => None,
        }
    }

    /// The rule that put the configuration into its error state, if any.
    pub fn error_rule(&self) -> Option<Rule> {
        match self.config.status {
            Status::Error(_, r) => Some(r),
            Status::Running => None,
        }
    }
}

#[derive(Debug, Clone, Error)]
pub enum SchedError {
    #[error("step {step}: thread {thread} is stuck: {reason}")]
    Stuck { step: usize, thread: ThreadId, reason: String },
    #[error("replay mismatch at step {step}: {detail}")]
    ReplayMismatch { step: usize, detail: String },
    #[error("step {step}: {detail}")]
    Observer { step: usize, detail: String },
}

/// Called with the configurations before and after every step.
pub type Observer<'a> = dyn FnMut(&Configuration, &StepRecord, &Configuration) -> Result<(), String> + 'a;

pub struct RunOptions<'a> {
    pub max_steps: usize,
    pub observer: Option<Box<Observer<'a>>>,
}

impl Default for RunOptions<'_> {
    fn default() -> Self {
        RunOptions { max_steps: 10_000, observer: None }
    }
}

pub fn run(p: &Program, policy: SchedulePolicy) -> Result<Run, SchedError> {
    run_with(Configuration::initial(p.body.clone()), policy, RunOptions::default())
}

pub fn run_with(
    mut cfg: Configuration,
    policy: SchedulePolicy,
    mut opts: RunOptions<'_>,
) -> Result<Run, SchedError> {
    drop_finished(&mut cfg);
    let mut rng = match policy {
        SchedulePolicy::Seeded(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        _ => None,
    };
    let max_steps = match policy {
        SchedulePolicy::Enumerate(bound) => bound.min(opts.max_steps),
        _ => opts.max_steps,
    };
    let mut last_rr: Option<ThreadId> = None;
    let mut trace = Vec::new();
    let mut records = Vec::new();
    loop {
        let step = trace.len();
        let enabled = enabled_threads(&cfg);
        let terminal = match cfg.status {
            Status::Error(kind, _) => Some(TerminalKind::Error(kind)),
            Status::Running if cfg.threads.is_empty() => Some(TerminalKind::AllFinished),
            Status::Running if enabled.is_empty() => Some(TerminalKind::Deadlock),
            Status::Running => None,
        };
        if let SchedulePolicy::Replay(t) = &policy {
            match (terminal.is_some(), step < t.len()) {
                (true, true) => {
                    return Err(SchedError::ReplayMismatch {
                        step,
                        detail: format!("configuration is terminal but {} trace items remain", t.len() - step),
                    })
                }
                (false, false) => {
                    return Err(SchedError::ReplayMismatch {
                        step,
                        detail: "trace ended before a terminal configuration".to_string(),
                    })
                }
                _ => {}
            }
        }
        if let Some(kind) = terminal {
            return Ok(Run { outcome: Outcome::Terminal(kind), config: cfg, trace, records });
        }
        if step >= max_steps {
            return Ok(Run { outcome: Outcome::StepLimit, config: cfg, trace, records });
        }
        let tid = match &policy {
            SchedulePolicy::Seeded(_) => {
                let rng = rng.as_mut().expect("seeded");
                enabled[rng.gen_range(0..enabled.len())]
            }
            SchedulePolicy::RoundRobin => {
                let next = match last_rr {
                    Some(last) => enabled.iter().copied().filter(|t| *t > last).min(),
                    None => None,
                };
                let tid = next.unwrap_or_else(|| *enabled.iter().min().expect("non-empty"));
                last_rr = Some(tid);
                tid
            }
            SchedulePolicy::Enumerate(_) => *enabled.iter().min().expect("non-empty"),
            SchedulePolicy::Replay(t) => {
                let want = t[step];
                if !enabled.contains(&want.thread) {
                    return Err(SchedError::ReplayMismatch {
                        step,
                        detail: format!("thread {} is not enabled", want.thread),
                    });
                }
                want.thread
            }
        };
        let (next, rule, effect) = match global_step(&cfg, tid) {
            GlobalStep::Stepped(next, rule, effect) => (*next, rule, effect),
            GlobalStep::Stuck(reason) => return Err(SchedError::Stuck { step, thread: tid, reason }),
            GlobalStep::NotEnabled(_) | GlobalStep::NotLive => {
                unreachable!("enabled thread {tid} did not step")
            }
        };
        if let SchedulePolicy::Replay(t) = &policy {
            if t[step].rule != rule {
                return Err(SchedError::ReplayMismatch {
                    step,
                    detail: format!("expected {} on {tid}, but {rule} fired", t[step].rule),
                });
            }
        }
        let record = StepRecord { index: step, thread: tid, rule, effect };
        if let Some(obs) = opts.observer.as_mut() {
            obs(&cfg, &record, &next).map_err(|detail| SchedError::Observer { step, detail })?;
        }
        trace.push(TraceEntry { rule, thread: tid });
        records.push(record);
        cfg = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::parse;

    fn entries(trace: &[TraceEntry]) -> Vec<(&'static str, u64)> {
        trace.iter().map(|e| (e.rule.label(), e.thread.0)).collect()
    }

    #[test]
    fn smallest_program_trace() {
        let p = parse("let x = object imm { } in x").unwrap();
        let r = run(&p, SchedulePolicy::Seeded(0)).unwrap();
        assert_eq!(r.terminal(), Some(TerminalKind::AllFinished));
        assert_eq!(entries(&r.trace), vec![("R-New", 0), ("R-Let", 0), ("R-Var", 0)]);
        assert_eq!(r.config.heap.locs.len(), 1);
    }

    #[test]
    fn recv_on_own_channel_deadlocks() {
        let p = parse("let c = spawn ch { ch } in let m = recv(c) in m").unwrap();
        let r = run(&p, SchedulePolicy::RoundRobin).unwrap();
        assert_eq!(r.terminal(), Some(TerminalKind::Deadlock));
    }

    #[test]
    fn trace_jsonl_round_trip() {
        let t = vec![TraceEntry { rule: Rule::RNew, thread: ThreadId(0) }];
        let text = trace_to_jsonl(&t);
        assert_eq!(text, "{\"rule\":\"R-New\",\"thread\":0}\n");
        assert_eq!(trace_from_jsonl(&text).unwrap(), t);
    }

    #[test]
    fn error_collapses_configuration() {
        let src = "let c = spawn ch { let y = recv(ch) in y } in \
                   let o = object imm { } in let x = consume o in let z = consume o in z";
        let p = parse(src).unwrap();
        let r = run(&p, SchedulePolicy::RoundRobin).unwrap();
        assert_eq!(r.terminal(), Some(TerminalKind::Error(ErrorKind::ErrA)));
        assert!(r.config.threads.is_empty());
        assert_eq!(r.trace.last().unwrap().rule, Rule::EConsume);
    }
}

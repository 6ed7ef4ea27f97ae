//! Scenario runs, offline trace checks, and the mapping to exit codes.

use std::collections::BTreeMap;
use std::path::PathBuf;

use otm_core::action::Outcome;
use otm_core::engine::Machine;
use otm_core::history::History;
use otm_core::ids::{ThreadId, VarId};
use otm_core::opacity::{canonical_graph, forest_red_check, opaque, Verdict};
use otm_core::scheduler::{explore, run, Limits, Policy, RunResult, RunVerdict};
use otm_core::stdlib::scenarios::{self, Params, Scenario, ScenarioError};
use otm_core::value::Value;
use serde::Serialize;
use thiserror::Error;

use crate::{dot, trace};

pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const BUDGET: i32 = 3;
    pub const NOT_OPAQUE: i32 = 4;
    pub const UNEXPECTED_BLOCK: i32 = 5;
    pub const TRACE: i32 = 6;
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Trace(#[from] trace::TraceError),
    #[error("{path}: {source}")]
    Write { path: String, source: std::io::Error },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Scenario(_) => exit::USAGE,
            RunError::Trace(_) | RunError::Write { .. } => exit::TRACE,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunSpec {
    pub scenario: String,
    pub params: Params,
    pub policy: Policy,
    pub limits: Limits,
    pub input: String,
    pub check_opacity: bool,
    pub trace: Option<PathBuf>,
    pub emit_opg: Option<PathBuf>,
}

impl RunSpec {
    pub fn new(scenario: &str, policy: Policy) -> Self {
        Self {
            scenario: scenario.to_string(),
            params: Params::new(),
            policy,
            limits: Limits::default(),
            input: String::new(),
            check_opacity: false,
            trace: None,
            emit_opg: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MainOutcome {
    Returned(Value),
    Threw(Value),
    Running,
}

/// Opacity findings for one history.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OpacityReport {
    pub consistent: bool,
    #[serde(flatten)]
    pub verdict: Verdict,
    /// Red forest on the order-inverting edges of the canonical graph.
    pub forest: bool,
}

pub fn check_history(h: &History) -> OpacityReport {
    let verdict = opaque(h);
    let forest = canonical_graph(h).is_ok_and(|g| forest_red_check(&g.inverting_view()));
    OpacityReport { consistent: h.consistent(), verdict, forest }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SingleReport {
    pub scenario: String,
    pub params: BTreeMap<String, i64>,
    pub policy: Policy,
    pub verdict: RunVerdict,
    pub blocking_expected: bool,
    pub steps: u64,
    pub events: usize,
    pub commits: usize,
    pub aborts: usize,
    pub merges: usize,
    pub restarts: u32,
    pub outcome: MainOutcome,
    pub heap: BTreeMap<String, Value>,
    pub output: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub opacity: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub opacity_detail: Option<OpacityReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FinalState {
    pub verdict: RunVerdict,
    pub heap: BTreeMap<String, Value>,
    pub outcome: MainOutcome,
    pub output: String,
    pub commits: usize,
    pub merges: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExploreReport {
    pub scenario: String,
    pub params: BTreeMap<String, i64>,
    pub policy: Policy,
    pub blocking_expected: bool,
    pub states: usize,
    pub partial: bool,
    pub terminals: Vec<FinalState>,
    pub verdicts: BTreeMap<String, usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub opacity: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Report {
    Single(SingleReport),
    Explore(ExploreReport),
}

pub fn verdict_name(v: RunVerdict) -> &'static str {
    match v {
        RunVerdict::Finished => "finished",
        RunVerdict::QuiescentBlocked => "quiescent-blocked",
        RunVerdict::StepBudgetExhausted => "step-budget-exhausted",
    }
}

/// Exit status as a function of run verdict, expected blocking, and opacity.
pub fn exit_code(verdict: RunVerdict, blocking_expected: bool, opacity: Option<bool>) -> i32 {
    if opacity == Some(false) {
        return exit::NOT_OPAQUE;
    }
    match verdict {
        RunVerdict::Finished => exit::OK,
        RunVerdict::QuiescentBlocked if blocking_expected => exit::OK,
        RunVerdict::QuiescentBlocked => exit::UNEXPECTED_BLOCK,
        RunVerdict::StepBudgetExhausted => exit::BUDGET,
    }
}

impl Report {
    pub fn exit_code(&self) -> i32 {
        match self {
            Report::Single(r) => exit_code(r.verdict, r.blocking_expected, r.opacity),
            Report::Explore(r) => {
                let codes: Vec<i32> = r.terminals.iter().map(|t| exit_code(t.verdict, r.blocking_expected, None)).collect();
                if r.opacity == Some(false) {
                    exit::NOT_OPAQUE
                } else if r.partial || codes.contains(&exit::BUDGET) {
                    exit::BUDGET
                } else if codes.contains(&exit::UNEXPECTED_BLOCK) {
                    exit::UNEXPECTED_BLOCK
                } else {
                    exit::OK
                }
            }
        }
    }
}

fn labelled_heap(m: &Machine, labels: &[String]) -> BTreeMap<String, Value> {
    let name = |r: VarId| Scenario::label_of(labels, r).map_or_else(|| r.to_string(), str::to_string);
    m.memory().heap.iter().map(|(r, v)| (name(*r), v.clone())).collect()
}

fn main_outcome(m: &Machine) -> MainOutcome {
    match m.finished().get(&ThreadId(0)) {
        Some(Outcome::Returned(v)) => MainOutcome::Returned(v.clone()),
        Some(Outcome::Threw(e)) => MainOutcome::Threw(e.clone()),
        _ => MainOutcome::Running,
    }
}

fn write_side_files(spec: &RunSpec, h: &History) -> Result<(), RunError> {
    if let Some(path) = &spec.trace {
        trace::save(path, h)?;
    }
    if let Some(path) = &spec.emit_opg {
        let g = canonical_graph(h).map(|g| dot::render(&g)).unwrap_or_default();
        std::fs::write(path, g).map_err(|source| RunError::Write { path: path.display().to_string(), source })?;
    }
    Ok(())
}

fn single(spec: &RunSpec, scenario: &Scenario, params: &Params, r: &RunResult) -> Result<SingleReport, RunError> {
    let labels = scenario.labels(params)?;
    let detail = spec.check_opacity.then(|| check_history(r.history()));
    write_side_files(spec, r.history())?;
    Ok(SingleReport {
        scenario: scenario.name.to_string(),
        params: params.iter().map(|(k, v)| (k.to_string(), v)).collect(),
        policy: spec.policy,
        verdict: r.verdict,
        blocking_expected: scenario.expects_blocking(params)?,
        steps: r.steps,
        events: r.history().len(),
        commits: r.commits(),
        aborts: r.aborts(),
        merges: r.merges(),
        restarts: r.machine.restarts(),
        outcome: main_outcome(&r.machine),
        heap: labelled_heap(&r.machine, &labels),
        output: r.machine.output().to_string(),
        opacity: detail.as_ref().map(|d| d.verdict.opaque),
        opacity_detail: detail,
    })
}

/// Run a registered scenario. Under the exhaustive policy every schedule is
/// explored; `--trace` and `--emit-opg` then describe the first terminal found.
pub fn run_scenario(spec: &RunSpec) -> Result<Report, RunError> {
    let scenario = scenarios::find(&spec.scenario)?;
    let params = scenario.resolve(&spec.params)?;
    let program = (scenario.build)(&params);
    if spec.policy != Policy::Exhaustive {
        let r = run(&program, spec.policy, &spec.input, spec.limits);
        return Ok(Report::Single(single(spec, scenario, &params, &r)?));
    }
    let e = explore(&program, &spec.input, spec.limits);
    let labels = scenario.labels(&params)?;
    if let Some(first) = e.terminals.first() {
        write_side_files(spec, first.history())?;
    }
    let mut verdicts = BTreeMap::new();
    for t in &e.terminals {
        *verdicts.entry(verdict_name(t.verdict).to_string()).or_insert(0) += 1;
    }
    let opacity = spec.check_opacity.then(|| e.terminals.iter().all(|t| opaque(t.history()).opaque));
    Ok(Report::Explore(ExploreReport {
        scenario: scenario.name.to_string(),
        params: params.iter().map(|(k, v)| (k.to_string(), v)).collect(),
        policy: spec.policy,
        blocking_expected: scenario.expects_blocking(&params)?,
        states: e.states,
        partial: e.partial,
        terminals: e
            .terminals
            .iter()
            .map(|t| FinalState {
                verdict: t.verdict,
                heap: labelled_heap(&t.machine, &labels),
                outcome: main_outcome(&t.machine),
                output: t.machine.output().to_string(),
                commits: t.commits(),
                merges: t.merges(),
            })
            .collect(),
        verdicts,
        opacity,
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckReport {
    pub events: usize,
    pub transactions: usize,
    #[serde(flatten)]
    pub opacity: OpacityReport,
}

impl CheckReport {
    pub fn exit_code(&self) -> i32 {
        if self.opacity.verdict.opaque {
            exit::OK
        } else {
            exit::NOT_OPAQUE
        }
    }
}

pub fn check_trace(path: &std::path::Path, emit_opg: Option<&std::path::Path>) -> Result<CheckReport, RunError> {
    let h = trace::load(path)?;
    if let Some(out) = emit_opg {
        let g = canonical_graph(&h).map(|g| dot::render(&g)).unwrap_or_default();
        std::fs::write(out, g).map_err(|source| RunError::Write { path: out.display().to_string(), source })?;
    }
    Ok(CheckReport { events: h.len(), transactions: h.transactions().len(), opacity: check_history(&h) })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScenarioInfo {
    pub name: &'static str,
    pub summary: &'static str,
    pub params: BTreeMap<&'static str, i64>,
}

pub fn list() -> Vec<ScenarioInfo> {
    scenarios::all()
        .iter()
        .map(|s| ScenarioInfo {
            name: s.name,
            summary: s.summary,
            params: s.params.iter().map(|p| (p.name, p.default)).collect(),
        })
        .collect()
}

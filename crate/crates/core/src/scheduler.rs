//! Scheduling policies: single reproducible runs and bounded exhaustive exploration.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::Io;
use crate::engine::{Choice, Config, Machine};
use crate::history::{History, Op};
use crate::ids::ThreadId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    /// Rotate over threads, lowest thread id first, then rule name.
    RoundRobin,
    SeededRandom(u64),
    /// In a single run, always the first enabled choice; see [`explore`] for
    /// the full enumeration.
    Exhaustive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
pub enum LimitError {
    #[error("step budget must be positive")]
    ZeroSteps,
    #[error("restart budget must be positive")]
    ZeroRestarts,
}

/// Step and restart budgets. Steps are charged per history event, at least
/// one per rule application, so a history never outgrows the step budget.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Limits {
    max_steps: u64,
    max_restarts: u32,
}

impl Limits {
    pub fn new(max_steps: u64, max_restarts: u32) -> Result<Self, LimitError> {
        if max_steps == 0 {
            return Err(LimitError::ZeroSteps);
        }
        if max_restarts == 0 {
            return Err(LimitError::ZeroRestarts);
        }
        Ok(Self { max_steps, max_restarts })
    }

    pub fn max_steps(&self) -> u64 {
        self.max_steps
    }

    pub fn max_restarts(&self) -> u32 {
        self.max_restarts
    }

    /// Engine configuration for these limits.
    pub fn config(&self) -> Config {
        Config { max_restarts: self.max_restarts, ..Config::default() }
    }
}

impl Default for Limits {
    fn default() -> Self {
        Self { max_steps: 10_000, max_restarts: 64 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunVerdict {
    Finished,
    QuiescentBlocked,
    StepBudgetExhausted,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub machine: Machine,
    pub verdict: RunVerdict,
    /// Budget units consumed.
    pub steps: u64,
    /// The choices taken, in order; replaying them reproduces the run.
    pub choices: Vec<Choice>,
}

impl RunResult {
    pub fn history(&self) -> &History {
        self.machine.history()
    }

    fn count(&self, f: impl Fn(&Op) -> bool) -> usize {
        self.history().events().iter().filter(|e| f(&e.op)).count()
    }

    pub fn commits(&self) -> usize {
        self.count(|op| *op == Op::Commit)
    }

    pub fn aborts(&self) -> usize {
        self.count(|op| *op == Op::Abort)
    }

    pub fn merges(&self) -> usize {
        self.count(|op| matches!(op, Op::Merge(_)))
    }
}

fn charge(m: &Machine, c: Choice) -> u64 {
    m.events_needed(c).max(1) as u64
}

fn verdict_of(m: &Machine) -> RunVerdict {
    if m.is_finished() {
        RunVerdict::Finished
    } else {
        RunVerdict::QuiescentBlocked
    }
}

/// Run `program` under `policy` until it finishes, blocks, or exhausts the budget.
pub fn run(program: &Io, policy: Policy, input: &str, limits: Limits) -> RunResult {
    let mut m = Machine::with_config(program.clone(), input, limits.config());
    let mut rng = match policy {
        Policy::SeededRandom(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        _ => None,
    };
    let mut last: Option<ThreadId> = None;
    let mut steps = 0u64;
    let mut choices = Vec::new();
    loop {
        let enabled = m.enabled();
        if enabled.is_empty() {
            let verdict = verdict_of(&m);
            return RunResult { machine: m, verdict, steps, choices };
        }
        let pick = match (policy, rng.as_mut()) {
            (Policy::SeededRandom(_), Some(rng)) => {
                let i = ((rng.next_u64() as u128 * enabled.len() as u128) >> 64) as usize;
                enabled[i]
            }
            (Policy::RoundRobin, _) => *enabled
                .iter()
                .find(|c| last.is_none_or(|l| c.thread > l))
                .unwrap_or(&enabled[0]),
            _ => enabled[0],
        };
        let cost = charge(&m, pick);
        if steps + cost > limits.max_steps {
            return RunResult { machine: m, verdict: RunVerdict::StepBudgetExhausted, steps, choices };
        }
        m.apply(pick);
        steps += cost;
        last = Some(pick.thread);
        choices.push(pick);
    }
}

/// Replay a recorded choice sequence.
pub fn replay(program: &Io, input: &str, limits: Limits, choices: &[Choice]) -> Result<Machine, crate::engine::EngineError> {
    let mut m = Machine::with_config(program.clone(), input, limits.config());
    for &c in choices {
        m.step(c)?;
    }
    Ok(m)
}

#[derive(Clone, Debug)]
pub struct Exploration {
    /// One run per distinct terminal state, in discovery order.
    pub terminals: Vec<RunResult>,
    /// Set when the state budget ran out before the search completed.
    pub partial: bool,
    /// Distinct states expanded.
    pub states: usize,
}

impl Exploration {
    pub fn all(&self, f: impl Fn(&RunResult) -> bool) -> bool {
        self.terminals.iter().all(f)
    }
}

/// Default cap on expanded states for [`explore`].
pub const MAX_STATES: usize = 2_000_000;

/// Depth-first enumeration of every choice sequence within `limits`,
/// memoized on state fingerprints.
pub fn explore(program: &Io, input: &str, limits: Limits) -> Exploration {
    explore_bounded(program, input, limits, MAX_STATES)
}

pub fn explore_bounded(program: &Io, input: &str, limits: Limits, max_states: usize) -> Exploration {
    let root = Machine::with_config(program.clone(), input, limits.config());
    // Fingerprint to the smallest step count at which it was expanded.
    let mut seen: BTreeMap<u128, u64> = BTreeMap::new();
    let mut terminal_seen: BTreeMap<(u128, RunVerdict), ()> = BTreeMap::new();
    let mut terminals = Vec::new();
    let mut partial = false;
    let mut stack: Vec<(Machine, u64, Vec<Choice>)> = alloc::vec![(root, 0, Vec::new())];
    while let Some((m, steps, path)) = stack.pop() {
        let fp = m.fingerprint();
        if seen.get(&fp).is_some_and(|&s| s <= steps) {
            continue;
        }
        if seen.len() >= max_states && !seen.contains_key(&fp) {
            partial = true;
            continue;
        }
        seen.insert(fp, steps);
        let enabled = m.enabled();
        let mut children = Vec::new();
        let mut over_budget = false;
        for &c in &enabled {
            let cost = charge(&m, c);
            if steps + cost > limits.max_steps {
                over_budget = true;
                continue;
            }
            children.push((c, cost));
        }
        // A choice that does not fit the budget ends that schedule here.
        if enabled.is_empty() || over_budget {
            let verdict = if enabled.is_empty() { verdict_of(&m) } else { RunVerdict::StepBudgetExhausted };
            if terminal_seen.insert((fp, verdict), ()).is_none() {
                terminals.push(RunResult { machine: m.clone(), verdict, steps, choices: path.clone() });
            }
            if children.is_empty() {
                continue;
            }
        }
        // Push in reverse so the lowest choice is explored first.
        for &(c, cost) in children.iter().rev() {
            let mut next = m.clone();
            next.apply(c);
            let mut p = path.clone();
            p.push(c);
            stack.push((next, steps + cost, p));
        }
    }
    Exploration { terminals, partial, states: seen.len() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::{Env, Itm};
    use crate::value::Value;
    use alloc::collections::BTreeSet;

    fn limits(steps: u64) -> Limits {
        Limits::new(steps, 8).unwrap()
    }

    #[test]
    fn limits_must_be_positive() {
        assert_eq!(Limits::new(0, 1), Err(LimitError::ZeroSteps));
        assert_eq!(Limits::new(1, 0), Err(LimitError::ZeroRestarts));
    }

    #[test]
    fn empty_program_finishes() {
        let r = run(&Io::ret(()), Policy::RoundRobin, "", limits(10));
        assert_eq!(r.verdict, RunVerdict::Finished);
        assert!(r.history().is_empty());
        assert_eq!(r.steps, 0);
    }

    fn two_increments() -> Io {
        fn inc(e: &Env, _: Value) -> Io {
            Itm::read(e.var(0))
                .bind(e.clone(), |e, v| Itm::write(e.var(0), v.as_int().unwrap() + 1))
                .atomically()
        }
        fn main(_: &Env, r: Value) -> Io {
            let e = Env::values([r]);
            inc(&e, Value::Unit).fork().then(inc(&e, Value::Unit))
        }
        Itm::new_var(0).atomically().bind(Env::empty(), main)
    }

    #[test]
    fn seeded_runs_are_deterministic() {
        let a = run(&two_increments(), Policy::SeededRandom(9), "", limits(200));
        let b = run(&two_increments(), Policy::SeededRandom(9), "", limits(200));
        assert_eq!(a.history(), b.history());
        assert_eq!(a.choices, b.choices);
        let replayed = replay(&two_increments(), "", limits(200), &a.choices).unwrap();
        assert_eq!(replayed.history(), a.history());
    }

    #[test]
    fn budget_bounds_history() {
        let r = run(&two_increments(), Policy::RoundRobin, "", limits(3));
        assert_eq!(r.verdict, RunVerdict::StepBudgetExhausted);
        assert!(r.history().len() as u64 <= 3);
    }

    #[test]
    fn round_robin_rotates() {
        let r = run(&two_increments(), Policy::RoundRobin, "", limits(200));
        assert_eq!(r.verdict, RunVerdict::Finished);
        let threads: Vec<u64> = r.choices.iter().map(|c| c.thread.0).collect();
        // Once both threads exist they alternate while both have work.
        let first_t1 = threads.iter().position(|&t| t == 1).unwrap();
        assert_eq!(threads[first_t1 + 1], 0);
    }

    #[test]
    fn single_threaded_program_has_one_terminal() {
        let prog = Itm::new_var(1).atomically();
        let x = explore(&prog, "", limits(50));
        assert_eq!(x.terminals.len(), 1);
        assert!(!x.partial);
    }

    #[test]
    fn serializable_increments() {
        let x = explore(&two_increments(), "", limits(200));
        assert!(!x.partial);
        let heaps: BTreeSet<_> = x.terminals.iter().map(|r| r.machine.memory().heap.clone()).collect();
        assert_eq!(heaps.len(), 1);
        assert_eq!(heaps.first().unwrap()[&crate::ids::VarId(0)], Value::Int(2));
        assert!(x.all(|r| r.verdict == RunVerdict::Finished));
    }

    #[test]
    fn state_budget_sets_partial() {
        let x = explore_bounded(&two_increments(), "", limits(200), 3);
        assert!(x.partial);
    }
}

//! The labelled transition system: thread states, enabled rules, single
//! steps, and the commit/abort multicast.

mod fingerprint;
mod isolated;

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{Action, Code, Frame, Io, Kind, KindError, Node, Outcome, TermRule};
use crate::history::{History, Op};
use crate::ids::{IdGen, ThreadId, TxId, VarId};
use crate::memory::MemoryState;
use crate::value::Value;

pub use isolated::{DIVERGED, INVALID_LOCATION};

/// Rule names. Variants are declared in lexicographic order of their names,
/// so the derived `Ord` is the tie-break order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    Abort,
    BindEx,
    BindVal,
    CatchEx,
    CatchVal,
    Commit,
    Eval,
    ForkIo,
    ForkT,
    InChar,
    Isolated,
    New,
    OutChar,
    Rollback,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::Abort => "abort",
            Rule::BindEx => "bind-ex",
            Rule::BindVal => "bind-val",
            Rule::CatchEx => "catch-ex",
            Rule::CatchVal => "catch-val",
            Rule::Commit => "commit",
            Rule::Eval => "eval",
            Rule::ForkIo => "fork-io",
            Rule::ForkT => "fork-t",
            Rule::InChar => "in-char",
            Rule::Isolated => "isolated",
            Rule::New => "new",
            Rule::OutChar => "out-char",
            Rule::Rollback => "rollback",
        }
    }
}

impl From<TermRule> for Rule {
    fn from(r: TermRule) -> Self {
        match r {
            TermRule::Eval => Rule::Eval,
            TermRule::BindVal => Rule::BindVal,
            TermRule::BindEx => Rule::BindEx,
            TermRule::CatchVal => Rule::CatchVal,
            TermRule::CatchEx => Rule::CatchEx,
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A rule instance the scheduler may pick.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Choice {
    pub thread: ThreadId,
    pub rule: Rule,
}

impl fmt::Display for Choice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.thread, self.rule)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "label", rename_all = "snake_case")]
pub enum TransitionLabel {
    Tau,
    New { tx: TxId },
    Co { tx: TxId },
    Ab { tx: TxId, thread: ThreadId, exc: Value },
    AbBar { tx: TxId, thread: ThreadId, exc: Value },
    In { c: char },
    Out { c: char },
    /// Every participant was blocked; the transaction was rolled back and restarted.
    Restart { tx: TxId },
}

impl TransitionLabel {
    pub fn transaction(&self) -> Option<TxId> {
        match *self {
            TransitionLabel::New { tx }
            | TransitionLabel::Co { tx }
            | TransitionLabel::Ab { tx, .. }
            | TransitionLabel::AbBar { tx, .. }
            | TransitionLabel::Restart { tx } => Some(tx),
            _ => None,
        }
    }
}

/// Values observed when a blocked transaction was rolled back; the restart
/// waits until one of them changes.
pub type Guard = BTreeMap<VarId, Option<Value>>;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Thread {
    Plain {
        code: Code,
        guard: Option<Guard>,
    },
    InTx {
        tx: TxId,
        code: Code,
        /// Continuation `N` to resume after the transaction.
        saved: Vec<Frame>,
        /// The `atomic` action this thread started, for restarts; `None` for
        /// threads forked inside the transaction.
        origin: Option<Action>,
    },
}

impl Thread {
    pub fn code(&self) -> &Code {
        match self {
            Thread::Plain { code, .. } | Thread::InTx { code, .. } => code,
        }
    }

    fn code_mut(&mut self) -> &mut Code {
        match self {
            Thread::Plain { code, .. } | Thread::InTx { code, .. } => code,
        }
    }

    pub fn tx(&self) -> Option<TxId> {
        match self {
            Thread::InTx { tx, .. } => Some(*tx),
            Thread::Plain { .. } => None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct TxInfo {
    /// Locations accessed by the transaction or anything merged into it.
    pub touched: BTreeSet<VarId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Config {
    /// Reductions allowed inside one isolated block before it is abandoned
    /// with a `diverged` exception.
    pub isolated_fuel: u64,
    /// Transaction restarts allowed before blocked transactions stay blocked.
    pub max_restarts: u32,
}

impl Default for Config {
    fn default() -> Self {
        Self { isolated_fuel: 100_000, max_restarts: 64 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("choice {0} is not enabled")]
    NotEnabled(Choice),
    #[error("thread {0} is not inside a transaction")]
    NotInTransaction(ThreadId),
    #[error(transparent)]
    Kind(#[from] KindError),
}

/// What a step did.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepInfo {
    pub label: TransitionLabel,
    /// Per-participant labels of a multicast (commit, abort, restart).
    pub broadcast: Vec<(ThreadId, TransitionLabel)>,
    /// History events appended by the step.
    pub events: usize,
}

impl StepInfo {
    fn single(label: TransitionLabel, events: usize) -> Self {
        Self { label, broadcast: Vec::new(), events }
    }
}

#[derive(Clone, Debug)]
pub struct Machine {
    memory: MemoryState,
    threads: BTreeMap<ThreadId, Thread>,
    finished: BTreeMap<ThreadId, Outcome>,
    txs: BTreeMap<TxId, TxInfo>,
    ids: IdGen,
    input: VecDeque<char>,
    output: String,
    history: History,
    restarts: u32,
    config: Config,
}

/// Result of running an isolated body against a copy of memory.
struct Trial {
    outcome: Outcome,
    memory: MemoryState,
    ops: Vec<(TxId, Op)>,
    touched: BTreeSet<VarId>,
    ids: IdGen,
}

impl Machine {
    pub fn new(program: Io, input: &str) -> Self {
        Self::with_config(program, input, Config::default())
    }

    pub fn with_config(program: Io, input: &str, config: Config) -> Self {
        let ids = IdGen::new();
        let main = ids.thread();
        let mut threads = BTreeMap::new();
        threads.insert(main, Thread::Plain { code: Code::new(program.into_action()), guard: None });
        let mut m = Self {
            memory: MemoryState::new(),
            threads,
            finished: BTreeMap::new(),
            txs: BTreeMap::new(),
            ids,
            input: input.chars().collect(),
            output: String::new(),
            history: History::new(),
            restarts: 0,
            config,
        };
        m.reap();
        m
    }

    pub fn memory(&self) -> &MemoryState {
        &self.memory
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn into_history(self) -> History {
        self.history
    }

    pub fn output(&self) -> &str {
        &self.output
    }

    pub fn remaining_input(&self) -> String {
        self.input.iter().collect()
    }

    pub fn threads(&self) -> &BTreeMap<ThreadId, Thread> {
        &self.threads
    }

    pub fn thread(&self, t: ThreadId) -> Option<&Thread> {
        self.threads.get(&t)
    }

    /// Outcomes of threads that ran to completion.
    pub fn finished(&self) -> &BTreeMap<ThreadId, Outcome> {
        &self.finished
    }

    pub fn restarts(&self) -> u32 {
        self.restarts
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    /// Every thread has terminated.
    pub fn is_finished(&self) -> bool {
        self.threads.is_empty()
    }

    pub fn transactions(&self) -> &BTreeMap<TxId, TxInfo> {
        &self.txs
    }

    /// Participants of `k`, in thread order.
    pub fn participants(&self, k: TxId) -> Vec<ThreadId> {
        self.threads.iter().filter(|(_, th)| th.tx() == Some(k)).map(|(&t, _)| t).collect()
    }

    /// Live transactions and their participants.
    pub fn live(&self) -> BTreeMap<TxId, Vec<ThreadId>> {
        let mut m: BTreeMap<TxId, Vec<ThreadId>> = BTreeMap::new();
        for (&t, th) in &self.threads {
            if let Some(k) = th.tx() {
                m.entry(k).or_default().push(t);
            }
        }
        m
    }

    /// Value a fresh reader would see: the claimed one, else the committed one.
    pub fn visible(&self, r: VarId) -> Option<&Value> {
        self.memory.working.get(&r).map(|c| &c.value).or_else(|| self.memory.heap.get(&r))
    }

    fn woken(&self, guard: &Guard) -> bool {
        guard.iter().any(|(r, v)| self.visible(*r) != v.as_ref())
    }

    fn trial(&self, tx: TxId, body: &Action) -> Trial {
        let mut memory = self.memory.clone();
        let ids = self.ids.clone();
        let mut iso = isolated::Iso::new(&mut memory, &ids, tx, self.config.isolated_fuel);
        let outcome = iso.run(body.clone());
        let (ops, touched) = (iso.ops, iso.touched);
        Trial { outcome, memory, ops, touched, ids }
    }

    fn at_returned(th: &Thread) -> bool {
        matches!(th.code().outcome(), Some(Outcome::Returned(_)))
    }

    /// Every applicable rule instance, sorted by thread then rule name.
    pub fn enabled(&self) -> Vec<Choice> {
        let mut out = Vec::new();
        let mut blocked: BTreeSet<TxId> = BTreeSet::new();
        for (&t, th) in &self.threads {
            let code = th.code();
            if let Some(r) = code.term_rule() {
                out.push(Choice { thread: t, rule: r.into() });
                continue;
            }
            let rule = match (th, code.focus.node()) {
                (Thread::Plain { guard, .. }, Node::Atomic(_)) => {
                    guard.as_ref().is_none_or(|g| self.woken(g)).then_some(Rule::New)
                }
                (Thread::Plain { .. }, Node::Fork(_)) => Some(Rule::ForkIo),
                (Thread::Plain { .. }, Node::GetChar) => (!self.input.is_empty()).then_some(Rule::InChar),
                (Thread::Plain { .. }, Node::PutChar(_)) => Some(Rule::OutChar),
                (Thread::InTx { tx, .. }, Node::Isolated(body)) => {
                    if self.trial(*tx, body).outcome == Outcome::Retried {
                        blocked.insert(*tx);
                        None
                    } else {
                        Some(Rule::Isolated)
                    }
                }
                (Thread::InTx { .. }, Node::Fork(_)) => Some(Rule::ForkT),
                (Thread::InTx { .. }, Node::Throw(_)) if code.stack.is_empty() => Some(Rule::Abort),
                _ => None,
            };
            if let Some(rule) = rule {
                out.push(Choice { thread: t, rule });
            }
        }
        for (_, parts) in self.live() {
            if parts.iter().all(|p| Self::at_returned(&self.threads[p])) {
                out.push(Choice { thread: parts[0], rule: Rule::Commit });
            }
        }
        if out.is_empty() && self.restarts < self.config.max_restarts {
            for k in blocked {
                out.push(Choice { thread: self.participants(k)[0], rule: Rule::Rollback });
            }
        }
        out.sort();
        out
    }

    /// History events `choice` would append (an isolated block may record several).
    pub fn events_needed(&self, choice: Choice) -> usize {
        match choice.rule {
            Rule::Commit | Rule::Abort | Rule::Rollback => 1,
            Rule::Isolated => match &self.threads[&choice.thread] {
                Thread::InTx { tx, code, .. } => match code.focus.node() {
                    Node::Isolated(body) => self.trial(*tx, body).ops.len(),
                    _ => 0,
                },
                Thread::Plain { .. } => 0,
            },
            _ => 0,
        }
    }

    /// Apply `choice`, which must be enabled.
    pub fn step(&mut self, choice: Choice) -> Result<StepInfo, EngineError> {
        if !self.enabled().contains(&choice) {
            return Err(EngineError::NotEnabled(choice));
        }
        Ok(self.apply(choice))
    }

    /// Apply a choice known to be enabled.
    pub(crate) fn apply(&mut self, choice: Choice) -> StepInfo {
        let t = choice.thread;
        let before = self.history.len();
        let mut info = match choice.rule {
            Rule::Eval | Rule::BindVal | Rule::BindEx | Rule::CatchVal | Rule::CatchEx => {
                self.threads.get_mut(&t).unwrap().code_mut().reduce();
                StepInfo::single(TransitionLabel::Tau, 0)
            }
            Rule::ForkIo | Rule::ForkT => self.fork(t),
            Rule::New => self.begin(t),
            Rule::InChar => {
                let c = self.input.pop_front().unwrap();
                self.resume(t, Value::Char(c));
                StepInfo::single(TransitionLabel::In { c }, 0)
            }
            Rule::OutChar => {
                let Node::PutChar(c) = *self.threads[&t].code().focus.node() else { unreachable!() };
                self.output.push(c);
                self.resume(t, Value::Unit);
                StepInfo::single(TransitionLabel::Out { c }, 0)
            }
            Rule::Isolated => {
                let Node::Isolated(body) = self.threads[&t].code().focus.node().clone() else { unreachable!() };
                let outcome = self.run_isolated(t, &body).expect("isolated step outside a transaction");
                let code = self.threads.get_mut(&t).unwrap().code_mut();
                code.focus = match outcome {
                    Outcome::Returned(v) => Action::ret(Kind::Otm, v),
                    Outcome::Threw(e) => Action::throw(Kind::Otm, e),
                    Outcome::Retried => unreachable!("blocked isolated block was scheduled"),
                };
                code.normalize();
                StepInfo::single(TransitionLabel::Tau, 0)
            }
            Rule::Commit => {
                let k = self.threads[&t].tx().unwrap();
                self.attempt_commit(k, t)
            }
            Rule::Abort => {
                let th = &self.threads[&t];
                let (k, Node::Throw(e)) = (th.tx().unwrap(), th.code().focus.node().clone()) else { unreachable!() };
                self.propagate_abort(k, t, e)
            }
            Rule::Rollback => {
                let k = self.threads[&t].tx().unwrap();
                self.rollback(k, t)
            }
        };
        info.events = self.history.len() - before;
        self.reap();
        info
    }

    fn resume(&mut self, t: ThreadId, v: Value) {
        let code = self.threads.get_mut(&t).unwrap().code_mut();
        code.focus = Action::ret(code.focus.kind(), v);
        code.normalize();
    }

    fn reap(&mut self) {
        let done: Vec<(ThreadId, Outcome)> = self
            .threads
            .iter()
            .filter(|(_, th)| matches!(th, Thread::Plain { .. }))
            .filter_map(|(&t, th)| Some((t, th.code().outcome()?)))
            .collect();
        for (t, o) in done {
            self.threads.remove(&t);
            self.finished.insert(t, o);
        }
    }

    /// Rules `ForkIO` and `ForkT`.
    fn fork(&mut self, t: ThreadId) -> StepInfo {
        let Node::Fork(child) = self.threads[&t].code().focus.node().clone() else { unreachable!() };
        let t2 = self.ids.thread();
        let new = match self.threads[&t] {
            Thread::Plain { .. } => Thread::Plain { code: Code::new(child), guard: None },
            Thread::InTx { tx, .. } => {
                self.memory.forest.add_child(t, t2).expect("fresh thread id already in the fork forest");
                Thread::InTx { tx, code: Code::new(child), saved: Vec::new(), origin: None }
            }
        };
        self.threads.insert(t2, new);
        self.resume(t, Value::Thread(t2));
        StepInfo::single(TransitionLabel::Tau, 0)
    }

    /// Rule `New`: `atomic M >>= N` enters a fresh transaction.
    fn begin(&mut self, t: ThreadId) -> StepInfo {
        let Some(Thread::Plain { code, .. }) = self.threads.remove(&t) else { unreachable!() };
        let Node::Atomic(body) = code.focus.node().clone() else { unreachable!() };
        let k = self.ids.tx();
        self.txs.insert(k, TxInfo::default());
        let th = Thread::InTx { tx: k, code: Code::new(body), saved: code.stack, origin: Some(code.focus) };
        self.threads.insert(t, th);
        StepInfo::single(TransitionLabel::New { tx: k }, 0)
    }

    fn record_ops(&mut self, t: ThreadId, ops: Vec<(TxId, Op)>, touched: BTreeSet<VarId>, final_tx: TxId) {
        for (k, op) in ops {
            if let Op::Merge(j) = op {
                self.merge_tx(k, j);
            }
            self.history.record(k, t, op);
        }
        self.txs.entry(final_tx).or_default().touched.extend(touched);
    }

    /// `k` dissolves into `j`: its threads and bookkeeping move over.
    fn merge_tx(&mut self, k: TxId, j: TxId) {
        for th in self.threads.values_mut() {
            if let Thread::InTx { tx, .. } = th {
                if *tx == k {
                    *tx = j;
                }
            }
        }
        if let Some(info) = self.txs.remove(&k) {
            self.txs.entry(j).or_default().touched.extend(info.touched);
        }
    }

    fn in_tx(&self, t: ThreadId) -> Result<TxId, EngineError> {
        self.threads.get(&t).and_then(Thread::tx).ok_or(EngineError::NotInTransaction(t))
    }

    /// Rule `Isolated`: run `body` to completion for `t` with no interleaving.
    /// A retrying body leaves the state untouched and reports `Retried`.
    pub fn run_isolated(&mut self, t: ThreadId, body: &Action) -> Result<Outcome, EngineError> {
        let tx = self.in_tx(t)?;
        if body.kind() != Kind::Itm {
            return Err(KindError::Expected { node: "isolated", expected: Kind::Itm, found: body.kind() }.into());
        }
        let trial = self.trial(tx, body);
        if trial.outcome != Outcome::Retried {
            self.memory = trial.memory;
            self.ids = trial.ids;
            let final_tx = trial.ops.iter().rev().find_map(|(_, op)| match op {
                Op::Merge(j) => Some(*j),
                _ => None,
            });
            self.record_ops(t, trial.ops, trial.touched, final_tx.unwrap_or(tx));
        }
        Ok(trial.outcome)
    }

    /// Rules `Or1`/`Or2` as a complete sub-derivation for `t`.
    pub fn eval_orelse(&mut self, t: ThreadId, first: Action, second: Action) -> Result<Outcome, EngineError> {
        let body = Action::or_else(first, second)?;
        self.run_isolated(t, &body)
    }

    fn leave_tx(&mut self, t: ThreadId, focus: Action) {
        let Some(Thread::InTx { saved, .. }) = self.threads.remove(&t) else { unreachable!() };
        self.threads.insert(t, Thread::Plain { code: Code::with_stack(focus, saved), guard: None });
    }

    fn drop_from_forest(&mut self, t: ThreadId) {
        if self.memory.forest.contains(t) {
            let root = self.memory.forest.root(t);
            self.memory.forest.remove(root);
        }
    }

    /// Rules `Commit` + `MCastCo`: every participant resumes `return M >>= N`.
    pub fn attempt_commit(&mut self, k: TxId, by: ThreadId) -> StepInfo {
        let parts = self.participants(k);
        self.memory.commit_apply(k);
        let mut broadcast = Vec::new();
        for &p in &parts {
            let Some(Outcome::Returned(v)) = self.threads[&p].code().outcome() else {
                panic!("commit of {k} with participant {p} not at a result")
            };
            self.drop_from_forest(p);
            self.leave_tx(p, Action::ret(Kind::Io, v));
            broadcast.push((p, TransitionLabel::Co { tx: k }));
        }
        self.txs.remove(&k);
        self.history.record(k, by, Op::Commit);
        StepInfo { label: TransitionLabel::Co { tx: k }, broadcast, events: 1 }
    }

    /// Rules `Abort1`-`Abort3` + `MCastAb`: the raiser's fork-tree root
    /// rethrows, the rest of that tree is killed, and participants from other
    /// trees restart their `atomic` block.
    pub fn propagate_abort(&mut self, k: TxId, raiser: ThreadId, exc: Value) -> StepInfo {
        let parts = self.participants(k);
        let roots: BTreeMap<ThreadId, ThreadId> = parts.iter().map(|&p| (p, self.memory.forest.root(p))).collect();
        let r = roots[&raiser];
        let resumer = if parts.contains(&r) { r } else { raiser };
        self.memory.leak(k);
        let mut broadcast = Vec::new();
        for &p in &parts {
            let same_tree = roots[&p] == r;
            if p == resumer {
                self.leave_tx(p, Action::throw(Kind::Io, exc.clone()));
            } else if !same_tree && roots[&p] == p {
                self.restart(p, None);
            } else {
                self.threads.remove(&p);
            }
            let label = if p == raiser {
                TransitionLabel::Ab { tx: k, thread: raiser, exc: exc.clone() }
            } else {
                TransitionLabel::AbBar { tx: k, thread: raiser, exc: exc.clone() }
            };
            broadcast.push((p, label));
        }
        for &p in &parts {
            self.drop_from_forest(p);
        }
        self.txs.remove(&k);
        self.history.record(k, raiser, Op::Abort);
        StepInfo { label: TransitionLabel::Ab { tx: k, thread: raiser, exc }, broadcast, events: 1 }
    }

    /// Put an in-transaction root thread back at the start of its `atomic` block.
    fn restart(&mut self, p: ThreadId, guard: Option<Guard>) {
        let Some(Thread::InTx { saved, origin, .. }) = self.threads.remove(&p) else { unreachable!() };
        if let Some(a) = origin {
            self.restarts += 1;
            self.threads.insert(p, Thread::Plain { code: Code::with_stack(a, saved), guard });
        }
    }

    /// Retry policy: a transaction whose participants are all blocked is
    /// rolled back without leaking; its roots restart once something they
    /// read changes.
    fn rollback(&mut self, k: TxId, by: ThreadId) -> StepInfo {
        let parts = self.participants(k);
        let mut touched = self.txs.remove(&k).unwrap_or_default().touched;
        for &p in &parts {
            if let Thread::InTx { tx, code, .. } = &self.threads[&p] {
                if let Node::Isolated(body) = code.focus.node() {
                    touched.extend(self.trial(*tx, body).touched);
                }
            }
        }
        self.memory.rollback(k);
        let guard: Guard = touched.iter().map(|&r| (r, self.visible(r).cloned())).collect();
        let roots: BTreeMap<ThreadId, ThreadId> = parts.iter().map(|&p| (p, self.memory.forest.root(p))).collect();
        let mut broadcast = Vec::new();
        for &p in &parts {
            if roots[&p] == p {
                self.restart(p, Some(guard.clone()));
            } else {
                self.threads.remove(&p);
            }
            broadcast.push((p, TransitionLabel::Restart { tx: k }));
        }
        for &p in &parts {
            self.drop_from_forest(p);
        }
        self.history.record(k, by, Op::Abort);
        StepInfo { label: TransitionLabel::Restart { tx: k }, broadcast, events: 1 }
    }
}

#[cfg(test)]
mod tests;

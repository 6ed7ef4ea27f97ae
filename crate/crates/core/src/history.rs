//! Event histories: well-formedness, happens-before, locality and consistency.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{ThreadId, TxId, VarId};
use crate::value::Value;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Op {
    Read(VarId, Value),
    Write(VarId, Value),
    /// Allocation; counts as a write of the initial value.
    New(VarId, Value),
    Commit,
    Abort,
    /// The issuing transaction dissolved into `into`.
    Merge(TxId),
}

impl Op {
    pub fn var(&self) -> Option<VarId> {
        match self {
            Op::Read(r, _) | Op::Write(r, _) | Op::New(r, _) => Some(*r),
            _ => None,
        }
    }

    pub fn is_write(&self) -> bool {
        matches!(self, Op::Write(..) | Op::New(..))
    }

    pub fn is_read(&self) -> bool {
        matches!(self, Op::Read(..))
    }

    pub fn is_access(&self) -> bool {
        self.var().is_some()
    }

    pub fn value(&self) -> Option<&Value> {
        match self {
            Op::Read(_, v) | Op::Write(_, v) | Op::New(_, v) => Some(v),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Op::Read(..) => "read",
            Op::Write(..) => "write",
            Op::New(..) => "new",
            Op::Commit => "commit",
            Op::Abort => "abort",
            Op::Merge(_) => "merge",
        }
    }
}

/// One recorded operation. Serializes to the flat trace-line layout.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "TraceRecord", try_from = "TraceRecord")]
pub struct Event {
    pub seq: u64,
    pub tx: TxId,
    pub thread: ThreadId,
    pub op: Op,
}

/// Flat trace line: `{seq, tx, thread, op, var?, value?, into?}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub seq: u64,
    pub tx: TxId,
    pub thread: ThreadId,
    pub op: alloc::string::String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub var: Option<VarId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub into: Option<TxId>,
}

impl From<Event> for TraceRecord {
    fn from(e: Event) -> Self {
        let (var, value, into) = match &e.op {
            Op::Read(r, v) | Op::Write(r, v) | Op::New(r, v) => (Some(*r), Some(v.clone()), None),
            Op::Merge(j) => (None, None, Some(*j)),
            Op::Commit | Op::Abort => (None, None, None),
        };
        TraceRecord { seq: e.seq, tx: e.tx, thread: e.thread, op: e.op.name().into(), var, value, into }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum RecordError {
    #[error("unknown operation `{0}`")]
    UnknownOp(alloc::string::String),
    #[error("operation `{op}` is missing field `{field}`")]
    MissingField { op: &'static str, field: &'static str },
}

impl TryFrom<TraceRecord> for Event {
    type Error = RecordError;

    fn try_from(r: TraceRecord) -> Result<Self, Self::Error> {
        fn need<T>(x: Option<T>, op: &'static str, field: &'static str) -> Result<T, RecordError> {
            x.ok_or(RecordError::MissingField { op, field })
        }
        let op = match r.op.as_str() {
            "read" => Op::Read(need(r.var, "read", "var")?, need(r.value, "read", "value")?),
            "write" => Op::Write(need(r.var, "write", "var")?, need(r.value, "write", "value")?),
            "new" => Op::New(need(r.var, "new", "var")?, need(r.value, "new", "value")?),
            "commit" => Op::Commit,
            "abort" => Op::Abort,
            "merge" => Op::Merge(need(r.into, "merge", "into")?),
            other => return Err(RecordError::UnknownOp(other.into())),
        };
        Ok(Event { seq: r.seq, tx: r.tx, thread: r.thread, op })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum HistoryError {
    #[error("event sequence numbers must increase (at seq {0})")]
    NonIncreasingSeq(u64),
    #[error("transaction {tx} issues an operation at seq {seq} after it finished")]
    AfterEnd { seq: u64, tx: TxId },
    #[error("merge at seq {seq} targets {into}, which is not running")]
    BadMergeTarget { seq: u64, into: TxId },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TxStatus {
    Committed,
    Aborted,
    /// Running, or merged into another transaction (commit-pending).
    Live,
}

/// Ordered event log.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct History {
    events: Vec<Event>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_events(events: Vec<Event>) -> Self {
        Self { events }
    }

    /// Append with the next sequence number.
    pub fn record(&mut self, tx: TxId, thread: ThreadId, op: Op) {
        let seq = self.events.last().map_or(0, |e| e.seq + 1);
        self.events.push(Event { seq, tx, thread, op });
    }

    pub fn push(&mut self, e: Event) {
        self.events.push(e);
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }

    /// Transactions issuing at least one operation, in order of first appearance.
    pub fn transactions(&self) -> Vec<TxId> {
        let mut seen = BTreeSet::new();
        self.events.iter().filter(|e| seen.insert(e.tx)).map(|e| e.tx).collect()
    }

    pub fn status(&self, tx: TxId) -> TxStatus {
        self.events
            .iter()
            .rev()
            .filter(|e| e.tx == tx)
            .find_map(|e| match e.op {
                Op::Commit => Some(TxStatus::Committed),
                Op::Abort => Some(TxStatus::Aborted),
                _ => None,
            })
            .unwrap_or(TxStatus::Live)
    }

    /// Per-transaction merge target (`k ↦ j` when `k` dissolved into `j`).
    pub fn merges(&self) -> BTreeMap<TxId, TxId> {
        self.events
            .iter()
            .filter_map(|e| match e.op {
                Op::Merge(j) => Some((e.tx, j)),
                _ => None,
            })
            .collect()
    }

    /// Sequence numbers increase; nothing follows a commit, abort or merge of
    /// the issuing transaction; merges target a running transaction.
    pub fn validate(&self) -> Result<(), HistoryError> {
        let mut ended: BTreeSet<TxId> = BTreeSet::new();
        let mut last: Option<u64> = None;
        for e in &self.events {
            if last.is_some_and(|s| e.seq <= s) {
                return Err(HistoryError::NonIncreasingSeq(e.seq));
            }
            last = Some(e.seq);
            if ended.contains(&e.tx) {
                return Err(HistoryError::AfterEnd { seq: e.seq, tx: e.tx });
            }
            match e.op {
                Op::Commit | Op::Abort => {
                    ended.insert(e.tx);
                }
                Op::Merge(j) => {
                    if j == e.tx || ended.contains(&j) {
                        return Err(HistoryError::BadMergeTarget { seq: e.seq, into: j });
                    }
                    ended.insert(e.tx);
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Seq of the first operation of `tx`: its first access, or failing that
    /// its first event of any kind.
    pub fn first_op(&self, tx: TxId) -> Option<u64> {
        let mut any = None;
        for e in self.events.iter().filter(|e| e.tx == tx) {
            if e.op.is_access() {
                return Some(e.seq);
            }
            any.get_or_insert(e.seq);
        }
        any
    }

    /// Seq of the commit or abort of `tx`.
    pub fn end(&self, tx: TxId) -> Option<u64> {
        self.events
            .iter()
            .find(|e| e.tx == tx && matches!(e.op, Op::Commit | Op::Abort))
            .map(|e| e.seq)
    }

    /// Pairs `(k, k')` with `k ≺ k'`: `k` finished before `k'` issued its first operation.
    pub fn happens_before(&self) -> Result<BTreeSet<(TxId, TxId)>, HistoryError> {
        self.validate()?;
        let txs = self.transactions();
        let first: BTreeMap<TxId, u64> = txs.iter().filter_map(|&k| Some((k, self.first_op(k)?))).collect();
        let mut out = BTreeSet::new();
        for &k in &txs {
            let Some(end) = self.end(k) else { continue };
            for &k2 in &txs {
                if k2 != k && first.get(&k2).is_some_and(|&f| end < f) {
                    out.insert((k, k2));
                }
            }
        }
        Ok(out)
    }

    /// Indices of events that are local in `events` (one pass, no fixpoint).
    fn local_indices(events: &[Event]) -> BTreeSet<usize> {
        let mut by_tx_var: BTreeMap<(TxId, VarId), Vec<usize>> = BTreeMap::new();
        for (i, e) in events.iter().enumerate() {
            if let Some(r) = e.op.var() {
                by_tx_var.entry((e.tx, r)).or_default().push(i);
            }
        }
        let mut local = BTreeSet::new();
        for idxs in by_tx_var.values() {
            for (pos, &i) in idxs.iter().enumerate() {
                let op = &events[i].op;
                let prev_is_write = pos > 0 && events[idxs[pos - 1]].op.is_write();
                let next_is_write = idxs.get(pos + 1).is_some_and(|&n| events[n].op.is_write());
                if (op.is_read() && prev_is_write) || (matches!(op, Op::Write(..)) && next_is_write) {
                    local.insert(i);
                }
            }
        }
        local
    }

    /// The longest sub-history without local operations (iterated to a fixpoint).
    pub fn nonlocal(&self) -> History {
        let mut events = self.events.clone();
        loop {
            let local = Self::local_indices(&events);
            if local.is_empty() {
                return History { events };
            }
            events = events.into_iter().enumerate().filter(|(i, _)| !local.contains(i)).map(|(_, e)| e).collect();
        }
    }

    /// First read (by seq) that violates consistency, if any.
    pub fn inconsistency(&self) -> Option<u64> {
        let kept: BTreeSet<u64> = self.nonlocal().events.iter().map(|e| e.seq).collect();
        // Local reads must see the latest preceding write by the same transaction.
        let mut last_write: BTreeMap<(TxId, VarId), &Value> = BTreeMap::new();
        for e in &self.events {
            match &e.op {
                Op::Write(r, v) | Op::New(r, v) => {
                    last_write.insert((e.tx, *r), v);
                }
                Op::Read(r, v) if !kept.contains(&e.seq) && last_write.get(&(e.tx, *r)) != Some(&v) => {
                    return Some(e.seq);
                }
                _ => {}
            }
        }
        // Nonlocal reads must be justified by some nonlocal write of the same value.
        let nonlocal = self.nonlocal();
        let writes: BTreeSet<(VarId, &Value)> = nonlocal
            .events
            .iter()
            .filter(|e| e.op.is_write())
            .map(|e| (e.op.var().unwrap(), e.op.value().unwrap()))
            .collect();
        nonlocal
            .events
            .iter()
            .find(|e| matches!(&e.op, Op::Read(r, v) if !writes.contains(&(*r, v))))
            .map(|e| e.seq)
    }

    pub fn consistent(&self) -> bool {
        self.inconsistency().is_none()
    }

    /// Histories are equivalent when every transaction issues the same
    /// operations in the same order.
    pub fn equivalent(&self, other: &History) -> bool {
        fn project(h: &History) -> BTreeMap<TxId, Vec<(&Op, ThreadId)>> {
            let mut m: BTreeMap<TxId, Vec<(&Op, ThreadId)>> = BTreeMap::new();
            for e in &h.events {
                m.entry(e.tx).or_default().push((&e.op, e.thread));
            }
            m
        }
        project(self) == project(other)
    }
}

impl FromIterator<Event> for History {
    fn from_iter<I: IntoIterator<Item = Event>>(iter: I) -> Self {
        Self { events: iter.into_iter().collect() }
    }
}

//! Opacity graphs and the opacity decision procedure.
//!
//! Merges are first rewritten into plain reads and writes: when `k` merges
//! into `j`, `j` writes a fresh pseudo-location and `k` reads it, leaving `k`
//! commit-pending. The graph itself is then built from the four edge rules.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::history::{Event, History, HistoryError, Op, TxStatus};
use crate::ids::{TxId, VarId};
use crate::value::Value;

/// Pseudo-locations introduced by the merge encoding live at the top of the id space.
pub const PSEUDO_BASE: u64 = u64::MAX - (u32::MAX as u64);

/// Largest transaction count for which every total order is tried.
pub const SEARCH_LIMIT: usize = 8;

pub fn is_pseudo(r: VarId) -> bool {
    r.0 >= PSEUDO_BASE
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Colour {
    Red,
    Black,
}

/// Which edge rules produced an edge (bit `n - 1` for rule `n`).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rules(u8);

impl Rules {
    pub const HAPPENS_BEFORE: Rules = Rules(1);
    pub const READS_FROM: Rules = Rules(2);
    pub const ANTI_DEPENDENCY: Rules = Rules(4);
    pub const INTERPOSED: Rules = Rules(8);

    pub fn contains(self, other: Rules) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn insert(&mut self, other: Rules) {
        self.0 |= other.0;
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    /// Rule numbers (1 to 4) in ascending order.
    pub fn numbers(self) -> Vec<u8> {
        (0..4).filter(|i| self.0 & (1 << i) != 0).map(|i| i + 1).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum OpacityError {
    #[error("order is not a permutation of the history's transactions")]
    NotTotal,
    #[error(transparent)]
    History(#[from] HistoryError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpacityGraph {
    vertices: BTreeMap<TxId, Colour>,
    edges: BTreeMap<(TxId, TxId), Rules>,
    order: Vec<TxId>,
    /// Member to merge-group representative (the final survivor).
    group: BTreeMap<TxId, TxId>,
    /// Pairs `(k, j)` where `k` merged into `j`.
    merges: BTreeSet<(TxId, TxId)>,
}

impl OpacityGraph {
    /// Build a graph by hand; the order is the vertex order.
    pub fn from_parts(vertices: impl IntoIterator<Item = (TxId, Colour)>, edges: impl IntoIterator<Item = (TxId, TxId, Colour)>) -> Self {
        let vertices: BTreeMap<_, _> = vertices.into_iter().collect();
        let edges = edges
            .into_iter()
            .map(|(a, b, c)| ((a, b), if c == Colour::Red { Rules::READS_FROM } else { Rules::ANTI_DEPENDENCY }))
            .collect();
        let order = vertices.keys().copied().collect();
        Self { vertices, edges, order, group: BTreeMap::new(), merges: BTreeSet::new() }
    }

    pub fn vertices(&self) -> &BTreeMap<TxId, Colour> {
        &self.vertices
    }

    pub fn colour(&self, k: TxId) -> Option<Colour> {
        self.vertices.get(&k).copied()
    }

    pub fn edges(&self) -> impl Iterator<Item = (TxId, TxId, Colour)> + '_ {
        self.edges.iter().map(|(&(a, b), &r)| (a, b, edge_colour(r)))
    }

    pub fn edge_rules(&self, from: TxId, to: TxId) -> Option<Rules> {
        self.edges.get(&(from, to)).copied()
    }

    pub fn order(&self) -> &[TxId] {
        &self.order
    }

    pub fn merges(&self) -> &BTreeSet<(TxId, TxId)> {
        &self.merges
    }

    fn same_group(&self, a: TxId, b: TxId) -> bool {
        let g = |k| self.group.get(&k).copied().unwrap_or(k);
        g(a) == g(b)
    }

    fn position(&self) -> BTreeMap<TxId, usize> {
        self.order.iter().enumerate().map(|(i, &k)| (k, i)).collect()
    }

    /// Edges that express a dependency between distinct transactions: edges
    /// inside a merge group are dropped, except the merge edges themselves.
    pub fn dependency_edges(&self) -> impl Iterator<Item = (TxId, TxId, Colour)> + '_ {
        self.edges().filter(|&(a, b, _)| self.merges.contains(&(a, b)) || !self.same_group(a, b))
    }

    /// Dependency edges that run against the order (from an earlier to a later
    /// transaction). Edges pointing backwards are satisfied by the order itself.
    pub fn inverting_edges(&self) -> Vec<(TxId, TxId, Colour)> {
        let pos = self.position();
        self.dependency_edges().filter(|(a, b, _)| pos.get(a) < pos.get(b)).collect()
    }

    pub fn dependency_view(&self) -> OpacityGraph {
        let keep: BTreeSet<(TxId, TxId)> = self.dependency_edges().map(|(a, b, _)| (a, b)).collect();
        let mut g = self.clone();
        g.edges.retain(|k, _| keep.contains(k));
        g
    }

    pub fn inverting_view(&self) -> OpacityGraph {
        let keep: BTreeSet<(TxId, TxId)> = self.inverting_edges().into_iter().map(|(a, b, _)| (a, b)).collect();
        let mut g = self.clone();
        g.edges.retain(|k, _| keep.contains(k));
        g
    }
}

fn edge_colour(r: Rules) -> Colour {
    if r.contains(Rules::READS_FROM) {
        Colour::Red
    } else {
        Colour::Black
    }
}

/// No red vertex has a black outgoing edge.
pub fn well_formed(g: &OpacityGraph) -> bool {
    ill_formed_edge(g).is_none()
}

fn ill_formed_edge(g: &OpacityGraph) -> Option<(TxId, TxId)> {
    g.edges()
        .find(|&(a, _, c)| c == Colour::Black && g.colour(a) == Some(Colour::Red))
        .map(|(a, b, _)| (a, b))
}

pub fn acyclic(g: &OpacityGraph) -> bool {
    find_cycle(g).is_none()
}

/// A directed cycle, listed from its first vertex, if one exists.
pub fn find_cycle(g: &OpacityGraph) -> Option<Vec<TxId>> {
    let mut succ: BTreeMap<TxId, Vec<TxId>> = BTreeMap::new();
    for (a, b, _) in g.edges() {
        succ.entry(a).or_default().push(b);
    }
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Open,
        Done,
    }
    let mut mark: BTreeMap<TxId, Mark> = BTreeMap::new();
    let roots: BTreeSet<TxId> = g.vertices.keys().copied().chain(succ.keys().copied()).collect();
    for &root in &roots {
        if mark.contains_key(&root) {
            continue;
        }
        // Iterative DFS; `path` holds the open vertices with their next-successor index.
        let mut path: Vec<(TxId, usize)> = vec![(root, 0)];
        mark.insert(root, Mark::Open);
        while let Some(&mut (v, ref mut i)) = path.last_mut() {
            let next = succ.get(&v).and_then(|s| s.get(*i)).copied();
            *i += 1;
            match next {
                None => {
                    mark.insert(v, Mark::Done);
                    path.pop();
                }
                Some(w) => match mark.get(&w) {
                    Some(Mark::Open) => {
                        let start = path.iter().position(|&(u, _)| u == w).unwrap();
                        return Some(path[start..].iter().map(|&(u, _)| u).collect());
                    }
                    Some(Mark::Done) => {}
                    None => {
                        mark.insert(w, Mark::Open);
                        path.push((w, 0));
                    }
                },
            }
        }
    }
    None
}

/// Every edge is red, every vertex has out-degree at most one, and every
/// vertex with an outgoing edge (every non-root) is red.
pub fn forest_red_check(g: &OpacityGraph) -> bool {
    let mut out: BTreeMap<TxId, usize> = BTreeMap::new();
    for (a, _, c) in g.edges() {
        if c != Colour::Red || g.colour(a) != Some(Colour::Red) {
            return false;
        }
        let n = out.entry(a).or_default();
        *n += 1;
        if *n > 1 {
            return false;
        }
    }
    true
}

/// Rewrite merges as pseudo-location traffic and renumber events densely.
pub fn encode_merges(h: &History) -> History {
    let mut out = History::new();
    let mut next = 0u64;
    for e in h.events() {
        match e.op {
            Op::Merge(j) => {
                let x = VarId(PSEUDO_BASE + next);
                let v = Value::Int(next as i64);
                next += 1;
                out.record(j, e.thread, Op::Write(x, v.clone()));
                out.record(e.tx, e.thread, Op::Read(x, v));
            }
            ref op => out.record(e.tx, e.thread, op.clone()),
        }
    }
    out
}

/// Per-read writer attribution: the latest preceding write of the read value
/// to the same location, preferring writers not aborted by then.
pub fn reads_from(h: &History) -> Vec<(usize, TxId)> {
    let events = h.events();
    let mut aborted_at: BTreeMap<TxId, usize> = BTreeMap::new();
    for (i, e) in events.iter().enumerate() {
        if e.op == Op::Abort {
            aborted_at.insert(e.tx, i);
        }
    }
    let mut out = Vec::new();
    for (i, e) in events.iter().enumerate() {
        let Op::Read(r, ref v) = e.op else { continue };
        let candidates = || {
            events[..i]
                .iter()
                .enumerate()
                .rev()
                .filter(|(_, w)| w.op.is_write() && w.op.var() == Some(r) && w.op.value() == Some(v))
        };
        let visible = candidates().find(|(_, w)| {
            matches!(w.op, Op::New(..)) || aborted_at.get(&w.tx).is_none_or(|&a| a > i)
        });
        if let Some((_, w)) = visible.or_else(|| candidates().next()) {
            out.push((i, w.tx));
        }
    }
    out
}

/// Order-independent ingredients of the graph.
struct Facts {
    txs: Vec<TxId>,
    status: BTreeMap<TxId, TxStatus>,
    /// Rule 1 and rule 2 edges.
    fixed: BTreeMap<(TxId, TxId), Rules>,
    /// `(k, k')`: `k'` reads a location written by `k` (rule 3 when `k' ≪ k`).
    anti: BTreeSet<(TxId, TxId)>,
    /// `(k, k', k'')`: rule 4 when `k' ≪ k''`.
    interposed: BTreeSet<(TxId, TxId, TxId)>,
    group: BTreeMap<TxId, TxId>,
    merges: BTreeSet<(TxId, TxId)>,
}

impl Facts {
    fn new(h: &History) -> Result<Self, OpacityError> {
        let txs = h.transactions();
        let status: BTreeMap<TxId, TxStatus> = txs.iter().map(|&k| (k, h.status(k))).collect();
        let mut fixed: BTreeMap<(TxId, TxId), Rules> = BTreeMap::new();
        for (a, b) in h.happens_before()? {
            fixed.entry((b, a)).or_default().insert(Rules::HAPPENS_BEFORE);
        }
        let events = h.events();
        let rf = reads_from(h);
        let mut merges = BTreeSet::new();
        for &(i, writer) in &rf {
            let reader = events[i].tx;
            if reader != writer {
                fixed.entry((reader, writer)).or_default().insert(Rules::READS_FROM);
                if events[i].op.var().is_some_and(is_pseudo) {
                    merges.insert((reader, writer));
                }
            }
        }
        let mut writers: BTreeMap<VarId, BTreeSet<TxId>> = BTreeMap::new();
        let mut readers: BTreeMap<VarId, BTreeSet<TxId>> = BTreeMap::new();
        for e in events {
            if let Some(r) = e.op.var() {
                let m = if e.op.is_write() { &mut writers } else { &mut readers };
                m.entry(r).or_default().insert(e.tx);
            }
        }
        let mut anti = BTreeSet::new();
        for (r, ws) in &writers {
            for &k in ws {
                for &k2 in readers.get(r).into_iter().flatten() {
                    if k != k2 {
                        anti.insert((k, k2));
                    }
                }
            }
        }
        let mut interposed = BTreeSet::new();
        for &(i, k) in &rf {
            let (k3, r) = (events[i].tx, events[i].op.var().unwrap());
            for &k2 in writers.get(&r).into_iter().flatten() {
                if k2 != k && status[&k2] == TxStatus::Committed {
                    interposed.insert((k, k2, k3));
                }
            }
        }
        let mut group: BTreeMap<TxId, TxId> = BTreeMap::new();
        let survivor: BTreeMap<TxId, TxId> = merges.iter().copied().collect();
        for &k in &txs {
            let mut g = k;
            while let Some(&n) = survivor.get(&g) {
                if n == k {
                    break;
                }
                g = n;
            }
            group.insert(k, g);
        }
        Ok(Self { txs, status, fixed, anti, interposed, group, merges })
    }

    fn graph(&self, order: &[TxId]) -> Result<OpacityGraph, OpacityError> {
        let set: BTreeSet<TxId> = order.iter().copied().collect();
        if order.len() != self.txs.len() || set.len() != order.len() || !self.txs.iter().all(|k| set.contains(k)) {
            return Err(OpacityError::NotTotal);
        }
        let pos: BTreeMap<TxId, usize> = order.iter().enumerate().map(|(i, &k)| (k, i)).collect();
        let mut edges = self.fixed.clone();
        for &(k, k2) in &self.anti {
            if pos[&k2] < pos[&k] {
                edges.entry((k, k2)).or_default().insert(Rules::ANTI_DEPENDENCY);
            }
        }
        for &(k, k2, k3) in &self.interposed {
            if pos[&k2] < pos[&k3] {
                edges.entry((k, k2)).or_default().insert(Rules::INTERPOSED);
            }
        }
        let vertices = self
            .status
            .iter()
            .map(|(&k, &s)| (k, if s == TxStatus::Committed { Colour::Black } else { Colour::Red }))
            .collect();
        Ok(OpacityGraph {
            vertices,
            edges,
            order: order.to_vec(),
            group: self.group.clone(),
            merges: self.merges.clone(),
        })
    }
}

/// The opacity graph of `h` (expected to be `nonlocal`) under `order`.
pub fn build_opg(h: &History, order: &[TxId]) -> Result<OpacityGraph, OpacityError> {
    Facts::new(h)?.graph(order)
}

/// Finished transactions by end time, each merged-away transaction just
/// before its survivor (deeper merges first), live transactions last by
/// first-event time.
pub fn canonical_order(h: &History) -> Vec<TxId> {
    let merges = h.merges();
    let root_of = |k: TxId| {
        let (mut r, mut depth) = (k, 0usize);
        while let Some(&n) = merges.get(&r) {
            if n == k || depth > merges.len() {
                break;
            }
            r = n;
            depth += 1;
        }
        (r, depth)
    };
    let first_event = |k: TxId| h.events().iter().find(|e| e.tx == k).map_or(u64::MAX, |e| e.seq);
    let mut keyed: Vec<((u8, u64), usize, u64, TxId)> = h
        .transactions()
        .into_iter()
        .map(|k| {
            let (root, depth) = root_of(k);
            let group_key = match h.end(root) {
                Some(end) => (0, end),
                None => (1, first_event(root)),
            };
            (group_key, usize::MAX - depth, first_event(k), k)
        })
        .collect();
    keyed.sort();
    keyed.into_iter().map(|(.., k)| k).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// The history breaks the event-log invariants.
    Malformed { reason: alloc::string::String },
    /// The read at `seq` is not justified by any write.
    Inconsistent { seq: u64 },
    Cycle { cycle: Vec<TxId> },
    /// A red transaction has a black dependency that the order does not satisfy.
    IllFormed { from: TxId, to: TxId },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub opaque: bool,
    /// Set when only the canonical order was tried.
    pub heuristic: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<Vec<TxId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violation: Option<Violation>,
}

impl Verdict {
    fn fail(heuristic: bool, v: Violation) -> Self {
        Self { opaque: false, heuristic, witness: None, violation: Some(v) }
    }
}

/// Check one order; `Ok` carries nothing, `Err` the first problem found.
fn check_order(g: &OpacityGraph) -> Result<(), Violation> {
    if let Some(cycle) = find_cycle(&g.dependency_view()) {
        return Err(Violation::Cycle { cycle });
    }
    if let Some((from, to)) = ill_formed_edge(&g.inverting_view()) {
        return Err(Violation::IllFormed { from, to });
    }
    Ok(())
}

/// The graph used for all verdicts: merge-encoded, nonlocal, canonical order.
pub fn canonical_graph(h: &History) -> Result<OpacityGraph, OpacityError> {
    let encoded = encode_merges(h);
    let order = canonical_order(h);
    build_opg(&encoded.nonlocal(), &order)
}

/// Decide opacity: consistency plus an order whose graph is well-formed and acyclic.
pub fn opaque(h: &History) -> Verdict {
    if let Err(e) = h.validate() {
        return Verdict::fail(false, Violation::Malformed { reason: alloc::format!("{e}") });
    }
    let encoded = encode_merges(h);
    if let Some(seq) = encoded.inconsistency() {
        // Map back to the original numbering: pseudo events are never inconsistent,
        // so the offending event is an original one at the same relative position.
        let orig = original_seq(h, &encoded, seq);
        return Verdict::fail(false, Violation::Inconsistent { seq: orig });
    }
    let facts = match Facts::new(&encoded.nonlocal()) {
        Ok(f) => f,
        Err(e) => return Verdict::fail(false, Violation::Malformed { reason: alloc::format!("{e}") }),
    };
    let canonical = canonical_order(h);
    let heuristic = facts.txs.len() > SEARCH_LIMIT;
    let first = match facts.graph(&canonical).map(|g| check_order(&g)) {
        Ok(Ok(())) => return Verdict { opaque: true, heuristic, witness: Some(canonical), violation: None },
        Ok(Err(v)) => v,
        Err(e) => return Verdict::fail(heuristic, Violation::Malformed { reason: alloc::format!("{e}") }),
    };
    if !heuristic {
        let mut order = facts.txs.clone();
        order.sort();
        loop {
            if let Ok(g) = facts.graph(&order) {
                if check_order(&g).is_ok() {
                    return Verdict { opaque: true, heuristic, witness: Some(order), violation: None };
                }
            }
            if !next_permutation(&mut order) {
                break;
            }
        }
    }
    Verdict::fail(heuristic, first)
}

fn original_seq(h: &History, encoded: &History, seq: u64) -> u64 {
    // Each merge expands to two events; walk both logs in step.
    let mut enc = encoded.events().iter();
    for e in h.events() {
        let span = if matches!(e.op, Op::Merge(_)) { 2 } else { 1 };
        for _ in 0..span {
            if enc.next().map(|x: &Event| x.seq) == Some(seq) {
                return e.seq;
            }
        }
    }
    seq
}

fn next_permutation<T: Ord>(xs: &mut [T]) -> bool {
    let Some(i) = xs.windows(2).rposition(|w| w[0] < w[1]) else { return false };
    let j = xs.iter().rposition(|x| *x > xs[i]).unwrap();
    xs.swap(i, j);
    xs[i + 1..].reverse();
    true
}

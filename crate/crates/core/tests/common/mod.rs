//! Independent reference models shared by the integration tests.
//!
//! Nothing here calls into the engine or checker logic; only plain data types
//! are borrowed from the library.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use otm_core::history::{Event, History, Op};
use otm_core::ids::{ThreadId, TxId, VarId};
use otm_core::memory::{Claim, MemoryState};
use otm_core::sample::{Stmt, USER};
use otm_core::value::Value;
use rand_chacha::rand_core::RngCore;

pub fn below(rng: &mut impl RngCore, n: usize) -> usize {
    (rng.next_u64() % n as u64) as usize
}

// ---------------------------------------------------------------------------
// Memory functions, evaluated point-wise per location.

pub type Theta = BTreeMap<u64, i64>;
pub type Delta = BTreeMap<u64, (i64, u64)>;

/// `commit(k, Σ)(r) = M if Δ(r) = (M, k) else Θ(r)`
pub fn commit(theta: &Theta, delta: &Delta, k: u64, r: u64) -> Option<i64> {
    match delta.get(&r) {
        Some(&(m, owner)) if owner == k => Some(m),
        _ => theta.get(&r).copied(),
    }
}

/// `leak(k, Σ)(r) = Θ(r) if defined, else M if Δ(r) = (M, k)`
pub fn leak(theta: &Theta, delta: &Delta, k: u64, r: u64) -> Option<i64> {
    match (theta.get(&r), delta.get(&r)) {
        (Some(&m), _) => Some(m),
        (None, Some(&(m, owner))) if owner == k => Some(m),
        _ => None,
    }
}

/// `cleanup(k, Σ)(r) = ⊥ if Δ(r) = (_, k) else Δ(r)`
pub fn cleanup(delta: &Delta, k: u64, r: u64) -> Option<(i64, u64)> {
    delta.get(&r).copied().filter(|&(_, owner)| owner != k)
}

/// `Δ[k ↦ j](r)`
pub fn rename(delta: &Delta, k: u64, j: u64, r: u64) -> Option<(i64, u64)> {
    delta.get(&r).map(|&(m, owner)| (m, if owner == k { j } else { owner }))
}

/// Expected `(value, Δ', merged_into)` of a read of `r` by `k`.
pub fn read_rule(theta: &Theta, delta: &Delta, k: u64, r: u64, locs: &BTreeSet<u64>) -> (i64, Delta, Option<u64>) {
    match delta.get(&r) {
        None => {
            let m = theta[&r];
            let mut d = delta.clone();
            d.insert(r, (m, k));
            (m, d, None)
        }
        Some(&(m, j)) if j == k => (m, delta.clone(), None),
        Some(&(m, j)) => {
            let d = locs.iter().filter_map(|&l| rename(delta, k, j, l).map(|c| (l, c))).collect();
            (m, d, Some(j))
        }
    }
}

/// Expected `(Δ', merged_into)` of a write of `v` to `r` by `k`.
pub fn write_rule(delta: &Delta, k: u64, r: u64, v: i64, locs: &BTreeSet<u64>) -> (Delta, Option<u64>) {
    match delta.get(&r) {
        Some(&(_, j)) if j != k => {
            let mut d: Delta = locs.iter().filter_map(|&l| rename(delta, k, j, l).map(|c| (l, c))).collect();
            d.insert(r, (v, j));
            (d, Some(j))
        }
        _ => {
            let mut d = delta.clone();
            d.insert(r, (v, k));
            (d, None)
        }
    }
}

// Random small states: each location is heap-only, claimed, created in a
// transaction, or absent.

pub const LOCS: u64 = 6;

pub fn random_state(rng: &mut impl RngCore) -> (Theta, Delta) {
    let (mut theta, mut delta) = (Theta::new(), Delta::new());
    for r in 0..LOCS {
        let v = below(rng, 10) as i64;
        let owner = 1 + below(rng, 3) as u64;
        match below(rng, 4) {
            0 => {
                theta.insert(r, v);
            }
            1 => {
                theta.insert(r, v);
                delta.insert(r, (v + 1, owner));
            }
            2 => {
                delta.insert(r, (v, owner));
            }
            _ => {}
        }
    }
    (theta, delta)
}

pub fn to_memory(theta: &Theta, delta: &Delta) -> MemoryState {
    let mut m = MemoryState::new();
    m.heap = theta.iter().map(|(&r, &v)| (VarId(r), Value::Int(v))).collect();
    m.working = delta
        .iter()
        .map(|(&r, &(v, k))| (VarId(r), Claim { value: Value::Int(v), owner: TxId(k) }))
        .collect();
    m
}

pub fn from_memory(m: &MemoryState) -> (Theta, Delta) {
    let int = |v: &Value| v.as_int().unwrap();
    (
        m.heap.iter().map(|(r, v)| (r.0, int(v))).collect(),
        m.working.iter().map(|(r, c)| (r.0, (int(&c.value), c.owner.0))).collect(),
    )
}

pub fn pointwise(locs: &BTreeSet<u64>, f: impl Fn(u64) -> Option<i64>) -> Theta {
    locs.iter().filter_map(|&r| f(r).map(|v| (r, v))).collect()
}

pub fn pointwise_delta(locs: &BTreeSet<u64>, f: impl Fn(u64) -> Option<(i64, u64)>) -> Delta {
    locs.iter().filter_map(|&r| f(r).map(|c| (r, c))).collect()
}

/// One random operation on a random state, compared with the model.
/// Returns a description of the first mismatch.
pub fn memory_trial(rng: &mut impl RngCore) -> Option<String> {
    let (theta, delta) = random_state(rng);
    let mut m = to_memory(&theta, &delta);
    let k = 1 + below(rng, 3) as u64;
    let mut locs: BTreeSet<u64> = theta.keys().chain(delta.keys()).copied().collect();
    let existing: Vec<u64> = locs.iter().copied().collect();
    let ctx = format!("Θ={theta:?} Δ={delta:?} k={k}");
    let (op, want) = match below(rng, 5) {
        0 | 1 if !existing.is_empty() => {
            let r = existing[below(rng, existing.len())];
            if below(rng, 2) == 0 {
                let (v, d, merged) = read_rule(&theta, &delta, k, r, &locs);
                let got = m.claim_read(VarId(r), TxId(k)).unwrap();
                if got.value != Value::Int(v) || got.merged_into != merged.map(TxId) {
                    return Some(format!("{ctx} read r{r}: got {got:?}, want {v} merged {merged:?}"));
                }
                (format!("read r{r}"), (theta.clone(), d))
            } else {
                let v = 50 + below(rng, 10) as i64;
                let (d, merged) = write_rule(&delta, k, r, v, &locs);
                let got = m.claim_write(VarId(r), Value::Int(v), TxId(k)).unwrap();
                if got != merged.map(TxId) {
                    return Some(format!("{ctx} write r{r}: merged {got:?}, want {merged:?}"));
                }
                (format!("write r{r}={v}"), (theta.clone(), d))
            }
        }
        2 => {
            let ids = otm_core::ids::IdGen::new();
            for _ in 0..LOCS {
                ids.var();
            }
            let r = m.alloc_var(&ids, Value::Int(77), TxId(k));
            if r != VarId(LOCS) {
                return Some(format!("{ctx} alloc gave {r}"));
            }
            locs.insert(LOCS);
            let mut d = delta.clone();
            d.insert(LOCS, (77, k));
            ("alloc".to_string(), (theta.clone(), d))
        }
        3 => {
            m.commit_apply(TxId(k));
            let want = (pointwise(&locs, |r| commit(&theta, &delta, k, r)), pointwise_delta(&locs, |r| cleanup(&delta, k, r)));
            ("commit".to_string(), want)
        }
        _ => {
            m.leak(TxId(k));
            let want = (pointwise(&locs, |r| leak(&theta, &delta, k, r)), pointwise_delta(&locs, |r| cleanup(&delta, k, r)));
            ("abort".to_string(), want)
        }
    };
    let got = from_memory(&m);
    (got != want).then(|| format!("{ctx} {op}: got {got:?}, want {want:?}"))
}

// ---------------------------------------------------------------------------
// Sequential evaluation of sample statements against a plain heap.

#[derive(Clone, Debug, PartialEq)]
pub enum SeqOutcome {
    Returned(Value),
    Threw(Value),
    Retried,
}

pub struct SeqState {
    pub heap: BTreeMap<u64, i64>,
    pub next_id: u64,
}

fn seq_stmt(s: &Stmt, st: &mut SeqState) -> SeqOutcome {
    use SeqOutcome::*;
    match s {
        Stmt::Read(i) => Returned(Value::Int(st.heap[&(*i as u64)])),
        Stmt::Write(i, c) => {
            st.heap.insert(*i as u64, *c);
            Returned(Value::Unit)
        }
        Stmt::Add { dst, src, delta } => {
            let x = st.heap[&(*src as u64)];
            st.heap.insert(*dst as u64, x.wrapping_add(*delta));
            Returned(Value::Unit)
        }
        Stmt::Check(i, min) => {
            if st.heap[&(*i as u64)] >= *min {
                Returned(Value::Unit)
            } else {
                Retried
            }
        }
        Stmt::New(c) => {
            let id = st.next_id;
            st.next_id += 1;
            st.heap.insert(id, *c);
            Returned(Value::Var(VarId(id)))
        }
        Stmt::Throw(c) => Threw(Value::exception(USER, Value::Int(*c))),
        Stmt::Retry => Retried,
        Stmt::Catch(body, handler) => match seq_block(body, st) {
            Threw(_) => seq_block(handler, st),
            o => o,
        },
        Stmt::OrElse(a, b) => {
            // Discarded effects are undone; allocated ids stay consumed.
            let saved = st.heap.clone();
            match seq_block(a, st) {
                Retried => {
                    st.heap = saved;
                    seq_block(b, st)
                }
                o => o,
            }
        }
    }
}

pub fn seq_block(b: &[Stmt], st: &mut SeqState) -> SeqOutcome {
    let mut last = SeqOutcome::Returned(Value::Unit);
    for s in b {
        last = seq_stmt(s, st);
        if !matches!(last, SeqOutcome::Returned(_)) {
            break;
        }
    }
    last
}

/// Expected committed heap and main-thread outcome of `atomic(isolated(body))`
/// over `vars`; `None` as outcome means the transaction blocks forever.
pub fn expected_atomic(vars: &[i64], body: &[Stmt]) -> (BTreeMap<u64, i64>, Option<SeqOutcome>) {
    let initial: BTreeMap<u64, i64> = vars.iter().enumerate().map(|(i, &x)| (i as u64, x)).collect();
    let mut st = SeqState { heap: initial.clone(), next_id: vars.len() as u64 };
    match seq_block(body, &mut st) {
        o @ SeqOutcome::Returned(_) => (st.heap, Some(o)),
        o @ SeqOutcome::Threw(_) => {
            // Only locations created by the body survive an abort.
            let mut heap = initial;
            heap.extend(st.heap.into_iter().filter(|&(r, _)| r >= vars.len() as u64));
            (heap, Some(o))
        }
        SeqOutcome::Retried => (initial, None),
    }
}

// ---------------------------------------------------------------------------
// Random well-formed histories. Written values are unique per history, so
// every read names its writer unambiguously.

pub fn random_history(rng: &mut impl RngCore, txs: usize, len: usize, vars: u64) -> History {
    let mut events = Vec::new();
    let mut ended: BTreeSet<u64> = BTreeSet::new();
    let mut written: BTreeMap<u64, Vec<i64>> = BTreeMap::new();
    let mut fresh = 100i64;
    for seq in 0..len as u64 {
        let live: Vec<u64> = (1..=txs as u64).filter(|k| !ended.contains(k)).collect();
        if live.is_empty() {
            break;
        }
        let k = live[below(rng, live.len())];
        let r = below(rng, vars as usize) as u64;
        let op = match below(rng, 10) {
            0..=3 => match written.get(&r) {
                Some(vs) => Op::Read(VarId(r), Value::Int(vs[below(rng, vs.len())])),
                None => {
                    fresh += 1;
                    written.entry(r).or_default().push(fresh);
                    Op::New(VarId(r), Value::Int(fresh))
                }
            },
            4..=7 => {
                fresh += 1;
                written.entry(r).or_default().push(fresh);
                Op::Write(VarId(r), Value::Int(fresh))
            }
            8 => {
                ended.insert(k);
                Op::Commit
            }
            _ => {
                ended.insert(k);
                Op::Abort
            }
        };
        events.push(Event { seq, tx: TxId(k), thread: ThreadId(k), op });
    }
    History::from_events(events)
}

// ---------------------------------------------------------------------------
// Brute-force history predicates.

/// Remove every local event at once, repeat until nothing changes.
pub fn brute_nonlocal(events: &[Event]) -> Vec<Event> {
    let mut cur = events.to_vec();
    loop {
        let local: Vec<bool> = (0..cur.len())
            .map(|i| {
                let e = &cur[i];
                let Some(r) = e.op.var() else { return false };
                let same = |x: &Event| x.tx == e.tx && x.op.var() == Some(r);
                let prev = cur[..i].iter().rev().find(|x| same(x));
                let next = cur[i + 1..].iter().find(|x| same(x));
                let is_w = |x: Option<&Event>| x.is_some_and(|x| matches!(x.op, Op::Write(..) | Op::New(..)));
                match e.op {
                    Op::Read(..) => is_w(prev),
                    Op::Write(..) => is_w(next),
                    _ => false,
                }
            })
            .collect();
        if !local.contains(&true) {
            return cur;
        }
        cur = cur.into_iter().zip(local).filter(|(_, l)| !l).map(|(e, _)| e).collect();
    }
}

fn first_op_pos(events: &[Event], k: TxId) -> Option<usize> {
    events
        .iter()
        .position(|e| e.tx == k && e.op.var().is_some())
        .or_else(|| events.iter().position(|e| e.tx == k))
}

/// `k ≺ k'` for every pair, by comparing event positions.
pub fn brute_happens_before(events: &[Event]) -> BTreeSet<(TxId, TxId)> {
    let txs: BTreeSet<TxId> = events.iter().map(|e| e.tx).collect();
    let mut out = BTreeSet::new();
    for &k in &txs {
        for &k2 in &txs {
            let end = events.iter().position(|e| e.tx == k && matches!(e.op, Op::Commit | Op::Abort));
            if let (Some(end), Some(first)) = (end, first_op_pos(events, k2)) {
                if k != k2 && end < first {
                    out.insert((k, k2));
                }
            }
        }
    }
    out
}

/// Writer of the read at `i`, for histories with unique written values.
fn writer(events: &[Event], i: usize) -> Option<TxId> {
    let Op::Read(r, ref v) = events[i].op else { return None };
    events[..i]
        .iter()
        .find(|w| matches!(&w.op, Op::Write(r2, v2) | Op::New(r2, v2) if *r2 == r && v2 == v))
        .map(|w| w.tx)
}

pub fn reads_from(events: &[Event], k: TxId, k2: TxId) -> bool {
    (0..events.len()).any(|i| events[i].tx == k && writer(events, i) == Some(k2))
}

fn writes(events: &[Event], k: TxId, r: VarId) -> bool {
    events.iter().any(|e| e.tx == k && e.op.is_write() && e.op.var() == Some(r))
}

fn committed(events: &[Event], k: TxId) -> bool {
    events.iter().any(|e| e.tx == k && e.op == Op::Commit)
}

/// Rule numbers (1..=4) that produce the edge `k → k2` under `order`.
pub fn edge_rules(events: &[Event], order: &[TxId], k: TxId, k2: TxId) -> BTreeSet<u8> {
    let before = |a: TxId, b: TxId| {
        order.iter().position(|&x| x == a).unwrap() < order.iter().position(|&x| x == b).unwrap()
    };
    let mut rules = BTreeSet::new();
    if k == k2 {
        return rules;
    }
    if brute_happens_before(events).contains(&(k2, k)) {
        rules.insert(1);
    }
    if reads_from(events, k, k2) {
        rules.insert(2);
    }
    let k2_reads_k_loc = events
        .iter()
        .any(|e| e.tx == k2 && e.op.is_read() && writes(events, k, e.op.var().unwrap()));
    if k2_reads_k_loc && before(k2, k) {
        rules.insert(3);
    }
    let interposed = (0..events.len()).any(|i| {
        let e = &events[i];
        e.op.is_read()
            && writer(events, i) == Some(k)
            && committed(events, k2)
            && writes(events, k2, e.op.var().unwrap())
            && before(k2, e.tx)
    });
    if interposed {
        rules.insert(4);
    }
    rules
}

//! Library behaviour checked against the independent models in `common`.

mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::*;
use otm_core::action::Outcome;
use otm_core::history::TxStatus;
use otm_core::ids::{ThreadId, TxId, VarId};
use otm_core::opacity::{build_opg, Colour};
use otm_core::sample::{random_block, Sample, Shape};
use otm_core::scheduler::{run, Limits, Policy, RunVerdict};
use otm_core::value::Value;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn claims_merges_and_endings_match_the_pointwise_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..3_000 {
        if let Some(m) = memory_trial(&mut rng) {
            panic!("trial {i}: {m}");
        }
    }
}

#[test]
fn disjoint_commit_and_abort_commute() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..1_000 {
        let (theta, delta) = random_state(&mut rng);
        let (k, j) = (1, 2);
        let mut a = to_memory(&theta, &delta);
        a.commit_apply(TxId(k));
        a.leak(TxId(j));
        let mut b = to_memory(&theta, &delta);
        b.leak(TxId(j));
        b.commit_apply(TxId(k));
        assert_eq!(from_memory(&a), from_memory(&b));
    }
}

#[test]
fn atomic_isolated_equals_sequential_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let shape = Shape { vars: 3, depth: 2, stmts: 4, ..Shape::default() };
    let mut kinds = BTreeMap::<&str, usize>::new();
    for _ in 0..1_000 {
        let vars: Vec<i64> = (0..3).map(|_| below(&mut rng, 7) as i64 - 2).collect();
        let body = random_block(&mut rng, &shape);
        let (heap, outcome) = expected_atomic(&vars, &body);
        let r = run(&Sample::single(vars.clone(), body.clone()).program(), Policy::RoundRobin, "", Limits::new(500, 4).unwrap());
        let got_heap: BTreeMap<u64, i64> =
            r.machine.memory().heap.iter().map(|(v, x)| (v.0, x.as_int().unwrap())).collect();
        assert_eq!(got_heap, heap, "{vars:?} {body:?}");
        assert!(r.machine.memory().working.is_empty());
        let got = r.machine.finished().get(&ThreadId(0));
        match outcome {
            None => {
                assert_eq!(r.verdict, RunVerdict::QuiescentBlocked, "{body:?}");
                assert!(got.is_none());
                *kinds.entry("blocked").or_default() += 1;
            }
            Some(SeqOutcome::Returned(v)) => {
                assert_eq!(got, Some(&Outcome::Returned(v)), "{body:?}");
                *kinds.entry("returned").or_default() += 1;
            }
            Some(SeqOutcome::Threw(e)) => {
                assert_eq!(got, Some(&Outcome::Threw(e)), "{body:?}");
                *kinds.entry("threw").or_default() += 1;
            }
            Some(SeqOutcome::Retried) => unreachable!(),
        }
    }
    assert!(kinds.values().all(|&n| n >= 100), "{kinds:?}");
}

#[test]
fn nonlocal_matches_brute_force_filter() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..2_000 {
        let h = random_history(&mut rng, 3, 10, 3);
        assert_eq!(h.nonlocal().into_events(), brute_nonlocal(h.events()));
    }
}

#[test]
fn happens_before_matches_event_positions() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..2_000 {
        let h = random_history(&mut rng, 4, 12, 3);
        assert_eq!(h.happens_before().unwrap(), brute_happens_before(h.events()));
    }
}

#[test]
fn three_transaction_chain_with_one_overlap() {
    use otm_core::history::{Event, History, Op};
    let e = |seq, k: u64, op| Event { seq, tx: TxId(k), thread: ThreadId(k), op };
    let w = |r: u64, v: i64| Op::Write(VarId(r), Value::Int(v));
    // k1 then k2 sequentially; k3 overlaps k2.
    let h = History::from_events(vec![
        e(0, 1, w(0, 1)),
        e(1, 1, Op::Commit),
        e(2, 2, w(0, 2)),
        e(3, 3, w(1, 3)),
        e(4, 2, Op::Commit),
        e(5, 3, Op::Commit),
    ]);
    let expected: BTreeSet<_> = [(TxId(1), TxId(2)), (TxId(1), TxId(3))].into();
    assert_eq!(h.happens_before().unwrap(), expected);
    assert_eq!(brute_happens_before(h.events()), expected);
}

#[test]
fn opacity_graph_edges_match_rule_predicates() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut seen = BTreeSet::new();
    for _ in 0..2_000 {
        let h = random_history(&mut rng, 3, 10, 2).nonlocal();
        let mut order = h.transactions();
        for i in (1..order.len()).rev() {
            order.swap(i, below(&mut rng, i + 1));
        }
        let g = build_opg(&h, &order).unwrap();
        for &k in &order {
            let colour = if h.status(k) == TxStatus::Committed { Colour::Black } else { Colour::Red };
            assert_eq!(g.colour(k), Some(colour));
            for &k2 in &order {
                let want = edge_rules(h.events(), &order, k, k2);
                let got: BTreeSet<u8> = g.edge_rules(k, k2).map(|r| r.numbers().into_iter().collect()).unwrap_or_default();
                assert_eq!(got, want, "{k:?}->{k2:?} under {order:?} in {h:?}");
                seen.extend(want.iter().copied());
            }
        }
        for (a, b, c) in g.edges() {
            assert_eq!(c == Colour::Red, reads_from(h.events(), a, b));
        }
    }
    assert_eq!(seen, [1, 2, 3, 4].into());
}

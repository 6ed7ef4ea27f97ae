use super::*;
use crate::action::{Env, Itm, Otm};
use crate::memory::Claim;
use alloc::vec;

fn t(n: u64) -> ThreadId {
    ThreadId(n)
}

fn choice(thread: u64, rule: Rule) -> Choice {
    Choice { thread: t(thread), rule }
}

/// Step the lowest enabled choice until `stop` holds or nothing is enabled.
fn drive(m: &mut Machine, stop: impl Fn(&Machine) -> bool) {
    for _ in 0..10_000 {
        if stop(m) {
            return;
        }
        let Some(&c) = m.enabled().first() else { return };
        m.step(c).unwrap();
    }
    panic!("drive did not stop");
}

/// Like `drive`, restricted to one thread's choices.
fn drive_only(m: &mut Machine, th: ThreadId, stop: impl Fn(&Machine) -> bool) {
    for _ in 0..10_000 {
        if stop(m) {
            return;
        }
        let Some(&c) = m.enabled().iter().find(|c| c.thread == th) else { return };
        m.step(c).unwrap();
    }
    panic!("drive_only did not stop");
}

fn increment(e: &Env, _: Value) -> Itm {
    Itm::read(e.var(0)).bind(e.clone(), |e, v| Itm::write(e.var(0), v.as_int().unwrap() + 1))
}

/// `r <- atomically (new 0); then body r`.
fn with_var(body: fn(&Env, Value) -> Io) -> Io {
    Itm::new_var(0).atomically().bind(Env::empty(), body)
}

fn r0() -> VarId {
    VarId(0)
}

#[test]
fn finished_program_has_nothing_enabled() {
    let m = Machine::new(Io::ret(5), "");
    assert!(m.enabled().is_empty());
    assert!(m.is_finished());
    assert_eq!(m.finished()[&t(0)], Outcome::Returned(Value::Int(5)));
}

#[test]
fn new_enters_fresh_transaction() {
    let mut m = Machine::new(Itm::ret(1).atomically(), "");
    assert_eq!(m.enabled(), vec![choice(0, Rule::New)]);
    let info = m.step(choice(0, Rule::New)).unwrap();
    assert_eq!(info.label, TransitionLabel::New { tx: TxId(0) });
    assert_eq!(m.thread(t(0)).unwrap().tx(), Some(TxId(0)));
    assert_eq!(info.events, 0);
}

#[test]
fn sole_participant_at_result_may_commit() {
    let mut m = Machine::new(Otm::ret(3).atomic(), "");
    m.step(choice(0, Rule::New)).unwrap();
    assert_eq!(m.enabled(), vec![choice(0, Rule::Commit)]);
    let info = m.step(choice(0, Rule::Commit)).unwrap();
    assert_eq!(info.label, TransitionLabel::Co { tx: TxId(0) });
    assert!(m.live().is_empty());
    assert_eq!(m.finished()[&t(0)], Outcome::Returned(Value::Int(3)));
}

#[test]
fn commit_waits_for_every_participant() {
    // Parent forks a child that still has an isolated block to run.
    fn body(_: &Env, _: Value) -> Otm {
        Otm::ret(())
    }
    let child = Itm::ret(7).isolated().bind(Env::empty(), |_, _| Otm::ret(()));
    let prog = Otm::fork(child).bind(Env::empty(), body).atomic();
    let mut m = Machine::new(prog, "");
    m.step(choice(0, Rule::New)).unwrap();
    m.step(choice(0, Rule::ForkT)).unwrap();
    m.step(choice(0, Rule::BindVal)).unwrap();
    let en = m.enabled();
    assert!(!en.iter().any(|c| c.rule == Rule::Commit));
    assert_eq!(en, vec![choice(1, Rule::Isolated)]);
}

#[test]
fn fork_io_adds_plain_thread() {
    let prog = Io::put_char('a').fork();
    let mut m = Machine::new(prog, "");
    let info = m.step(choice(0, Rule::ForkIo)).unwrap();
    assert_eq!(info.label, TransitionLabel::Tau);
    assert!(matches!(m.thread(t(1)), Some(Thread::Plain { .. })));
    assert_eq!(m.finished()[&t(0)], Outcome::Returned(Value::Thread(t(1))));
}

#[test]
fn fork_t_joins_transaction_and_forest() {
    let prog = Otm::ret(()).fork().atomic();
    let mut m = Machine::new(prog, "");
    m.step(choice(0, Rule::New)).unwrap();
    let info = m.step(choice(0, Rule::ForkT)).unwrap();
    assert_eq!(info.label, TransitionLabel::Tau);
    assert_eq!(m.thread(t(1)).unwrap().tx(), Some(TxId(0)));
    assert_eq!(m.memory().forest.root(t(1)), t(0));
}

#[test]
fn isolated_increment_claims_location() {
    let mut m = Machine::new(with_var(|_, r| Itm::ret(()).isolated().atomic().then(Io::ret(r))), "");
    drive(&mut m, |m| m.thread(t(0)).is_some_and(|th| th.tx() == Some(TxId(1))));
    let body = increment(&Env::values([Value::Var(r0())]), Value::Unit).into_action();
    let out = m.run_isolated(t(0), &body).unwrap();
    assert_eq!(out, Outcome::Returned(Value::Unit));
    assert_eq!(m.memory().working[&r0()], Claim { value: Value::Int(1), owner: TxId(1) });
    assert_eq!(m.memory().heap[&r0()], Value::Int(0));
}

#[test]
fn isolated_throw_keeps_claims() {
    let mut m = Machine::new(with_var(|_, _| Otm::ret(()).atomic()), "");
    drive(&mut m, |m| m.thread(t(0)).is_some_and(|th| th.tx() == Some(TxId(1))));
    fn boom(e: &Env, _: Value) -> Itm {
        Itm::throw(e.value(1).clone())
    }
    let body = Itm::write(r0(), 9).bind(Env::values([Value::Var(r0()), Value::Int(-1)]), boom);
    let out = m.run_isolated(t(0), body.action()).unwrap();
    assert_eq!(out, Outcome::Threw(Value::Int(-1)));
    assert_eq!(m.memory().working[&r0()].value, Value::Int(9));
}

#[test]
fn isolated_merges_into_holder() {
    // Two threads in separate transactions touch r0; the second merges.
    fn worker(e: &Env, _: Value) -> Io {
        let inc = increment(e, Value::Unit).isolated();
        let wait = Itm::read(e.var(0)).bind(e.clone(), |_, v| crate::action::check(v.as_int() == Some(2))).isolated();
        inc.then(wait).atomic()
    }
    fn main(_: &Env, r: Value) -> Io {
        let env = Env::values([r]);
        worker(&env, Value::Unit).fork().then(worker(&env, Value::Unit))
    }
    let mut m = Machine::new(with_var(main), "");
    drive(&mut m, |m| m.live().len() == 2);
    // Thread 0 has incremented and waits; thread 1's increment merges into its transaction.
    let k0 = m.thread(t(0)).unwrap().tx().unwrap();
    let k1 = m.thread(t(1)).unwrap().tx().unwrap();
    assert_eq!(m.memory().working[&r0()].owner, k0);
    let info = m.step(choice(1, Rule::Isolated)).unwrap();
    assert_eq!(info.events, 3);
    assert_eq!(m.thread(t(1)).unwrap().tx(), Some(k0));
    let ops: Vec<_> = m.history().events().iter().rev().take(3).map(|e| (e.tx, e.op.clone())).collect();
    assert_eq!(ops[2], (k1, Op::Merge(k0)));
    drive(&mut m, |m| m.is_finished());
    assert_eq!(m.memory().heap[&r0()], Value::Int(2));
    let commits = m.history().events().iter().filter(|e| e.op == Op::Commit).count();
    assert_eq!(commits, 2, "setup transaction plus one merged commit");
}

fn down(e: &Env, _: Value) -> Itm {
    Itm::read(e.var(0)).bind(e.clone(), |e, v| {
        let n = v.as_int().unwrap();
        if n > 0 {
            Itm::write(e.var(0), n - 1)
        } else {
            Itm::retry()
        }
    })
}

fn in_tx_with(initial: i64) -> Machine {
    let prog = Itm::new_var(initial).atomically().then(Otm::ret(()).atomic());
    let mut m = Machine::new(prog, "");
    drive(&mut m, |m| m.thread(t(0)).and_then(Thread::tx) == Some(TxId(1)));
    m
}

#[test]
fn or_else_first_branch() {
    let mut m = in_tx_with(1);
    let env = Env::values([Value::Var(r0())]);
    let out = m.eval_orelse(t(0), down(&env, Value::Unit).into_action(), Action::retry()).unwrap();
    assert_eq!(out, Outcome::Returned(Value::Unit));
    assert_eq!(m.memory().working[&r0()].value, Value::Int(0));
}

#[test]
fn or_else_second_branch_discards_first() {
    let mut m = in_tx_with(0);
    let env = Env::values([Value::Var(r0())]);
    let before = m.history().len();
    let out = m.eval_orelse(t(0), down(&env, Value::Unit).into_action(), Itm::ret(()).into_action()).unwrap();
    assert_eq!(out, Outcome::Returned(Value::Unit));
    assert!(!m.memory().working.contains_key(&r0()), "branch-1 claim rolled back");
    assert_eq!(m.memory().heap[&r0()], Value::Int(0));
    assert_eq!(m.history().len(), before);
}

#[test]
fn retrying_isolated_changes_nothing() {
    let mut m = in_tx_with(0);
    let env = Env::values([Value::Var(r0())]);
    let snapshot = m.memory().clone();
    assert_eq!(m.run_isolated(t(0), down(&env, Value::Unit).action()).unwrap(), Outcome::Retried);
    assert_eq!(m.memory(), &snapshot);
}

#[test]
fn run_isolated_requires_transaction() {
    let mut m = Machine::new(Io::get_char(), "");
    assert_eq!(
        m.run_isolated(t(0), Itm::ret(()).action()),
        Err(EngineError::NotInTransaction(t(0)))
    );
}

#[test]
fn single_thread_abort_rethrows_and_leaks() {
    fn body(_: &Env, _: Value) -> Itm {
        Itm::throw(Value::Int(42))
    }
    let prog = Itm::new_var(5).bind(Env::empty(), body).isolated().atomic();
    let mut m = Machine::new(prog, "");
    drive(&mut m, |m| m.enabled().iter().any(|c| c.rule == Rule::Abort));
    let info = m.step(choice(0, Rule::Abort)).unwrap();
    assert_eq!(info.label, TransitionLabel::Ab { tx: TxId(0), thread: t(0), exc: Value::Int(42) });
    assert_eq!(m.finished()[&t(0)], Outcome::Threw(Value::Int(42)));
    assert_eq!(m.memory().heap[&VarId(0)], Value::Int(5), "var created in the aborted transaction leaks");
    assert!(m.memory().working.is_empty());
}

#[test]
fn abort_kills_forked_child_and_root_rethrows() {
    // Root forks a child that loops on a blocked read, then throws itself.
    let child = Itm::retry().isolated();
    let prog = child.fork().then(Otm::throw(Value::Int(1))).atomic();
    let mut m = Machine::new(prog, "");
    drive(&mut m, |m| m.enabled().iter().any(|c| c.rule == Rule::Abort));
    assert!(m.thread(t(1)).is_some());
    let info = m.step(choice(0, Rule::Abort)).unwrap();
    assert!(m.thread(t(1)).is_none());
    assert!(!m.finished().contains_key(&t(1)));
    assert_eq!(m.finished()[&t(0)], Outcome::Threw(Value::Int(1)));
    assert!(m.memory().forest.is_empty());
    assert_eq!(info.broadcast.len(), 2);
}

#[test]
fn abort_restarts_foreign_root() {
    // t1 claims r0 then waits; t0 merges into it and throws.
    fn t1_body(e: &Env, _: Value) -> Io {
        let claim = Itm::write(e.var(0), 1).isolated();
        let wait = Itm::read(e.var(0)).bind(e.clone(), |_, v| crate::action::check(v.as_int() == Some(5))).isolated();
        claim.then(wait).atomic()
    }
    fn t0_body(e: &Env, _: Value) -> Io {
        Itm::read(e.var(0)).then(Itm::throw(Value::Int(-1))).isolated().atomic()
    }
    fn main(_: &Env, r: Value) -> Io {
        let env = Env::values([r]);
        t1_body(&env, Value::Unit).fork().then(t0_body(&env, Value::Unit))
    }
    let mut m = Machine::new(with_var(main), "");
    drive(&mut m, |m| m.thread(t(1)).is_some());
    drive_only(&mut m, t(1), |m| m.memory().working.contains_key(&r0()));
    drive_only(&mut m, t(0), |m| m.enabled().contains(&choice(0, Rule::Abort)));
    let k = m.thread(t(1)).unwrap().tx().unwrap();
    assert_eq!(m.thread(t(0)).unwrap().tx(), Some(k));
    let info = m.step(choice(0, Rule::Abort)).unwrap();
    assert!(matches!(info.broadcast[1].1, TransitionLabel::AbBar { .. }));
    assert_eq!(m.finished()[&t(0)], Outcome::Threw(Value::Int(-1)));
    let th1 = m.thread(t(1)).unwrap();
    assert!(matches!(th1, Thread::Plain { .. }));
    assert!(matches!(th1.code().focus.node(), Node::Atomic(_)));
    assert_eq!(m.memory().heap[&r0()], Value::Int(0));
    assert_eq!(m.restarts(), 1);
    // The restart draws a fresh transaction id.
    m.step(choice(1, Rule::New)).unwrap();
    assert!(m.thread(t(1)).unwrap().tx().unwrap() > k);
}

#[test]
fn io_chars() {
    let echo = Io::get_char().bind(Env::empty(), |_, c| Io::put_char(c.as_char().unwrap()));
    let mut m = Machine::new(echo, "a");
    assert_eq!(m.step(choice(0, Rule::InChar)).unwrap().label, TransitionLabel::In { c: 'a' });
    m.step(choice(0, Rule::BindVal)).unwrap();
    assert_eq!(m.step(choice(0, Rule::OutChar)).unwrap().label, TransitionLabel::Out { c: 'a' });
    assert_eq!(m.output(), "a");
    assert!(m.is_finished());

    let blocked = Machine::new(Io::get_char(), "");
    assert!(blocked.enabled().is_empty());
    assert!(!blocked.is_finished());
}

#[test]
fn stuck_transaction_rolls_back_and_waits() {
    // Waits for r0 to become 1; nobody writes it.
    fn body(e: &Env, _: Value) -> Io {
        down(e, Value::Unit).isolated().atomic()
    }
    let mut m = Machine::new(with_var(|_, r| body(&Env::values([r]), Value::Unit)), "");
    drive(&mut m, |m| m.live().len() == 1 && m.thread(t(0)).unwrap().tx() == Some(TxId(1)));
    assert_eq!(m.enabled(), vec![choice(0, Rule::Rollback)]);
    let info = m.step(choice(0, Rule::Rollback)).unwrap();
    assert_eq!(info.label, TransitionLabel::Restart { tx: TxId(1) });
    assert_eq!(m.history().events().last().unwrap().op, Op::Abort);
    // Nothing it read has changed, so the restart is not enabled.
    assert!(m.enabled().is_empty());
    assert!(!m.is_finished());
}

#[test]
fn step_rejects_disabled_choice() {
    let mut m = Machine::new(Io::ret(()), "");
    assert_eq!(m.step(choice(0, Rule::New)), Err(EngineError::NotEnabled(choice(0, Rule::New))));
}

#[test]
fn fingerprint_ignores_tx_naming() {
    let a = in_tx_with(3);
    let mut b = a.clone();
    assert_eq!(a.fingerprint(), b.fingerprint());
    b.step(choice(0, Rule::Commit)).unwrap();
    assert_ne!(a.fingerprint(), b.fingerprint());
    // Same state reached with a different transaction id.
    let mut c = a.clone();
    c.merge_tx(TxId(1), TxId(77));
    c.memory.rename_owner(TxId(1), TxId(77));
    assert_eq!(a.fingerprint(), c.fingerprint());
}

//! Synchronisation abstractions built only from the public action API.

pub mod scenarios;

use alloc::string::String;
use alloc::vec::Vec;

use crate::action::{check, Env, Io, Itm, Otm, PureFn};
use crate::ids::VarId;
use crate::value::Value;

fn int(v: &Value) -> Result<i64, String> {
    v.as_int().ok_or_else(|| alloc::format!("expected an integer, got {v}"))
}

fn counters(v: &Value) -> Result<(i64, i64), String> {
    let (a, b) = v.as_pair().ok_or_else(|| alloc::format!("expected a pair, got {v}"))?;
    Ok((int(a)?, int(b)?))
}

/// `x ↦ x + n`.
pub fn add(n: i64) -> PureFn {
    PureFn::new(Value::Int(n), |n, x| Ok(Value::Int(int(&x)? + int(n)?)))
}

/// `x ↦ x >= n`.
pub fn at_least(n: i64) -> PureFn {
    PureFn::new(Value::Int(n), |n, x| Ok(Value::Bool(int(&x)? >= int(n)?)))
}

/// `(a, b) ↦ (a + da, b + db)`.
pub fn bimap_add(da: i64, db: i64) -> PureFn {
    PureFn::new(Value::pair(da.into(), db.into()), |d, x| {
        let ((a, b), (da, db)) = (counters(&x)?, counters(d)?);
        Ok(Value::pair((a + da).into(), (b + db).into()))
    })
}

pub fn modify(r: VarId, f: PureFn) -> Itm {
    Itm::read(r).bind(Env::values([Value::Var(r)]).with_funcs([f]), |e, x| {
        Itm::pure(e.funcs[0].clone(), x).bind(e.clone(), |e, y| Itm::write(e.var(0), y))
    })
}

/// Retry unless `p` holds of the current value.
pub fn assert_var(r: VarId, p: PureFn) -> Itm {
    Itm::read(r).bind(Env::empty().with_funcs([p]), |e, x| {
        Itm::pure(e.funcs[0].clone(), x).bind(Env::empty(), |_, b| check(b == Value::Bool(true)))
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Semaphore(pub VarId);

impl Semaphore {
    pub fn create(initial: i64) -> Itm {
        Itm::new_var(initial)
    }

    pub fn up(self) -> Itm {
        modify(self.0, add(1))
    }

    pub fn down(self) -> Itm {
        assert_var(self.0, at_least(1)).then(modify(self.0, add(-1)))
    }
}

/// Decrement the first semaphore that can be decremented; retry if none can.
pub fn down_any(sems: &[Semaphore]) -> Itm {
    sems.iter().rev().fold(Itm::retry(), |rest, s| s.down().or_else(rest))
}

/// A one-slot buffer holding none-or-value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MVar(pub VarId);

impl MVar {
    pub fn create_empty() -> Itm {
        Itm::new_var(Value::none())
    }

    pub fn take(self) -> Itm {
        Itm::read(self.0).bind(Env::values([Value::Var(self.0)]), |e, v| match v.as_option() {
            Some(Some(x)) => Itm::write(e.var(0), Value::none()).then(Itm::ret(x.clone())),
            _ => Itm::retry(),
        })
    }

    pub fn put(self, v: Value) -> Itm {
        Itm::read(self.0).bind(Env::values([Value::Var(self.0), v]), |e, cur| match cur.as_option() {
            Some(None) => Itm::write(e.var(0), Value::some(e.value(1).clone())),
            _ => Itm::retry(),
        })
    }
}

/// Counters `(running, waiting)` for a dynamic thread group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Barrier(pub VarId);

fn nobody(slot: i64) -> PureFn {
    PureFn::new(Value::Int(slot), |slot, x| {
        let (r, w) = counters(&x)?;
        Ok(Value::Bool(if int(slot)? == 0 { r == 0 } else { w == 0 }))
    })
}

impl Barrier {
    pub fn create() -> Itm {
        Itm::new_var(Value::pair(0.into(), 0.into()))
    }

    /// Join the group; blocked while a crossing is in progress.
    pub fn join(self) -> Itm {
        assert_var(self.0, nobody(1)).then(modify(self.0, bimap_add(1, 0)))
    }

    /// Move from running to waiting, then cross once nobody is running.
    /// Two isolated blocks, so other members can arrive in between.
    pub fn await_all(self) -> Otm {
        let arrive = modify(self.0, bimap_add(-1, 1)).isolated();
        let cross = assert_var(self.0, nobody(0)).then(modify(self.0, bimap_add(0, -1))).isolated();
        arrive.then(cross)
    }
}

/// none-or-value cell filled once by a worker thread.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Future(pub VarId);

impl Future {
    pub fn get(self) -> Itm {
        Itm::read(self.0).bind(Env::empty(), |_, v| match v.as_option() {
            Some(Some(x)) => Itm::ret(x.clone()),
            _ => Itm::retry(),
        })
    }

    /// Allocate a future and fork a worker into the current transaction that
    /// runs `job` and stores its result.
    pub fn spawn(job: Otm) -> Otm {
        Itm::new_var(Value::none()).isolated().bind(Env::empty().with_actions([job.into_action()]), |e, f| {
            let job = Otm::from_action(e.actions[0].clone()).expect("job is an OTM action");
            let worker = job.bind(Env::values([f.clone()]), |e, r| Itm::write(e.var(0), Value::some(r)).isolated());
            worker.fork().then(Otm::ret(f))
        })
    }
}

pub fn deposit(a: VarId, n: i64) -> Itm {
    modify(a, add(n))
}

/// Blocks until the account holds at least `n`.
pub fn withdraw(a: VarId, n: i64) -> Itm {
    assert_var(a, at_least(n)).then(modify(a, add(-n)))
}

pub fn transfer(from: VarId, to: VarId, n: i64) -> Itm {
    withdraw(from, n).then(deposit(to, n))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Campaign {
    pub account: VarId,
    pub target: i64,
}

impl Campaign {
    pub fn create_account() -> Itm {
        Itm::new_var(0)
    }

    pub fn back(self, from: VarId, amount: i64) -> Itm {
        transfer(from, self.account, amount)
    }

    /// Retry until the target is met, then move the whole balance to `fundraiser`.
    pub fn close(self, fundraiser: VarId) -> Itm {
        let env = Env::values([Value::Var(self.account), Value::Int(self.target), Value::Var(fundraiser)]);
        Itm::read(self.account).bind(env, |e, x| {
            let x = x.as_int().unwrap_or(0);
            check(x >= e.int(1)).then(transfer(e.var(0), e.var(2), x))
        })
    }

    /// Blocks until the campaign account has been emptied by `close`.
    pub fn await_closed(self) -> Itm {
        assert_var(self.account, PureFn::new(Value::Unit, |_, x| Ok(Value::Bool(int(&x)? == 0))))
    }
}

/// Places are semaphores; each transition takes one token from every input
/// and puts one on every output.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PetriNet {
    pub places: Vec<Semaphore>,
    pub transitions: Vec<(Vec<usize>, Vec<usize>)>,
}

impl PetriNet {
    /// One atomic, non-isolated firing: each `down` and `up` in its own isolated block.
    pub fn fire(&self, transition: usize) -> Otm {
        let (ins, outs) = &self.transitions[transition];
        let takes = ins.iter().map(|&p| self.places[p].down().isolated());
        let puts = outs.iter().map(|&p| self.places[p].up().isolated());
        Otm::sequence_(takes.chain(puts).collect())
    }

    /// A thread firing the transition `rounds` times, or forever when `None`.
    pub fn transition_thread(&self, transition: usize, rounds: Option<u32>) -> Io {
        let fire = self.fire(transition).atomic();
        match rounds {
            Some(n) => Io::sequence_((0..n).map(|_| fire.clone()).collect()),
            None => forever(fire),
        }
    }
}

/// Repeat `body` without end.
pub fn forever(body: Io) -> Io {
    fn again(e: &Env, _: Value) -> Io {
        let body = Io::from_action(e.actions[0].clone()).expect("loop body is an IO action");
        body.clone().bind(e.clone(), again)
    }
    body.clone().bind(Env::empty().with_actions([body.into_action()]), again)
}

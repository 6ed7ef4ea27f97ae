//! Random small programs for property tests and fuzzing.
//!
//! A [`Sample`] allocates its variables first, so in a fresh machine they are
//! `VarId(0)..VarId(n)`; statements refer to them by index.

use alloc::boxed::Box;
use alloc::vec::Vec;

use rand_core::RngCore;
use serde::{Deserialize, Serialize};

use crate::action::{check, Env, Io, Itm, Otm};
use crate::ids::VarId;
use crate::value::Value;

/// Exception tag used by [`Stmt::Throw`].
pub const USER: &str = "user";

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stmt {
    Read(usize),
    Write(usize, i64),
    /// `var[dst] := var[src] + delta`
    Add { dst: usize, src: usize, delta: i64 },
    /// Retry unless `var[0] >= min`.
    Check(usize, i64),
    New(i64),
    Throw(i64),
    Retry,
    Catch(Box<Block>, Box<Block>),
    OrElse(Box<Block>, Box<Block>),
}

/// Statements run in order; the block yields the last statement's result,
/// or unit when empty.
pub type Block = Vec<Stmt>;

/// One thread: a transaction made of isolated segments, optionally forking a
/// helper thread into the same transaction first.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ThreadPlan {
    pub segments: Vec<Block>,
    pub child: Option<Vec<Block>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sample {
    pub vars: Vec<i64>,
    pub threads: Vec<ThreadPlan>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shape {
    pub vars: usize,
    pub threads: usize,
    pub segments: usize,
    pub stmts: usize,
    pub depth: usize,
    pub fork_percent: u32,
}

impl Default for Shape {
    fn default() -> Self {
        Self { vars: 3, threads: 3, segments: 3, stmts: 3, depth: 2, fork_percent: 25 }
    }
}

fn below(rng: &mut impl RngCore, n: usize) -> usize {
    ((u64::from(rng.next_u32()) * n as u64) >> 32) as usize
}

fn small(rng: &mut impl RngCore) -> i64 {
    below(rng, 7) as i64 - 2
}

fn block(rng: &mut impl RngCore, shape: &Shape, depth: usize) -> Block {
    let len = 1 + below(rng, shape.stmts.max(1));
    (0..len).map(|_| stmt(rng, shape, depth)).collect()
}

fn stmt(rng: &mut impl RngCore, shape: &Shape, depth: usize) -> Stmt {
    let var = |rng: &mut _| below(rng, shape.vars.max(1));
    let kinds = if depth == 0 { 14 } else { 16 };
    match below(rng, kinds) {
        0..=2 => Stmt::Read(var(rng)),
        3..=5 => Stmt::Write(var(rng), small(rng)),
        6..=8 => Stmt::Add { dst: var(rng), src: var(rng), delta: small(rng) },
        9 | 10 => Stmt::Check(var(rng), small(rng)),
        11 => Stmt::New(small(rng)),
        12 => Stmt::Throw(small(rng)),
        13 => Stmt::Retry,
        14 => Stmt::Catch(Box::new(block(rng, shape, depth - 1)), Box::new(block(rng, shape, depth - 1))),
        _ => Stmt::OrElse(Box::new(block(rng, shape, depth - 1)), Box::new(block(rng, shape, depth - 1))),
    }
}

/// A random block over `shape.vars` variables.
pub fn random_block(rng: &mut impl RngCore, shape: &Shape) -> Block {
    block(rng, shape, shape.depth)
}

pub fn random_sample(rng: &mut impl RngCore, shape: &Shape) -> Sample {
    let vars = (0..shape.vars.max(1)).map(|_| small(rng)).collect();
    let segments = |rng: &mut _| (0..1 + below(rng, shape.segments.max(1))).map(|_| random_block(rng, shape)).collect();
    let threads = (0..1 + below(rng, shape.threads.max(1)))
        .map(|_| {
            let fork = below(rng, 100) < shape.fork_percent as usize;
            let child = if fork { Some(segments(rng)) } else { None };
            ThreadPlan { segments: segments(rng), child }
        })
        .collect();
    Sample { vars, threads }
}

pub fn compile_block(b: &[Stmt]) -> Itm {
    match b.split_last() {
        None => Itm::ret(()),
        Some((last, init)) => init.iter().rev().fold(compile_stmt(last), |rest, s| compile_stmt(s).then(rest)),
    }
}

fn v(i: usize) -> VarId {
    VarId(i as u64)
}

fn compile_stmt(s: &Stmt) -> Itm {
    match s {
        Stmt::Read(i) => Itm::read(v(*i)),
        Stmt::Write(i, c) => Itm::write(v(*i), *c),
        Stmt::Add { dst, src, delta } => Itm::read(v(*src)).bind(Env::values([v(*dst).into(), (*delta).into()]), |e, x| {
            Itm::write(e.var(0), x.as_int().unwrap_or(0).wrapping_add(e.int(1)))
        }),
        Stmt::Check(i, min) => Itm::read(v(*i)).bind(Env::values([(*min).into()]), |e, x| check(x.as_int().unwrap_or(0) >= e.int(0))),
        Stmt::New(c) => Itm::new_var(*c),
        Stmt::Throw(c) => Itm::throw(Value::exception(USER, Value::Int(*c))),
        Stmt::Retry => Itm::retry(),
        Stmt::Catch(body, handler) => {
            let env = Env::empty().with_actions([compile_block(handler).into_action()]);
            compile_block(body).catch(env, |e, _| Itm::from_action(e.actions[0].clone()).expect("handler is ITM"))
        }
        Stmt::OrElse(a, b) => compile_block(a).or_else(compile_block(b)),
    }
}

/// Isolated segments in order; the transaction yields the last one's result.
fn compile_tx(segments: &[Block]) -> Otm {
    segments.iter().map(|b| compile_block(b).isolated()).reduce(Otm::then).unwrap_or_else(|| Otm::ret(()))
}

impl ThreadPlan {
    pub fn transaction(&self) -> Otm {
        let body = compile_tx(&self.segments);
        match &self.child {
            Some(child) => compile_tx(child).fork().then(body),
            None => body,
        }
    }
}

impl Sample {
    /// Setup transaction allocating the variables, then one thread per plan;
    /// the last plan runs on the main thread.
    pub fn program(&self) -> Io {
        let setup = Itm::sequence_(self.vars.iter().map(|&x| Itm::new_var(x)).collect()).atomically();
        let mut txs: Vec<Io> = self.threads.iter().map(|t| t.transaction().atomic()).collect();
        let last = txs.pop().unwrap_or_else(|| Io::ret(()));
        txs.into_iter().map(Io::fork).fold(setup, Io::then).then(last)
    }

    /// A single-threaded sample running `body` as `atomic(isolated(body))`.
    pub fn single(vars: Vec<i64>, body: Block) -> Self {
        Self { vars, threads: alloc::vec![ThreadPlan { segments: alloc::vec![body], child: None }] }
    }
}

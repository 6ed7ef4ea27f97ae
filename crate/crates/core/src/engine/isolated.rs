//! Complete sub-derivations of ITM code: the premise of the `Isolated` rule.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use crate::action::{Action, Code, Kind, Node, Outcome, KIND_ERROR};
use crate::history::Op;
use crate::ids::{IdGen, TxId, VarId};
use crate::memory::MemoryState;
use crate::value::Value;

/// Exception tag for an isolated body that exceeded its reduction budget.
pub const DIVERGED: &str = "diverged";
/// Exception tag for an access to a location that does not exist.
pub const INVALID_LOCATION: &str = "invalid-location";

pub(crate) struct Iso<'a> {
    pub memory: &'a mut MemoryState,
    pub ids: &'a IdGen,
    /// Current (possibly merged) transaction.
    pub tx: TxId,
    /// Operations in issue order, tagged with the issuing transaction.
    pub ops: Vec<(TxId, Op)>,
    /// Every location accessed, including in discarded `orElse` branches.
    pub touched: BTreeSet<VarId>,
    pub fuel: u64,
}

impl<'a> Iso<'a> {
    pub fn new(memory: &'a mut MemoryState, ids: &'a IdGen, tx: TxId, fuel: u64) -> Self {
        Self { memory, ids, tx, ops: Vec::new(), touched: BTreeSet::new(), fuel }
    }

    fn merge(&mut self, into: Option<TxId>) {
        if let Some(j) = into {
            self.ops.push((self.tx, Op::Merge(j)));
            self.tx = j;
        }
    }

    fn invalid(r: VarId) -> Action {
        Action::throw(Kind::Itm, Value::exception(INVALID_LOCATION, Value::Var(r)))
    }

    /// Run `body` to a final outcome.
    pub fn run(&mut self, body: Action) -> Outcome {
        let mut code = Code::new(body);
        loop {
            if let Some(o) = code.outcome() {
                return o;
            }
            if self.fuel == 0 {
                return Outcome::Threw(Value::exception(DIVERGED, Value::Unit));
            }
            self.fuel -= 1;
            if code.reduce().is_some() {
                continue;
            }
            let next = match code.focus.node().clone() {
                Node::NewVar(v) => {
                    let r = self.memory.alloc_var(self.ids, v.clone(), self.tx);
                    self.touched.insert(r);
                    self.ops.push((self.tx, Op::New(r, v)));
                    Action::ret(Kind::Itm, Value::Var(r))
                }
                Node::ReadVar(r) => match self.memory.claim_read(r, self.tx) {
                    Ok(c) => {
                        self.touched.insert(r);
                        self.merge(c.merged_into);
                        self.ops.push((self.tx, Op::Read(r, c.value.clone())));
                        Action::ret(Kind::Itm, c.value)
                    }
                    Err(_) => Self::invalid(r),
                },
                Node::WriteVar(r, v) => match self.memory.claim_write(r, v.clone(), self.tx) {
                    Ok(into) => {
                        self.touched.insert(r);
                        self.merge(into);
                        self.ops.push((self.tx, Op::Write(r, v)));
                        Action::ret(Kind::Itm, Value::Unit)
                    }
                    Err(_) => Self::invalid(r),
                },
                Node::OrElse(first, second) => match self.or_else(first, second) {
                    Outcome::Returned(v) => Action::ret(Kind::Itm, v),
                    Outcome::Threw(e) => Action::throw(Kind::Itm, e),
                    Outcome::Retried => Action::retry(),
                },
                _ => Action::throw(Kind::Itm, Value::exception(KIND_ERROR, Value::Unit)),
            };
            code.focus = next;
            code.normalize();
        }
    }

    /// Rules `Or1`/`Or2`: keep the first branch unless it retries, in which
    /// case its effects are discarded and the second branch runs.
    pub fn or_else(&mut self, first: Action, second: Action) -> Outcome {
        let snapshot = (self.memory.clone(), self.ops.len(), self.tx);
        match self.run(first) {
            Outcome::Retried => {
                let (memory, len, tx) = snapshot;
                *self.memory = memory;
                self.ops.truncate(len);
                self.tx = tx;
                self.run(second)
            }
            o => o,
        }
    }
}

//! The composable action algebra and the pure term reductions.
//!
//! An [`Action`] is an immutable tree. Continuations and host computations are
//! plain function pointers paired with an explicit captured environment
//! ([`Env`]), which keeps every action structurally comparable and hashable.
//! The explorer relies on that to recognise equal machine states.
//!
//! Three kinds exist: `Itm` (isolated, single threaded), `Otm` (open, atomic,
//! may fork) and `Io` (outside any transaction). The typed wrappers [`Itm`],
//! [`Otm`] and [`Io`] make the kind discipline a compile-time property; the
//! dynamic constructors on [`Action`] check it at construction instead.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;
use core::hash::{Hash, Hasher};

use siphasher::sip::SipHasher13;
use thiserror::Error;

use crate::ids::VarId;
use crate::value::{Value, EVAL_ERROR};

/// Tag of the exception raised when a continuation returns an action of the wrong kind.
pub const KIND_ERROR: &str = "kind-error";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Kind {
    Itm,
    Otm,
    Io,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kind::Itm => "ITM",
            Kind::Otm => "OTM",
            Kind::Io => "IO",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum KindError {
    #[error("cannot sequence a {first} action with a {then} continuation")]
    Mismatch { first: Kind, then: Kind },
    #[error("{node} requires a {expected} action, got {found}")]
    Expected { node: &'static str, expected: Kind, found: Kind },
    #[error("fork is not available in {0} actions")]
    ForkIn(Kind),
}

/// Host computation over values: `f(env, input)`.
pub type PureFnPtr = fn(&Value, Value) -> Result<Value, String>;

/// A total host function with its captured environment.
#[derive(Clone, Debug)]
pub struct PureFn {
    f: PureFnPtr,
    env: Value,
}

impl PureFn {
    pub fn new(env: Value, f: PureFnPtr) -> Self {
        Self { f, env }
    }

    pub fn call(&self, input: Value) -> Result<Value, String> {
        (self.f)(&self.env, input)
    }
}

impl PartialEq for PureFn {
    fn eq(&self, other: &Self) -> bool {
        self.f as usize == other.f as usize && self.env == other.env
    }
}

impl Eq for PureFn {}

impl Hash for PureFn {
    fn hash<H: Hasher>(&self, state: &mut H) {
        (self.f as usize).hash(state);
        self.env.hash(state);
    }
}

/// Rule `Eval`: run a host computation. Failures become an `eval-error` exception.
pub fn eval_pure(computation: &PureFn, input: Value) -> Result<Value, Value> {
    computation
        .call(input)
        .map_err(|msg| Value::exception(EVAL_ERROR, Value::List(msg.chars().map(Value::Char).collect())))
}

/// Captured environment of a continuation.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Env {
    pub values: Vec<Value>,
    pub actions: Vec<Action>,
    pub funcs: Vec<PureFn>,
}

impl Env {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn values(values: impl IntoIterator<Item = Value>) -> Self {
        Self { values: values.into_iter().collect(), ..Self::default() }
    }

    pub fn with_values(mut self, values: impl IntoIterator<Item = Value>) -> Self {
        self.values.extend(values);
        self
    }

    pub fn with_actions(mut self, actions: impl IntoIterator<Item = Action>) -> Self {
        self.actions.extend(actions);
        self
    }

    pub fn with_funcs(mut self, funcs: impl IntoIterator<Item = PureFn>) -> Self {
        self.funcs.extend(funcs);
        self
    }

    pub fn value(&self, i: usize) -> &Value {
        &self.values[i]
    }

    pub fn var(&self, i: usize) -> VarId {
        self.values[i].as_var().expect("environment slot holds a variable")
    }

    pub fn int(&self, i: usize) -> i64 {
        self.values[i].as_int().expect("environment slot holds an integer")
    }
}

#[derive(Clone, Copy)]
enum ContFn {
    Any(fn(&Env, Value) -> Action),
    Itm(fn(&Env, Value) -> Itm),
    Otm(fn(&Env, Value) -> Otm),
    Io(fn(&Env, Value) -> Io),
}

impl ContFn {
    fn addr(self) -> (u8, usize) {
        match self {
            ContFn::Any(f) => (0, f as usize),
            ContFn::Itm(f) => (1, f as usize),
            ContFn::Otm(f) => (2, f as usize),
            ContFn::Io(f) => (3, f as usize),
        }
    }

    fn kind(self) -> Option<Kind> {
        match self {
            ContFn::Any(_) => None,
            ContFn::Itm(_) => Some(Kind::Itm),
            ContFn::Otm(_) => Some(Kind::Otm),
            ContFn::Io(_) => Some(Kind::Io),
        }
    }
}

/// A continuation `Value -> Action` (also used for exception handlers).
#[derive(Clone)]
pub struct Cont {
    f: ContFn,
    env: Env,
}

impl Cont {
    /// Untyped continuation; its result kind is checked when it is applied.
    pub fn new(env: Env, f: fn(&Env, Value) -> Action) -> Self {
        Self { f: ContFn::Any(f), env }
    }

    /// Result kind, when statically known.
    pub fn kind(&self) -> Option<Kind> {
        self.f.kind()
    }

    pub fn apply(&self, v: Value) -> Action {
        match self.f {
            ContFn::Any(f) => f(&self.env, v),
            ContFn::Itm(f) => f(&self.env, v).0,
            ContFn::Otm(f) => f(&self.env, v).0,
            ContFn::Io(f) => f(&self.env, v).0,
        }
    }
}

impl fmt::Debug for Cont {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (tag, addr) = self.f.addr();
        write!(f, "Cont({tag}:{addr:#x}, {:?})", self.env)
    }
}

impl PartialEq for Cont {
    fn eq(&self, other: &Self) -> bool {
        self.f.addr() == other.f.addr() && self.env == other.env
    }
}

impl Eq for Cont {}

impl Hash for Cont {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.f.addr().hash(state);
        self.env.hash(state);
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Node {
    Return(Value),
    Bind(Action, Cont),
    Throw(Value),
    Catch(Action, Cont),
    Retry,
    OrElse(Action, Action),
    NewVar(Value),
    ReadVar(VarId),
    WriteVar(VarId, Value),
    Isolated(Action),
    Fork(Action),
    Pure(PureFn, Value),
    Atomic(Action),
    GetChar,
    PutChar(char),
}

#[derive(Debug)]
struct Inner {
    kind: Kind,
    node: Node,
    fingerprint: u64,
}

/// Shared, immutable action tree.
#[derive(Clone)]
pub struct Action(Arc<Inner>);

impl Action {
    fn make(kind: Kind, node: Node) -> Action {
        let mut h = SipHasher13::new();
        kind.hash(&mut h);
        node.hash(&mut h);
        Action(Arc::new(Inner { kind, node, fingerprint: h.finish() }))
    }

    pub fn kind(&self) -> Kind {
        self.0.kind
    }

    pub fn node(&self) -> &Node {
        &self.0.node
    }

    /// Structural hash, computed once at construction.
    pub fn fingerprint(&self) -> u64 {
        self.0.fingerprint
    }

    pub fn ret(kind: Kind, v: Value) -> Action {
        Action::make(kind, Node::Return(v))
    }

    pub fn throw(kind: Kind, v: Value) -> Action {
        Action::make(kind, Node::Throw(v))
    }

    pub fn pure(kind: Kind, f: PureFn, input: Value) -> Action {
        Action::make(kind, Node::Pure(f, input))
    }

    pub fn retry() -> Action {
        Action::make(Kind::Itm, Node::Retry)
    }

    pub fn new_var(v: Value) -> Action {
        Action::make(Kind::Itm, Node::NewVar(v))
    }

    pub fn read_var(r: VarId) -> Action {
        Action::make(Kind::Itm, Node::ReadVar(r))
    }

    pub fn write_var(r: VarId, v: Value) -> Action {
        Action::make(Kind::Itm, Node::WriteVar(r, v))
    }

    pub fn get_char() -> Action {
        Action::make(Kind::Io, Node::GetChar)
    }

    pub fn put_char(c: char) -> Action {
        Action::make(Kind::Io, Node::PutChar(c))
    }

    /// `first >>= then`.
    pub fn seq(first: Action, then: Cont) -> Result<Action, KindError> {
        if let Some(k) = then.kind() {
            if k != first.kind() {
                return Err(KindError::Mismatch { first: first.kind(), then: k });
            }
        }
        Ok(Action::make(first.kind(), Node::Bind(first, then)))
    }

    /// `body `catch` handler`.
    pub fn catch(body: Action, handler: Cont) -> Result<Action, KindError> {
        if let Some(k) = handler.kind() {
            if k != body.kind() {
                return Err(KindError::Mismatch { first: body.kind(), then: k });
            }
        }
        Ok(Action::make(body.kind(), Node::Catch(body, handler)))
    }

    pub fn or_else(first: Action, second: Action) -> Result<Action, KindError> {
        expect_kind("orElse", Kind::Itm, &first)?;
        expect_kind("orElse", Kind::Itm, &second)?;
        Ok(Action::make(Kind::Itm, Node::OrElse(first, second)))
    }

    pub fn isolated(body: Action) -> Result<Action, KindError> {
        expect_kind("isolated", Kind::Itm, &body)?;
        Ok(Action::make(Kind::Otm, Node::Isolated(body)))
    }

    pub fn atomic(body: Action) -> Result<Action, KindError> {
        expect_kind("atomic", Kind::Otm, &body)?;
        Ok(Action::make(Kind::Io, Node::Atomic(body)))
    }

    /// `fork` inside a transaction (OTM) or `forkIO` at top level (IO).
    pub fn fork(child: Action) -> Result<Action, KindError> {
        match child.kind() {
            Kind::Itm => Err(KindError::ForkIn(Kind::Itm)),
            k => Ok(Action::make(k, Node::Fork(child))),
        }
    }
}

fn expect_kind(node: &'static str, expected: Kind, a: &Action) -> Result<(), KindError> {
    if a.kind() == expected {
        Ok(())
    } else {
        Err(KindError::Expected { node, expected, found: a.kind() })
    }
}

impl PartialEq for Action {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
            || (self.0.fingerprint == other.0.fingerprint
                && self.0.kind == other.0.kind
                && self.0.node == other.0.node)
    }
}

impl Eq for Action {}

impl Hash for Action {
    fn hash<H: Hasher>(&self, state: &mut H) {
        state.write_u64(self.0.fingerprint);
    }
}

impl fmt::Debug for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{:?}", self.0.kind, self.0.node)
    }
}

/// How a completed computation ended.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Outcome {
    Returned(Value),
    Threw(Value),
    Retried,
}

// ---------------------------------------------------------------------------
// Typed layer

macro_rules! typed {
    ($name:ident, $kind:expr, $variant:ident) => {
        #[derive(Clone, Debug, PartialEq, Eq, Hash)]
        pub struct $name(Action);

        impl $name {
            pub fn ret(v: impl Into<Value>) -> Self {
                Self(Action::ret($kind, v.into()))
            }

            pub fn throw(v: Value) -> Self {
                Self(Action::throw($kind, v))
            }

            /// Rule `Eval` on a host computation.
            pub fn pure(f: PureFn, input: Value) -> Self {
                Self(Action::pure($kind, f, input))
            }

            pub fn bind(self, env: Env, f: fn(&Env, Value) -> $name) -> Self {
                Self(Action::make($kind, Node::Bind(self.0, Cont { f: ContFn::$variant(f), env })))
            }

            /// Sequence ignoring the first result.
            pub fn then(self, next: $name) -> Self {
                self.bind(Env::empty().with_actions([next.0]), |e, _| $name(e.actions[0].clone()))
            }

            pub fn catch(self, env: Env, handler: fn(&Env, Value) -> $name) -> Self {
                Self(Action::make($kind, Node::Catch(self.0, Cont { f: ContFn::$variant(handler), env })))
            }

            /// Run `items` in order, returning the list of their results.
            pub fn sequence(items: Vec<$name>) -> Self {
                fn step(e: &Env, acc: Value) -> $name {
                    let done = acc.as_list().map_or(0, |l| l.len());
                    if done == e.actions.len() {
                        return $name::ret(acc);
                    }
                    let next = $name(e.actions[done].clone());
                    next.bind(Env::empty().with_actions(e.actions.iter().cloned()).with_values([acc]), |e, v| {
                        let mut acc = e.values[0].as_list().map(|l| l.to_vec()).unwrap_or_default();
                        acc.push(v);
                        step(&Env::empty().with_actions(e.actions.iter().cloned()), Value::List(acc))
                    })
                }
                step(&Env::empty().with_actions(items.into_iter().map(|a| a.0)), Value::List(Vec::new()))
            }

            /// Run `items` in order, discarding results.
            pub fn sequence_(items: Vec<$name>) -> Self {
                let mut iter = items.into_iter().rev();
                match iter.next() {
                    None => $name::ret(()),
                    Some(last) => {
                        let last = last.then($name::ret(()));
                        iter.fold(last, |acc, a| a.then(acc))
                    }
                }
            }

            pub fn action(&self) -> &Action {
                &self.0
            }

            pub fn into_action(self) -> Action {
                self.0
            }

            /// Wraps an untyped action after checking its kind.
            pub fn from_action(a: Action) -> Result<Self, KindError> {
                expect_kind(stringify!($name), $kind, &a)?;
                Ok(Self(a))
            }
        }

        impl From<$name> for Action {
            fn from(a: $name) -> Action {
                a.0
            }
        }
    };
}

typed!(Itm, Kind::Itm, Itm);
typed!(Otm, Kind::Otm, Otm);
typed!(Io, Kind::Io, Io);

impl Itm {
    pub fn retry() -> Itm {
        Itm(Action::retry())
    }

    pub fn new_var(v: impl Into<Value>) -> Itm {
        Itm(Action::new_var(v.into()))
    }

    pub fn read(r: VarId) -> Itm {
        Itm(Action::read_var(r))
    }

    pub fn write(r: VarId, v: impl Into<Value>) -> Itm {
        Itm(Action::write_var(r, v.into()))
    }

    pub fn or_else(self, other: Itm) -> Itm {
        Itm(Action::make(Kind::Itm, Node::OrElse(self.0, other.0)))
    }

    pub fn isolated(self) -> Otm {
        Otm(Action::make(Kind::Otm, Node::Isolated(self.0)))
    }

    /// `atomically = atomic . isolated`.
    pub fn atomically(self) -> Io {
        self.isolated().atomic()
    }
}

impl Otm {
    pub fn fork(self) -> Otm {
        Otm(Action::make(Kind::Otm, Node::Fork(self.0)))
    }

    pub fn atomic(self) -> Io {
        Io(Action::make(Kind::Io, Node::Atomic(self.0)))
    }
}

impl Io {
    pub fn fork(self) -> Io {
        Io(Action::make(Kind::Io, Node::Fork(self.0)))
    }

    pub fn get_char() -> Io {
        Io(Action::get_char())
    }

    pub fn put_char(c: char) -> Io {
        Io(Action::put_char(c))
    }
}

/// `check b = if b then return () else retry`.
pub fn check(b: bool) -> Itm {
    if b {
        Itm::ret(())
    } else {
        Itm::retry()
    }
}

/// Exception value for a failed host-side computation inside a continuation.
pub fn eval_error(msg: &str) -> Value {
    Value::exception(EVAL_ERROR, Value::List(msg.chars().map(Value::Char).collect()))
}

// ---------------------------------------------------------------------------
// Evaluation contexts and term reductions

/// One layer of evaluation context: `[] >>= f` or `[] `catch` h`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Frame {
    Bind(Cont, Kind),
    Catch(Cont, Kind),
}

/// Name of a term reduction rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TermRule {
    Eval,
    BindVal,
    BindEx,
    CatchVal,
    CatchEx,
}

/// A focused term: the redex position plus its evaluation context (innermost last).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Code {
    pub focus: Action,
    pub stack: Vec<Frame>,
}

impl Code {
    pub fn new(focus: Action) -> Code {
        let mut code = Code { focus, stack: Vec::new() };
        code.normalize();
        code
    }

    pub fn with_stack(focus: Action, stack: Vec<Frame>) -> Code {
        let mut code = Code { focus, stack };
        code.normalize();
        code
    }

    /// Decompose binds and catches until the focus is a redex.
    pub fn normalize(&mut self) {
        loop {
            let next = match self.focus.node() {
                Node::Bind(a, f) => {
                    self.stack.push(Frame::Bind(f.clone(), self.focus.kind()));
                    a.clone()
                }
                Node::Catch(a, h) => {
                    self.stack.push(Frame::Catch(h.clone(), self.focus.kind()));
                    a.clone()
                }
                _ => return,
            };
            self.focus = next;
        }
    }

    /// Final outcome, when the focus is a result and the context is empty.
    pub fn outcome(&self) -> Option<Outcome> {
        if !self.stack.is_empty() {
            return None;
        }
        match self.focus.node() {
            Node::Return(v) => Some(Outcome::Returned(v.clone())),
            Node::Throw(v) => Some(Outcome::Threw(v.clone())),
            Node::Retry => Some(Outcome::Retried),
            _ => None,
        }
    }

    /// The pure reduction applicable at the focus, if any.
    pub fn term_rule(&self) -> Option<TermRule> {
        let top = self.stack.last();
        match (self.focus.node(), top) {
            (Node::Pure(..), _) => Some(TermRule::Eval),
            (Node::Return(_), Some(Frame::Bind(..))) => Some(TermRule::BindVal),
            (Node::Throw(_) | Node::Retry, Some(Frame::Bind(..))) => Some(TermRule::BindEx),
            (Node::Return(_) | Node::Retry, Some(Frame::Catch(..))) => Some(TermRule::CatchVal),
            (Node::Throw(_), Some(Frame::Catch(..))) => Some(TermRule::CatchEx),
            _ => None,
        }
    }

    /// Apply the pure reduction at the focus. Returns the rule used.
    pub fn reduce(&mut self) -> Option<TermRule> {
        let rule = self.term_rule()?;
        let kind = self.focus.kind();
        match rule {
            TermRule::Eval => {
                let Node::Pure(f, input) = self.focus.node() else { unreachable!() };
                self.focus = match eval_pure(f, input.clone()) {
                    Ok(v) => Action::ret(kind, v),
                    Err(e) => Action::throw(kind, e),
                };
            }
            TermRule::BindVal | TermRule::CatchEx => {
                let v = match self.focus.node() {
                    Node::Return(v) | Node::Throw(v) => v.clone(),
                    _ => unreachable!(),
                };
                let (Some(Frame::Bind(f, k)) | Some(Frame::Catch(f, k))) = self.stack.pop() else {
                    unreachable!()
                };
                let next = f.apply(v);
                self.focus = if next.kind() == k {
                    next
                } else {
                    Action::throw(k, Value::exception(KIND_ERROR, Value::Unit))
                };
            }
            TermRule::BindEx | TermRule::CatchVal => {
                self.stack.pop();
            }
        }
        self.normalize();
        Some(rule)
    }
}

/// Evaluate a computation that uses only pure nodes (`Return`, `Throw`,
/// `Retry`, `Pure`, binds and catches). Returns `None` when an effectful node
/// is reached.
pub fn eval_term(a: &Action) -> Option<Outcome> {
    let mut code = Code::new(a.clone());
    loop {
        if let Some(o) = code.outcome() {
            return Some(o);
        }
        code.reduce()?;
    }
}

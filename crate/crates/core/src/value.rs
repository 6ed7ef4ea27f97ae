//! The value domain stored in transactional variables and passed between actions.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::ids::{ThreadId, VarId};

/// Immutable interpreter value. Serialized as `{"t": <tag>, "v": <payload>}`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "t", content = "v", rename_all = "snake_case")]
pub enum Value {
    Unit,
    Bool(bool),
    Int(i64),
    Char(char),
    Var(VarId),
    Thread(ThreadId),
    Pair(Box<Value>, Box<Value>),
    List(Vec<Value>),
    Exception { tag: String, payload: Box<Value> },
}

/// Tag used for exceptions raised by failing host computations.
pub const EVAL_ERROR: &str = "eval-error";

impl Value {
    pub fn pair(a: Value, b: Value) -> Value {
        Value::Pair(Box::new(a), Box::new(b))
    }

    pub fn exception(tag: impl Into<String>, payload: Value) -> Value {
        Value::Exception { tag: tag.into(), payload: Box::new(payload) }
    }

    /// `Nothing`, encoded as the empty list.
    pub fn none() -> Value {
        Value::List(Vec::new())
    }

    /// `Just v`, encoded as a singleton list.
    pub fn some(v: Value) -> Value {
        Value::List(vec![v])
    }

    /// Reads a `none()`/`some(v)` encoding back.
    pub fn as_option(&self) -> Option<Option<&Value>> {
        match self {
            Value::List(items) if items.is_empty() => Some(None),
            Value::List(items) if items.len() == 1 => Some(Some(&items[0])),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(n) => Some(*n),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_var(&self) -> Option<VarId> {
        match self {
            Value::Var(r) => Some(*r),
            _ => None,
        }
    }

    pub fn as_char(&self) -> Option<char> {
        match self {
            Value::Char(c) => Some(*c),
            _ => None,
        }
    }

    pub fn as_pair(&self) -> Option<(&Value, &Value)> {
        match self {
            Value::Pair(a, b) => Some((a, b)),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Value]> {
        match self {
            Value::List(items) => Some(items),
            _ => None,
        }
    }

    /// Variables mentioned anywhere inside the value.
    pub fn vars(&self, out: &mut Vec<VarId>) {
        match self {
            Value::Var(r) => out.push(*r),
            Value::Pair(a, b) => {
                a.vars(out);
                b.vars(out);
            }
            Value::List(items) => items.iter().for_each(|v| v.vars(out)),
            Value::Exception { payload, .. } => payload.vars(out),
            _ => {}
        }
    }
}

impl From<i64> for Value {
    fn from(n: i64) -> Self {
        Value::Int(n)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

impl From<char> for Value {
    fn from(c: char) -> Self {
        Value::Char(c)
    }
}

impl From<VarId> for Value {
    fn from(r: VarId) -> Self {
        Value::Var(r)
    }
}

impl From<ThreadId> for Value {
    fn from(t: ThreadId) -> Self {
        Value::Thread(t)
    }
}

impl From<()> for Value {
    fn from(_: ()) -> Self {
        Value::Unit
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Unit => f.write_str("()"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(n) => write!(f, "{n}"),
            Value::Char(c) => write!(f, "{c:?}"),
            Value::Var(r) => write!(f, "{r}"),
            Value::Thread(t) => write!(f, "{t}"),
            Value::Pair(a, b) => write!(f, "({a}, {b})"),
            Value::List(items) => {
                f.write_str("[")?;
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{v}")?;
                }
                f.write_str("]")
            }
            Value::Exception { tag, payload } => write!(f, "{tag}({payload})"),
        }
    }
}

//! Identifier newtypes and the per-run id generator.

use core::fmt;
use core::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident, $prefix:literal) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub u64);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(
    /// A transactional memory location.
    VarId,
    "r"
);
id_type!(
    /// A transaction name. Restarted transactions always get a fresh one.
    TxId,
    "k"
);
id_type!(
    /// A thread of the abstract machine.
    ThreadId,
    "t"
);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IdKind {
    Var,
    Tx,
    Thread,
}

/// Monotonic counters, one per id kind. Safe to share between callers.
#[derive(Debug, Default)]
pub struct IdGen {
    vars: AtomicU64,
    txs: AtomicU64,
    threads: AtomicU64,
}

impl IdGen {
    pub fn new() -> Self {
        Self::default()
    }

    fn counter(&self, kind: IdKind) -> &AtomicU64 {
        match kind {
            IdKind::Var => &self.vars,
            IdKind::Tx => &self.txs,
            IdKind::Thread => &self.threads,
        }
    }

    /// Raw next value for `kind`.
    pub fn fresh(&self, kind: IdKind) -> u64 {
        self.counter(kind).fetch_add(1, Ordering::Relaxed)
    }

    pub fn var(&self) -> VarId {
        VarId(self.fresh(IdKind::Var))
    }

    pub fn tx(&self) -> TxId {
        TxId(self.fresh(IdKind::Tx))
    }

    pub fn thread(&self) -> ThreadId {
        ThreadId(self.fresh(IdKind::Thread))
    }

    /// Number of ids of `kind` handed out so far.
    pub fn issued(&self, kind: IdKind) -> u64 {
        self.counter(kind).load(Ordering::Relaxed)
    }
}

impl Clone for IdGen {
    fn clone(&self) -> Self {
        Self {
            vars: AtomicU64::new(self.issued(IdKind::Var)),
            txs: AtomicU64::new(self.issued(IdKind::Tx)),
            threads: AtomicU64::new(self.issued(IdKind::Thread)),
        }
    }
}

//! Memory `⟨heap, working memory, fork forest⟩` and its auxiliary functions:
//! claims, merges (`Δ[k↦j]`), commit, cleanup, leak and forest maintenance.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{IdGen, ThreadId, TxId, VarId};
use crate::value::Value;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum MemoryError {
    #[error("unknown location {0}")]
    InvalidLocation(VarId),
    #[error("thread {0} is already in the fork forest")]
    DuplicateThread(ThreadId),
}

/// Committed values.
pub type Heap = BTreeMap<VarId, Value>;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Claim {
    pub value: Value,
    pub owner: TxId,
}

/// Tentative values, each tagged with the single transaction that claimed it.
pub type WorkingMemory = BTreeMap<VarId, Claim>;

/// Parent links of threads forked inside transactions.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ForkForest {
    parent: BTreeMap<ThreadId, Option<ThreadId>>,
}

impl ForkForest {
    pub fn contains(&self, t: ThreadId) -> bool {
        self.parent.contains_key(&t)
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    /// Attach `child` under `parent`; an untracked parent becomes a root.
    pub fn add_child(&mut self, parent: ThreadId, child: ThreadId) -> Result<(), MemoryError> {
        if self.parent.contains_key(&child) || child == parent {
            return Err(MemoryError::DuplicateThread(child));
        }
        self.parent.entry(parent).or_insert(None);
        self.parent.insert(child, Some(parent));
        Ok(())
    }

    /// Root of the tree containing `t`; untracked threads are their own root.
    pub fn root(&self, t: ThreadId) -> ThreadId {
        let mut cur = t;
        while let Some(Some(p)) = self.parent.get(&cur) {
            cur = *p;
        }
        cur
    }

    pub fn children(&self, t: ThreadId) -> impl Iterator<Item = ThreadId> + '_ {
        self.parent.iter().filter(move |(_, p)| **p == Some(t)).map(|(c, _)| *c)
    }

    /// Remove `r` and all its descendants, returning the removed threads.
    pub fn remove(&mut self, r: ThreadId) -> BTreeSet<ThreadId> {
        let mut removed = BTreeSet::new();
        let mut todo = alloc::vec![r];
        while let Some(t) = todo.pop() {
            if removed.insert(t) {
                todo.extend(self.children(t));
            }
        }
        for t in &removed {
            self.parent.remove(t);
        }
        removed
    }

    pub fn threads(&self) -> impl Iterator<Item = ThreadId> + '_ {
        self.parent.keys().copied()
    }
}

/// Result of claiming a location for reading.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReadClaim {
    pub value: Value,
    /// Set when the reader was merged into the claim holder.
    pub merged_into: Option<TxId>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MemoryState {
    pub heap: Heap,
    pub working: WorkingMemory,
    pub forest: ForkForest,
}

impl MemoryState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, r: VarId) -> bool {
        self.heap.contains_key(&r) || self.working.contains_key(&r)
    }

    /// Rule `NewVar`: a fresh location claimed by `owner`.
    pub fn alloc_var(&mut self, ids: &IdGen, initial: Value, owner: TxId) -> VarId {
        let mut r = ids.var();
        while self.contains(r) {
            r = ids.var();
        }
        self.working.insert(r, Claim { value: initial, owner });
        r
    }

    /// `Δ[k↦j]`: every entry owned by `k` becomes owned by `j`.
    pub fn rename_owner(&mut self, k: TxId, j: TxId) {
        for claim in self.working.values_mut() {
            if claim.owner == k {
                claim.owner = j;
            }
        }
    }

    /// Rules `Read1`/`Read2`.
    pub fn claim_read(&mut self, r: VarId, k: TxId) -> Result<ReadClaim, MemoryError> {
        if let Some(claim) = self.working.get(&r) {
            let (value, j) = (claim.value.clone(), claim.owner);
            if j == k {
                return Ok(ReadClaim { value, merged_into: None });
            }
            self.rename_owner(k, j);
            return Ok(ReadClaim { value, merged_into: Some(j) });
        }
        let value = self.heap.get(&r).cloned().ok_or(MemoryError::InvalidLocation(r))?;
        self.working.insert(r, Claim { value: value.clone(), owner: k });
        Ok(ReadClaim { value, merged_into: None })
    }

    /// Rules `Write1`/`Write2`. Returns the transaction `k` was merged into, if any.
    pub fn claim_write(&mut self, r: VarId, v: Value, k: TxId) -> Result<Option<TxId>, MemoryError> {
        match self.working.get(&r).map(|c| c.owner) {
            Some(j) if j != k => {
                self.rename_owner(k, j);
                self.working.insert(r, Claim { value: v, owner: j });
                Ok(Some(j))
            }
            Some(_) => {
                self.working.insert(r, Claim { value: v, owner: k });
                Ok(None)
            }
            None if self.heap.contains_key(&r) => {
                self.working.insert(r, Claim { value: v, owner: k });
                Ok(None)
            }
            None => Err(MemoryError::InvalidLocation(r)),
        }
    }

    /// Locations currently claimed by `k`.
    pub fn claims_of(&self, k: TxId) -> impl Iterator<Item = VarId> + '_ {
        self.working.iter().filter(move |(_, c)| c.owner == k).map(|(r, _)| *r)
    }

    /// `cleanup(k, Σ)`: drop every entry owned by `k`.
    pub fn cleanup(&mut self, k: TxId) {
        self.working.retain(|_, c| c.owner != k);
    }

    /// `Σ'_Θ = commit(k, Σ)`, `Σ'_Δ = cleanup(k, Σ)`.
    pub fn commit_apply(&mut self, k: TxId) {
        let owned: Vec<VarId> = self.claims_of(k).collect();
        for r in owned {
            if let Some(claim) = self.working.remove(&r) {
                self.heap.insert(r, claim.value);
            }
        }
    }

    /// `Σ'_Θ = leak(k, Σ)`, `Σ'_Δ = cleanup(k, Σ)`, `Σ'_Ψ = remove(root(t), Σ_Ψ)`.
    ///
    /// Locations created inside `k` (absent from the heap) survive with their
    /// last working value; everything else keeps its committed value.
    pub fn abort_apply(&mut self, k: TxId, raiser: ThreadId) -> BTreeSet<ThreadId> {
        self.leak(k);
        let root = self.forest.root(raiser);
        self.forest.remove(root)
    }

    /// `leak(k, Σ)` followed by `cleanup(k, Σ)`; the forest is untouched.
    pub fn leak(&mut self, k: TxId) {
        let owned: Vec<VarId> = self.claims_of(k).collect();
        for r in owned {
            if let Some(claim) = self.working.remove(&r) {
                self.heap.entry(r).or_insert(claim.value);
            }
        }
    }

    /// Roll back `k` without leaking: vars created in `k` disappear.
    pub fn rollback(&mut self, k: TxId) {
        self.cleanup(k);
    }

    /// Value visible to a reader outside any transaction: the committed one.
    pub fn committed(&self, r: VarId) -> Option<&Value> {
        self.heap.get(&r)
    }
}

//! Canonical state hashing for memoized exploration.
//!
//! Transaction ids are renamed in order of first appearance (threads in id
//! order), so states differing only in which fresh `TxId` was drawn collide.

use alloc::collections::BTreeMap;
use core::hash::Hash;

use siphasher::sip128::{Hasher128, SipHasher13};

use super::{Machine, Thread};
use crate::ids::TxId;

impl Machine {
    /// 128-bit hash of everything that influences future behaviour: memory,
    /// threads, finished outcomes, transaction read sets, I/O streams and the
    /// restart count. The history is excluded.
    pub fn fingerprint(&self) -> u128 {
        let mut names: BTreeMap<TxId, u64> = BTreeMap::new();
        for th in self.threads.values() {
            if let Some(k) = th.tx() {
                let n = names.len() as u64;
                names.entry(k).or_insert(n);
            }
        }
        let name = |k: &TxId| names.get(k).copied().unwrap_or(u64::MAX);

        let mut h = SipHasher13::new();
        self.memory.heap.hash(&mut h);
        for (r, c) in &self.memory.working {
            r.hash(&mut h);
            c.value.hash(&mut h);
            name(&c.owner).hash(&mut h);
        }
        self.memory.forest.hash(&mut h);
        for (t, th) in &self.threads {
            t.hash(&mut h);
            match th {
                Thread::Plain { code, guard } => {
                    0u8.hash(&mut h);
                    code.hash(&mut h);
                    guard.hash(&mut h);
                }
                Thread::InTx { tx, code, saved, origin } => {
                    1u8.hash(&mut h);
                    name(tx).hash(&mut h);
                    code.hash(&mut h);
                    saved.hash(&mut h);
                    origin.hash(&mut h);
                }
            }
        }
        self.finished.hash(&mut h);
        let mut touched: BTreeMap<u64, _> = BTreeMap::new();
        for (k, info) in &self.txs {
            touched.insert(name(k), &info.touched);
        }
        touched.hash(&mut h);
        self.input.hash(&mut h);
        self.output.hash(&mut h);
        self.restarts.hash(&mut h);
        h.finish128().as_u128()
    }
}

//! Prediction cache keyed by `(model, input)` with CLOCK eviction.
//!
//! An entry is either `Pending` (an evaluation is in flight and callers are
//! parked on it) or `Complete`. Concurrent requests for the same key coalesce
//! onto one pending entry, so the model is evaluated once. Pending entries are
//! never evicted; when every slot is pending, new keys bypass the cache.

use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use tokio::sync::oneshot;

use crate::types::{InputPayload, InputType, ModelName, Output};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over the input type tag byte followed by the raw element bytes.
pub fn input_hash(tag: u8, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in std::iter::once(&tag).chain(bytes) {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Full cache key. Equality compares the complete input, the hash only buckets.
#[derive(Debug, Clone)]
pub struct CacheKey {
    model: ModelName,
    input_type: InputType,
    bytes: Arc<[u8]>,
    hash: u64,
}

impl CacheKey {
    pub fn new(model: &ModelName, input: &InputPayload) -> Self {
        let input_type = input.input_type();
        let bytes: Arc<[u8]> = input.to_le_bytes().into();
        let hash = input_hash(input_type.tag() as u8, &bytes);
        CacheKey { model: model.clone(), input_type, bytes, hash }
    }

    pub fn model(&self) -> &ModelName {
        &self.model
    }

    pub fn input_hash(&self) -> u64 {
        self.hash
    }

    pub fn input(&self) -> InputPayload {
        InputPayload::from_le_bytes(self.input_type, &self.bytes).expect("key built from a valid payload")
    }
}

impl PartialEq for CacheKey {
    fn eq(&self, other: &Self) -> bool {
        self.hash == other.hash && self.input_type == other.input_type && self.model == other.model && self.bytes == other.bytes
    }
}

impl Eq for CacheKey {}

impl Hash for CacheKey {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.model.hash(state);
        state.write_u64(self.hash);
    }
}

/// How a missed key is to be evaluated.
#[derive(Debug)]
pub enum Reservation {
    /// A pending entry was created; complete it with [`PredictionCache::populate`]
    /// or release it with [`PredictionCache::abandon`].
    Cached(CacheKey),
    /// No evictable slot: deliver the result straight to this sender.
    Uncached(CacheKey, oneshot::Sender<Output>),
}

impl Reservation {
    pub fn key(&self) -> &CacheKey {
        match self {
            Reservation::Cached(k) | Reservation::Uncached(k, _) => k,
        }
    }
}

/// Outcome of [`PredictionCache::request_wait`].
#[derive(Debug)]
pub enum Lookup {
    Hit(Output),
    /// Resolves when the evaluation completes; a dropped sender means it failed.
    Wait(oneshot::Receiver<Output>),
}

enum EntryState {
    Pending(Vec<oneshot::Sender<Output>>),
    Complete(Output),
}

struct Slot {
    key: CacheKey,
    state: EntryState,
    referenced: bool,
}

struct Inner {
    index: HashMap<CacheKey, usize>,
    slots: Vec<Option<Slot>>,
    free: Vec<usize>,
    hand: usize,
}

pub struct PredictionCache {
    capacity: usize,
    inner: Mutex<Inner>,
    hits: AtomicU64,
    misses: AtomicU64,
    evictions: AtomicU64,
}

impl PredictionCache {
    pub fn new(capacity: usize) -> Self {
        PredictionCache {
            capacity,
            inner: Mutex::new(Inner { index: HashMap::new(), slots: Vec::new(), free: Vec::new(), hand: 0 }),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            evictions: AtomicU64::new(0),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Live entries, pending and complete.
    pub fn len(&self) -> usize {
        self.inner.lock().index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn evictions(&self) -> u64 {
        self.evictions.load(Ordering::Relaxed)
    }

    /// Returns `true` iff a complete entry exists. On a miss that is not
    /// already pending, `evaluate` is invoked exactly once (after the cache
    /// lock is released) to schedule the computation.
    pub fn request(&self, key: &CacheKey, evaluate: impl FnOnce(Reservation)) -> bool {
        let (hit, reservation) = {
            let mut inner = self.inner.lock();
            match inner.index.get(key).copied() {
                Some(i) => {
                    let slot = inner.slots[i].as_mut().expect("indexed slot");
                    slot.referenced = true;
                    (matches!(slot.state, EntryState::Complete(_)), None)
                }
                None => (false, Some(self.reserve(&mut inner, key.clone(), Vec::new()))),
            }
        };
        self.count(hit);
        if let Some(r) = reservation {
            evaluate(r);
        }
        hit
    }

    /// Like [`request`](Self::request) but also parks the caller on the result.
    pub fn request_wait(&self, key: &CacheKey, evaluate: impl FnOnce(Reservation)) -> Lookup {
        let (lookup, reservation) = {
            let mut inner = self.inner.lock();
            match inner.index.get(key).copied() {
                Some(i) => {
                    let slot = inner.slots[i].as_mut().expect("indexed slot");
                    slot.referenced = true;
                    match &mut slot.state {
                        EntryState::Complete(out) => (Lookup::Hit(out.clone()), None),
                        EntryState::Pending(waiters) => {
                            let (tx, rx) = oneshot::channel();
                            waiters.push(tx);
                            (Lookup::Wait(rx), None)
                        }
                    }
                }
                None => {
                    let (tx, rx) = oneshot::channel();
                    (Lookup::Wait(rx), Some(self.reserve(&mut inner, key.clone(), vec![tx])))
                }
            }
        };
        self.count(matches!(lookup, Lookup::Hit(_)));
        if let Some(r) = reservation {
            evaluate(r);
        }
        lookup
    }

    /// Non-blocking read. Sets the entry's reference bit on a hit.
    pub fn fetch(&self, key: &CacheKey) -> Option<Output> {
        let mut inner = self.inner.lock();
        let i = *inner.index.get(key)?;
        let slot = inner.slots[i].as_mut().expect("indexed slot");
        match &slot.state {
            EntryState::Complete(out) => {
                slot.referenced = true;
                Some(out.clone())
            }
            EntryState::Pending(_) => None,
        }
    }

    /// Stores a result and wakes everyone parked on the key.
    pub fn populate(&self, key: &CacheKey, output: Output) {
        let waiters = {
            let mut inner = self.inner.lock();
            match inner.index.get(key).copied() {
                Some(i) => {
                    let slot = inner.slots[i].as_mut().expect("indexed slot");
                    match std::mem::replace(&mut slot.state, EntryState::Complete(output.clone())) {
                        EntryState::Pending(w) => w,
                        EntryState::Complete(_) => Vec::new(),
                    }
                }
                None => {
                    let _ = self.insert(&mut inner, key.clone(), EntryState::Complete(output.clone()));
                    Vec::new()
                }
            }
        };
        for w in waiters {
            let _ = w.send(output.clone());
        }
    }

    /// Drops a pending entry; parked callers observe a closed channel.
    pub fn abandon(&self, key: &CacheKey) {
        let mut inner = self.inner.lock();
        if let Some(&i) = inner.index.get(key) {
            if matches!(inner.slots[i].as_ref().map(|s| &s.state), Some(EntryState::Pending(_))) {
                inner.index.remove(key);
                inner.slots[i] = None;
                inner.free.push(i);
            }
        }
    }

    fn count(&self, hit: bool) {
        if hit {
            self.hits.fetch_add(1, Ordering::Relaxed);
        } else {
            self.misses.fetch_add(1, Ordering::Relaxed);
        }
    }

    fn reserve(&self, inner: &mut Inner, key: CacheKey, waiters: Vec<oneshot::Sender<Output>>) -> Reservation {
        match self.insert(inner, key.clone(), EntryState::Pending(waiters)) {
            Ok(()) => Reservation::Cached(key),
            Err(EntryState::Pending(mut waiters)) => {
                let tx = waiters.pop().unwrap_or_else(|| oneshot::channel().0);
                Reservation::Uncached(key, tx)
            }
            Err(EntryState::Complete(_)) => unreachable!("reserve inserts pending entries"),
        }
    }

    /// Places an entry, sweeping the clock hand if the cache is full. Hands the
    /// state back when no slot could be freed.
    fn insert(&self, inner: &mut Inner, key: CacheKey, state: EntryState) -> Result<(), EntryState> {
        if self.capacity == 0 {
            return Err(state);
        }
        let i = if let Some(i) = inner.free.pop() {
            i
        } else if inner.slots.len() < self.capacity {
            inner.slots.push(None);
            inner.slots.len() - 1
        } else {
            match self.sweep(inner) {
                Some(i) => i,
                None => return Err(state),
            }
        };
        inner.index.insert(key.clone(), i);
        inner.slots[i] = Some(Slot { key, state, referenced: false });
        Ok(())
    }

    /// Second-chance sweep: clears reference bits until an unreferenced
    /// complete entry is found, then evicts it.
    fn sweep(&self, inner: &mut Inner) -> Option<usize> {
        let n = inner.slots.len();
        for _ in 0..2 * n + 1 {
            let i = inner.hand;
            inner.hand = (inner.hand + 1) % n;
            let evict = match inner.slots[i].as_mut() {
                None => return Some(i),
                Some(Slot { state: EntryState::Pending(_), .. }) => false,
                Some(slot) if slot.referenced => {
                    slot.referenced = false;
                    false
                }
                Some(_) => true,
            };
            if evict {
                let old = inner.slots[i].take().expect("occupied");
                inner.index.remove(&old.key);
                self.evictions.fetch_add(1, Ordering::Relaxed);
                return Some(i);
            }
        }
        None
    }
}

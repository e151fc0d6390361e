use std::collections::HashMap;
use std::num::NonZeroUsize;

use lru::LruCache;
use parking_lot::Mutex;

use crate::dsl::MAX_VARS;
use crate::scene::{Fid, Oid};

pub const DEFAULT_CACHE_CAPACITY: usize = 1 << 20;

/// Identifies one prefix `graphs[0..=i]` of a query evaluated on one segment
/// under one binding of the variables that prefix uses. Unused slots of
/// `oids` hold `Oid::MAX`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PrefixKey {
    pub prefix: u32,
    pub vid: u32,
    pub oids: [Oid; MAX_VARS],
}

/// Earliest run chain for a prefix, or `None` if the prefix has no match.
/// The earliest end is the end of the last run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefixResult {
    pub runs: Option<Box<[(Fid, Fid)]>>,
}

impl PrefixResult {
    pub fn earliest_end(&self) -> Option<Fid> {
        self.runs.as_ref().and_then(|r| r.last()).map(|r| r.1)
    }
}

#[derive(Default)]
struct Interner {
    ids: HashMap<String, u32>,
}

impl Interner {
    fn intern(&mut self, s: &str) -> u32 {
        if let Some(&id) = self.ids.get(s) {
            return id;
        }
        let id = self.ids.len() as u32;
        self.ids.insert(s.to_string(), id);
        id
    }
}

/// Bounded LRU cache of prefix results, safe to share across threads.
/// Concurrent inserts of the same key store identical values, so the last
/// write winning is harmless.
pub struct PrefixCache {
    entries: Mutex<LruCache<PrefixKey, PrefixResult>>,
    prefixes: Mutex<Interner>,
    vids: Mutex<Interner>,
}

impl PrefixCache {
    pub fn new(capacity: usize) -> Self {
        let cap = NonZeroUsize::new(capacity.max(1)).expect("nonzero");
        Self {
            entries: Mutex::new(LruCache::new(cap)),
            prefixes: Mutex::new(Interner::default()),
            vids: Mutex::new(Interner::default()),
        }
    }

    pub fn prefix_id(&self, text: &str) -> u32 {
        self.prefixes.lock().intern(text)
    }

    pub fn vid_id(&self, vid: &str) -> u32 {
        self.vids.lock().intern(vid)
    }

    pub fn get(&self, key: &PrefixKey) -> Option<PrefixResult> {
        self.entries.lock().get(key).cloned()
    }

    pub fn insert(&self, key: PrefixKey, value: PrefixResult) {
        self.entries.lock().put(key, value);
    }

    pub fn len(&self) -> usize {
        self.entries.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn capacity(&self) -> usize {
        self.entries.lock().cap().get()
    }

    pub fn clear(&self) {
        self.entries.lock().clear();
    }
}

impl Default for PrefixCache {
    fn default() -> Self {
        Self::new(DEFAULT_CACHE_CAPACITY)
    }
}

impl std::fmt::Debug for PrefixCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PrefixCache").field("len", &self.len()).field("capacity", &self.capacity()).finish()
    }
}

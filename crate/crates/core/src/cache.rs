//! Byte-capacity LRU cache used for edge caches.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::agents::CatalogItem;
use crate::demand::Genre;
use crate::error::CacheError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CacheTier {
    Edge,
    Home,
}

#[derive(Debug, Clone)]
struct Entry {
    item: CatalogItem,
    size: u64,
    stamp: u64,
}

#[derive(Debug, Clone)]
pub struct LruCache {
    tier: CacheTier,
    capacity: u64,
    used: u64,
    clock: u64,
    entries: HashMap<String, Entry>,
    /// recency stamp -> content id, oldest first
    order: BTreeMap<u64, String>,
}

impl LruCache {
    pub fn new(tier: CacheTier, capacity: u64) -> Self {
        Self { tier, capacity, used: 0, clock: 0, entries: HashMap::new(), order: BTreeMap::new() }
    }

    pub fn tier(&self) -> CacheTier {
        self.tier
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, content_id: &str) -> bool {
        self.entries.contains_key(content_id)
    }

    fn touch(&mut self, content_id: &str) {
        self.clock += 1;
        let entry = self.entries.get_mut(content_id).expect("touched entry exists");
        self.order.remove(&entry.stamp);
        entry.stamp = self.clock;
        self.order.insert(self.clock, content_id.to_string());
    }

    /// Hit refreshes recency; miss leaves the cache untouched.
    pub fn lookup(&mut self, content_id: &str) -> bool {
        if self.entries.contains_key(content_id) {
            self.touch(content_id);
            true
        } else {
            false
        }
    }

    /// Insert or refresh an object, evicting least-recently-used objects
    /// until it fits. Returns the evicted ids.
    pub fn insert(&mut self, content_id: &str, size: u64, genre: Genre) -> Result<Vec<String>, CacheError> {
        if size > self.capacity {
            return Err(CacheError::TooLarge { content_id: content_id.to_string(), size, capacity: self.capacity });
        }
        if let Some(old) = self.entries.get(content_id) {
            self.used -= old.size;
            self.order.remove(&old.stamp);
            self.entries.remove(content_id);
        }
        let mut evicted = Vec::new();
        while self.used + size > self.capacity {
            let (_, victim) = self.order.pop_first().expect("used > 0 implies entries");
            let entry = self.entries.remove(&victim).expect("ordered entry exists");
            self.used -= entry.size;
            evicted.push(victim);
        }
        self.clock += 1;
        self.used += size;
        self.order.insert(self.clock, content_id.to_string());
        self.entries.insert(
            content_id.to_string(),
            Entry {
                item: CatalogItem { content_id: content_id.to_string(), genre, cached: true },
                size,
                stamp: self.clock,
            },
        );
        Ok(evicted)
    }

    pub fn size_of(&self, content_id: &str) -> Option<u64> {
        self.entries.get(content_id).map(|e| e.size)
    }

    /// Cached items, most recently used first.
    pub fn catalog(&self) -> impl Iterator<Item = &CatalogItem> + '_ {
        self.order.values().rev().map(move |id| &self.entries[id].item)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_lookup_misses() {
        let mut c = LruCache::new(CacheTier::Edge, 10);
        assert!(!c.lookup("A"));
    }

    #[test]
    fn insert_evicts_lru() {
        let mut c = LruCache::new(CacheTier::Edge, 10);
        c.insert("A", 6, Genre::Movie).unwrap();
        assert_eq!(c.insert("B", 6, Genre::Movie).unwrap(), vec!["A".to_string()]);
        assert!(!c.lookup("A"));
        assert!(c.lookup("B"));
        assert_eq!(c.used(), 6);
    }

    #[test]
    fn lookup_refreshes_recency() {
        let mut c = LruCache::new(CacheTier::Edge, 9);
        c.insert("A", 3, Genre::Movie).unwrap();
        c.insert("B", 3, Genre::Movie).unwrap();
        c.insert("C", 3, Genre::Movie).unwrap();
        assert!(c.lookup("A"));
        c.insert("D", 3, Genre::Movie).unwrap();
        assert!(c.contains("A"));
        assert!(!c.contains("B"));
        let ids: Vec<_> = c.catalog().map(|i| i.content_id.as_str()).collect();
        assert_eq!(ids, ["D", "A", "C"]);
    }

    #[test]
    fn reinsert_updates_size() {
        let mut c = LruCache::new(CacheTier::Home, 10);
        c.insert("A", 4, Genre::Sport).unwrap();
        c.insert("A", 7, Genre::Sport).unwrap();
        assert_eq!(c.used(), 7);
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn oversized_insert_rejected() {
        let mut c = LruCache::new(CacheTier::Edge, 10);
        c.insert("A", 5, Genre::Movie).unwrap();
        assert!(matches!(c.insert("Z", 11, Genre::Movie), Err(CacheError::TooLarge { .. })));
        assert!(c.contains("A"));
    }
}

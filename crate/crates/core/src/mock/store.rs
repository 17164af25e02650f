use std::collections::{BTreeMap, BTreeSet};

use serde_json::{Map, Value};

#[derive(Debug, Default, Clone)]
struct Collection {
    live: BTreeMap<u64, Map<String, Value>>,
    tombstones: BTreeSet<u64>,
    next_id: u64,
}

/// In-memory resources keyed by type. Ids are allocated per type starting at 1
/// and are never reused; deleted ids move to a tombstone set.
#[derive(Debug, Default, Clone)]
pub struct ResourceStore {
    kinds: BTreeMap<String, Collection>,
}

impl ResourceStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn create(&mut self, kind: &str, mut fields: Map<String, Value>) -> (u64, Map<String, Value>) {
        let c = self.kinds.entry(kind.to_string()).or_default();
        c.next_id += 1;
        let id = c.next_id;
        fields.insert("id".into(), Value::from(id));
        c.live.insert(id, fields.clone());
        (id, fields)
    }

    pub fn get(&self, kind: &str, id: u64) -> Option<&Map<String, Value>> {
        self.kinds.get(kind)?.live.get(&id)
    }

    pub fn get_mut(&mut self, kind: &str, id: u64) -> Option<&mut Map<String, Value>> {
        self.kinds.get_mut(kind)?.live.get_mut(&id)
    }

    pub fn is_tombstoned(&self, kind: &str, id: u64) -> bool {
        self.kinds.get(kind).is_some_and(|c| c.tombstones.contains(&id))
    }

    /// Returns false when the id is not live.
    pub fn delete(&mut self, kind: &str, id: u64) -> bool {
        let Some(c) = self.kinds.get_mut(kind) else {
            return false;
        };
        if c.live.remove(&id).is_some() {
            c.tombstones.insert(id);
            true
        } else {
            false
        }
    }

    pub fn list(&self, kind: &str) -> impl Iterator<Item = &Map<String, Value>> {
        self.kinds.get(kind).into_iter().flat_map(|c| c.live.values())
    }

    pub fn len(&self, kind: &str) -> usize {
        self.kinds.get(kind).map_or(0, |c| c.live.len())
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.values().all(|c| c.live.is_empty())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_never_reused() {
        let mut s = ResourceStore::new();
        let (a, _) = s.create("group", Map::new());
        assert!(s.delete("group", a));
        let (b, _) = s.create("group", Map::new());
        assert_eq!((a, b), (1, 2));
        assert!(s.is_tombstoned("group", a));
        assert!(s.get("group", a).is_none());
        assert!(!s.delete("group", a));
        assert_eq!(s.len("group"), 1);
    }

    #[test]
    fn id_counters_are_per_type() {
        let mut s = ResourceStore::new();
        assert_eq!(s.create("group", Map::new()).0, 1);
        assert_eq!(s.create("project", Map::new()).0, 1);
    }
}

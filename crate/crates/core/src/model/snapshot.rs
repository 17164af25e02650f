use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use crate::generator::{ParamValueList, RenderError};
use crate::grammar::CompiledGrammar;

/// Generated lists per template, oldest first.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ListSnapshot {
    pub lists: BTreeMap<String, Vec<ParamValueList>>,
    pub version: u64,
}

impl ListSnapshot {
    pub fn total(&self) -> usize {
        self.lists.values().map(Vec::len).sum()
    }

    pub fn for_template(&self, template_id: &str) -> &[ParamValueList] {
        self.lists.get(template_id).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Shared, atomically replaced list snapshot. Readers hold an `Arc` to a
/// complete snapshot and never see a half-applied publish.
#[derive(Debug, Default)]
pub struct SnapshotHandle {
    current: RwLock<Arc<ListSnapshot>>,
}

impl SnapshotHandle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn load(&self) -> Arc<ListSnapshot> {
        Arc::clone(&self.current.read().expect("snapshot lock poisoned"))
    }

    /// Unions `fresh` into the current snapshot. Each template keeps at most
    /// `cap` lists, dropping the oldest. Nothing is published if any list is
    /// invalid for `grammar`.
    pub fn publish(
        &self,
        fresh: &BTreeMap<String, Vec<ParamValueList>>,
        grammar: &CompiledGrammar,
        cap: usize,
    ) -> Result<Arc<ListSnapshot>, RenderError> {
        for (template_id, lists) in fresh {
            for list in lists {
                match grammar.template(template_id) {
                    Some(t) => list.validate(t)?,
                    None => {
                        return Err(RenderError::WrongTemplate {
                            template: template_id.clone(),
                            list: list.template_id.clone(),
                        })
                    }
                }
            }
        }

        let mut guard = self.current.write().expect("snapshot lock poisoned");
        let mut next = ListSnapshot::clone(&guard);
        for (template_id, lists) in fresh {
            let entry = next.lists.entry(template_id.clone()).or_default();
            for list in lists {
                if !entry.contains(list) {
                    entry.push(list.clone());
                }
            }
            if entry.len() > cap {
                let excess = entry.len() - cap;
                entry.drain(..excess);
            }
        }
        next.version += 1;
        let next = Arc::new(next);
        *guard = Arc::clone(&next);
        Ok(next)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collection::ParamValuePair;
    use crate::grammar::parse_spec;

    fn grammar() -> CompiledGrammar {
        let doc = serde_json::json!({"paths": {"/g": {"get": {"parameters": [
            {"name": "n", "in": "query", "type": "integer", "required": false,
             "x-dictionary": (0..100).map(|i| i.to_string()).collect::<Vec<_>>(), "x-default": "0"},
            {"name": "m", "in": "query", "type": "integer", "required": false,
             "x-dictionary": ["0", "1"], "x-default": "0"}
        ]}}}});
        parse_spec(doc.to_string().as_bytes()).unwrap()
    }

    fn lists(values: impl IntoIterator<Item = usize>) -> BTreeMap<String, Vec<ParamValueList>> {
        let l = values
            .into_iter()
            .map(|i| ParamValueList::new("GET /g", vec![ParamValuePair::new("n", i.to_string())]))
            .collect();
        BTreeMap::from([("GET /g".to_string(), l)])
    }

    #[test]
    fn union_and_cap() {
        let g = grammar();
        let h = SnapshotHandle::new();
        assert_eq!(h.publish(&lists(1..=4), &g, 64).unwrap().total(), 4);
        assert_eq!(h.publish(&lists([5, 6, 1]), &g, 64).unwrap().total(), 6);
        let snap = h.publish(&lists(7..=70), &g, 64).unwrap();
        let kept = snap.for_template("GET /g");
        assert_eq!(kept.len(), 64);
        // 70 distinct lists published; the 6 oldest (1..=6) are gone
        assert_eq!(kept[0].pairs[0].value, "7");
        assert_eq!(kept[63].pairs[0].value, "70");
        assert_eq!(snap.version, 3);
    }

    #[test]
    fn foreign_pairs_are_rejected_wholesale() {
        let g = grammar();
        let h = SnapshotHandle::new();
        let mut bad = lists(1..=2);
        bad.get_mut("GET /g")
            .unwrap()
            .push(ParamValueList::new("GET /g", vec![ParamValuePair::new("zz", "1")]));
        assert!(matches!(h.publish(&bad, &g, 64), Err(RenderError::ForeignPair { .. })));
        assert_eq!(h.load().total(), 0);
    }

    #[test]
    fn readers_keep_their_snapshot() {
        let g = grammar();
        let h = SnapshotHandle::new();
        h.publish(&lists([1]), &g, 64).unwrap();
        let held = h.load();
        h.publish(&lists([2]), &g, 64).unwrap();
        assert_eq!(held.total(), 1);
        assert_eq!(h.load().total(), 2);
    }
}

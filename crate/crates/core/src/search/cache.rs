//! Memo of trained groups, optionally persisted one file per group.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::search::partition::GroupKey;
use crate::util::sha256_hex;

/// Total and per-task loss of one trained group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEval {
    pub group: GroupKey,
    pub total_loss: f64,
    pub per_task: BTreeMap<String, f64>,
}

/// Group-keyed loss cache. Entries are immutable once written; singleton
/// entries are seeded from the STL losses. When a directory is attached,
/// inserts are flushed as `<sha256(group || context)>.json` via atomic
/// rename.
#[derive(Debug)]
pub struct EvalCache {
    entries: BTreeMap<GroupKey, GroupEval>,
    dir: Option<PathBuf>,
    /// Hash of the (arch, train config) pair so caches from different
    /// settings never collide in one directory.
    context_hash: String,
}

impl EvalCache {
    pub fn in_memory() -> Self {
        EvalCache {
            entries: BTreeMap::new(),
            dir: None,
            context_hash: String::new(),
        }
    }

    /// Opens a persistent cache, loading any entries already on disk that
    /// match the context hash.
    pub fn with_dir(dir: PathBuf, context_hash: &str) -> Result<Self> {
        std::fs::create_dir_all(&dir)?;
        let mut entries = BTreeMap::new();
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let raw = std::fs::read_to_string(&path)?;
            if let Ok(doc) = serde_json::from_str::<CacheFile>(&raw) {
                if doc.context_hash == context_hash {
                    entries.insert(doc.eval.group.clone(), doc.eval);
                }
            }
        }
        Ok(EvalCache {
            entries,
            dir: Some(dir),
            context_hash: context_hash.to_string(),
        })
    }

    /// Seeds singleton entries from the per-task STL losses.
    pub fn seed_singletons(&mut self, stl_losses: &BTreeMap<String, f64>) {
        for (id, &loss) in stl_losses {
            let key = GroupKey::new([id.clone()]);
            let mut per_task = BTreeMap::new();
            per_task.insert(id.clone(), loss);
            let eval = GroupEval {
                group: key.clone(),
                total_loss: loss,
                per_task,
            };
            let _ = self.insert(eval);
        }
    }

    pub fn get(&self, key: &GroupKey) -> Option<&GroupEval> {
        self.entries.get(key)
    }

    pub fn contains(&self, key: &GroupKey) -> bool {
        self.entries.contains_key(key)
    }

    /// Inserts if absent; existing entries win (immutability). Returns
    /// whether the entry was new.
    pub fn insert(&mut self, eval: GroupEval) -> bool {
        if self.entries.contains_key(&eval.group) {
            return false;
        }
        if let Some(dir) = &self.dir {
            let name = sha256_hex(&format!("{}\x1f{}", eval.group.canonical(), self.context_hash));
            let path = dir.join(format!("{name}.json"));
            let tmp = dir.join(format!("{name}.json.tmp"));
            let doc = CacheFile {
                context_hash: self.context_hash.clone(),
                eval: eval.clone(),
            };
            if let Ok(json) = serde_json::to_string(&doc) {
                // atomic replace keeps readers consistent
                if std::fs::write(&tmp, json).is_ok() {
                    let _ = std::fs::rename(&tmp, &path);
                }
            }
        }
        self.entries.insert(eval.group.clone(), eval);
        true
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&GroupKey, &GroupEval)> {
        self.entries.iter()
    }

    /// Copies all entries into a fresh in-memory cache.
    pub fn clone_in_memory(&self) -> EvalCache {
        EvalCache {
            entries: self.entries.clone(),
            dir: None,
            context_hash: self.context_hash.clone(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    context_hash: String,
    eval: GroupEval,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(ids: &[&str], total: f64) -> GroupEval {
        let group = GroupKey::new(ids.iter().map(|s| s.to_string()));
        let per_task = ids
            .iter()
            .map(|s| (s.to_string(), total / ids.len() as f64))
            .collect();
        GroupEval {
            group,
            total_loss: total,
            per_task,
        }
    }

    #[test]
    fn entries_are_immutable_once_written() {
        let mut c = EvalCache::in_memory();
        assert!(c.insert(eval(&["a", "b"], 2.0)));
        assert!(!c.insert(eval(&["a", "b"], 99.0)));
        assert_eq!(c.get(&GroupKey::new(["b", "a"])).unwrap().total_loss, 2.0);
    }

    #[test]
    fn persists_and_reloads_by_context() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = EvalCache::with_dir(dir.path().to_path_buf(), "ctx1").unwrap();
        c.insert(eval(&["a", "b"], 2.0));
        c.insert(eval(&["c"], 1.0));

        let again = EvalCache::with_dir(dir.path().to_path_buf(), "ctx1").unwrap();
        assert_eq!(again.len(), 2);
        let other = EvalCache::with_dir(dir.path().to_path_buf(), "ctx2").unwrap();
        assert_eq!(other.len(), 0);
    }

    #[test]
    fn seeding_singletons_matches_stl() {
        let mut c = EvalCache::in_memory();
        let mut stl = BTreeMap::new();
        stl.insert("a".to_string(), 1.5);
        stl.insert("b".to_string(), 2.5);
        c.seed_singletons(&stl);
        assert_eq!(c.get(&GroupKey::new(["a"])).unwrap().total_loss, 1.5);
        assert_eq!(c.len(), 2);
    }
}

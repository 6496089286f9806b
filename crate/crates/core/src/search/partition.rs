//! Partitions of the task set and their canonical form.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sorted, deduplicated task ids naming one group. The canonical string is
/// the cache identity for trained groups.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "Vec<String>")]
pub struct GroupKey(Vec<String>);

impl GroupKey {
    pub fn new<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v: Vec<String> = ids.into_iter().map(Into::into).collect();
        v.sort();
        v.dedup();
        GroupKey(v)
    }

    pub fn ids(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.0.binary_search_by(|x| x.as_str().cmp(id)).is_ok()
    }

    /// Stable identity string; task ids cannot contain the 0x1f separator.
    pub fn canonical(&self) -> String {
        self.0.join("\x1f")
    }
}

impl From<Vec<String>> for GroupKey {
    fn from(v: Vec<String>) -> Self {
        GroupKey::new(v)
    }
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.0.join(","))
    }
}

/// A disjoint cover of the full task set; the search state.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Partition {
    groups: Vec<GroupKey>,
}

impl Partition {
    /// Builds a partition and checks it is a disjoint cover of `all_ids`.
    pub fn new(groups: Vec<GroupKey>, all_ids: &[String]) -> Result<Self> {
        let mut p = Partition { groups };
        p.canonicalize();
        p.validate_cover(all_ids)?;
        Ok(p)
    }

    /// Every task in its own group.
    pub fn singletons(all_ids: &[String]) -> Self {
        let mut groups: Vec<GroupKey> = all_ids
            .iter()
            .map(|id| GroupKey::new([id.clone()]))
            .collect();
        groups.sort();
        Partition { groups }
    }

    /// All tasks in one group.
    pub fn one_group(all_ids: &[String]) -> Self {
        Partition {
            groups: vec![GroupKey::new(all_ids.to_vec())],
        }
    }

    pub fn groups(&self) -> &[GroupKey] {
        &self.groups
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn n_tasks(&self) -> usize {
        self.groups.iter().map(GroupKey::len).sum()
    }

    pub fn group_of(&self, id: &str) -> Option<&GroupKey> {
        self.groups.iter().find(|g| g.contains(id))
    }

    /// Groups sorted by their first element; also the equality identity.
    fn canonicalize(&mut self) {
        self.groups.sort();
    }

    /// Rebuilds canonical form after deserialization or manual edits.
    pub fn canonicalized(mut self) -> Self {
        self.groups = self.groups.into_iter().map(|g| GroupKey::new(g.0)).collect();
        self.canonicalize();
        self
    }

    /// Checks the disjoint-cover invariant against the task universe.
    pub fn validate_cover(&self, all_ids: &[String]) -> Result<()> {
        if self.groups.iter().any(GroupKey::is_empty) {
            return Err(Error::InvalidPartition("empty group".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for g in &self.groups {
            for id in g.ids() {
                if !seen.insert(id.clone()) {
                    return Err(Error::InvalidPartition(format!(
                        "task `{id}` appears in more than one group"
                    )));
                }
            }
        }
        let universe: std::collections::BTreeSet<String> = all_ids.iter().cloned().collect();
        if seen != universe {
            let missing: Vec<_> = universe.difference(&seen).cloned().collect();
            let extra: Vec<_> = seen.difference(&universe).cloned().collect();
            return Err(Error::InvalidPartition(format!(
                "not a cover: missing {missing:?}, extraneous {extra:?}"
            )));
        }
        Ok(())
    }

    /// Identity string used for counting and tracing.
    pub fn canonical(&self) -> String {
        self.groups
            .iter()
            .map(GroupKey::canonical)
            .collect::<Vec<_>>()
            .join("\x1e")
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.groups.iter().map(|g| g.to_string()).collect();
        write!(f, "[{}]", parts.join(" "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn group_key_sorts_and_dedups() {
        let g = GroupKey::new(["b", "a", "b"]);
        assert_eq!(g.ids(), &["a".to_string(), "b".to_string()]);
        assert!(g.contains("a"));
        assert!(!g.contains("c"));
    }

    #[test]
    fn partition_validates_cover() {
        let all = ids(&["a", "b", "c"]);
        let ok = Partition::new(
            vec![GroupKey::new(["c"]), GroupKey::new(["a", "b"])],
            &all,
        )
        .unwrap();
        assert_eq!(ok.n_groups(), 2);
        // canonical order: group starting with "a" first
        assert_eq!(ok.groups()[0].ids()[0], "a");

        let overlap = Partition::new(
            vec![GroupKey::new(["a", "b"]), GroupKey::new(["b", "c"])],
            &all,
        );
        assert!(overlap.is_err());

        let missing = Partition::new(vec![GroupKey::new(["a", "b"])], &all);
        assert!(missing.is_err());
    }

    #[test]
    fn singletons_and_one_group() {
        let all = ids(&["b", "a"]);
        let s = Partition::singletons(&all);
        assert_eq!(s.n_groups(), 2);
        let o = Partition::one_group(&all);
        assert_eq!(o.n_groups(), 1);
        assert_eq!(o.groups()[0].len(), 2);
        assert_eq!(s.n_tasks(), 2);
    }

    #[test]
    fn canonical_is_order_invariant() {
        let all = ids(&["a", "b", "c", "d"]);
        let p1 = Partition::new(
            vec![GroupKey::new(["d", "c"]), GroupKey::new(["b", "a"])],
            &all,
        )
        .unwrap();
        let p2 = Partition::new(
            vec![GroupKey::new(["a", "b"]), GroupKey::new(["c", "d"])],
            &all,
        )
        .unwrap();
        assert_eq!(p1, p2);
        assert_eq!(p1.canonical(), p2.canonical());
    }

    #[test]
    fn serde_roundtrip_normalizes() {
        let raw = r#"[["b","a"],["c"]]"#;
        let p: Partition = serde_json::from_str(raw).unwrap();
        let p = p.canonicalized();
        p.validate_cover(&ids(&["a", "b", "c"])).unwrap();
        assert_eq!(p.groups()[0].ids(), &["a".to_string(), "b".to_string()]);
    }
}

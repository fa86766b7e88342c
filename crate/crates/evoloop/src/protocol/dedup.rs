//! Duplicate grouping for retrieved image candidates.
//!
//! Two candidates are duplicates when they share any one annotation field.
//! The pairwise relation is closed transitively with union-find so the
//! result is a partition, and one survivor is nominated per group.

use serde::{Deserialize, Serialize};

/// Symbolic subject annotations carried by fixture image records.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectAnnotations {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub main_person: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub main_object: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_moment: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub venue: Option<String>,
}

impl SubjectAnnotations {
    fn shares_any(&self, other: &SubjectAnnotations) -> bool {
        fn same(a: &Option<String>, b: &Option<String>) -> bool {
            matches!((a, b), (Some(x), Some(y)) if x == y)
        }
        same(&self.main_person, &other.main_person)
            || same(&self.main_object, &other.main_object)
            || same(&self.scene_moment, &other.scene_moment)
            || same(&self.venue, &other.venue)
    }
}

/// An image candidate with its fixture annotations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageCandidate {
    pub img_id: String,
    #[serde(default)]
    pub annotations: SubjectAnnotations,
}

/// One duplicate group; `survivor` is the lowest img_id in the group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DuplicateGroup {
    pub survivor: String,
    pub members: Vec<String>,
}

/// Partition of the candidates into duplicate groups (singletons included),
/// sorted by survivor id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupReport {
    pub groups: Vec<DuplicateGroup>,
}

impl DedupReport {
    /// Ids that survive deduplication, sorted ascending.
    pub fn survivors(&self) -> Vec<&str> {
        self.groups.iter().map(|g| g.survivor.as_str()).collect()
    }
}

/// Group candidates that transitively share any annotation field value.
pub fn check_duplicates(candidates: &[ImageCandidate]) -> DedupReport {
    let mut parent: Vec<usize> = (0..candidates.len()).collect();

    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }

    for i in 0..candidates.len() {
        for j in (i + 1)..candidates.len() {
            if candidates[i].annotations.shares_any(&candidates[j].annotations) {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }

    let mut buckets: std::collections::BTreeMap<usize, Vec<&str>> = std::collections::BTreeMap::new();
    for i in 0..candidates.len() {
        let root = find(&mut parent, i);
        buckets.entry(root).or_default().push(&candidates[i].img_id);
    }

    let mut groups: Vec<DuplicateGroup> = buckets
        .into_values()
        .map(|mut members| {
            members.sort_unstable();
            DuplicateGroup {
                survivor: members[0].to_string(),
                members: members.into_iter().map(str::to_string).collect(),
            }
        })
        .collect();
    groups.sort_by(|a, b| a.survivor.cmp(&b.survivor));
    DedupReport { groups }
}

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::RandomStream;

/// Disjoint train/test category lists. Order is preserved because it feeds
/// seeded sampling.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategorySplit {
    train: Vec<String>,
    test: Vec<String>,
}

impl CategorySplit {
    pub fn new(train: Vec<String>, test: Vec<String>) -> Result<Self> {
        if train.is_empty() || test.is_empty() {
            return Err(Error::Argument(
                "split needs at least one train and one test category".into(),
            ));
        }
        let mut seen = HashSet::new();
        for c in train.iter().chain(&test) {
            if !seen.insert(c.as_str()) {
                return Err(Error::Argument(format!(
                    "category `{c}` appears twice in the split"
                )));
            }
        }
        Ok(CategorySplit { train, test })
    }

    /// Draws `n_train` + `n_test` distinct categories from `categories`.
    pub fn random(
        categories: &[String],
        n_train: usize,
        n_test: usize,
        stream: &mut RandomStream,
    ) -> Result<Self> {
        if n_train + n_test > categories.len() {
            return Err(Error::Capacity(format!(
                "split wants {} categories, {} available",
                n_train + n_test,
                categories.len()
            )));
        }
        let picked = stream.sample_indices(categories.len(), n_train + n_test);
        let test = picked[..n_test]
            .iter()
            .map(|&i| categories[i].clone())
            .collect();
        let train = picked[n_test..]
            .iter()
            .map(|&i| categories[i].clone())
            .collect();
        Self::new(train, test)
    }

    pub fn train(&self) -> &[String] {
        &self.train
    }

    pub fn test(&self) -> &[String] {
        &self.test
    }

    /// Same test set, train set cut down to a random subset of `n` categories.
    pub fn with_train_subset(&self, n: usize, stream: &mut RandomStream) -> Result<Self> {
        if n == 0 || n > self.train.len() {
            return Err(Error::Capacity(format!(
                "requested {n} train categories, {} available",
                self.train.len()
            )));
        }
        let mut idx = stream.sample_indices(self.train.len(), n);
        idx.sort_unstable();
        let train = idx.into_iter().map(|i| self.train[i].clone()).collect();
        Self::new(train, self.test.clone())
    }
}

/// Coarse categories and their fine-grained members.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(
    try_from = "BTreeMap<String, Vec<String>>",
    into = "BTreeMap<String, Vec<String>>"
)]
pub struct CoarseGrouping {
    groups: BTreeMap<String, Vec<String>>,
}

impl TryFrom<BTreeMap<String, Vec<String>>> for CoarseGrouping {
    type Error = Error;

    fn try_from(groups: BTreeMap<String, Vec<String>>) -> Result<Self> {
        CoarseGrouping::new(groups)
    }
}

impl From<CoarseGrouping> for BTreeMap<String, Vec<String>> {
    fn from(g: CoarseGrouping) -> Self {
        g.groups
    }
}

impl CoarseGrouping {
    pub fn new(groups: BTreeMap<String, Vec<String>>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (g, members) in &groups {
            if members.len() < 2 {
                return Err(Error::Argument(format!(
                    "coarse group `{g}` has {} member(s), need at least 2",
                    members.len()
                )));
            }
            for m in members {
                if !seen.insert(m.clone()) {
                    return Err(Error::Argument(format!(
                        "fine category `{m}` is listed in more than one group"
                    )));
                }
            }
        }
        Ok(CoarseGrouping { groups })
    }

    /// The 20-group / 95-category grouping of the Sketchy categories.
    pub fn sketchy() -> Self {
        serde_json::from_str(include_str!("../../data/sketchy_coarse_groups.json"))
            .expect("bundled grouping is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
    }

    pub fn groups(&self) -> &BTreeMap<String, Vec<String>> {
        &self.groups
    }

    pub fn group_ids(&self) -> Vec<&str> {
        self.groups.keys().map(String::as_str).collect()
    }

    pub fn members(&self, group: &str) -> Option<&[String]> {
        self.groups.get(group).map(Vec::as_slice)
    }

    pub fn group_of(&self, fine: &str) -> Option<&str> {
        self.groups
            .iter()
            .find(|(_, m)| m.iter().any(|c| c == fine))
            .map(|(g, _)| g.as_str())
    }

    pub fn fine_count(&self) -> usize {
        self.groups.values().map(Vec::len).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn split_rejects_overlap_and_empty() {
        assert!(CategorySplit::new(names(&["a", "b"]), names(&["b"])).is_err());
        assert!(CategorySplit::new(names(&[]), names(&["b"])).is_err());
        assert!(CategorySplit::new(names(&["a"]), names(&["b"])).is_ok());
    }

    #[test]
    fn random_split_is_disjoint_and_seeded() {
        let cats: Vec<String> = (0..30).map(|i| format!("c{i}")).collect();
        let a = CategorySplit::random(&cats, 20, 5, &mut RandomStream::new(1)).unwrap();
        let b = CategorySplit::random(&cats, 20, 5, &mut RandomStream::new(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train().len(), 20);
        assert!(a.test().iter().all(|c| !a.train().contains(c)));
    }

    #[test]
    fn sketchy_grouping_shape() {
        let g = CoarseGrouping::sketchy();
        assert_eq!(g.groups().len(), 20);
        assert_eq!(g.fine_count(), 95);
        assert_eq!(g.group_of("swan"), Some("C11"));
        for m in g.groups().values() {
            assert!((4..=6).contains(&m.len()));
        }
    }

    #[test]
    fn grouping_invariants() {
        let dup = BTreeMap::from([
            ("g1".to_string(), names(&["a", "b"])),
            ("g2".to_string(), names(&["b", "c"])),
        ]);
        assert!(CoarseGrouping::new(dup).is_err());
        let tiny = BTreeMap::from([("g1".to_string(), names(&["a"]))]);
        assert!(CoarseGrouping::new(tiny).is_err());
        let bad: std::result::Result<CoarseGrouping, _> = serde_json::from_str(r#"{"g": ["x"]}"#);
        assert!(bad.is_err());
    }
}

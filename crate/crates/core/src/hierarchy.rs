//! Region tree with the public group count and the true histogram at every node.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hist::CountHistogram;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    /// Path of region names from the root, joined with `/`.
    pub id: String,
    pub level: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Public number of groups in the region.
    pub groups: u64,
    /// True count-of-counts histogram (private).
    pub hist: CountHistogram,
}

/// Tree of regions. Node 0 is the root; every leaf sits at the deepest level and node
/// indices are ordered by level, then by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyTree {
    nodes: Vec<Node>,
    levels: Vec<Vec<usize>>,
}

impl HierarchyTree {
    /// Builds the tree from leaf paths (root name first) and the leaf histograms.
    /// Internal histograms are element-wise sums of their children.
    pub fn from_leaves<I>(leaves: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<String>, CountHistogram)>,
    {
        let mut by_path: BTreeMap<Vec<String>, CountHistogram> = BTreeMap::new();
        let mut depth = None;
        for (path, hist) in leaves {
            if path.is_empty() {
                return Err(Error::Structure("empty region path".into()));
            }
            match depth {
                None => depth = Some(path.len()),
                Some(d) if d != path.len() => {
                    return Err(Error::Structure(format!(
                        "leaf `{}` has depth {}, expected {d}",
                        path.join("/"),
                        path.len()
                    )))
                }
                _ => {}
            }
            by_path.entry(path).or_default().add_assign(&hist);
        }
        let depth = depth.ok_or_else(|| Error::Structure("hierarchy has no regions".into()))?;

        // aggregate every prefix
        let mut levels_map: Vec<BTreeMap<Vec<String>, CountHistogram>> = vec![BTreeMap::new(); depth];
        for (path, hist) in &by_path {
            for l in 0..depth {
                levels_map[l].entry(path[..=l].to_vec()).or_default().add_assign(hist);
            }
        }
        if levels_map[0].len() != 1 {
            return Err(Error::Structure(format!("expected a single root, found {}", levels_map[0].len())));
        }

        let mut nodes = Vec::new();
        let mut levels = Vec::with_capacity(depth);
        let mut index: BTreeMap<Vec<String>, usize> = BTreeMap::new();
        for (l, map) in levels_map.into_iter().enumerate() {
            let mut ids = Vec::with_capacity(map.len());
            for (path, hist) in map {
                let idx = nodes.len();
                let parent = if l == 0 { None } else { Some(index[&path[..l]]) };
                if let Some(p) = parent {
                    let parent_node: &mut Node = &mut nodes[p];
                    parent_node.children.push(idx);
                }
                nodes.push(Node {
                    id: path.join("/"),
                    level: l,
                    parent,
                    children: Vec::new(),
                    groups: hist.total(),
                    hist,
                });
                index.insert(path, idx);
                ids.push(idx);
            }
            levels.push(ids);
        }
        Ok(Self { nodes, levels })
    }

    /// Single-node tree.
    pub fn single(id: &str, hist: CountHistogram) -> Self {
        Self::from_leaves([(vec![id.to_string()], hist)]).expect("one leaf is a valid tree")
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, idx: usize) -> &Node {
        &self.nodes[idx]
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of levels, `L + 1`.
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, l: usize) -> &[usize] {
        &self.levels[l]
    }

    pub fn levels(&self) -> &[Vec<usize>] {
        &self.levels
    }

    pub fn leaves(&self) -> &[usize] {
        self.levels.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Checks public totals and histogram additivity.
    pub fn validate(&self) -> Result<()> {
        for node in &self.nodes {
            if node.hist.total() != node.groups {
                return Err(Error::Structure(format!(
                    "node `{}` has {} groups but its histogram totals {}",
                    node.id,
                    node.groups,
                    node.hist.total()
                )));
            }
            if node.children.is_empty() {
                if node.level + 1 != self.depth() {
                    return Err(Error::Structure(format!("leaf `{}` above the last level", node.id)));
                }
                continue;
            }
            let child_groups: u64 = node.children.iter().map(|&c| self.nodes[c].groups).sum();
            if child_groups != node.groups {
                return Err(Error::Structure(format!(
                    "node `{}` has {} groups, children sum to {child_groups}",
                    node.id, node.groups
                )));
            }
            let mut sum = CountHistogram::default();
            for &c in &node.children {
                sum.add_assign(&self.nodes[c].hist);
            }
            if sum.trimmed() != node.hist.trimmed() {
                return Err(Error::Structure(format!(
                    "histogram of `{}` is not the sum of its children",
                    node.id
                )));
            }
        }
        Ok(())
    }
}

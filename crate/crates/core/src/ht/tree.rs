//! Binary dimension trees.

use super::HtError;
use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TreeNode {
    /// Zero-based dimensions covered by this node, ascending and contiguous.
    pub dims: Vec<usize>,
    pub children: Option<(usize, usize)>,
    pub parent: Option<usize>,
}

/// A binary tree over `{0, …, d−1}`; node 0 is the root and every parent
/// precedes its children, so reverse id order is a valid post-order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DimTree {
    nodes: Vec<TreeNode>,
    leaves: Vec<usize>,
}

impl DimTree {
    /// Balanced tree: a node with `n` dimensions gives its left child the first `⌈n/2⌉`.
    pub fn balanced(d: usize) -> Result<Self, HtError> {
        if d == 0 {
            return Err(HtError::ZeroDimension);
        }
        let mut tree = DimTree { nodes: Vec::new(), leaves: vec![usize::MAX; d] };
        tree.grow((0..d).collect(), None);
        Ok(tree)
    }

    fn grow(&mut self, dims: Vec<usize>, parent: Option<usize>) -> usize {
        let id = self.nodes.len();
        self.nodes.push(TreeNode { dims: dims.clone(), children: None, parent });
        if dims.len() == 1 {
            self.leaves[dims[0]] = id;
        } else {
            let split = dims.len().div_ceil(2);
            let l = self.grow(dims[..split].to_vec(), Some(id));
            let r = self.grow(dims[split..].to_vec(), Some(id));
            self.nodes[id].children = Some((l, r));
        }
        id
    }

    pub fn d(&self) -> usize {
        self.leaves.len()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn node(&self, t: usize) -> &TreeNode {
        &self.nodes[t]
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn is_leaf(&self, t: usize) -> bool {
        self.nodes[t].children.is_none()
    }

    /// Node id of the leaf holding dimension `j`.
    pub fn leaf(&self, j: usize) -> usize {
        self.leaves[j]
    }

    /// Dimension of a leaf node.
    pub fn leaf_dim(&self, t: usize) -> usize {
        self.nodes[t].dims[0]
    }

    pub fn children(&self, t: usize) -> Option<(usize, usize)> {
        self.nodes[t].children
    }

    /// Number of non-root nodes, `2d − 2`.
    pub fn num_non_root(&self) -> usize {
        self.nodes.len() - 1
    }
}

//! Rooted trees over covariate locations, read from Newick text.
//!
//! Grammar (whitespace is ignored between tokens):
//!
//! ```text
//! tree    := subtree [":" length] ";"
//! subtree := name | "(" subtree ("," subtree)* ")" [name]
//! length  := decimal floating-point number
//! name    := one or more characters other than  , ( ) : ;  and whitespace
//! ```
//!
//! Every node other than the root must carry a `:length`. The root's length,
//! if present, is a branch above the root shared by every leaf. Leaves are
//! numbered in order of appearance; that order is the covariate-location
//! order of the resulting Gram matrix.

use crate::error::{Error, Result};

/// Tolerance on the unit root-to-leaf height.
pub const HEIGHT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub name: Option<String>,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub branch_length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<TreeNode>,
    root: usize,
    leaves: Vec<usize>,
}

impl Tree {
    pub fn parse(text: &str) -> Result<Tree> {
        let mut parser = Parser {
            chars: text.chars().filter(|c| !c.is_whitespace()).collect(),
            pos: 0,
            nodes: Vec::new(),
            leaves: Vec::new(),
        };
        let root = parser.subtree(None)?;
        if parser.peek() == Some(':') {
            parser.pos += 1;
            parser.nodes[root].branch_length = parser.number()?;
        }
        if parser.peek() != Some(';') {
            return Err(parser.error("expected ';'"));
        }
        parser.pos += 1;
        if parser.pos != parser.chars.len() {
            return Err(parser.error("trailing characters after ';'"));
        }
        let tree = Tree {
            nodes: parser.nodes,
            root,
            leaves: parser.leaves,
        };
        if tree.nodes.iter().any(|n| !(n.branch_length >= 0.0)) {
            return Err(Error::TreeSyntax("negative branch length".into()));
        }
        Ok(tree)
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    /// Node indices of the leaves in location order.
    pub fn leaves(&self) -> &[usize] {
        &self.leaves
    }

    pub fn leaf_names(&self) -> Vec<String> {
        self.leaves
            .iter()
            .map(|&l| self.node_label(l))
            .collect()
    }

    pub fn node_label(&self, node: usize) -> String {
        self.nodes[node]
            .name
            .clone()
            .unwrap_or_else(|| format!("node{node}"))
    }

    /// Distance from the top of the root branch to each node.
    pub fn depths(&self) -> Vec<f64> {
        let mut depth = vec![0.0; self.nodes.len()];
        // nodes are created parent-before-child by the parser
        for i in self.preorder() {
            let parent = self.nodes[i].parent.map_or(0.0, |p| depth[p]);
            depth[i] = parent + self.nodes[i].branch_length;
        }
        depth
    }

    fn preorder(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![self.root];
        while let Some(i) = stack.pop() {
            order.push(i);
            stack.extend(self.nodes[i].children.iter().rev());
        }
        order
    }

    /// Checks non-negative branches and unit root-to-leaf height.
    pub fn validate(&self) -> Result<()> {
        if self.nodes.iter().any(|n| !(n.branch_length >= 0.0)) {
            return Err(Error::TreeSyntax("negative branch length".into()));
        }
        let depth = self.depths();
        for &leaf in &self.leaves {
            if (depth[leaf] - 1.0).abs() > HEIGHT_TOLERANCE {
                return Err(Error::TreeHeight {
                    leaf: self.node_label(leaf),
                    length: depth[leaf],
                });
            }
        }
        Ok(())
    }

    /// Depth of the most recent common ancestor of every pair of leaves
    /// (row-major, leaves × leaves). The diagonal holds each leaf's depth.
    pub fn shared_depths(&self) -> Vec<f64> {
        let depth = self.depths();
        let t = self.leaves.len();
        let ancestors: Vec<Vec<usize>> = self
            .leaves
            .iter()
            .map(|&leaf| {
                let mut path = vec![leaf];
                let mut cur = leaf;
                while let Some(p) = self.nodes[cur].parent {
                    path.push(p);
                    cur = p;
                }
                path
            })
            .collect();
        let mut out = vec![0.0; t * t];
        for i in 0..t {
            for j in 0..t {
                let mrca = ancestors[j]
                    .iter()
                    .find(|a| ancestors[i].contains(a))
                    .copied()
                    .unwrap_or(self.root);
                out[i * t + j] = depth[mrca];
            }
        }
        out
    }

    /// Internal nodes below the root; their depths are the free parameters
    /// of a unit-height tree with fixed topology.
    pub fn free_nodes(&self) -> Vec<usize> {
        self.preorder()
            .into_iter()
            .filter(|&i| i != self.root && !self.nodes[i].children.is_empty())
            .collect()
    }

    /// Admissible depth range for a free node: between its parent's depth
    /// and its shallowest child.
    pub fn depth_bounds(&self, node: usize) -> (f64, f64) {
        let depth = self.depths();
        let lo = self.nodes[node].parent.map_or(0.0, |p| depth[p]);
        let hi = self.nodes[node]
            .children
            .iter()
            .map(|&c| depth[c])
            .fold(f64::INFINITY, f64::min);
        (lo, hi)
    }

    /// Moves `node` to `new_depth`, adjusting its own branch and its
    /// children's so every other node keeps its depth. Returns `None` when
    /// that would make a branch negative.
    pub fn with_node_depth(&self, node: usize, new_depth: f64) -> Option<Tree> {
        let (lo, hi) = self.depth_bounds(node);
        if !(new_depth >= lo && new_depth <= hi) {
            return None;
        }
        let depth = self.depths();
        let mut out = self.clone();
        out.nodes[node].branch_length = new_depth - lo;
        for &c in &self.nodes[node].children {
            out.nodes[c].branch_length = depth[c] - new_depth;
        }
        Some(out)
    }

    pub fn to_newick(&self) -> String {
        let mut s = String::new();
        self.write_node(self.root, &mut s);
        if self.nodes[self.root].branch_length != 0.0 {
            s.push_str(&format!(":{}", self.nodes[self.root].branch_length));
        }
        s.push(';');
        s
    }

    fn write_node(&self, i: usize, s: &mut String) {
        let node = &self.nodes[i];
        if !node.children.is_empty() {
            s.push('(');
            for (j, &c) in node.children.iter().enumerate() {
                if j > 0 {
                    s.push(',');
                }
                self.write_node(c, s);
                s.push_str(&format!(":{}", self.nodes[c].branch_length));
            }
            s.push(')');
        }
        if let Some(name) = &node.name {
            s.push_str(name);
        }
    }
}

struct Parser {
    chars: Vec<char>,
    pos: usize,
    nodes: Vec<TreeNode>,
    leaves: Vec<usize>,
}

impl Parser {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn error(&self, msg: &str) -> Error {
        Error::TreeSyntax(format!("{msg} at character {}", self.pos))
    }

    fn subtree(&mut self, parent: Option<usize>) -> Result<usize> {
        let id = self.nodes.len();
        self.nodes.push(TreeNode {
            name: None,
            parent,
            children: Vec::new(),
            branch_length: 0.0,
        });
        if self.peek() == Some('(') {
            self.pos += 1;
            loop {
                let child = self.subtree(Some(id))?;
                if self.peek() != Some(':') {
                    return Err(self.error("expected ':' and branch length"));
                }
                self.pos += 1;
                self.nodes[child].branch_length = self.number()?;
                self.nodes[id].children.push(child);
                match self.peek() {
                    Some(',') => self.pos += 1,
                    Some(')') => {
                        self.pos += 1;
                        break;
                    }
                    _ => return Err(self.error("expected ',' or ')'")),
                }
            }
            self.nodes[id].name = self.name();
        } else {
            match self.name() {
                Some(name) => self.nodes[id].name = Some(name),
                None => return Err(self.error("expected leaf name")),
            }
            self.leaves.push(id);
        }
        Ok(id)
    }

    fn name(&mut self) -> Option<String> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if matches!(c, ',' | '(' | ')' | ':' | ';') {
                break;
            }
            self.pos += 1;
        }
        (self.pos > start).then(|| self.chars[start..self.pos].iter().collect())
    }

    fn number(&mut self) -> Result<f64> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E') {
                self.pos += 1;
            } else {
                break;
            }
        }
        let text: String = self.chars[start..self.pos].iter().collect();
        text.parse()
            .map_err(|_| self.error(&format!("invalid branch length '{text}'")))
    }
}

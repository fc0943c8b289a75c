use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeNode {
    pub parent: Option<usize>,
    pub depth: usize,
    pub retrieval: bool,
}

/// Static shape of a draft tree. Nodes are stored parents-first. Top-level
/// non-retrieval nodes are the candidate roots for the next token; the first
/// root's chain of first children is the main path that carries the previous
/// round's continuation. Retrieval nodes, if any, form one separate chain
/// starting at the top level.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DraftTreeTemplate {
    nodes: Vec<TreeNode>,
    roots: Vec<usize>,
    main_path: Vec<usize>,
    retrieval_path: Vec<usize>,
    paths: Vec<Vec<usize>>,
}

impl DraftTreeTemplate {
    /// Builds a template from `(parent, is_retrieval)` pairs in node order.
    pub fn from_parents(spec: &[(Option<usize>, bool)]) -> Result<Self> {
        let mut nodes: Vec<TreeNode> = Vec::with_capacity(spec.len());
        let mut retrieval_path = Vec::new();
        for (id, &(parent, retrieval)) in spec.iter().enumerate() {
            let depth = match parent {
                None => 0,
                Some(p) if p < id => nodes[p].depth + 1,
                Some(p) => {
                    return Err(Error::Template(format!(
                        "node {id} has parent {p}, parents must come first"
                    )))
                }
            };
            let parent_retrieval = parent.is_some_and(|p| nodes[p].retrieval);
            if retrieval {
                let expected = retrieval_path.last().copied();
                if parent != expected {
                    return Err(Error::Template(format!(
                        "retrieval node {id} must extend the single retrieval chain"
                    )));
                }
                retrieval_path.push(id);
            } else if parent_retrieval {
                return Err(Error::Template(format!("node {id} branches off the retrieval chain")));
            }
            nodes.push(TreeNode {
                parent,
                depth,
                retrieval,
            });
        }
        let roots: Vec<usize> = (0..nodes.len())
            .filter(|&i| nodes[i].parent.is_none() && !nodes[i].retrieval)
            .collect();
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
        for (c, node) in nodes.iter().enumerate() {
            if let Some(p) = node.parent {
                children[p].push(c);
            }
        }
        let mut main_path = Vec::new();
        if let Some(&r) = roots.first() {
            main_path.push(r);
            while let Some(&c) = children[*main_path.last().unwrap()].first() {
                main_path.push(c);
            }
        }
        let paths = (0..nodes.len())
            .filter(|&n| children[n].is_empty())
            .map(|leaf| {
                let mut path = vec![leaf];
                while let Some(p) = nodes[*path.last().unwrap()].parent {
                    path.push(p);
                }
                path.reverse();
                path
            })
            .collect();
        Ok(Self {
            nodes,
            roots,
            main_path,
            retrieval_path,
            paths,
        })
    }

    /// 21 nodes: four candidate roots, a main path five deep under the first,
    /// a three-node branch under the second, two-node branches under the third
    /// and fourth, and a five-node retrieval chain.
    pub fn default_tree() -> Self {
        let mut spec: Vec<(Option<usize>, bool)> = vec![(None, false); 4];
        let chain = |spec: &mut Vec<(Option<usize>, bool)>, from: Option<usize>, len: usize, retrieval: bool| {
            let mut parent = from;
            for _ in 0..len {
                spec.push((parent, retrieval));
                parent = Some(spec.len() - 1);
            }
        };
        chain(&mut spec, Some(0), 5, false);
        chain(&mut spec, Some(1), 3, false);
        chain(&mut spec, Some(2), 2, false);
        chain(&mut spec, Some(3), 2, false);
        chain(&mut spec, None, 5, true);
        Self::from_parents(&spec).expect("default template is well formed")
    }

    /// A single root followed by `len - 1` children.
    pub fn chain(len: usize) -> Self {
        let spec: Vec<(Option<usize>, bool)> = (0..len).map(|i| (i.checked_sub(1), false)).collect();
        Self::from_parents(&spec).expect("a chain is well formed")
    }

    fn spec(&self) -> Vec<(Option<usize>, bool)> {
        self.nodes.iter().map(|n| (n.parent, n.retrieval)).collect()
    }

    /// Keeps only the nodes accepted by `keep`; descendants of dropped nodes
    /// must also be dropped.
    fn filtered(&self, keep: impl Fn(&TreeNode) -> bool) -> Self {
        let mut new_id = vec![None; self.nodes.len()];
        let mut spec = Vec::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if keep(n) {
                new_id[i] = Some(spec.len());
                spec.push((n.parent.and_then(|p| new_id[p]), n.retrieval));
            }
        }
        Self::from_parents(&spec).expect("filtering keeps the tree well formed")
    }

    pub fn without_retrieval(&self) -> Self {
        self.filtered(|n| !n.retrieval)
    }

    /// Drops every node at depth `max_depth` or deeper.
    pub fn truncated(&self, max_depth: usize) -> Self {
        self.filtered(|n| n.depth < max_depth)
    }

    /// Parses one `id parent_id is_retrieval_path` line per node; a parent
    /// of -1 marks a top-level node. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |what: &str| Error::Template(format!("line {}: {what}: `{raw}`", lineno + 1));
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(bad("expected `id parent_id is_retrieval_path`"));
            }
            let id: usize = fields[0].parse().map_err(|_| bad("bad id"))?;
            if id != spec.len() {
                return Err(bad(&format!("ids must be consecutive from 0, expected {}", spec.len())));
            }
            let parent: i64 = fields[1].parse().map_err(|_| bad("bad parent id"))?;
            let parent = match parent {
                -1 => None,
                p if p >= 0 => Some(p as usize),
                _ => return Err(bad("bad parent id")),
            };
            let retrieval = match fields[2] {
                "0" | "false" => false,
                "1" | "true" => true,
                _ => return Err(bad("is_retrieval_path must be 0 or 1")),
            };
            spec.push((parent, retrieval));
        }
        if spec.is_empty() {
            return Err(Error::Template("template has no nodes".into()));
        }
        Self::from_parents(&spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# id parent_id is_retrieval_path\n");
        for (id, (parent, retrieval)) in self.spec().into_iter().enumerate() {
            let p = parent.map_or(-1, |p| p as i64);
            writeln!(out, "{id} {p} {}", u8::from(retrieval)).unwrap();
        }
        out
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    /// Number of candidate roots.
    pub fn k(&self) -> usize {
        self.roots.len()
    }

    pub fn roots(&self) -> &[usize] {
        &self.roots
    }

    pub fn main_path(&self) -> &[usize] {
        &self.main_path
    }

    pub fn retrieval_path(&self) -> &[usize] {
        &self.retrieval_path
    }

    pub fn has_retrieval(&self) -> bool {
        !self.retrieval_path.is_empty()
    }

    /// Root-to-leaf node lists, ordered by leaf id.
    pub fn paths(&self) -> &[Vec<usize>] {
        &self.paths
    }

    /// Number of draft levels, i.e. one more than the deepest node's depth.
    pub fn levels(&self) -> usize {
        self.nodes.iter().map(|n| n.depth + 1).max().unwrap_or(0)
    }

    /// True iff `a` is `n` or one of its ancestors.
    pub fn is_ancestor_or_self(&self, a: usize, n: usize) -> bool {
        let mut cur = Some(n);
        while let Some(c) = cur {
            if c == a {
                return true;
            }
            cur = self.nodes[c].parent;
        }
        false
    }
}

impl Default for DraftTreeTemplate {
    fn default() -> Self {
        Self::default_tree()
    }
}

//! Rooted labeled trees: BFS neighbourhoods of graph nodes, multi-type
//! Galton-Watson samples, and Markov broadcasting of labels on a fixed shape.
//!
//! Nodes are stored in BFS order, so the root is node 0, depths are
//! nondecreasing, each layer is a contiguous range, and the children of a
//! node are a contiguous range too.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::model::SideInfoMode;
use crate::rng;
use crate::sbm::{Graph, SideInfo};

/// Which nodes act as flow sinks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryPolicy {
    /// Nodes at exactly `depth_cap`. Shallower dead ends are not sinks.
    #[default]
    DeepestLayer,
    /// Every non-root leaf, including dead ends above `depth_cap`.
    AllLeaves,
    /// Revealed nodes with no revealed strict ancestor (excluding the root).
    RevealedCutset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RootLabel {
    Fixed(usize),
    /// Drawn from the stationary distribution of `K = diag(M 1)^-1 M`.
    Stationary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalTree {
    parent: Vec<Option<usize>>,
    child_start: Vec<usize>,
    depth: Vec<usize>,
    origin: Vec<usize>,
    labels: Option<Vec<usize>>,
    prior: Vec<Option<usize>>,
    depth_cap: usize,
    layer_start: Vec<usize>,
    is_boundary: Vec<bool>,
    boundary: Vec<usize>,
    dropped_edges: usize,
}

impl LocalTree {
    /// Assembles a tree from per-node parents given in BFS order
    /// (`parents[0] == None`, parents precede children, children contiguous).
    fn from_bfs(
        parents: Vec<Option<usize>>,
        origin: Vec<usize>,
        labels: Option<Vec<usize>>,
        depth_cap: usize,
    ) -> Self {
        let n = parents.len();
        let mut depth = vec![0usize; n];
        let mut child_count = vec![0usize; n];
        for v in 1..n {
            let p = parents[v].expect("non-root node has a parent");
            debug_assert!(p < v);
            depth[v] = depth[p] + 1;
            child_count[p] += 1;
        }
        // children of p start right after the children of all earlier parents
        let mut child_start = vec![0usize; n + 1];
        let mut next = 1;
        for v in 0..n {
            child_start[v] = next;
            next += child_count[v];
        }
        child_start[n] = next;
        let max_depth = depth.last().copied().unwrap_or(0);
        let mut layer_start = vec![n; max_depth.max(depth_cap) + 2];
        for v in (0..n).rev() {
            layer_start[depth[v]] = v;
        }
        for d in (0..layer_start.len() - 1).rev() {
            layer_start[d] = layer_start[d].min(layer_start[d + 1]);
        }
        let mut tree = Self {
            parent: parents,
            child_start,
            depth,
            origin,
            labels,
            prior: vec![None; n],
            depth_cap,
            layer_start,
            is_boundary: vec![false; n],
            boundary: Vec::new(),
            dropped_edges: 0,
        };
        tree.set_boundary(BoundaryPolicy::DeepestLayer);
        tree
    }

    /// Builds a tree from an arbitrary parent array (`None` marks the root).
    /// Nodes are renumbered into BFS order; `origin` keeps the input index.
    pub fn from_parents(parents: &[Option<usize>], labels: Option<&[usize]>) -> Result<Self> {
        let n = parents.len();
        let roots: Vec<usize> = (0..n).filter(|&v| parents[v].is_none()).collect();
        if roots.len() != 1 {
            return Err(Error::InvalidParams(format!(
                "a tree needs exactly one root, found {}",
                roots.len()
            )));
        }
        let mut kids: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (v, p) in parents.iter().enumerate() {
            if let Some(p) = *p {
                if p >= n {
                    return Err(Error::InvalidParams(format!("parent {p} out of range")));
                }
                kids[p].push(v);
            }
        }
        let mut order = vec![roots[0]];
        let mut pos = 0;
        while pos < order.len() {
            let v = order[pos];
            order.extend_from_slice(&kids[v]);
            pos += 1;
        }
        if order.len() != n {
            return Err(Error::InvalidParams("parent array contains a cycle".into()));
        }
        let mut new_index = vec![0usize; n];
        for (i, &v) in order.iter().enumerate() {
            new_index[v] = i;
        }
        let bfs_parents = order
            .iter()
            .map(|&v| parents[v].map(|p| new_index[p]))
            .collect();
        let labels = labels.map(|l| order.iter().map(|&v| l[v]).collect());
        let mut tree = Self::from_bfs(bfs_parents, order, labels, 0);
        tree.depth_cap = tree.max_depth();
        tree.set_boundary(BoundaryPolicy::DeepestLayer);
        Ok(tree)
    }

    /// Full `b`-ary tree of the given depth.
    pub fn regular(b: usize, depth: usize) -> Self {
        let mut parents = vec![None];
        let mut layer = 0..1;
        for _ in 0..depth {
            let start = parents.len();
            for p in layer.clone() {
                parents.extend(std::iter::repeat_n(Some(p), b));
            }
            layer = start..parents.len();
        }
        let origin = (0..parents.len()).collect();
        Self::from_bfs(parents, origin, None, depth)
    }

    pub fn n(&self) -> usize {
        self.parent.len()
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        self.parent[v]
    }

    pub fn children(&self, v: usize) -> Range<usize> {
        self.child_start[v]..self.child_start[v + 1]
    }

    pub fn num_children(&self, v: usize) -> usize {
        self.child_start[v + 1] - self.child_start[v]
    }

    pub fn depth(&self, v: usize) -> usize {
        self.depth[v]
    }

    /// Graph node (or input index) this tree node came from.
    pub fn origin(&self, v: usize) -> usize {
        self.origin[v]
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn label(&self, v: usize) -> Option<usize> {
        self.labels.as_ref().map(|l| l[v])
    }

    pub fn priors(&self) -> &[Option<usize>] {
        &self.prior
    }

    pub fn prior(&self, v: usize) -> Option<usize> {
        self.prior[v]
    }

    pub fn depth_cap(&self) -> usize {
        self.depth_cap
    }

    pub fn max_depth(&self) -> usize {
        self.depth.last().copied().unwrap_or(0)
    }

    /// Nodes at depth `d` (empty past the deepest layer).
    pub fn layer(&self, d: usize) -> Range<usize> {
        if d + 1 >= self.layer_start.len() {
            return self.n()..self.n();
        }
        self.layer_start[d]..self.layer_start[d + 1]
    }

    pub fn boundary(&self) -> &[usize] {
        &self.boundary
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        self.is_boundary[v]
    }

    /// Graph edges among tree nodes that are not tree edges.
    pub fn dropped_edges(&self) -> usize {
        self.dropped_edges
    }

    pub fn set_boundary(&mut self, policy: BoundaryPolicy) {
        let n = self.n();
        let mut is_b = vec![false; n];
        match policy {
            BoundaryPolicy::DeepestLayer => {
                if self.depth_cap > 0 {
                    for v in self.layer(self.depth_cap) {
                        is_b[v] = true;
                    }
                }
            }
            BoundaryPolicy::AllLeaves => {
                for v in 1..n {
                    is_b[v] = self.num_children(v) == 0;
                }
            }
            BoundaryPolicy::RevealedCutset => {
                // covered[v]: v or a strict ancestor below the root is revealed
                let mut covered = vec![false; n];
                for v in 1..n {
                    let p = self.parent[v].expect("non-root");
                    let above = p != 0 && covered[p];
                    if !above && self.prior[v].is_some() {
                        is_b[v] = true;
                    }
                    covered[v] = above || self.prior[v].is_some();
                }
            }
        }
        self.boundary = (0..n).filter(|&v| is_b[v]).collect();
        self.is_boundary = is_b;
    }

    pub fn set_priors(&mut self, prior: Vec<Option<usize>>) -> Result<()> {
        if prior.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: prior.len(),
            });
        }
        self.prior = prior;
        Ok(())
    }

    /// Copies prior labels from graph-level side information via `origin`.
    pub fn attach_side_info(&mut self, side: &SideInfo) {
        self.prior = self.origin.iter().map(|&u| side.prior[u]).collect();
    }

    /// Draws an observation for every node from its true label.
    pub fn reveal(&mut self, mode: SideInfoMode, k: usize, seed: u64) -> Result<()> {
        let labels = self.labels.as_ref().ok_or(Error::NoTruth)?;
        let mut rng = rng::stream(seed, &[0x7e7e]);
        self.prior = labels
            .iter()
            .map(|&l| mode.observe(l, k, &mut rng))
            .collect();
        Ok(())
    }

    /// Number of boundary nodes in the subtree of every node.
    pub fn boundary_descendants(&self) -> Vec<usize> {
        let mut count: Vec<usize> = self.is_boundary.iter().map(|&b| b as usize).collect();
        for v in (1..self.n()).rev() {
            let p = self.parent[v].expect("non-root");
            if !self.is_boundary[p] {
                count[p] += count[v];
            }
        }
        count
    }

    pub fn check_invariants(&self) -> Result<()> {
        let n = self.n();
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if n == 0 {
            return bad("empty tree".into());
        }
        if self.parent[0].is_some() || self.depth[0] != 0 {
            return bad("node 0 must be the root".into());
        }
        for v in 1..n {
            let Some(p) = self.parent[v] else {
                return bad(format!("node {v} has no parent"));
            };
            if !self.children(p).contains(&v) {
                return bad(format!("node {v} missing from its parent's children"));
            }
            if self.depth[v] != self.depth[p] + 1 {
                return bad(format!("depth of {v} is not parent depth + 1"));
            }
            if self.depth[v] > self.depth_cap {
                return bad(format!("node {v} deeper than the cap"));
            }
        }
        let total_children: usize = (0..n).map(|v| self.num_children(v)).sum();
        if total_children != n - 1 {
            return bad("child ranges do not cover the non-root nodes".into());
        }
        for &b in &self.boundary {
            if b == 0 {
                return bad("root is on the boundary".into());
            }
            let mut a = self.parent[b];
            while let Some(x) = a {
                if self.is_boundary[x] {
                    return bad(format!("boundary nodes {x} and {b} are nested"));
                }
                a = self.parent[x];
            }
        }
        Ok(())
    }

    /// Indented text dump, one node per line.
    pub fn to_indented_text(&self) -> String {
        let mut out = String::new();
        let mut stack = vec![0usize];
        while let Some(v) = stack.pop() {
            let _ = write!(out, "{}{}", "  ".repeat(self.depth[v]), self.origin[v]);
            if let Some(l) = self.label(v) {
                let _ = write!(out, " label={l}");
            }
            if let Some(p) = self.prior[v] {
                let _ = write!(out, " prior={p}");
            }
            if self.is_boundary[v] {
                out.push_str(" *");
            }
            out.push('\n');
            stack.extend(self.children(v).rev());
        }
        out
    }

    /// Graphviz DOT dump; boundary nodes are drawn as boxes.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph tree {\n");
        for v in 0..self.n() {
            let mut label = self.origin[v].to_string();
            if let Some(l) = self.label(v) {
                let _ = write!(label, "\\nlabel={l}");
            }
            if let Some(p) = self.prior[v] {
                let _ = write!(label, "\\nprior={p}");
            }
            let shape = if self.is_boundary[v] {
                "box"
            } else {
                "ellipse"
            };
            let _ = writeln!(out, "  n{v} [label=\"{label}\", shape={shape}];");
        }
        for v in 1..self.n() {
            let _ = writeln!(out, "  n{} -> n{v};", self.parent[v].unwrap());
        }
        out.push_str("}\n");
        out
    }
}

/// BFS neighbourhood of `root` up to `depth`. Nodes join the tree at first
/// discovery; a node seen from several parents in the same layer goes to the
/// parent with the lowest graph id. Cycle and cross edges are dropped and
/// counted.
pub fn extract_tree(graph: &Graph, root: usize, depth: usize) -> LocalTree {
    let mut index: HashMap<usize, usize> = HashMap::new();
    index.insert(root, 0);
    let mut origin = vec![root];
    let mut parents = vec![None];
    let mut layer = 0..1;
    for _ in 0..depth {
        // assign each newly discovered node to its lowest-id parent
        let mut by_id: Vec<usize> = layer.clone().collect();
        by_id.sort_by_key(|&t| origin[t]);
        let mut found: Vec<(usize, usize)> = Vec::new();
        let mut claimed: HashMap<usize, ()> = HashMap::new();
        for &t in &by_id {
            for &u in graph.neighbors(origin[t]) {
                if !index.contains_key(&u) && claimed.insert(u, ()).is_none() {
                    found.push((t, u));
                }
            }
        }
        // lay out children grouped by parent in layer order, ids ascending
        found.sort_unstable();
        let start = origin.len();
        for (t, u) in found {
            index.insert(u, origin.len());
            origin.push(u);
            parents.push(Some(t));
        }
        layer = start..origin.len();
        if layer.is_empty() {
            break;
        }
    }
    let labels = graph
        .truth()
        .map(|truth| origin.iter().map(|&u| truth[u]).collect());
    let mut edges_inside = 0usize;
    for &u in &origin {
        edges_inside += graph
            .neighbors(u)
            .iter()
            .filter(|w| index.contains_key(w))
            .count();
    }
    let mut tree = LocalTree::from_bfs(parents, origin, labels, depth);
    tree.dropped_edges = edges_inside / 2 - (tree.n() - 1);
    tree
}

fn kernel_rows(mean: &Matrix) -> Result<Matrix> {
    let k = mean.dim();
    let sums = mean.row_sums();
    let mut kernel = Matrix::zeros(k);
    for i in 0..k {
        if sums[i] <= 0.0 {
            return Err(Error::ZeroDegreeCommunity(i));
        }
        for j in 0..k {
            kernel[(i, j)] = mean[(i, j)] / sums[i];
        }
    }
    Ok(kernel)
}

fn draw_from<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding: fall back to the last label with positive mass
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Multi-type Galton-Watson tree: a type-`i` node has `Poisson(M[i][j])`
/// children of type `j`, independently over `j`. Children are grouped by type.
pub fn sample_gw_tree(
    mean: &Matrix,
    root: RootLabel,
    depth: usize,
    seed: u64,
) -> Result<LocalTree> {
    let k = mean.dim();
    if (0..k).any(|i| (0..k).any(|j| !(mean[(i, j)] >= 0.0))) {
        return Err(Error::InvalidParams(
            "mean matrix must be nonnegative".into(),
        ));
    }
    let mut rng = rng::stream(seed, &[0x6a7]);
    let root_label = match root {
        RootLabel::Fixed(l) if l < k => l,
        RootLabel::Fixed(l) => {
            return Err(Error::InvalidParams(format!("root label {l} out of range")))
        }
        RootLabel::Stationary => {
            let kernel = kernel_rows(mean)?;
            let pi = linalg::stationary_distribution(&kernel, 1e-15, 1_000_000)?;
            draw_from(&pi, &mut rng)
        }
    };
    let poissons: Vec<Vec<Option<Poisson<f64>>>> = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| {
                    let m = mean[(i, j)];
                    (m > 0.0).then(|| Poisson::new(m).expect("positive rate"))
                })
                .collect()
        })
        .collect();
    let mut labels = vec![root_label];
    let mut parents = vec![None];
    let mut layer = 0..1;
    for _ in 0..depth {
        let start = labels.len();
        for v in layer.clone() {
            let i = labels[v];
            for (j, dist) in poissons[i].iter().enumerate() {
                if let Some(dist) = dist {
                    let count = dist.sample(&mut rng) as usize;
                    for _ in 0..count {
                        labels.push(j);
                        parents.push(Some(v));
                    }
                }
            }
        }
        layer = start..labels.len();
        if layer.is_empty() {
            break;
        }
    }
    let origin = (0..labels.len()).collect();
    Ok(LocalTree::from_bfs(parents, origin, Some(labels), depth))
}

/// Assigns labels top-down on a fixed shape: each child's label is drawn
/// from row `K[label(parent)]`.
pub fn broadcast_labels(
    tree: &LocalTree,
    kernel: &Matrix,
    root_label: usize,
    seed: u64,
) -> LocalTree {
    let mut rng = rng::stream(seed, &[0xb0ad]);
    let mut labels = vec![0usize; tree.n()];
    labels[0] = root_label;
    for v in 1..tree.n() {
        let p = tree.parent[v].expect("non-root");
        labels[v] = draw_from(kernel.row(labels[p]), &mut rng);
    }
    let mut out = tree.clone();
    out.labels = Some(labels);
    out
}

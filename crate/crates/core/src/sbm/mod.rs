//! Graph sampling from the general SBM and side-information generation.

mod io;

pub use io::{
    attach_labels, load_edge_list, load_gml, restrict_to_largest_component, write_edge_list,
    write_labels,
};

use std::collections::VecDeque;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{SbmParams, SideInfoMode};
use crate::rng;

/// Probabilities at or below this use geometric skip sampling.
const SKIP_THRESHOLD: f64 = 0.01;

/// Undirected simple graph with optional ground truth.
///
/// Nodes are `0..n`. `ids` keeps the identifiers the nodes had in the
/// source file (1-based for sampled graphs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    adjacency: Vec<Vec<usize>>,
    truth: Option<Vec<usize>>,
    k: usize,
    ids: Vec<i64>,
}

impl Graph {
    /// Builds a graph from an undirected edge list, dropping self-loops and
    /// duplicates.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut adjacency = vec![Vec::new(); n];
        for (u, v) in edges {
            if u == v {
                continue;
            }
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        Self {
            adjacency,
            truth: None,
            k: 0,
            ids: (1..=n as i64).collect(),
        }
    }

    pub fn with_truth(mut self, truth: Vec<usize>, k: usize) -> Result<Self> {
        if truth.len() != self.n() {
            return Err(Error::InvalidParams(format!(
                "{} labels for {} nodes",
                truth.len(),
                self.n()
            )));
        }
        if let Some(bad) = truth.iter().find(|&&l| l >= k) {
            return Err(Error::InvalidParams(format!("label {bad} outside 0..{k}")));
        }
        self.truth = Some(truth);
        self.k = k;
        Ok(self)
    }

    pub(crate) fn with_ids(mut self, ids: Vec<i64>) -> Self {
        debug_assert_eq!(ids.len(), self.n());
        self.ids = ids;
        self
    }

    pub fn n(&self) -> usize {
        self.adjacency.len()
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn truth(&self) -> Option<&[usize]> {
        self.truth.as_deref()
    }

    /// Number of communities; 0 until labels are attached.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn ids(&self) -> &[i64] {
        &self.ids
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(u, list)| list.iter().filter(move |&&v| v > u).map(move |&v| (u, v)))
    }

    /// Checks symmetry, absence of self-loops and duplicates, label range.
    pub fn check_invariants(&self) -> Result<()> {
        for (u, list) in self.adjacency.iter().enumerate() {
            if list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidParams(format!(
                    "adjacency of {u} not strictly sorted"
                )));
            }
            for &v in list {
                if v == u {
                    return Err(Error::InvalidParams(format!("self-loop at {u}")));
                }
                if self.adjacency[v].binary_search(&u).is_err() {
                    return Err(Error::InvalidParams(format!("edge {u}-{v} not symmetric")));
                }
            }
        }
        if let Some(truth) = &self.truth {
            if truth.iter().any(|&l| l >= self.k) {
                return Err(Error::InvalidParams("label out of range".into()));
            }
        }
        Ok(())
    }

    /// Connected components as node lists, each sorted, ordered by smallest node.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.n();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut comp = vec![start];
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for &v in &self.adjacency[u] {
                    if !seen[v] {
                        seen[v] = true;
                        comp.push(v);
                        queue.push_back(v);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// Subgraph induced by `nodes` (sorted), relabeled `0..nodes.len()`.
    pub fn induced(&self, nodes: &[usize]) -> Graph {
        let mut index = vec![usize::MAX; self.n()];
        for (new, &old) in nodes.iter().enumerate() {
            index[old] = new;
        }
        let adjacency = nodes
            .iter()
            .map(|&old| {
                let mut list: Vec<usize> = self.adjacency[old]
                    .iter()
                    .filter_map(|&v| (index[v] != usize::MAX).then_some(index[v]))
                    .collect();
                list.sort_unstable();
                list
            })
            .collect();
        Graph {
            adjacency,
            truth: self
                .truth
                .as_ref()
                .map(|t| nodes.iter().map(|&v| t[v]).collect()),
            k: self.k,
            ids: nodes.iter().map(|&v| self.ids[v]).collect(),
        }
    }
}

/// Samples a graph from the SBM. Nodes are assigned to communities by
/// block fill: the first `N[0]` nodes get label 0, and so on.
///
/// Each node `u` owns a random stream keyed by `(seed, u)` that decides its
/// edges to higher-numbered nodes, so the output is independent of thread
/// scheduling.
pub fn sample_graph(params: &SbmParams, seed: u64) -> Graph {
    let n = params.n();
    let k = params.k();
    let truth: Vec<usize> = (0..n).map(|v| params.block_of(v)).collect();
    let mut starts = Vec::with_capacity(k + 1);
    starts.push(0usize);
    for &s in params.sizes() {
        starts.push(starts.last().unwrap() + s);
    }
    let q = params.probs();

    let forward: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|u| {
            let mut rng = rng::stream(seed, &[0x5b3, u as u64]);
            let lu = truth[u];
            let mut out = Vec::new();
            for b in 0..k {
                let lo = starts[b].max(u + 1);
                let hi = starts[b + 1];
                if lo >= hi {
                    continue;
                }
                let p = q[(lu, b)];
                if p <= 0.0 {
                    continue;
                }
                if p >= 1.0 {
                    out.extend(lo..hi);
                } else if p <= SKIP_THRESHOLD {
                    let log_q = (1.0 - p).ln();
                    let mut v = lo;
                    loop {
                        let u01: f64 = 1.0 - rng.random::<f64>();
                        let skip = (u01.ln() / log_q).floor();
                        if !skip.is_finite() || skip >= (hi - v) as f64 {
                            break;
                        }
                        v += skip as usize;
                        out.push(v);
                        v += 1;
                        if v >= hi {
                            break;
                        }
                    }
                } else {
                    for v in lo..hi {
                        if rng.random::<f64>() < p {
                            out.push(v);
                        }
                    }
                }
            }
            out
        })
        .collect();

    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (u, list) in forward.iter().enumerate() {
        for &v in list {
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
    }
    adjacency.par_iter_mut().for_each(|l| l.sort_unstable());
    Graph {
        adjacency,
        truth: Some(truth),
        k,
        ids: (1..=n as i64).collect(),
    }
}

/// Per-node prior labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideInfo {
    pub mode: SideInfoMode,
    pub prior: Vec<Option<usize>>,
    pub seed: u64,
}

impl SideInfo {
    pub fn revealed_count(&self) -> usize {
        self.prior.iter().filter(|p| p.is_some()).count()
    }

    pub fn is_revealed(&self, v: usize) -> bool {
        matches!(self.mode, SideInfoMode::Partial(_)) && self.prior[v].is_some()
    }
}

/// Noisy: every node keeps its label with probability `delta + (1-delta)/k`,
/// otherwise gets one of the other `k-1` labels uniformly.
/// Partial: every node is revealed with probability `delta`.
pub fn make_side_info(
    truth: &[usize],
    mode: SideInfoMode,
    k: usize,
    seed: u64,
) -> Result<SideInfo> {
    mode.validate()?;
    if k < 2 {
        return Err(Error::InvalidParams("side information needs k >= 2".into()));
    }
    let mut rng = rng::stream(seed, &[0x51de]);
    let prior = truth
        .iter()
        .map(|&t| mode.observe(t, k, &mut rng))
        .collect();
    Ok(SideInfo { mode, prior, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_and_full_probabilities() {
        let empty = SbmParams::new(vec![4, 6], vec![vec![0.0; 2]; 2]).unwrap();
        assert_eq!(sample_graph(&empty, 1).num_edges(), 0);
        let full = SbmParams::new(vec![4, 6], vec![vec![1.0; 2]; 2]).unwrap();
        let g = sample_graph(&full, 1);
        assert_eq!(g.num_edges(), 45);
        g.check_invariants().unwrap();
    }

    #[test]
    fn block_fill_labels() {
        let params = SbmParams::new(vec![2, 3], vec![vec![0.5; 2]; 2]).unwrap();
        let g = sample_graph(&params, 3);
        assert_eq!(g.truth().unwrap(), &[0, 0, 1, 1, 1]);
    }

    #[test]
    fn mean_edge_count_matches_expectation() {
        let n = 1000usize;
        let params = SbmParams::vanilla(n, 8.0, 2.0).unwrap();
        let nf = n as f64;
        let expected = 2.0 * (500.0 * 499.0 / 2.0) * (8.0 / nf) + 500.0 * 500.0 * (2.0 / nf);
        let counts: Vec<f64> = (0..200)
            .map(|s| sample_graph(&params, s).num_edges() as f64)
            .collect();
        let mean = counts.iter().sum::<f64>() / counts.len() as f64;
        let var =
            counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (counts.len() - 1) as f64;
        let se = (var / counts.len() as f64).sqrt();
        assert!(
            (mean - expected).abs() < 4.0 * se,
            "mean {mean} expected {expected} se {se}"
        );
    }

    #[test]
    fn seeds_are_reproducible() {
        let params = SbmParams::vanilla(400, 6.0, 2.0).unwrap();
        let a = sample_graph(&params, 11);
        assert_eq!(a, sample_graph(&params, 11));
        assert_ne!(a.adjacency, sample_graph(&params, 12).adjacency);
    }

    #[test]
    fn noisy_agreement_rate() {
        let n = 100_000;
        let truth: Vec<usize> = (0..n).map(|v| v % 2).collect();
        let delta = 0.999;
        let si = make_side_info(&truth, SideInfoMode::noisy(delta).unwrap(), 2, 5).unwrap();
        let agree = si
            .prior
            .iter()
            .zip(&truth)
            .filter(|(p, t)| **p == Some(**t))
            .count() as f64
            / n as f64;
        let p = delta + (1.0 - delta) / 2.0;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((agree - p).abs() < 4.0 * se);
    }

    #[test]
    fn noisy_wrong_labels_are_uniform() {
        let n = 100_000;
        let k = 4;
        let delta = 0.4;
        let truth = vec![0usize; n];
        let si = make_side_info(&truth, SideInfoMode::noisy(delta).unwrap(), k, 9).unwrap();
        let p_wrong = (1.0 - delta) * (1.0 - 1.0 / k as f64) / (k - 1) as f64;
        let se = (p_wrong * (1.0 - p_wrong) / n as f64).sqrt();
        for label in 1..k {
            let freq = si.prior.iter().filter(|p| **p == Some(label)).count() as f64 / n as f64;
            assert!(
                (freq - p_wrong).abs() < 4.0 * se,
                "label {label}: {freq} vs {p_wrong}"
            );
        }
    }

    #[test]
    fn partial_never_lies() {
        let truth: Vec<usize> = (0..5000).map(|v| v % 3).collect();
        let si = make_side_info(&truth, SideInfoMode::partial(0.3).unwrap(), 3, 2).unwrap();
        for (p, t) in si.prior.iter().zip(&truth) {
            if let Some(p) = p {
                assert_eq!(p, t);
            }
        }
        assert!(si.revealed_count() > 1300 && si.revealed_count() < 1700);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn sampled_graphs_satisfy_invariants(
            sizes in proptest::collection::vec(1usize..30, 1..4),
            raw in proptest::collection::vec(0.0f64..1.0, 16),
            seed in any::<u64>(),
        ) {
            let k = sizes.len();
            let mut q = vec![vec![0.0; k]; k];
            for i in 0..k {
                for j in i..k {
                    let p = raw[i * 4 + j].powi(3);
                    q[i][j] = p;
                    q[j][i] = p;
                }
            }
            let params = SbmParams::new(sizes, q).unwrap();
            let g = sample_graph(&params, seed);
            prop_assert!(g.check_invariants().is_ok());
            prop_assert_eq!(g.n(), params.n());
        }
    }
}

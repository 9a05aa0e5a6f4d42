//! Unit flows from the root to the boundary of a tree, where the edge into a
//! node at depth `d` has resistance `r^d`.
//!
//! Resistances are carried in normalized form `R~(v) = R(v) / r^|v|`, where
//! `R(v)` is the resistance of the edge into `v` in series with everything
//! below it:
//!
//! * boundary node: `R~ = 1`
//! * internal node: `R~ = 1 + r / sum_c 1/R~(c)`
//! * root: `R = r / sum_c 1/R~(c)`
//!
//! Flow splits among children in proportion to `1/R~`. On deep trees with
//! `r` far from 1 the recursion switches to logarithms.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tree::LocalTree;

/// Above this value of `depth * |ln r|` the reduction runs in log space.
const LOG_SPACE_THRESHOLD: f64 = 600.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowAssignment {
    pub resistance_level: f64,
    /// `flow[v]` is the current through the edge into `v`; 1 at the root.
    pub flow: Vec<f64>,
    pub energy: f64,
    pub effective_resistance: f64,
    pub log_effective_resistance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Depth {
    Finite(usize),
    Infinite,
}

fn check_level(r: f64) -> Result<()> {
    if r > 0.0 && r.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidResistance(r))
    }
}

fn log_sum_exp(xs: impl Iterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.collect();
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Log of the normalized resistance of every supported node (`None` off
/// the flow support), plus the log effective resistance at the root.
fn reduce(tree: &LocalTree, r: f64) -> Result<(Vec<Option<f64>>, f64)> {
    check_level(r)?;
    if tree.boundary().is_empty() {
        return Err(Error::EmptyBoundary);
    }
    let ln_r = r.ln();
    let n = tree.n();
    let log_mode = tree.max_depth() as f64 * ln_r.abs() > LOG_SPACE_THRESHOLD;
    let mut log_rt: Vec<Option<f64>> = vec![None; n];
    let mut lin_rt: Vec<f64> = vec![0.0; n];
    for v in (1..n).rev() {
        if tree.is_boundary(v) {
            log_rt[v] = Some(0.0);
            lin_rt[v] = 1.0;
            continue;
        }
        let supported = tree.children(v).filter(|&c| log_rt[c].is_some());
        if log_mode {
            let lg = log_sum_exp(supported.map(|c| -log_rt[c].unwrap()));
            if lg.is_finite() {
                log_rt[v] = Some(softplus(ln_r - lg));
            }
        } else {
            let g: f64 = supported.map(|c| 1.0 / lin_rt[c]).sum();
            if g > 0.0 {
                lin_rt[v] = 1.0 + r / g;
                log_rt[v] = Some(lin_rt[v].ln());
            }
        }
    }
    let log_root = if log_mode {
        ln_r - log_sum_exp(tree.children(0).filter_map(|c| log_rt[c].map(|x| -x)))
    } else {
        let g: f64 = tree
            .children(0)
            .filter(|&c| log_rt[c].is_some())
            .map(|c| 1.0 / lin_rt[c])
            .sum();
        (r / g).ln()
    };
    Ok((log_rt, log_root))
}

/// Effective resistance between the root and the boundary.
pub fn effective_resistance(tree: &LocalTree, r: f64) -> Result<f64> {
    Ok(reduce(tree, r)?.1.exp())
}

/// `sum_{v != root} flow(v)^2 r^|v|`.
pub fn flow_energy(tree: &LocalTree, flow: &[f64], r: f64) -> f64 {
    let ln_r = r.ln();
    if tree.max_depth() as f64 * ln_r.abs() > LOG_SPACE_THRESHOLD {
        let terms = (1..tree.n())
            .filter(|&v| flow[v] > 0.0)
            .map(|v| 2.0 * flow[v].ln() + tree.depth(v) as f64 * ln_r);
        return log_sum_exp(terms).exp();
    }
    let mut level = vec![1.0; tree.max_depth() + 1];
    for d in 1..level.len() {
        level[d] = level[d - 1] * r;
    }
    (1..tree.n())
        .map(|v| flow[v] * flow[v] * level[tree.depth(v)])
        .sum()
}

/// The unit flow of minimum energy (Thomson's principle).
pub fn min_energy_flow(tree: &LocalTree, r: f64) -> Result<FlowAssignment> {
    let (log_rt, log_root) = reduce(tree, r)?;
    let mut flow = vec![0.0; tree.n()];
    flow[0] = 1.0;
    for v in 0..tree.n() {
        if flow[v] == 0.0 || (v != 0 && tree.is_boundary(v)) {
            continue;
        }
        let kids = tree.children(v);
        let lse = log_sum_exp(kids.clone().filter_map(|c| log_rt[c].map(|x| -x)));
        for c in kids {
            if let Some(x) = log_rt[c] {
                flow[c] = flow[v] * (-x - lse).exp();
            }
        }
    }
    let energy = flow_energy(tree, &flow, r);
    Ok(FlowAssignment {
        resistance_level: r,
        flow,
        energy,
        effective_resistance: log_root.exp(),
        log_effective_resistance: log_root,
    })
}

/// Flow proportional to the number of boundary descendants, i.e. each
/// boundary node receives `1/|boundary|`. Minimal on regular trees.
pub fn uniform_flow(tree: &LocalTree, r: f64) -> Result<FlowAssignment> {
    let (_, log_root) = reduce(tree, r)?;
    let counts = tree.boundary_descendants();
    let total = counts[0] as f64;
    let flow: Vec<f64> = counts.iter().map(|&c| c as f64 / total).collect();
    let energy = flow_energy(tree, &flow, r);
    Ok(FlowAssignment {
        resistance_level: r,
        flow,
        energy,
        effective_resistance: log_root.exp(),
        log_effective_resistance: log_root,
    })
}

/// A random valid unit flow: every supported node splits its current among
/// supported children with uniform random proportions.
pub fn random_unit_flow<R: Rng + ?Sized>(tree: &LocalTree, rng: &mut R) -> Vec<f64> {
    let counts = tree.boundary_descendants();
    let mut flow = vec![0.0; tree.n()];
    flow[0] = 1.0;
    for v in 0..tree.n() {
        if flow[v] == 0.0 || (v != 0 && tree.is_boundary(v)) {
            continue;
        }
        let kids: Vec<usize> = tree.children(v).filter(|&c| counts[c] > 0).collect();
        let weights: Vec<f64> = kids.iter().map(|_| rng.random::<f64>() + 1e-3).collect();
        let total: f64 = weights.iter().sum();
        for (c, w) in kids.into_iter().zip(weights) {
            flow[c] = flow[v] * w / total;
        }
    }
    flow
}

/// Largest violation of the unit-flow constraints: root current 1,
/// conservation at supported internal nodes, and full absorption.
pub fn unit_flow_violation(tree: &LocalTree, flow: &[f64]) -> f64 {
    let mut worst = (flow[0] - 1.0).abs();
    for v in 0..tree.n() {
        if (v != 0 && tree.is_boundary(v)) || flow[v] < 0.0 {
            worst = worst.max(-flow[v].min(0.0));
            continue;
        }
        if tree.num_children(v) > 0 {
            let out: f64 = tree.children(v).map(|c| flow[c]).sum();
            worst = worst.max((out - flow[v]).abs());
        }
    }
    let absorbed: f64 = tree.boundary().iter().map(|&b| flow[b]).sum();
    worst.max((absorbed - 1.0).abs())
}

/// Minimum energy of a `b`-ary tree at conductance `cond` per level:
/// `sum_{d=1..t} (1/(b cond))^d`, or `1/(b cond - 1)` for infinite depth.
pub fn regular_tree_energy(b: usize, cond: f64, depth: Depth) -> Result<f64> {
    if b == 0 {
        return Err(Error::InvalidParams(
            "branching factor must be positive".into(),
        ));
    }
    if !(cond > 0.0 && cond.is_finite()) {
        return Err(Error::InvalidResistance(1.0 / cond));
    }
    let growth = b as f64 * cond;
    let q = 1.0 / growth;
    match depth {
        Depth::Finite(t) => Ok((1..=t as i32).map(|d| q.powi(d)).sum()),
        Depth::Infinite if growth > 1.0 => Ok(1.0 / (growth - 1.0)),
        Depth::Infinite => Err(Error::DivergentEnergy(growth)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn chain(t: usize) -> LocalTree {
        let parents: Vec<Option<usize>> = (0..=t).map(|v| v.checked_sub(1)).collect();
        LocalTree::from_parents(&parents, None).unwrap()
    }

    /// Root -> A (boundary), root -> B -> {B1, B2} (boundary).
    fn a_b_tree() -> LocalTree {
        let mut t =
            LocalTree::from_parents(&[None, Some(0), Some(0), Some(2), Some(2)], None).unwrap();
        t.set_boundary(crate::tree::BoundaryPolicy::AllLeaves);
        t
    }

    /// Random tree with `n` nodes: node v attaches to a uniform earlier node.
    fn random_tree(n: usize, seed: u64) -> LocalTree {
        let mut rng = rng::stream(seed, &[1]);
        let parents: Vec<Option<usize>> = (0..n)
            .map(|v| (v > 0).then(|| rng.random_range(0..v)))
            .collect();
        let mut t = LocalTree::from_parents(&parents, None).unwrap();
        t.set_boundary(crate::tree::BoundaryPolicy::AllLeaves);
        t
    }

    /// Minimum energy over boundary currents x with sum 1:
    /// E(x) = x^T A x with A[a][b] = sum of r^|v| over shared non-root
    /// ancestors v of a and b, so E* = 1 / (1^T A^-1 1).
    fn qp_oracle(tree: &LocalTree, r: f64) -> (f64, Vec<f64>) {
        let bd = tree.boundary();
        let m = bd.len();
        let path = |mut v: usize| {
            let mut p = Vec::new();
            while v != 0 {
                p.push(v);
                v = tree.parent(v).unwrap();
            }
            p
        };
        let paths: Vec<Vec<usize>> = bd.iter().map(|&b| path(b)).collect();
        let mut a = vec![vec![0.0; m + 1]; m];
        for i in 0..m {
            for j in 0..m {
                a[i][j] = paths[i]
                    .iter()
                    .filter(|v| paths[j].contains(v))
                    .map(|&v| r.powi(tree.depth(v) as i32))
                    .sum();
            }
            a[i][m] = 1.0;
        }
        // Gauss-Jordan with partial pivoting on [A | 1]
        for col in 0..m {
            let piv = (col..m)
                .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
                .unwrap();
            a.swap(col, piv);
            let d = a[col][col];
            for x in a[col].iter_mut() {
                *x /= d;
            }
            for row in 0..m {
                if row != col {
                    let f = a[row][col];
                    for c in 0..=m {
                        a[row][c] -= f * a[col][c];
                    }
                }
            }
        }
        let y: Vec<f64> = a.iter().map(|row| row[m]).collect();
        let s: f64 = y.iter().sum();
        (1.0 / s, y.iter().map(|v| v / s).collect())
    }

    #[test]
    fn chain_is_series() {
        for t in 1..6 {
            let tree = chain(t);
            assert!((effective_resistance(&tree, 1.0).unwrap() - t as f64).abs() < 1e-12);
            let f = min_energy_flow(&tree, 1.0).unwrap();
            assert!(f.flow.iter().all(|&x| (x - 1.0).abs() < 1e-15));
        }
    }

    #[test]
    fn a_b_example() {
        let t = a_b_tree();
        let f = min_energy_flow(&t, 1.0).unwrap();
        assert!((f.effective_resistance - 0.6).abs() < 1e-12);
        assert!((f.energy - 0.6).abs() < 1e-12);
        assert!((f.flow[1] - 0.6).abs() < 1e-12);
        assert!((f.flow[2] - 0.4).abs() < 1e-12);
        assert!((f.flow[3] - 0.2).abs() < 1e-12 && (f.flow[4] - 0.2).abs() < 1e-12);
        let (e, x) = qp_oracle(&t, 1.0);
        assert!((e - 0.6).abs() < 1e-12);
        assert!((x[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn regular_tree_matches_geometric_sum() {
        for (b, t, r) in [(2usize, 5usize, 1.7), (3, 4, 0.6), (4, 3, 2.5)] {
            let tree = LocalTree::regular(b, t);
            let f = min_energy_flow(&tree, r).unwrap();
            let expected: f64 = (1..=t).map(|d| (r / b as f64).powi(d as i32)).sum();
            assert!((f.energy - expected).abs() < 1e-10);
            assert!((f.effective_resistance - expected).abs() < 1e-10);
            let closed = regular_tree_energy(b, 1.0 / r, Depth::Finite(t)).unwrap();
            assert!((closed - expected).abs() < 1e-10);
            for v in 0..tree.n() {
                let want = (b as f64).powi(-(tree.depth(v) as i32));
                assert!((f.flow[v] - want).abs() < 1e-12);
            }
            let u = uniform_flow(&tree, r).unwrap();
            assert_eq!(u.flow, f.flow);
        }
    }

    #[test]
    fn regular_energy_closed_forms() {
        assert!((regular_tree_energy(3, 2.0 / 3.0, Depth::Infinite).unwrap() - 1.0).abs() < 1e-12);
        assert!(
            (regular_tree_energy(3, 2.0 / 3.0, Depth::Finite(5)).unwrap() - 0.96875).abs() < 1e-12
        );
        assert_eq!(regular_tree_energy(7, 0.3, Depth::Finite(0)).unwrap(), 0.0);
        assert!(matches!(
            regular_tree_energy(2, 0.5, Depth::Infinite),
            Err(Error::DivergentEnergy(_))
        ));
    }

    #[test]
    fn errors() {
        let t = LocalTree::regular(2, 0);
        assert!(matches!(
            effective_resistance(&t, 1.0),
            Err(Error::EmptyBoundary)
        ));
        let t = LocalTree::regular(2, 2);
        assert!(matches!(
            min_energy_flow(&t, 0.0),
            Err(Error::InvalidResistance(_))
        ));
        assert!(matches!(
            min_energy_flow(&t, f64::NAN),
            Err(Error::InvalidResistance(_))
        ));
    }

    #[test]
    fn dead_end_branch_gets_no_flow() {
        // root -> 1 (dead end at depth 1), root -> 2 -> 3 (boundary at depth 2)
        let t = LocalTree::from_parents(&[None, Some(0), Some(0), Some(2)], None).unwrap();
        let f = min_energy_flow(&t, 2.0).unwrap();
        assert_eq!(f.flow[1], 0.0);
        assert_eq!(f.flow[3], 1.0);
        assert!((f.energy - (2.0 + 4.0)).abs() < 1e-12);
    }

    #[test]
    fn log_space_on_deep_chains() {
        // two chains of depth 400 at r = 10: linear arithmetic would overflow
        let mut parents = vec![None];
        for _ in 0..2 {
            for d in 0..400 {
                let p = if d == 0 { 0 } else { parents.len() - 1 };
                parents.push(Some(p));
            }
        }
        let t = LocalTree::from_parents(&parents, None).unwrap();
        let f = min_energy_flow(&t, 10.0).unwrap();
        for &b in t.boundary() {
            assert!((f.flow[b] - 0.5).abs() < 1e-12);
        }
        // each chain has resistance sum_{d=1..400} 10^d ~ 10^400 * 10/9
        let expected = 400.0 * 10f64.ln() + (10.0f64 / 9.0).ln() - 2f64.ln();
        assert!((f.log_effective_resistance - expected).abs() < 1e-9);
        assert!(f.effective_resistance.is_infinite());
    }

    #[test]
    fn matches_qp_oracle_on_random_trees() {
        for seed in 0..50 {
            let t = random_tree(3 + (seed as usize % 25), seed);
            let r = 0.5 + (seed as f64 * 0.37) % 3.5;
            let f = min_energy_flow(&t, r).unwrap();
            let (e, x) = qp_oracle(&t, r);
            assert!((f.energy - e).abs() < 1e-9 * e.max(1.0), "seed {seed}");
            for (i, &b) in t.boundary().iter().enumerate() {
                assert!((f.flow[b] - x[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn energy_monotone_in_r() {
        for seed in 0..20 {
            let t = random_tree(60, seed);
            let mut prev = 0.0;
            for step in 0..30 {
                let r = 0.2 + 0.15 * step as f64;
                let e = min_energy_flow(&t, r).unwrap().energy;
                assert!(e >= prev - 1e-12);
                prev = e;
            }
        }
    }

    proptest! {
        #[test]
        fn min_flow_is_valid_and_minimal(n in 2usize..120, seed in any::<u64>(), r in 0.5f64..4.0) {
            let t = random_tree(n, seed);
            let f = min_energy_flow(&t, r).unwrap();
            prop_assert!(unit_flow_violation(&t, &f.flow) < 1e-10);
            prop_assert!((f.energy - f.effective_resistance).abs() < 1e-10 * f.energy.max(1.0));
            let mut rng = rng::stream(seed, &[2]);
            for _ in 0..200 {
                let other = random_unit_flow(&t, &mut rng);
                prop_assert!(unit_flow_violation(&t, &other) < 1e-10);
                let eps: f64 = rng.random();
                let mixed: Vec<f64> = f.flow.iter().zip(&other).map(|(a, b)| a + eps * (b - a)).collect();
                prop_assert!(flow_energy(&t, &mixed, r) >= f.energy - 1e-12);
            }
            let u = uniform_flow(&t, r).unwrap();
            prop_assert!(unit_flow_violation(&t, &u.flow) < 1e-10);
            prop_assert!(u.energy >= f.energy - 1e-12);
        }
    }
}

//! Self-test suite: BP against brute-force enumeration, minimum-energy
//! flows against random perturbations, and regular-tree closed forms.

use rand::Rng;

use crate::baselines::{bp_classify_root, exact_posterior_oracle};
use crate::error::Result;
use crate::flow::{
    flow_energy, min_energy_flow, random_unit_flow, regular_tree_energy, unit_flow_violation, Depth,
};
use crate::linalg::Matrix;
use crate::model::SideInfoMode;
use crate::rng;
use crate::tree::{BoundaryPolicy, LocalTree};

#[derive(Debug, Clone, Default)]
pub struct OracleReport {
    pub checks: usize,
    pub failures: Vec<String>,
}

impl OracleReport {
    fn record(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok {
            self.failures.push(what());
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Tree with `n` nodes where node `v` attaches to a uniform earlier node;
/// boundary is every leaf.
pub fn random_tree<R: Rng + ?Sized>(n: usize, rng: &mut R) -> LocalTree {
    let parents: Vec<Option<usize>> = (0..n)
        .map(|v| (v > 0).then(|| rng.random_range(0..v)))
        .collect();
    let mut t = LocalTree::from_parents(&parents, None).expect("valid parent array");
    t.set_boundary(BoundaryPolicy::AllLeaves);
    t
}

/// Row-stochastic matrix with entries bounded away from zero.
pub fn random_kernel<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Matrix {
    let mut m = Matrix::zeros(k);
    for i in 0..k {
        let row: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.05).collect();
        let s: f64 = row.iter().sum();
        for j in 0..k {
            m[(i, j)] = row[j] / s;
        }
    }
    m
}

/// Runs `instances` BP-vs-enumeration cases (k = 2 and 3 alternating) and
/// `instances / 5` flow-minimality cases with `perturbations` random flows
/// each, plus regular-tree closed forms.
pub fn run_oracle_checks(
    seed: u64,
    instances: usize,
    perturbations: usize,
) -> Result<OracleReport> {
    let mut report = OracleReport::default();
    let mut r = rng::stream(seed, &[0x0c1e]);
    for i in 0..instances {
        let k = 2 + i % 2;
        let max_nodes = if k == 2 { 14 } else { 10 };
        let n = r.random_range(2..=max_nodes);
        let mut tree = random_tree(n, &mut r);
        let kernel = random_kernel(k, &mut r);
        let delta = r.random_range(0.05..0.95);
        let mode = if r.random::<bool>() {
            SideInfoMode::Noisy(delta)
        } else {
            SideInfoMode::Partial(delta)
        };
        let priors = (0..n)
            .map(|_| (r.random::<f64>() < 0.7).then(|| r.random_range(0..k)))
            .collect();
        tree.set_priors(priors)?;
        let prior = random_kernel(k, &mut r).row(0).to_vec();
        let order: Vec<usize> = (0..k).collect();
        let bp = bp_classify_root(&tree, &kernel, mode, &prior, &order)?;
        let exact = exact_posterior_oracle(&tree, &kernel, mode, &prior)?;
        let gap = bp
            .posterior
            .iter()
            .zip(&exact)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        report.record(gap <= 1e-9, || {
            format!("bp vs enumeration instance {i}: gap {gap:e}")
        });
        if let Some(g) = bp.logit_gap {
            report.record(g <= 1e-9, || {
                format!("logit recursion instance {i}: gap {g:e}")
            });
        }
    }
    for i in 0..instances / 5 {
        let n = r.random_range(2..=200);
        let tree = random_tree(n, &mut r);
        let level = r.random_range(0.5..4.0);
        let f = min_energy_flow(&tree, level)?;
        let viol = unit_flow_violation(&tree, &f.flow);
        report.record(viol <= 1e-10, || {
            format!("flow {i}: constraint violation {viol:e}")
        });
        let gap = (f.energy - f.effective_resistance).abs();
        report.record(gap <= 1e-10 * f.energy.max(1.0), || {
            format!("flow {i}: energy vs resistance {gap:e}")
        });
        let beaten = (0..perturbations)
            .filter(|_| {
                flow_energy(&tree, &random_unit_flow(&tree, &mut r), level) < f.energy - 1e-12
            })
            .count();
        report.record(beaten == 0, || {
            format!("flow {i}: {beaten} random flows beat the minimum")
        });
    }
    for (b, cond) in [(2usize, 0.8), (3, 0.5), (4, 0.49), (5, 0.3)] {
        let t = 6;
        let tree = LocalTree::regular(b, t);
        let f = min_energy_flow(&tree, 1.0 / cond)?;
        let closed = regular_tree_energy(b, cond, Depth::Finite(t))?;
        let gap = (f.energy - closed).abs();
        report.record(gap <= 1e-10, || format!("regular tree b={b}: gap {gap:e}"));
        let deep = regular_tree_energy(b, cond, Depth::Finite(40))?;
        let limit = regular_tree_energy(b, cond, Depth::Infinite)?;
        let gap = (deep - limit).abs();
        report.record(gap <= 1e-6, || {
            format!("regular tree b={b}: depth-40 vs limit {gap:e}")
        });
    }
    Ok(report)
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::SideInfoMode;
use crate::tree::LocalTree;

/// Largest tree the enumeration oracle accepts.
pub const ORACLE_MAX_NODES: usize = 14;

/// Two-community BP update
/// `f(x) = log((1 + t1 tanh(x/2)) / (1 - t2 tanh(x/2)))`.
/// Beyond `|x| > 30` the saturated value is returned.
pub fn f_update(t1: f64, t2: f64, x: f64) -> Result<f64> {
    if !(t1 > 0.0 && t1 < 1.0 && t2 > 0.0 && t2 < 1.0) {
        return Err(Error::DomainError(t1, t2));
    }
    let t = if x > 30.0 {
        1.0
    } else if x < -30.0 {
        -1.0
    } else {
        (x / 2.0).tanh()
    };
    Ok((t1 * t).ln_1p() - (-t2 * t).ln_1p())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BpResult {
    pub posterior: Vec<f64>,
    pub label: usize,
    /// For two communities: gap between the sum-product posterior and the
    /// one from the logit recursion through `f_update`. `None` when that
    /// recursion does not apply (k != 2 or `K` outside its domain).
    pub logit_gap: Option<f64>,
}

fn argmax_with_ties(p: &[f64], tie_order: &[usize]) -> usize {
    let best = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    *tie_order
        .iter()
        .find(|&&l| p[l] == best)
        .expect("some label attains the maximum")
}

/// Channel likelihoods `P(obs | l)` with row `k` standing for "no
/// observation".
fn likelihood_table(mode: SideInfoMode, k: usize) -> Vec<f64> {
    (0..=k)
        .flat_map(|o| (0..k).map(move |l| mode.likelihood((o < k).then_some(o), l, k)))
        .collect()
}

fn obs_row(obs: Option<usize>, k: usize) -> usize {
    obs.unwrap_or(k)
}

fn check_prior(root_prior: &[f64], k: usize) -> Result<()> {
    if root_prior.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: root_prior.len(),
        });
    }
    Ok(())
}

/// Exact root posterior by sum-product. Evidence enters at boundary nodes
/// through the side-information channel; nodes below the boundary are
/// ignored. Ties in the posterior go to the first label of `tie_order`.
pub fn bp_classify_root(
    tree: &LocalTree,
    kernel: &Matrix,
    mode: SideInfoMode,
    root_prior: &[f64],
    tie_order: &[usize],
) -> Result<BpResult> {
    let k = kernel.dim();
    check_prior(root_prior, k)?;
    let n = tree.n();
    let mut msg = vec![1.0; n * k];
    let mut buf = vec![0.0; k];
    let lik = likelihood_table(mode, k);
    for v in (0..n).rev() {
        if v != 0 && tree.is_boundary(v) {
            let row = obs_row(tree.prior(v), k) * k;
            msg[v * k..(v + 1) * k].copy_from_slice(&lik[row..row + k]);
        } else {
            for c in tree.children(v) {
                kernel.mul_vec_into(&msg[c * k..(c + 1) * k], &mut buf);
                for l in 0..k {
                    msg[v * k + l] *= buf[l];
                }
            }
        }
        let total: f64 = msg[v * k..(v + 1) * k].iter().sum();
        if total > 0.0 {
            msg[v * k..(v + 1) * k].iter_mut().for_each(|x| *x /= total);
        }
    }
    let mut posterior: Vec<f64> = (0..k).map(|l| root_prior[l] * msg[l]).collect();
    let z: f64 = posterior.iter().sum();
    posterior.iter_mut().for_each(|p| *p /= z);
    let logit_gap = if k == 2 {
        logit_posterior(tree, kernel, mode, root_prior).map(|p| (p - posterior[0]).abs())
    } else {
        None
    };
    if let Some(gap) = logit_gap {
        debug_assert!(
            gap <= 1e-9,
            "logit recursion disagrees with sum-product by {gap}"
        );
    }
    Ok(BpResult {
        label: argmax_with_ties(&posterior, tie_order),
        posterior,
        logit_gap,
    })
}

/// `P(root = first label)` from `B(u) = e(u)` on the boundary and
/// `B(u) = sum_c f(B(c))` above it.
fn logit_posterior(
    tree: &LocalTree,
    kernel: &Matrix,
    mode: SideInfoMode,
    root_prior: &[f64],
) -> Option<f64> {
    let t1 = 2.0 * kernel[(0, 0)] - 1.0;
    let t2 = 2.0 * kernel[(1, 1)] - 1.0;
    f_update(t1, t2, 0.0).ok()?;
    let lik = likelihood_table(mode, 2);
    let evidence: Vec<f64> = lik.chunks(2).map(|p| p[0].ln() - p[1].ln()).collect();
    let f_evidence: Vec<f64> = evidence
        .iter()
        .map(|&e| f_update(t1, t2, e).expect("domain checked"))
        .collect();
    // b holds B(v); fb holds f(B(v)), what v contributes to its parent
    let mut b = vec![0.0; tree.n()];
    let mut fb = vec![0.0; tree.n()];
    for v in (0..tree.n()).rev() {
        if v != 0 && tree.is_boundary(v) {
            let row = obs_row(tree.prior(v), 2);
            b[v] = evidence[row];
            fb[v] = f_evidence[row];
        } else {
            b[v] = tree.children(v).map(|c| fb[c]).sum();
            fb[v] = f_update(t1, t2, b[v]).expect("domain checked");
        }
    }
    let logit = b[0] + root_prior[0].ln() - root_prior[1].ln();
    Some(if logit.is_nan() {
        f64::NAN
    } else {
        1.0 / (1.0 + (-logit).exp())
    })
}

/// Root posterior by summing over every labeling of the tree.
pub fn exact_posterior_oracle(
    tree: &LocalTree,
    kernel: &Matrix,
    mode: SideInfoMode,
    root_prior: &[f64],
) -> Result<Vec<f64>> {
    let k = kernel.dim();
    check_prior(root_prior, k)?;
    let n = tree.n();
    if n > ORACLE_MAX_NODES {
        return Err(Error::TooLarge {
            max: ORACLE_MAX_NODES,
            got: n,
        });
    }
    let mut labels = vec![0usize; n];
    let mut post = vec![0.0; k];
    let total = k.pow(n as u32);
    for code in 0..total {
        let mut c = code;
        for l in labels.iter_mut() {
            *l = c % k;
            c /= k;
        }
        let mut p = root_prior[labels[0]];
        for v in 1..n {
            p *= kernel[(labels[tree.parent(v).unwrap()], labels[v])];
            if tree.is_boundary(v) {
                p *= mode.likelihood(tree.prior(v), labels[v], k);
            }
        }
        post[labels[0]] += p;
    }
    let z: f64 = post.iter().sum();
    Ok(post.into_iter().map(|p| p / z).collect())
}

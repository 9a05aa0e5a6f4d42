//! Weighted message passing.
//!
//! Boundary node `u` starts with `M(u) = theta^{-2|u|} i(u) w[prior(u)]`,
//! where `i` is a unit flow to the boundary and `w` a label weighting
//! (`[+1, -1]` for two communities, the second eigenvector of `K` in
//! general). Messages then move up linearly, `M(v) = theta * sum_c M(c)`,
//! while the conditional means `mu(v, l)` and the sub-Gaussian variance
//! proxy `sigma^2(v)` follow
//!
//! ```text
//! mu(v)      = theta * sum_c K mu(c)
//! sigma^2(v) = theta^2 * sum_c [ sigma^2(c) + (max_ij |mu(c,i) - mu(c,j)| / 2)^2 ]
//! ```
//!
//! The root is assigned the label whose mean is nearest to its message.
//!
//! Initial magnitudes are normalized in log space, and after every layer
//! all freshly computed values are divided by a power of two so the largest
//! stays at most 1. The accumulated factor is kept in `log_scale`; labels
//! depend only on relative positions and are unaffected.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{self, FlowAssignment};
use crate::harness::stats::{misclassification_stats, ErrStats};
use crate::linalg::Matrix;
use crate::model::{BroadcastKernel, SideInfoMode};
use crate::sbm::{Graph, SideInfo};
use crate::tree::{extract_tree, BoundaryPolicy, LocalTree};

/// Tolerance on `||K w - theta w||` for treating `w` as an eigenvector.
const EIGEN_CHECK_TOL: f64 = 1e-8;
/// Relative tolerance of the closed-form root mean check.
pub const CLOSED_FORM_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowWeighting {
    /// Minimum-energy flow at conductance `theta^2`.
    #[default]
    MinEnergy,
    /// Equal share per boundary node (the AMP simplification).
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelWeights {
    /// Sign weights for two communities, the eigenvector otherwise.
    #[default]
    Auto,
    Sign,
    Eigenvector,
}

/// How partially revealed labels enter the initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartialTreatment {
    /// Boundary labels act as noisy labels; unrevealed boundary nodes send 0.
    #[default]
    NoisyBoundary,
    /// The closest revealed node on every path is a sink.
    AllRevealed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WmpOptions {
    pub depth: usize,
    pub flow: FlowWeighting,
    pub weights: LabelWeights,
    pub partial: PartialTreatment,
    pub boundary: BoundaryPolicy,
    /// Leave revealed nodes out of the error statistics (partial mode).
    pub exclude_revealed: bool,
    /// Count nodes without any usable boundary label as errors.
    pub uninformed_as_error: bool,
}

impl Default for WmpOptions {
    fn default() -> Self {
        Self {
            depth: 4,
            flow: FlowWeighting::MinEnergy,
            weights: LabelWeights::Auto,
            partial: PartialTreatment::NoisyBoundary,
            boundary: BoundaryPolicy::DeepestLayer,
            exclude_revealed: false,
            uninformed_as_error: false,
        }
    }
}

impl WmpOptions {
    pub fn with_depth(depth: usize) -> Self {
        Self {
            depth,
            ..Self::default()
        }
    }

    pub(crate) fn boundary_policy(&self, mode: SideInfoMode) -> BoundaryPolicy {
        match (mode, self.partial) {
            (SideInfoMode::Partial(_), PartialTreatment::AllRevealed) => {
                BoundaryPolicy::RevealedCutset
            }
            _ => self.boundary,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum WeightKind {
    Sign,
    Eigenvector,
}

/// Messages and moment parameters on one tree.
#[derive(Debug, Clone)]
pub struct MessageState<'a> {
    tree: &'a LocalTree,
    k: usize,
    theta: f64,
    kernel: Matrix,
    weights: Vec<f64>,
    kind: WeightKind,
    delta_eff: f64,
    tie_order: Vec<usize>,
    messages: Vec<f64>,
    mu: Vec<f64>,
    sigma2: Vec<f64>,
    layer: usize,
    steps: usize,
    init_log_scale: f64,
    log_scale: f64,
    layer_log_scale: Vec<f64>,
}

/// Outcome of the nearest-center rule at the root.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootDecision {
    pub label: usize,
    /// Second-smallest minus smallest distance to a center.
    pub margin: f64,
    pub tie: bool,
    /// Label from the raw sign of the message (two communities, sign weights).
    pub sign_label: Option<usize>,
}

fn label_weights(kernel: &BroadcastKernel, choice: LabelWeights) -> Result<(Vec<f64>, WeightKind)> {
    let k = kernel.k();
    let kind = match choice {
        LabelWeights::Auto if k == 2 => WeightKind::Sign,
        LabelWeights::Auto => WeightKind::Eigenvector,
        LabelWeights::Sign => WeightKind::Sign,
        LabelWeights::Eigenvector => WeightKind::Eigenvector,
    };
    match kind {
        WeightKind::Sign if k != 2 => Err(Error::WrongK(k)),
        WeightKind::Sign => Ok((vec![1.0, -1.0], kind)),
        WeightKind::Eigenvector => kernel
            .w
            .clone()
            .map(|w| (w, kind))
            .ok_or(Error::MissingEigenvector(k)),
    }
}

fn spread(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    max - min
}

/// Smallest nonnegative power of two that is at least `x`.
fn pow2_ceil(x: f64) -> f64 {
    if x <= 1.0 {
        1.0
    } else {
        2f64.powi(x.log2().ceil() as i32)
    }
}

/// Sets boundary messages and initial moments from the flow and priors.
pub fn init_messages<'a>(
    tree: &'a LocalTree,
    kernel: &BroadcastKernel,
    mode: SideInfoMode,
    flow: &FlowAssignment,
    weights: LabelWeights,
    partial: PartialTreatment,
) -> Result<MessageState<'a>> {
    let k = kernel.k();
    let n = tree.n();
    if flow.flow.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: flow.flow.len(),
        });
    }
    if kernel.theta == 0.0 {
        return Err(Error::ZeroTheta);
    }
    let (w, kind) = label_weights(kernel, weights)?;
    let all_revealed =
        matches!(mode, SideInfoMode::Partial(_)) && partial == PartialTreatment::AllRevealed;
    let delta_eff = if all_revealed { 1.0 } else { mode.delta() };
    let sigma_factor = match (all_revealed, kind) {
        (true, _) => 0.0,
        (false, WeightKind::Sign) => 1.0,
        (false, WeightKind::Eigenvector) => spread(&w).powi(2),
    };
    let boundary = tree.boundary();
    if !boundary.iter().any(|&u| tree.prior(u).is_some()) {
        return Err(Error::NoBoundaryLabels);
    }
    let ln_theta = kernel.theta.abs().ln();
    let log_c: Vec<f64> = boundary
        .iter()
        .map(|&u| flow.flow[u].ln() - 2.0 * tree.depth(u) as f64 * ln_theta)
        .collect();
    let top = log_c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(Error::InvalidParams(
            "flow carries no current to the boundary".into(),
        ));
    }

    let mut messages = vec![0.0; n];
    let mut mu = vec![0.0; n * k];
    let mut sigma2 = vec![0.0; n];
    let mut deepest = 0;
    for (&u, &lc) in boundary.iter().zip(&log_c) {
        deepest = deepest.max(tree.depth(u));
        let c = (lc - top).exp();
        if let Some(p) = tree.prior(u) {
            messages[u] = c * w[p];
        }
        for l in 0..k {
            mu[u * k + l] = delta_eff * c * w[l];
        }
        sigma2[u] = c * c * sigma_factor;
    }
    let mut layer_log_scale = vec![f64::NAN; tree.max_depth() + 1];
    layer_log_scale[deepest] = top;
    Ok(MessageState {
        tree,
        k,
        theta: kernel.theta,
        kernel: kernel.kernel.clone(),
        weights: w,
        kind,
        delta_eff,
        tie_order: kernel.tie_order(),
        messages,
        mu,
        sigma2,
        layer: deepest,
        steps: 0,
        init_log_scale: top,
        log_scale: top,
        layer_log_scale,
    })
}

impl<'a> MessageState<'a> {
    pub fn tree(&self) -> &'a LocalTree {
        self.tree
    }

    /// Depth of the deepest layer whose values are final.
    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn delta_eff(&self) -> f64 {
        self.delta_eff
    }

    /// Natural log of the factor separating stored from true values at the
    /// most recently finished layer.
    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    /// Stored (rescaled) message of node `v`.
    pub fn message(&self, v: usize) -> f64 {
        self.messages[v]
    }

    pub fn mu(&self, v: usize) -> &[f64] {
        &self.mu[v * self.k..(v + 1) * self.k]
    }

    pub fn sigma2(&self, v: usize) -> f64 {
        self.sigma2[v]
    }

    /// Multiplies every stored message and mean by `c` and every variance by
    /// `c^2`. Used to check that labels do not depend on the overall scale.
    pub fn scale(&mut self, c: f64) {
        self.messages.iter_mut().for_each(|m| *m *= c);
        self.mu.iter_mut().for_each(|m| *m *= c);
        self.sigma2.iter_mut().for_each(|s| *s *= c * c);
    }

    /// Root message, means and variance in true (unrescaled) units.
    pub fn unscaled_root(&self) -> (f64, Vec<f64>, f64) {
        let f = self.layer_log_scale[0].exp();
        (
            self.messages[0] * f,
            self.mu(0).iter().map(|m| m * f).collect(),
            self.sigma2[0] * f * f,
        )
    }

    /// Advances one layer toward the root. Returns `false` at the root.
    pub fn propagate(&mut self) -> bool {
        if self.layer == 0 {
            return false;
        }
        let d = self.layer - 1;
        let k = self.k;
        let pending = (self.init_log_scale - self.log_scale).exp();
        let mut peak: f64 = 0.0;
        let mut buf = vec![0.0; k];
        for v in self.tree.layer(d) {
            if self.tree.is_boundary(v) {
                self.messages[v] *= pending;
                for x in &mut self.mu[v * k..(v + 1) * k] {
                    *x *= pending;
                }
                self.sigma2[v] *= pending * pending;
            } else {
                let mut m = 0.0;
                let mut s2 = 0.0;
                let mut acc = vec![0.0; k];
                for c in self.tree.children(v) {
                    m += self.messages[c];
                    let mc = &self.mu[c * k..(c + 1) * k];
                    self.kernel.mul_vec_into(mc, &mut buf);
                    for (a, b) in acc.iter_mut().zip(&buf) {
                        *a += b;
                    }
                    let half = spread(mc) / 2.0;
                    s2 += self.sigma2[c] + half * half;
                }
                self.messages[v] = self.theta * m;
                for (l, a) in acc.into_iter().enumerate() {
                    self.mu[v * k + l] = self.theta * a;
                }
                self.sigma2[v] = self.theta * self.theta * s2;
            }
            peak = peak
                .max(self.messages[v].abs())
                .max(self.sigma2[v].sqrt())
                .max(self.mu(v).iter().fold(0.0, |a: f64, x| a.max(x.abs())));
        }
        let s = pow2_ceil(peak);
        if s > 1.0 {
            for v in self.tree.layer(d) {
                self.messages[v] /= s;
                for x in &mut self.mu[v * k..(v + 1) * k] {
                    *x /= s;
                }
                self.sigma2[v] /= s * s;
            }
            self.log_scale += s.ln();
        }
        self.layer_log_scale[d] = self.log_scale;
        self.layer = d;
        self.steps += 1;
        true
    }

    pub fn propagate_to_root(&mut self) {
        while self.propagate() {}
    }

    /// Relative deviation of the root means from `delta * w`, which holds
    /// whenever `w` is an eigenvector of `K` and the flow is a unit flow.
    /// `None` when `w` is not an eigenvector.
    pub fn closed_form_error(&self) -> Option<f64> {
        if self.layer != 0 {
            return None;
        }
        let kw = self.kernel.mul_vec(&self.weights);
        let resid = kw
            .iter()
            .zip(&self.weights)
            .map(|(a, b)| (a - self.theta * b).abs())
            .fold(0.0, f64::max);
        if resid > EIGEN_CHECK_TOL {
            return None;
        }
        let f = (-self.layer_log_scale[0]).exp();
        let expected: Vec<f64> = self
            .weights
            .iter()
            .map(|w| self.delta_eff * w * f)
            .collect();
        let size = expected.iter().fold(0.0, |a: f64, x| a.max(x.abs()));
        if size < f64::MIN_POSITIVE {
            return None;
        }
        let err = self
            .mu(0)
            .iter()
            .zip(&expected)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        Some(err / size)
    }
}

/// Nearest-center rule. Exact ties go to the larger community, then the
/// lowest index.
pub fn classify_root(state: &MessageState) -> RootDecision {
    let m = state.message(0);
    let dist: Vec<f64> = state.mu(0).iter().map(|mu| (m - mu).abs()).collect();
    let best = dist.iter().copied().fold(f64::INFINITY, f64::min);
    let tied: Vec<usize> = (0..state.k).filter(|&l| dist[l] == best).collect();
    let label = *state
        .tie_order
        .iter()
        .find(|l| tied.contains(l))
        .expect("some label attains the minimum");
    let second = (0..state.k)
        .filter(|&l| l != label)
        .map(|l| dist[l])
        .fold(f64::INFINITY, f64::min);
    let sign_label =
        (state.kind == WeightKind::Sign && m != 0.0).then_some(if m > 0.0 { 0 } else { 1 });
    RootDecision {
        label,
        margin: if second.is_finite() {
            second - best
        } else {
            0.0
        },
        tie: tied.len() > 1,
        sign_label,
    }
}

/// Runs the moment recursion in plain arithmetic. Boundary nodes and
/// childless nodes take `mu0`/`sigma0`; every other node is computed from
/// its children. Returns the root pair.
pub fn evolve_moments(
    tree: &LocalTree,
    kernel: &Matrix,
    theta: f64,
    mu0: &[Vec<f64>],
    sigma0: &[f64],
) -> Result<(Vec<f64>, f64)> {
    let n = tree.n();
    let k = kernel.dim();
    for len in [mu0.len(), sigma0.len()] {
        if len != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: len,
            });
        }
    }
    if let Some(bad) = mu0.iter().find(|m| m.len() != k) {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: bad.len(),
        });
    }
    let mut mu: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut s2 = vec![0.0; n];
    for v in (0..n).rev() {
        if (v != 0 && tree.is_boundary(v)) || tree.num_children(v) == 0 {
            mu[v] = mu0[v].clone();
            s2[v] = sigma0[v];
            continue;
        }
        let mut acc = vec![0.0; k];
        let mut var = 0.0;
        for c in tree.children(v) {
            let kc = kernel.mul_vec(&mu[c]);
            for (a, b) in acc.iter_mut().zip(&kc) {
                *a += theta * b;
            }
            let half = spread(&mu[c]) / 2.0;
            var += theta * theta * (s2[c] + half * half);
        }
        mu[v] = acc;
        s2[v] = var;
    }
    Ok((mu.swap_remove(0), s2[0]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeOutcome {
    pub label: usize,
    pub margin: f64,
    pub tie: bool,
    /// Some boundary node carried a label and the message was used.
    pub informed: bool,
    /// The root's own revealed label was used (partial mode).
    pub revealed_root: bool,
    pub sign_disagrees: bool,
    pub closed_form_violation: bool,
}

/// Classifies the root of `tree`, whose priors must already be attached.
/// Sets the tree's boundary according to `opts`.
pub fn classify_tree(
    tree: &mut LocalTree,
    kernel: &BroadcastKernel,
    mode: SideInfoMode,
    opts: &WmpOptions,
) -> Result<TreeOutcome> {
    if kernel.theta == 0.0 {
        return Err(Error::ZeroTheta);
    }
    let default_label = tree.prior(0).unwrap_or(kernel.tie_order()[0]);
    let fallback = |revealed_root| TreeOutcome {
        label: default_label,
        margin: 0.0,
        tie: false,
        informed: false,
        revealed_root,
        sign_disagrees: false,
        closed_form_violation: false,
    };
    if matches!(mode, SideInfoMode::Partial(_)) && tree.prior(0).is_some() {
        return Ok(fallback(true));
    }
    tree.set_boundary(opts.boundary_policy(mode));
    if !tree.boundary().iter().any(|&u| tree.prior(u).is_some()) {
        return Ok(fallback(false));
    }
    let tree: &LocalTree = tree;
    let r = kernel.theta.powi(-2);
    let flow = match opts.flow {
        FlowWeighting::MinEnergy => flow::min_energy_flow(tree, r)?,
        FlowWeighting::Uniform => flow::uniform_flow(tree, r)?,
    };
    let mut state = init_messages(tree, kernel, mode, &flow, opts.weights, opts.partial)?;
    state.propagate_to_root();
    let decision = classify_root(&state);
    Ok(TreeOutcome {
        label: decision.label,
        margin: decision.margin,
        tie: decision.tie,
        informed: true,
        revealed_root: false,
        sign_disagrees: decision.sign_label.is_some_and(|s| s != decision.label),
        closed_form_violation: state
            .closed_form_error()
            .is_some_and(|e| e > CLOSED_FORM_TOL),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub labels: Vec<usize>,
    pub margins: Vec<f64>,
    pub ties: Vec<bool>,
    pub uninformed: Vec<bool>,
    pub revealed: Vec<bool>,
    /// Nodes where the nearest-center rule and the raw sign disagree.
    pub sign_disagreements: usize,
    pub closed_form_violations: usize,
    pub stats: Option<ErrStats>,
}

impl ClassificationResult {
    pub fn uninformed_rate(&self) -> f64 {
        self.uninformed.iter().filter(|&&u| u).count() as f64 / self.labels.len().max(1) as f64
    }
}

/// Classifies every node of the graph from its depth-`opts.depth`
/// neighbourhood. Error statistics are attached when the graph has truth.
pub fn wmp_classify_graph(
    graph: &Graph,
    side: &SideInfo,
    kernel: &BroadcastKernel,
    opts: &WmpOptions,
) -> Result<ClassificationResult> {
    if side.prior.len() != graph.n() {
        return Err(Error::DimensionMismatch {
            expected: graph.n(),
            got: side.prior.len(),
        });
    }
    if kernel.theta == 0.0 {
        return Err(Error::ZeroTheta);
    }
    let outcomes: Vec<TreeOutcome> = (0..graph.n())
        .into_par_iter()
        .map(|o| {
            let mut tree = extract_tree(graph, o, opts.depth);
            tree.attach_side_info(side);
            classify_tree(&mut tree, kernel, side.mode, opts)
        })
        .collect::<Result<_>>()?;
    let labels: Vec<usize> = outcomes.iter().map(|o| o.label).collect();
    let uninformed: Vec<bool> = outcomes
        .iter()
        .map(|o| !o.informed && !o.revealed_root)
        .collect();
    let revealed: Vec<bool> = outcomes.iter().map(|o| o.revealed_root).collect();
    let stats = match graph.truth() {
        Some(truth) => {
            let k = kernel.k();
            let scored: Vec<usize> = labels
                .iter()
                .zip(truth)
                .zip(&uninformed)
                .map(|((&l, &t), &u)| {
                    if u && opts.uninformed_as_error {
                        (t + 1) % k
                    } else {
                        l
                    }
                })
                .collect();
            let mask: Option<Vec<bool>> = (opts.exclude_revealed
                && matches!(side.mode, SideInfoMode::Partial(_)))
            .then(|| revealed.iter().map(|r| !r).collect());
            Some(misclassification_stats(
                &scored,
                truth,
                k,
                &kernel.equiv_sets_or_singletons(),
                mask.as_deref(),
            )?)
        }
        None => None,
    };
    Ok(ClassificationResult {
        margins: outcomes.iter().map(|o| o.margin).collect(),
        ties: outcomes.iter().map(|o| o.tie).collect(),
        sign_disagreements: outcomes.iter().filter(|o| o.sign_disagrees).count(),
        closed_form_violations: outcomes.iter().filter(|o| o.closed_form_violation).count(),
        labels,
        uninformed,
        revealed,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{min_energy_flow, regular_tree_energy, uniform_flow, Depth};
    use crate::model::{build_kernel, SbmParams};
    use crate::rng;
    use crate::tree::{broadcast_labels, sample_gw_tree, RootLabel};
    use rand::Rng;

    /// Symmetric two-community kernel with second eigenvalue `theta`.
    fn kernel2(theta: f64) -> BroadcastKernel {
        let p = (1.0 + theta) / 2.0;
        let m = Matrix::from_rows(&[
            vec![3.0 * p, 3.0 * (1.0 - p)],
            vec![3.0 * (1.0 - p), 3.0 * p],
        ])
        .unwrap();
        BroadcastKernel::from_mean_matrix(&m).unwrap()
    }

    fn star(leaves: usize) -> LocalTree {
        let parents: Vec<Option<usize>> = std::iter::once(None)
            .chain(std::iter::repeat_n(Some(0), leaves))
            .collect();
        LocalTree::from_parents(&parents, None).unwrap()
    }

    fn noisy(d: f64) -> SideInfoMode {
        SideInfoMode::noisy(d).unwrap()
    }

    #[test]
    fn star_messages_and_root() {
        let mut t = star(3);
        t.set_priors(vec![None, Some(0), Some(0), Some(0)]).unwrap();
        let kern = kernel2(0.5);
        let f = uniform_flow(&t, 4.0).unwrap();
        let mut st = init_messages(
            &t,
            &kern,
            noisy(0.4),
            &f,
            LabelWeights::Sign,
            PartialTreatment::NoisyBoundary,
        )
        .unwrap();
        let scale = st.log_scale().exp();
        for u in 1..4 {
            assert!((st.message(u) * scale - 4.0 / 3.0).abs() < 1e-12);
        }
        st.propagate_to_root();
        let (m, mu, s2) = st.unscaled_root();
        assert!((m - 2.0).abs() < 1e-12);
        // mu(+) = theta * sum_c K mu0(c) = delta * w by the closed form
        assert!((mu[0] - 0.4).abs() < 1e-12 && (mu[1] + 0.4).abs() < 1e-12);
        assert!(s2 > 0.0);
        assert!(st.closed_form_error().unwrap() < 1e-12);
        let d = classify_root(&st);
        assert_eq!(d.label, 0);
        assert_eq!(d.sign_label, Some(0));
    }

    #[test]
    fn noisy_sign_ratio_is_inverse_delta_squared() {
        let mut t = LocalTree::regular(2, 3);
        t.set_priors(vec![Some(1); t.n()]).unwrap();
        let kern = kernel2(0.6);
        let f = min_energy_flow(&t, 0.6f64.powi(-2)).unwrap();
        for delta in [0.1, 0.5, 0.9] {
            let st = init_messages(
                &t,
                &kern,
                noisy(delta),
                &f,
                LabelWeights::Sign,
                PartialTreatment::NoisyBoundary,
            )
            .unwrap();
            for &u in t.boundary() {
                let half = (st.mu(u)[0] - st.mu(u)[1]) / 2.0;
                assert!((st.sigma2(u) / (half * half) - 1.0 / (delta * delta)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn eigenvector_message_is_proportional_to_w() {
        let m = 100.0;
        let params = SbmParams::new(
            vec![100, 100, 100],
            vec![
                vec![6.0 / m, 1.0 / m, 2.0 / m],
                vec![1.0 / m, 6.0 / m, 2.0 / m],
                vec![2.0 / m, 2.0 / m, 5.0 / m],
            ],
        )
        .unwrap();
        let kern = build_kernel(&params).unwrap();
        let w = kern.w.clone().unwrap();
        let mut t = star(2);
        t.set_priors(vec![None, Some(1), Some(1)]).unwrap();
        let f = uniform_flow(&t, kern.theta.powi(-2)).unwrap();
        let st = init_messages(
            &t,
            &kern,
            noisy(0.3),
            &f,
            LabelWeights::Auto,
            PartialTreatment::NoisyBoundary,
        )
        .unwrap();
        let ratio = st.message(1) / w[1];
        assert!(ratio > 0.0);
        assert!((st.mu(1)[0] / w[0] - 0.3 * ratio).abs() < 1e-12);
        assert_eq!(w[2], 0.0);
    }

    #[test]
    fn chain_root_message_is_theta_power() {
        let t = 5;
        let parents: Vec<Option<usize>> = (0..=t).map(|v: usize| v.checked_sub(1)).collect();
        let mut tree = LocalTree::from_parents(&parents, None).unwrap();
        let mut priors = vec![None; t + 1];
        priors[t] = Some(0);
        tree.set_priors(priors).unwrap();
        let theta: f64 = -0.7;
        let kern = kernel2(theta);
        let f = min_energy_flow(&tree, theta.powi(-2)).unwrap();
        let mut st = init_messages(
            &tree,
            &kern,
            noisy(0.5),
            &f,
            LabelWeights::Sign,
            PartialTreatment::NoisyBoundary,
        )
        .unwrap();
        let m0 = st.message(t) * st.log_scale().exp();
        st.propagate_to_root();
        assert_eq!(st.steps(), t);
        let (m, _, _) = st.unscaled_root();
        assert!((m - theta.powi(t as i32) * m0).abs() < 1e-9 * m0.abs());
    }

    #[test]
    fn zero_messages_tie_to_larger_community() {
        // unrevealed boundary under partial labels sends 0
        let mut t = star(2);
        t.set_priors(vec![None, Some(0), None]).unwrap();
        // a symmetric kernel whose second community is the larger one
        let mut kern = kernel2(0.5);
        kern.community_weights = vec![0.4, 0.6];
        let f = uniform_flow(&t, 4.0).unwrap();
        let mut st = init_messages(
            &t,
            &kern,
            SideInfoMode::Partial(0.5),
            &f,
            LabelWeights::Sign,
            PartialTreatment::NoisyBoundary,
        )
        .unwrap();
        st.scale(0.0);
        st.propagate_to_root();
        let d = classify_root(&st);
        assert!(d.tie);
        assert_eq!(d.label, 1);
        assert_eq!(d.margin, 0.0);
    }

    #[test]
    fn tie_goes_to_first_community_when_larger() {
        let params =
            SbmParams::new(vec![600, 400], vec![vec![0.01, 0.002], vec![0.002, 0.01]]).unwrap();
        let kern = build_kernel(&params).unwrap();
        assert_eq!(kern.tie_order()[0], 0);
        let mut t = star(2);
        t.set_priors(vec![None, Some(0), Some(1)]).unwrap();
        let f = uniform_flow(&t, kern.theta.powi(-2)).unwrap();
        let mut st = init_messages(
            &t,
            &kern,
            noisy(0.5),
            &f,
            LabelWeights::Sign,
            PartialTreatment::NoisyBoundary,
        )
        .unwrap();
        st.scale(0.0);
        st.propagate_to_root();
        let d = classify_root(&st);
        assert!(d.tie && d.label == 0);
    }

    #[test]
    fn no_boundary_labels_is_an_error() {
        let t = star(2);
        let kern = kernel2(0.5);
        let f = uniform_flow(&t, 4.0).unwrap();
        assert!(matches!(
            init_messages(
                &t,
                &kern,
                noisy(0.5),
                &f,
                LabelWeights::Sign,
                PartialTreatment::NoisyBoundary
            ),
            Err(Error::NoBoundaryLabels)
        ));
    }

    #[test]
    fn evolve_moments_depth_zero_and_identity() {
        let t = LocalTree::regular(2, 0);
        let (mu, s2) =
            evolve_moments(&t, &Matrix::identity(2), 0.5, &[vec![0.3, -0.3]], &[0.7]).unwrap();
        assert_eq!(mu, vec![0.3, -0.3]);
        assert_eq!(s2, 0.7);

        // K = I, theta = 1 on a chain: K^t mu0 = mu0
        let parents: Vec<Option<usize>> = (0..=4).map(|v: usize| v.checked_sub(1)).collect();
        let chain = LocalTree::from_parents(&parents, None).unwrap();
        let mut mu0 = vec![vec![0.0; 3]; 5];
        mu0[4] = vec![1.0, 2.0, -3.0];
        let (mu, _) = evolve_moments(&chain, &Matrix::identity(3), 1.0, &mu0, &[0.0; 5]).unwrap();
        assert_eq!(mu, vec![1.0, 2.0, -3.0]);

        // general K: compare with explicit matrix power
        let k = Matrix::from_rows(&[
            vec![0.5, 0.3, 0.2],
            vec![0.1, 0.8, 0.1],
            vec![0.3, 0.3, 0.4],
        ])
        .unwrap();
        let (mu, _) = evolve_moments(&chain, &k, 1.0, &mu0, &[0.0; 5]).unwrap();
        let k4 = k.matmul(&k).matmul(&k).matmul(&k);
        let direct = k4.mul_vec(&mu0[4]);
        for (a, b) in mu.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(
            evolve_moments(&chain, &k, 1.0, &mu0[..3], &[0.0; 5]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn regular_tree_variance_ratio() {
        // For a b-ary tree with sign weights:
        //   sigma^2 / (half gap)^2 = E_t + (E_t - E_{t-1}) / delta^2
        // and with eigenvector weights (sigma0^2 = c^2 max|w_i - w_j|^2):
        //   (1/R^2) (E_t + 4 (E_t - E_{t-1}) / delta^2)
        let (b, t, theta, delta) = (3usize, 5usize, 0.7f64, 0.4f64);
        let kern = kernel2(theta);
        let mut tree = LocalTree::regular(b, t);
        tree.set_priors(vec![Some(0); tree.n()]).unwrap();
        let f = min_energy_flow(&tree, theta.powi(-2)).unwrap();
        let e_t = regular_tree_energy(b, theta * theta, Depth::Finite(t)).unwrap();
        let e_prev = regular_tree_energy(b, theta * theta, Depth::Finite(t - 1)).unwrap();
        for (weights, factor) in [(LabelWeights::Sign, 1.0), (LabelWeights::Eigenvector, 4.0)] {
            let mut st = init_messages(
                &tree,
                &kern,
                noisy(delta),
                &f,
                weights,
                PartialTreatment::NoisyBoundary,
            )
            .unwrap();
            st.propagate_to_root();
            let (_, mu, s2) = st.unscaled_root();
            let half = (mu[0] - mu[1]).abs() / 2.0;
            let expected = e_t + factor * (e_t - e_prev) / (delta * delta);
            assert!(
                (s2 / (half * half) - expected).abs() < 1e-9 * expected,
                "{weights:?}"
            );
        }
    }

    #[test]
    fn state_matches_unscaled_evolution() {
        let m = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let kern = BroadcastKernel::from_mean_matrix(&m).unwrap();
        for seed in 0..20 {
            let mut t = sample_gw_tree(&m, RootLabel::Fixed(0), 4, seed).unwrap();
            if t.boundary().is_empty() {
                continue;
            }
            t.reveal(noisy(0.3), 2, seed).unwrap();
            let f = min_energy_flow(&t, kern.theta.powi(-2)).unwrap();
            let mut st = init_messages(
                &t,
                &kern,
                noisy(0.3),
                &f,
                LabelWeights::Sign,
                PartialTreatment::NoisyBoundary,
            )
            .unwrap();
            let scale = st.log_scale().exp();
            let mu0: Vec<Vec<f64>> = (0..t.n())
                .map(|v| st.mu(v).iter().map(|x| x * scale).collect())
                .collect();
            let s0: Vec<f64> = (0..t.n()).map(|v| st.sigma2(v) * scale * scale).collect();
            let (mu, s2) = evolve_moments(&t, &kern.kernel, kern.theta, &mu0, &s0).unwrap();
            st.propagate_to_root();
            let (_, mu_st, s2_st) = st.unscaled_root();
            for (a, b) in mu.iter().zip(&mu_st) {
                assert!((a - b).abs() < 1e-9 * a.abs().max(1e-12));
            }
            assert!((s2 - s2_st).abs() < 1e-9 * s2);
            assert!(st.closed_form_error().unwrap() < 1e-10);
        }
    }

    #[test]
    fn regular_tree_is_weighted_majority() {
        let kern = kernel2(0.6);
        let mut rng = rng::stream(5, &[]);
        for seed in 0..200u64 {
            let base = LocalTree::regular(3, 3);
            let mut t = broadcast_labels(&base, &kern.kernel, (seed % 2) as usize, seed);
            t.reveal(noisy(0.3), 2, seed).unwrap();
            let votes: i64 = t
                .boundary()
                .iter()
                .map(|&u| if t.prior(u) == Some(0) { 1 } else { -1 })
                .sum();
            let mut opts = WmpOptions::with_depth(3);
            opts.flow = if rng.random::<bool>() {
                FlowWeighting::MinEnergy
            } else {
                FlowWeighting::Uniform
            };
            let out = classify_tree(&mut t, &kern, noisy(0.3), &opts).unwrap();
            // 27 leaves: never a tied vote
            assert_eq!(out.label, if votes > 0 { 0 } else { 1 });
        }
    }

    #[test]
    fn symmetric_midpoint_agrees_with_sign() {
        let kern = kernel2(0.5);
        let m = Matrix::from_rows(&[vec![1.5, 1.0], vec![1.0, 1.5]]).unwrap();
        let mut disagreements = 0;
        for seed in 0..10_000u64 {
            let mut t = sample_gw_tree(&m, RootLabel::Stationary, 3, seed).unwrap();
            t.reveal(noisy(0.2), 2, seed ^ 0xabc).unwrap();
            let out = classify_tree(&mut t, &kern, noisy(0.2), &WmpOptions::with_depth(3)).unwrap();
            disagreements += out.sign_disagrees as usize;
        }
        assert_eq!(disagreements, 0);
    }

    #[test]
    fn sign_and_eigenvector_paths_agree_for_two_communities() {
        let kern = kernel2(0.55);
        let m = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        for seed in 0..1000u64 {
            let mut t = sample_gw_tree(&m, RootLabel::Stationary, 3, seed).unwrap();
            t.reveal(noisy(0.25), 2, seed + 7).unwrap();
            let mut a = WmpOptions::with_depth(3);
            a.weights = LabelWeights::Sign;
            let mut b = a.clone();
            b.weights = LabelWeights::Eigenvector;
            let la = classify_tree(&mut t, &kern, noisy(0.25), &a).unwrap();
            let lb = classify_tree(&mut t, &kern, noisy(0.25), &b).unwrap();
            assert_eq!(la.label, lb.label, "seed {seed}");
        }
    }

    #[test]
    fn scale_invariance_on_random_trees() {
        let kern = kernel2(0.6);
        let m = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        for seed in 0..300u64 {
            let mut t = sample_gw_tree(&m, RootLabel::Stationary, 4, seed).unwrap();
            if t.boundary().is_empty() {
                continue;
            }
            t.reveal(noisy(0.3), 2, seed).unwrap();
            let f = min_energy_flow(&t, kern.theta.powi(-2)).unwrap();
            let mut a = init_messages(
                &t,
                &kern,
                noisy(0.3),
                &f,
                LabelWeights::Sign,
                PartialTreatment::NoisyBoundary,
            )
            .unwrap();
            let mut b = a.clone();
            b.scale(1e3);
            a.propagate_to_root();
            b.propagate_to_root();
            assert_eq!(classify_root(&a).label, classify_root(&b).label);
        }
    }

    #[test]
    fn all_revealed_treatment_uses_cutset() {
        let kern = kernel2(0.6);
        // root -> 1 (revealed, label 1) -> 3 ; root -> 2 -> 4 (revealed, label 1)
        let mut t =
            LocalTree::from_parents(&[None, Some(0), Some(0), Some(1), Some(2)], None).unwrap();
        t.set_priors(vec![None, Some(1), None, Some(0), Some(1)])
            .unwrap();
        let mut opts = WmpOptions::with_depth(2);
        opts.partial = PartialTreatment::AllRevealed;
        let out = classify_tree(&mut t, &kern, SideInfoMode::Partial(0.3), &opts).unwrap();
        assert_eq!(t.boundary(), &[1, 4]);
        assert_eq!(out.label, 1);
        assert!(!out.closed_form_violation);
    }

    #[test]
    fn edgeless_graph_is_uninformed() {
        let g = Graph::from_edges(6, [])
            .with_truth(vec![0, 0, 0, 1, 1, 1], 2)
            .unwrap();
        let side = crate::sbm::make_side_info(g.truth().unwrap(), noisy(0.5), 2, 1).unwrap();
        let kern = kernel2(0.5);
        let mut opts = WmpOptions::with_depth(2);
        let res = wmp_classify_graph(&g, &side, &kern, &opts).unwrap();
        assert!(res.uninformed.iter().all(|&u| u));
        // falls back to own prior
        for v in 0..6 {
            assert_eq!(Some(res.labels[v]), side.prior[v]);
        }
        opts.uninformed_as_error = true;
        let res = wmp_classify_graph(&g, &side, &kern, &opts).unwrap();
        assert_eq!(res.stats.unwrap().overall, 1.0);
    }

    #[test]
    fn sparse_sbm_beats_chance() {
        let params = SbmParams::vanilla(4000, 10.0, 2.0).unwrap();
        let g = crate::sbm::sample_graph(&params, 3);
        let kern = build_kernel(&params).unwrap();
        let side = crate::sbm::make_side_info(g.truth().unwrap(), noisy(0.3), 2, 4).unwrap();
        let res = wmp_classify_graph(&g, &side, &kern, &WmpOptions::with_depth(3)).unwrap();
        let err = res.stats.unwrap().overall;
        // own noisy prior alone errs with probability 0.35
        assert!(err < 0.3, "error {err}");
        assert_eq!(res.closed_form_violations, 0);
    }
}

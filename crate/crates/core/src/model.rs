//! Model parameters and the spectral quantities derived from them.
//!
//! For community sizes `N` and connection probabilities `Q`:
//!
//! * mean matrix `M = Q diag(N)`: expected number of type-`j` neighbours of a
//!   type-`i` node,
//! * broadcast kernel `K = diag(QN)^-1 Q diag(N)`: label distribution of a
//!   neighbour given the node's label,
//! * `theta`: the eigenvalue of `K` with second-largest modulus (signed),
//! * `lambda`: the Perron root of `M`,
//! * `snr = lambda * theta^2`, the Kesten-Stigum ratio.
//!
//! Labels are 0-based throughout the crate.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

/// Tolerance for deciding that `K` is symmetric.
pub const SYMMETRY_TOL: f64 = 1e-9;
/// Two coordinates of `w` closer than this belong to the same equivalence set.
pub const EQUIV_TOL: f64 = 1e-8;
/// Default rotation cap for the dense eigen-solver.
pub const EIGEN_MAX_ITER: usize = 100_000;

/// Parameter bundle `(n, k, N, Q)` of the general stochastic block model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmParams {
    n: usize,
    sizes: Vec<usize>,
    probs: Matrix,
}

impl SbmParams {
    pub fn new(sizes: Vec<usize>, probs: Vec<Vec<f64>>) -> Result<Self> {
        let probs = Matrix::from_rows(&probs)?;
        Self::from_matrix(sizes, probs)
    }

    pub fn from_matrix(sizes: Vec<usize>, probs: Matrix) -> Result<Self> {
        let k = sizes.len();
        if k == 0 {
            return Err(Error::InvalidParams("k must be at least 1".into()));
        }
        if probs.dim() != k {
            return Err(Error::InvalidParams(format!(
                "Q is {0}x{0} but N has {k} entries",
                probs.dim()
            )));
        }
        if let Some(i) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidParams(format!("community {i} is empty")));
        }
        for i in 0..k {
            for j in 0..k {
                let q = probs[(i, j)];
                if !(0.0..=1.0).contains(&q) {
                    return Err(Error::InvalidParams(format!(
                        "Q[{i}][{j}] = {q} is not a probability"
                    )));
                }
                if q != probs[(j, i)] {
                    return Err(Error::InvalidParams(format!(
                        "Q is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let n = sizes.iter().sum();
        Ok(Self { n, sizes, probs })
    }

    /// Vanilla two-community model with `p = a/n`, `q = b/n`.
    pub fn vanilla(n: usize, a: f64, b: f64) -> Result<Self> {
        if n < 2 || n % 2 != 0 {
            return Err(Error::InvalidParams(
                "vanilla SBM needs an even n >= 2".into(),
            ));
        }
        let nf = n as f64;
        Self::new(
            vec![n / 2, n / 2],
            vec![vec![a / nf, b / nf], vec![b / nf, a / nf]],
        )
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn probs(&self) -> &Matrix {
        &self.probs
    }

    /// Ground-truth label of node `v` under block-fill assignment.
    pub fn block_of(&self, v: usize) -> usize {
        let mut end = 0;
        for (i, &s) in self.sizes.iter().enumerate() {
            end += s;
            if v < end {
                return i;
            }
        }
        panic!("node {v} out of range for n = {}", self.n);
    }

    /// Simultaneously permutes community order: new community `i` is old `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let k = self.k();
        let sizes = perm.iter().map(|&p| self.sizes[p]).collect();
        let mut q = Matrix::zeros(k);
        for i in 0..k {
            for j in 0..k {
                q[(i, j)] = self.probs[(perm[i], perm[j])];
            }
        }
        Self::from_matrix(sizes, q)
    }
}

/// How the side information was generated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "delta", rename_all = "lowercase")]
pub enum SideInfoMode {
    /// Every node carries a label that is correct with probability
    /// `delta + (1 - delta)/k`; wrong labels are uniform over the rest.
    Noisy(f64),
    /// Each node's true label is revealed independently with probability `delta`.
    Partial(f64),
}

impl SideInfoMode {
    pub fn noisy(delta: f64) -> Result<Self> {
        check_delta(delta)?;
        Ok(Self::Noisy(delta))
    }

    pub fn partial(delta: f64) -> Result<Self> {
        check_delta(delta)?;
        Ok(Self::Partial(delta))
    }

    pub fn delta(&self) -> f64 {
        match *self {
            Self::Noisy(d) | Self::Partial(d) => d,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_delta(self.delta())
    }

    /// Probability that an observed label equals the truth.
    pub fn agreement(&self, k: usize) -> f64 {
        let d = self.delta();
        d + (1.0 - d) / k as f64
    }

    /// Draws one observation of a node whose true label is `truth`.
    pub fn observe<R: Rng + ?Sized>(&self, truth: usize, k: usize, rng: &mut R) -> Option<usize> {
        match *self {
            Self::Noisy(_) => {
                if k < 2 || rng.random::<f64>() < self.agreement(k) {
                    Some(truth)
                } else {
                    let wrong = rng.random_range(0..k - 1);
                    Some(if wrong >= truth { wrong + 1 } else { wrong })
                }
            }
            Self::Partial(d) => (rng.random::<f64>() < d).then_some(truth),
        }
    }

    /// Likelihood of observing `obs` given true label `truth`.
    pub fn likelihood(&self, obs: Option<usize>, truth: usize, k: usize) -> f64 {
        let d = self.delta();
        match (*self, obs) {
            (Self::Noisy(_), None) => 1.0,
            (Self::Noisy(_), Some(o)) => {
                if o == truth {
                    self.agreement(k)
                } else {
                    (1.0 - d) / k as f64
                }
            }
            (Self::Partial(_), None) => 1.0 - d,
            (Self::Partial(_), Some(o)) => {
                if o == truth {
                    d
                } else {
                    0.0
                }
            }
        }
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidDelta(delta))
    }
}

/// Quantities derived from `(N, Q)` (or directly from a mean matrix).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BroadcastKernel {
    pub kernel: Matrix,
    pub mean: Matrix,
    pub theta: f64,
    pub lambda: f64,
    pub snr: f64,
    /// Second right eigenvector of `K`, present only when `K` is symmetric.
    pub w: Option<Vec<f64>>,
    /// Partition of the labels by equal coordinates of `w`.
    pub equiv_sets: Option<Vec<Vec<usize>>>,
    /// Stationary distribution of `K`.
    pub stationary: Vec<f64>,
    /// Relative community sizes, used for tie-breaking toward larger communities.
    pub community_weights: Vec<f64>,
    /// Set when `K` was not symmetric and `w` could not be formed.
    pub asymmetric: bool,
}

impl BroadcastKernel {
    pub fn k(&self) -> usize {
        self.kernel.dim()
    }

    /// Labels ordered by decreasing community weight, ties by index.
    pub fn tie_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.k()).collect();
        order.sort_by(|&a, &b| {
            self.community_weights[b]
                .total_cmp(&self.community_weights[a])
                .then(a.cmp(&b))
        });
        order
    }

    /// Equivalence sets, falling back to singletons when `w` is absent.
    pub fn equiv_sets_or_singletons(&self) -> Vec<Vec<usize>> {
        self.equiv_sets
            .clone()
            .unwrap_or_else(|| (0..self.k()).map(|i| vec![i]).collect())
    }

    /// Builds the kernel of a multi-type Galton-Watson process from its mean
    /// matrix alone. `K = diag(M 1)^-1 M`.
    pub fn from_mean_matrix(mean: &Matrix) -> Result<Self> {
        let k = mean.dim();
        let degrees = mean.row_sums();
        if let Some(i) = degrees.iter().position(|&d| d <= 0.0) {
            return Err(Error::ZeroDegreeCommunity(i));
        }
        if (0..k).any(|i| (0..k).any(|j| mean[(i, j)] < 0.0)) {
            return Err(Error::InvalidParams(
                "mean matrix has a negative entry".into(),
            ));
        }
        let kernel = kernel_from_mean(mean, &degrees)?;
        let stationary = linalg::stationary_distribution(&kernel, 1e-15, EIGEN_MAX_ITER)?;
        // Under detailed balance M = Q diag(N) with N proportional to pi / d.
        let weights: Vec<f64> = stationary
            .iter()
            .zip(&degrees)
            .map(|(p, d)| p / d)
            .collect();
        let total: f64 = weights.iter().sum();
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let reversible = (0..k).all(|i| {
            (0..k).all(|j| {
                let lhs = stationary[i] * kernel[(i, j)];
                let rhs = stationary[j] * kernel[(j, i)];
                (lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()).max(1e-300)
            })
        });
        if reversible {
            finish_reversible(mean.clone(), kernel, stationary, weights)
        } else {
            finish_nonreversible(mean.clone(), kernel, stationary, weights)
        }
    }
}

fn kernel_from_mean(mean: &Matrix, degrees: &[f64]) -> Result<Matrix> {
    let k = mean.dim();
    let mut kernel = Matrix::zeros(k);
    for i in 0..k {
        for j in 0..k {
            kernel[(i, j)] = mean[(i, j)] / degrees[i];
        }
    }
    for (row, sum) in kernel.row_sums().into_iter().enumerate() {
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::NonStochastic { row, sum });
        }
    }
    Ok(kernel)
}

/// Derives `K`, `M`, `theta`, `lambda`, `snr` and (for symmetric `K`) the
/// second eigenvector from the model parameters.
pub fn build_kernel(params: &SbmParams) -> Result<BroadcastKernel> {
    let k = params.k();
    let q = params.probs();
    let sizes: Vec<f64> = params.sizes().iter().map(|&s| s as f64).collect();
    let mut mean = Matrix::zeros(k);
    for i in 0..k {
        for j in 0..k {
            mean[(i, j)] = q[(i, j)] * sizes[j];
        }
    }
    let degrees = mean.row_sums();
    if let Some(i) = degrees.iter().position(|&d| d <= 0.0) {
        return Err(Error::ZeroDegreeCommunity(i));
    }
    let kernel = kernel_from_mean(&mean, &degrees)?;
    let stationary: Vec<f64> = {
        let raw: Vec<f64> = sizes.iter().zip(&degrees).map(|(s, d)| s * d).collect();
        let total: f64 = raw.iter().sum();
        raw.iter().map(|x| x / total).collect()
    };
    let n = params.n() as f64;
    let weights = sizes.iter().map(|s| s / n).collect();
    finish_reversible(mean, kernel, stationary, weights)
}

/// Reversible chain: `K` is similar to the symmetric matrix
/// `S = Pi^{1/2} K Pi^{-1/2}` and `M` to `N^{1/2} Q N^{1/2}`, so both spectra
/// come from the Jacobi solver.
fn finish_reversible(
    mean: Matrix,
    kernel: Matrix,
    stationary: Vec<f64>,
    weights: Vec<f64>,
) -> Result<BroadcastKernel> {
    let k = kernel.dim();
    let mut sym = Matrix::zeros(k);
    for i in 0..k {
        for j in 0..k {
            sym[(i, j)] = kernel[(i, j)] * (stationary[i] / stationary[j]).sqrt();
        }
    }
    for i in 0..k {
        for j in (i + 1)..k {
            let avg = 0.5 * (sym[(i, j)] + sym[(j, i)]);
            sym[(i, j)] = avg;
            sym[(j, i)] = avg;
        }
    }
    let eig = linalg::symmetric_eigen(&sym, EIGEN_MAX_ITER)?;
    let theta = second_eigenvalue(&eig.values);

    let mut msym = Matrix::zeros(k);
    for i in 0..k {
        for j in 0..k {
            msym[(i, j)] = mean[(i, j)] * (weights[i] / weights[j]).sqrt();
        }
    }
    for i in 0..k {
        for j in (i + 1)..k {
            let avg = 0.5 * (msym[(i, j)] + msym[(j, i)]);
            msym[(i, j)] = avg;
            msym[(j, i)] = avg;
        }
    }
    let lambda = linalg::symmetric_eigen(&msym, EIGEN_MAX_ITER)?.values[0];
    assemble(mean, kernel, theta, lambda, stationary, weights)
}

/// Non-reversible chains only arise from hand-written mean matrices. Two
/// states are always reversible, so this handles `k = 3` through the
/// characteristic polynomial and refuses larger `k`.
fn finish_nonreversible(
    mean: Matrix,
    kernel: Matrix,
    stationary: Vec<f64>,
    weights: Vec<f64>,
) -> Result<BroadcastKernel> {
    let k = kernel.dim();
    if k != 3 {
        return Err(Error::NonReversibleKernel(k));
    }
    // Eigenvalues other than 1 solve x^2 - (tr K - 1) x + det K = 0.
    let tr = kernel[(0, 0)] + kernel[(1, 1)] + kernel[(2, 2)];
    let det = det3(&kernel);
    let b = tr - 1.0;
    let disc = b * b - 4.0 * det;
    if disc < -1e-14 {
        return Err(Error::ComplexSpectrum);
    }
    let root = disc.max(0.0).sqrt();
    let theta = second_eigenvalue(&[1.0, 0.5 * (b + root), 0.5 * (b - root)]);
    let lambda = linalg::perron_root(&mean, 1e-14, EIGEN_MAX_ITER)?;
    assemble(mean, kernel, theta, lambda, stationary, weights)
}

fn det3(m: &Matrix) -> f64 {
    m[(0, 0)] * (m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)])
        - m[(0, 1)] * (m[(1, 0)] * m[(2, 2)] - m[(1, 2)] * m[(2, 0)])
        + m[(0, 2)] * (m[(1, 0)] * m[(2, 1)] - m[(1, 1)] * m[(2, 0)])
}

/// Drops the Perron eigenvalue (the largest) and returns the remaining one
/// of largest modulus, preferring the positive one on a modulus tie.
fn second_eigenvalue(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted
        .iter()
        .skip(1)
        .copied()
        .fold(None::<f64>, |best, x| match best {
            None => Some(x),
            Some(b) if x.abs() > b.abs() + 1e-15 => Some(x),
            Some(b) if (x.abs() - b.abs()).abs() <= 1e-15 && x > b => Some(x),
            keep => keep,
        })
        .unwrap_or(0.0)
}

fn assemble(
    mean: Matrix,
    kernel: Matrix,
    theta: f64,
    lambda: f64,
    stationary: Vec<f64>,
    weights: Vec<f64>,
) -> Result<BroadcastKernel> {
    let snr = lambda * theta * theta;
    let symmetric = kernel.asymmetry() <= SYMMETRY_TOL;
    let (w, equiv_sets) = if symmetric && kernel.dim() >= 2 {
        let (w, sets) = second_eigvec(&kernel)?;
        (Some(w), Some(sets))
    } else {
        if !symmetric {
            log::warn!("kernel is not symmetric; eigenvector weighting unavailable");
        }
        (None, None)
    };
    Ok(BroadcastKernel {
        kernel,
        mean,
        theta,
        lambda,
        snr,
        w,
        equiv_sets,
        stationary,
        community_weights: weights,
        asymmetric: !symmetric,
    })
}

/// Both conventions for the two-community `theta-bar`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaBar {
    /// The displayed closed form with its 1/4 prefactor.
    pub quarter: f64,
    /// Half the same sum; equals the second eigenvalue of `K`.
    pub half: f64,
}

pub fn theta_bar_closed_form_k2(params: &SbmParams) -> Result<ThetaBar> {
    if params.k() != 2 {
        return Err(Error::WrongK(params.k()));
    }
    let q = params.probs();
    let n1 = params.sizes()[0] as f64;
    let n2 = params.sizes()[1] as f64;
    let d1 = n1 * q[(0, 0)] + n2 * q[(0, 1)];
    let d2 = n1 * q[(1, 0)] + n2 * q[(1, 1)];
    if d1 <= 0.0 {
        return Err(Error::ZeroDegreeCommunity(0));
    }
    if d2 <= 0.0 {
        return Err(Error::ZeroDegreeCommunity(1));
    }
    let sum = (n1 * q[(0, 0)] - n2 * q[(0, 1)]) / d1 + (n2 * q[(1, 1)] - n1 * q[(1, 0)]) / d2;
    Ok(ThetaBar {
        quarter: 0.25 * sum,
        half: 0.5 * sum,
    })
}

/// Second right eigenvector `w` of a symmetric stochastic `K`, normalized to
/// unit length and orthogonal to the all-ones vector, together with the
/// partition of labels into sets of equal `w` coordinates.
///
/// The sign is fixed so the first coordinate that is not ~0 is positive.
/// Coordinates within one equivalence set are snapped to their common mean.
pub fn second_eigvec(kernel: &Matrix) -> Result<(Vec<f64>, Vec<Vec<usize>>)> {
    let k = kernel.dim();
    let asym = kernel.asymmetry();
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(asym));
    }
    for (row, sum) in kernel.row_sums().into_iter().enumerate() {
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::NonStochastic { row, sum });
        }
    }
    if k < 2 {
        return Err(Error::InvalidParams(
            "second eigenvector needs k >= 2".into(),
        ));
    }
    let eig = linalg::symmetric_eigen(kernel, EIGEN_MAX_ITER)?;
    let theta = second_eigenvalue(&eig.values);
    let idx = (1..k)
        .min_by(|&a, &b| {
            (eig.values[a] - theta)
                .abs()
                .total_cmp(&(eig.values[b] - theta).abs())
        })
        .expect("k >= 2");
    let mut w = eig.vectors[idx].clone();
    let mean = w.iter().sum::<f64>() / k as f64;
    w.iter_mut().for_each(|x| *x -= mean);
    let norm = linalg::norm2(&w);
    if norm < 1e-6 {
        return Err(Error::NoConvergence {
            what: "second eigenvector (degenerate)",
            iterations: EIGEN_MAX_ITER,
        });
    }
    w.iter_mut().for_each(|x| *x /= norm);
    if let Some(first) = w.iter().find(|x| x.abs() > EQUIV_TOL) {
        if *first < 0.0 {
            w.iter_mut().for_each(|x| *x = -*x);
        }
    }
    let sets = equal_coordinate_sets(&w, EQUIV_TOL);
    for set in &sets {
        let avg = set.iter().map(|&i| w[i]).sum::<f64>() / set.len() as f64;
        for &i in set {
            w[i] = avg;
        }
    }
    let norm = linalg::norm2(&w);
    w.iter_mut().for_each(|x| *x /= norm);

    let kw = kernel.mul_vec(&w);
    let resid = kw
        .iter()
        .zip(&w)
        .map(|(a, b)| (a - theta * b).abs())
        .fold(0.0, f64::max);
    if resid > 1e-8 {
        return Err(Error::NoConvergence {
            what: "second eigenvector residual",
            iterations: EIGEN_MAX_ITER,
        });
    }
    Ok((w, sets))
}

/// Groups indices whose values are chained within `tol` of each other.
/// Sets are ordered by their smallest member.
pub fn equal_coordinate_sets(w: &[f64], tol: f64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&a, &b| w[a].total_cmp(&w[b]));
    let mut sets: Vec<Vec<usize>> = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if pos > 0 && (w[i] - w[order[pos - 1]]).abs() <= tol {
            sets.last_mut().expect("nonempty").push(i);
        } else {
            sets.push(vec![i]);
        }
    }
    for set in &mut sets {
        set.sort_unstable();
    }
    sets.sort_by_key(|s| s[0]);
    sets
}

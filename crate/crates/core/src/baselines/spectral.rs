use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm2};
use crate::rng;
use crate::sbm::{Graph, SideInfo};

const TOL: f64 = 1e-8;
const MAX_ITERS: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectralVariant {
    /// Leading eigenvector of `A - (d/n) 1 1^T`, `d` the average degree.
    #[default]
    CenteredAdjacency,
    /// Second eigenvector of `D^-1/2 A D^-1/2`.
    NormalizedAdjacency,
}

/// Two-community partition from the unrevealed subgraph. Each side of the
/// sign split of the eigenvector takes the label that agrees best with the
/// revealed neighbors of its nodes; revealed nodes keep their labels.
pub fn spectral_partition(
    graph: &Graph,
    side: &SideInfo,
    variant: SpectralVariant,
) -> Result<Vec<usize>> {
    let k = graph.k().max(2);
    if k != 2 {
        return Err(Error::WrongK(k));
    }
    let hidden: Vec<usize> = (0..graph.n()).filter(|&v| !side.is_revealed(v)).collect();
    let mut labels: Vec<usize> = side.prior.iter().map(|p| p.unwrap_or(0)).collect();
    if hidden.is_empty() {
        return Ok(labels);
    }
    let sub = graph.induced(&hidden);
    let x = match variant {
        SpectralVariant::CenteredAdjacency => centered_leading(&sub, side.seed)?,
        SpectralVariant::NormalizedAdjacency => normalized_second(&sub, side.seed)?,
    };
    // votes[s][l]: revealed neighbors with label l of nodes on side s
    let mut votes = [[0usize; 2]; 2];
    let mut sizes = [0usize; 2];
    let side_of: Vec<usize> = x.iter().map(|&xi| usize::from(xi < 0.0)).collect();
    for (i, &v) in hidden.iter().enumerate() {
        sizes[side_of[i]] += 1;
        for &u in graph.neighbors(v) {
            if let Some(l) = side.prior[u] {
                votes[side_of[i]][l] += 1;
            }
        }
    }
    let straight = votes[0][0] + votes[1][1];
    let crossed = votes[0][1] + votes[1][0];
    let flip = if straight != crossed {
        crossed > straight
    } else {
        // no signal from neighbors: the larger side takes the more common revealed label
        let revealed = side.prior.iter().flatten().fold([0usize; 2], |mut c, &l| {
            c[l] += 1;
            c
        });
        let common = usize::from(revealed[1] > revealed[0]);
        let big = usize::from(sizes[1] > sizes[0]);
        big != common
    };
    for (i, &v) in hidden.iter().enumerate() {
        labels[v] = side_of[i] ^ usize::from(flip);
    }
    Ok(labels)
}

fn start_vector(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, &[0x5bec]);
    let mut x: Vec<f64> = (0..n).map(|_| r.random::<f64>() - 0.5).collect();
    let s = norm2(&x);
    x.iter_mut().for_each(|v| *v /= s);
    x
}

/// Power iteration on `op` (assumed positive semidefinite) keeping `x`
/// orthogonal to every vector in `deflate` (orthonormal).
fn power_iterate(
    n: usize,
    seed: u64,
    deflate: &[Vec<f64>],
    mut op: impl FnMut(&[f64], &mut [f64]),
) -> Result<Vec<f64>> {
    let project = |x: &mut [f64]| {
        for d in deflate {
            let c = dot(x, d);
            x.iter_mut().zip(d).for_each(|(a, b)| *a -= c * b);
        }
    };
    let mut x = start_vector(n, seed);
    project(&mut x);
    let mut y = vec![0.0; n];
    for _ in 0..MAX_ITERS {
        op(&x, &mut y);
        project(&mut y);
        let s = norm2(&y);
        if s == 0.0 {
            return Ok(x);
        }
        y.iter_mut().for_each(|v| *v /= s);
        let diff = x
            .iter()
            .zip(&y)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        std::mem::swap(&mut x, &mut y);
        if diff < TOL {
            return Ok(x);
        }
    }
    Err(Error::NoConvergence {
        what: "spectral power iteration",
        iterations: MAX_ITERS,
    })
}

fn centered_leading(g: &Graph, seed: u64) -> Result<Vec<f64>> {
    let n = g.n();
    let avg = 2.0 * g.num_edges() as f64 / n as f64;
    let max_deg = (0..n).map(|v| g.degree(v)).max().unwrap_or(0) as f64;
    // spectrum of the centered matrix lies in [-(max_deg + avg), max_deg]
    let shift = max_deg + avg;
    power_iterate(n, seed, &[], |x, y| {
        let mean_term = avg / n as f64 * x.iter().sum::<f64>();
        for v in 0..n {
            let ax: f64 = g.neighbors(v).iter().map(|&u| x[u]).sum();
            y[v] = ax - mean_term + shift * x[v];
        }
    })
}

fn normalized_second(g: &Graph, seed: u64) -> Result<Vec<f64>> {
    let n = g.n();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|v| match g.degree(v) {
            0 => 0.0,
            d => 1.0 / (d as f64).sqrt(),
        })
        .collect();
    let mut top: Vec<f64> = (0..n).map(|v| (g.degree(v) as f64).sqrt()).collect();
    let s = norm2(&top);
    if s > 0.0 {
        top.iter_mut().for_each(|v| *v /= s);
    }
    // spectrum lies in [-1, 1]; shift by 1
    let x = power_iterate(n, seed, &[top], |x, y| {
        for v in 0..n {
            let ax: f64 = g.neighbors(v).iter().map(|&u| inv_sqrt[u] * x[u]).sum();
            y[v] = inv_sqrt[v] * ax + x[v];
        }
    })?;
    Ok(x.iter().zip(&inv_sqrt).map(|(a, b)| a * b).collect())
}

//! Monte Carlo experiment driver and result serialization.

pub mod config;
pub mod oracle;
pub mod results;
pub mod stats;

use std::time::Instant;

use rayon::prelude::*;

pub use config::{
    resolve_dataset, Estimator, ExperimentConfig, Scenario, SideInfoKind, DATA_DIR_ENV,
};
pub use oracle::{run_oracle_checks, OracleReport};
pub use results::{fmt6, median_table, read_results, write_results, MedianRow, ResultRow};
pub use stats::{misclassification_stats, ErrStats, SetError};

use crate::baselines::{bp_classify_root, spectral_partition, SpectralVariant};
use crate::error::{Error, Result};
use crate::model::{build_kernel, BroadcastKernel, SbmParams, SideInfoMode};
use crate::rng::derive_seed;
use crate::sbm::{self, make_side_info, sample_graph, Graph, SideInfo};
use crate::tree::{extract_tree, sample_gw_tree, LocalTree, RootLabel};
use crate::wmp::{classify_tree, wmp_classify_graph, FlowWeighting, WmpOptions};

/// Runs the experiment described by `cfg`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    match cfg.scenario {
        Scenario::GwTree => gw_monte_carlo(cfg),
        Scenario::Sbm => sbm_experiment(cfg),
        Scenario::Polblogs => polblogs_experiment(cfg),
    }
}

fn wmp_options(cfg: &ExperimentConfig, est: Estimator, depth: usize) -> WmpOptions {
    WmpOptions {
        depth,
        flow: match est {
            Estimator::AmpUniformFlow => FlowWeighting::Uniform,
            _ => FlowWeighting::MinEnergy,
        },
        ..cfg.wmp.clone()
    }
}

/// Root prediction and whether any boundary label was used.
pub fn classify_gw_root(
    est: Estimator,
    tree: &LocalTree,
    kernel: &BroadcastKernel,
    mode: SideInfoMode,
    opts: &WmpOptions,
) -> Result<(usize, bool)> {
    match est {
        Estimator::Wmp | Estimator::AmpUniformFlow => {
            let mut t = tree.clone();
            let out = classify_tree(&mut t, kernel, mode, opts)?;
            Ok((out.label, out.informed))
        }
        Estimator::Bp => bp_root(tree, kernel, mode, opts),
        Estimator::Spectral => Err(Error::Config("spectral needs a graph scenario".into())),
    }
}

/// BP with the same information set and fallbacks as `classify_tree`.
fn bp_root(
    tree: &LocalTree,
    kernel: &BroadcastKernel,
    mode: SideInfoMode,
    opts: &WmpOptions,
) -> Result<(usize, bool)> {
    let tie = kernel.tie_order();
    let fallback = tree.prior(0).unwrap_or(tie[0]);
    if matches!(mode, SideInfoMode::Partial(_)) && tree.prior(0).is_some() {
        return Ok((fallback, false));
    }
    let mut t = tree.clone();
    t.set_boundary(opts.boundary_policy(mode));
    if !t.boundary().iter().any(|&u| t.prior(u).is_some()) {
        return Ok((fallback, false));
    }
    let res = bp_classify_root(&t, &kernel.kernel, mode, &kernel.stationary, &tie)?;
    Ok((res.label, true))
}

/// Tree scenario: every trial samples a Galton-Watson tree with a root
/// label from the stationary distribution, observes every node through the
/// side-information channel and classifies the root. Trial `i` at reveal
/// rate index `j` uses seed `derive_seed(seed, [j, i])`, so trees at
/// different depths are prefixes of one another.
pub fn gw_monte_carlo(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let mean = cfg.mean_matrix()?;
    let kernel = BroadcastKernel::from_mean_matrix(&mean)?;
    let k = kernel.k();
    let equiv = kernel.equiv_sets_or_singletons();
    let mut rows = Vec::new();
    for (di, &delta) in cfg.deltas.iter().enumerate() {
        let mode = cfg.side_info.with_delta(delta)?;
        for &depth in &cfg.depths {
            for &est in &cfg.estimators {
                let opts = wmp_options(cfg, est, depth);
                let start = Instant::now();
                let outcomes: Vec<(usize, usize, bool)> = (0..cfg.trials)
                    .into_par_iter()
                    .map(|i| {
                        let s = derive_seed(cfg.seed, &[di as u64, i as u64]);
                        let mut tree = sample_gw_tree(&mean, RootLabel::Stationary, depth, s)?;
                        tree.reveal(mode, k, s)?;
                        let truth = tree.label(0).expect("sampled trees carry labels");
                        let (pred, informed) = classify_gw_root(est, &tree, &kernel, mode, &opts)?;
                        Ok((pred, truth, informed))
                    })
                    .collect::<Result<_>>()?;
                let pred: Vec<usize> = outcomes.iter().map(|o| o.0).collect();
                let truth: Vec<usize> = outcomes.iter().map(|o| o.1).collect();
                let uninformed =
                    outcomes.iter().filter(|o| !o.2).count() as f64 / cfg.trials as f64;
                let stats = misclassification_stats(&pred, &truth, k, &equiv, None)?;
                let (error_rate, worst, std_err, set_errors) = ResultRow::stats_fields(&stats);
                log::info!(
                    "gw_tree {} delta={delta} depth={depth}: error {error_rate:.4}",
                    est.name()
                );
                rows.push(ResultRow {
                    scenario: Scenario::GwTree.name().into(),
                    estimator: est.name().into(),
                    depth,
                    delta,
                    snr: kernel.snr,
                    trials: cfg.trials,
                    seed: cfg.seed,
                    error_rate,
                    worst_class_error: worst,
                    std_err,
                    set_errors,
                    uninformed_rate: uninformed,
                    wall_time_s: start.elapsed().as_secs_f64(),
                });
            }
        }
    }
    Ok(rows)
}

/// Evaluation mask: revealed nodes are skipped when `exclude_revealed`.
fn eval_mask(side: &SideInfo, opts: &WmpOptions) -> Option<Vec<bool>> {
    (opts.exclude_revealed && matches!(side.mode, SideInfoMode::Partial(_))).then(|| {
        (0..side.prior.len())
            .map(|v| !side.is_revealed(v))
            .collect()
    })
}

/// BP at every node on its depth-`opts.depth` neighbourhood.
pub fn bp_classify_graph(
    graph: &Graph,
    side: &SideInfo,
    kernel: &BroadcastKernel,
    opts: &WmpOptions,
) -> Result<(Vec<usize>, Vec<bool>)> {
    let out: Vec<(usize, bool)> = (0..graph.n())
        .into_par_iter()
        .map(|o| {
            let mut tree = extract_tree(graph, o, opts.depth);
            tree.attach_side_info(side);
            bp_root(&tree, kernel, side.mode, opts)
        })
        .collect::<Result<_>>()?;
    Ok(out.into_iter().unzip())
}

struct GraphRun<'a> {
    graph: &'a Graph,
    side: &'a SideInfo,
    kernel: &'a BroadcastKernel,
    scenario: Scenario,
    seed: u64,
}

impl GraphRun<'_> {
    fn row(&self, cfg: &ExperimentConfig, est: Estimator, depth: usize) -> Result<ResultRow> {
        let truth = self.graph.truth().ok_or(Error::NoTruth)?;
        let k = self.kernel.k();
        let opts = wmp_options(cfg, est, depth);
        let start = Instant::now();
        let (pred, uninformed): (Vec<usize>, Vec<bool>) = match est {
            Estimator::Wmp | Estimator::AmpUniformFlow => {
                let res = wmp_classify_graph(self.graph, self.side, self.kernel, &opts)?;
                (res.labels, res.uninformed)
            }
            Estimator::Bp => {
                let (labels, informed) =
                    bp_classify_graph(self.graph, self.side, self.kernel, &opts)?;
                let uninformed = informed
                    .iter()
                    .enumerate()
                    .map(|(v, &i)| !i && !self.side.is_revealed(v))
                    .collect();
                (labels, uninformed)
            }
            Estimator::Spectral => (
                spectral_partition(self.graph, self.side, SpectralVariant::CenteredAdjacency)?,
                vec![false; self.graph.n()],
            ),
        };
        let scored: Vec<usize> = pred
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
        let mask = eval_mask(self.side, &opts);
        let stats = misclassification_stats(
            &scored,
            truth,
            k,
            &self.kernel.equiv_sets_or_singletons(),
            mask.as_deref(),
        )?;
        let (error_rate, worst, std_err, set_errors) = ResultRow::stats_fields(&stats);
        let evaluated_uninformed = (0..truth.len())
            .filter(|&v| mask.as_ref().is_none_or(|m| m[v]) && uninformed[v])
            .count();
        Ok(ResultRow {
            scenario: self.scenario.name().into(),
            estimator: est.name().into(),
            depth,
            delta: self.side.mode.delta(),
            snr: self.kernel.snr,
            trials: 1,
            seed: self.seed,
            error_rate,
            worst_class_error: worst,
            std_err,
            set_errors,
            uninformed_rate: evaluated_uninformed as f64 / stats.evaluated as f64,
            wall_time_s: start.elapsed().as_secs_f64(),
        })
    }
}

/// Runs every estimator at every depth on one graph with one draw of side
/// information. Spectral does not depend on depth and reports depth 0.
fn graph_rows(cfg: &ExperimentConfig, run: &GraphRun) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for &est in &cfg.estimators {
        if est == Estimator::Spectral {
            rows.push(run.row(cfg, est, 0)?);
            continue;
        }
        for &depth in &cfg.depths {
            rows.push(run.row(cfg, est, depth)?);
        }
    }
    for r in &rows {
        log::info!(
            "{} {} delta={} depth={} seed={}: error {:.4}",
            r.scenario,
            r.estimator,
            r.delta,
            r.depth,
            r.seed,
            r.error_rate
        );
    }
    Ok(rows)
}

/// Graph scenario: repetition `i` samples a graph with seed
/// `derive_seed(seed, [i])` and, per reveal rate `j`, side information
/// with seed `derive_seed(seed, [i, j])`.
pub fn sbm_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let params = cfg.sbm_params()?;
    let kernel = build_kernel(&params)?;
    let mut rows = Vec::new();
    for i in 0..cfg.trials {
        let graph = sample_graph(&params, derive_seed(cfg.seed, &[i as u64]));
        rows.extend(reveal_and_run(cfg, &graph, &kernel, Scenario::Sbm, i)?);
    }
    Ok(rows)
}

fn reveal_and_run(
    cfg: &ExperimentConfig,
    graph: &Graph,
    kernel: &BroadcastKernel,
    scenario: Scenario,
    rep: usize,
) -> Result<Vec<ResultRow>> {
    let truth = graph.truth().ok_or(Error::NoTruth)?;
    let mut rows = Vec::new();
    for (j, &delta) in cfg.deltas.iter().enumerate() {
        let mode = cfg.side_info.with_delta(delta)?;
        let seed = derive_seed(cfg.seed, &[rep as u64, j as u64]);
        let side = make_side_info(truth, mode, kernel.k(), seed)?;
        let run = GraphRun {
            graph,
            side: &side,
            kernel,
            scenario,
            seed,
        };
        rows.extend(graph_rows(cfg, &run)?);
    }
    Ok(rows)
}

/// Plug-in SBM for a labeled graph: observed community sizes and edge
/// densities with add-one smoothing, `(e_ij + 1) / (pairs_ij + 2)`.
pub fn plug_in_params(graph: &Graph) -> Result<SbmParams> {
    let truth = graph.truth().ok_or(Error::NoTruth)?;
    let k = graph.k();
    let mut sizes = vec![0usize; k];
    for &t in truth {
        sizes[t] += 1;
    }
    let mut edges = vec![vec![0usize; k]; k];
    for (u, v) in graph.edges() {
        let (a, b) = (truth[u], truth[v]);
        edges[a][b] += 1;
        if a != b {
            edges[b][a] += 1;
        }
    }
    let probs = (0..k)
        .map(|a| {
            (0..k)
                .map(|b| {
                    let pairs = if a == b {
                        sizes[a] * sizes[a].saturating_sub(1) / 2
                    } else {
                        sizes[a] * sizes[b]
                    };
                    (edges[a][b] as f64 + 1.0) / (pairs as f64 + 2.0)
                })
                .collect()
        })
        .collect();
    SbmParams::new(sizes, probs)
}

/// The political-blogs replication on the largest connected component of
/// the dataset, with the plug-in kernel. Repetition `i` redraws the
/// revealed labels.
pub fn polblogs_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let path = resolve_dataset(cfg.dataset.as_deref())?;
    let graph = sbm::restrict_to_largest_component(&sbm::load_gml(&path)?);
    if graph.truth().is_none() {
        return Err(Error::NoTruth);
    }
    log::info!(
        "{}: {} nodes, {} edges in the largest component",
        path.display(),
        graph.n(),
        graph.num_edges()
    );
    let kernel = build_kernel(&plug_in_params(&graph)?)?;
    let mut rows = Vec::new();
    for i in 0..cfg.trials {
        rows.extend(reveal_and_run(cfg, &graph, &kernel, Scenario::Polblogs, i)?);
    }
    Ok(rows)
}

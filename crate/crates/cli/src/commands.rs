use std::collections::HashMap;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};

use wmp_core::harness::{
    self, median_table, plug_in_params, run_oracle_checks, write_results, ExperimentConfig,
    ResultRow, Scenario,
};
use wmp_core::model::theta_bar_closed_form_k2;
use wmp_core::sbm::{attach_labels, load_edge_list, load_gml, write_edge_list, write_labels};
use wmp_core::wmp::{FlowWeighting, PartialTreatment};
use wmp_core::{
    build_kernel, make_side_info, sample_graph, wmp_classify_graph, BoundaryPolicy,
    BroadcastKernel, Error, Graph, Matrix, SbmParams, SideInfo, SideInfoMode, WmpOptions,
};

use crate::{parse, CliError, CliResult};

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Model given as community sizes and an edge-probability matrix.
#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Total number of nodes; must equal the sum of --N when both are given.
    #[arg(long = "n")]
    total: Option<usize>,
    /// Community sizes, comma separated (e.g. 500,500).
    #[arg(long = "N", value_name = "SIZES")]
    sizes: Option<String>,
    /// Edge probabilities, commas between columns, semicolons between rows
    /// (e.g. "8e-3,2e-3;2e-3,8e-3").
    #[arg(long = "Q", value_name = "MATRIX")]
    probs: Option<String>,
}

impl ModelArgs {
    fn given(&self) -> bool {
        self.sizes.is_some() || self.probs.is_some()
    }

    fn params(&self) -> CliResult<SbmParams> {
        let (Some(sizes), Some(probs)) = (&self.sizes, &self.probs) else {
            return Err(usage("the model needs both --N and --Q"));
        };
        let sizes = parse::usize_list(sizes).map_err(usage)?;
        let probs = parse::matrix(probs).map_err(usage)?;
        if let Some(n) = self.total {
            let sum: usize = sizes.iter().sum();
            if n != sum {
                return Err(usage(format!(
                    "--n {n} does not match the sum of --N ({sum})"
                )));
            }
        }
        SbmParams::new(sizes, probs).map_err(|e| usage(e.to_string()))
    }
}

#[derive(Debug, Args)]
pub struct KernelArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Mean offspring matrix instead of --N/--Q (same matrix syntax).
    #[arg(long, value_name = "MATRIX", conflicts_with_all = ["sizes", "probs"])]
    mean: Option<String>,
}

fn fmt_sets(sets: &[Vec<usize>]) -> String {
    sets.iter()
        .map(|s| {
            format!(
                "{{{}}}",
                s.iter()
                    .map(|l| (l + 1).to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            )
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Twelve significant digits, shortest rendering.
fn sig12(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    format!("{x:.11e}")
        .parse::<f64>()
        .expect("formatted float parses")
        .to_string()
}

fn print_kernel(kernel: &BroadcastKernel) {
    print!("K =\n{}", kernel.kernel);
    print!("M =\n{}", kernel.mean);
    println!("theta = {}", sig12(kernel.theta));
    println!("lambda = {}", sig12(kernel.lambda));
    println!("SNR = {}", harness::fmt6(kernel.snr));
    match &kernel.w {
        Some(w) => println!(
            "w = [{}]",
            w.iter().map(|x| sig12(*x)).collect::<Vec<_>>().join(", ")
        ),
        None => println!("w = unavailable (K is not symmetric)"),
    }
    match &kernel.equiv_sets {
        Some(sets) => println!("equiv_sets = {}", fmt_sets(sets)),
        None => println!("equiv_sets = unavailable"),
    }
}

pub fn kernel(args: KernelArgs) -> CliResult {
    if let Some(mean) = &args.mean {
        let rows = parse::matrix(mean).map_err(usage)?;
        let m = Matrix::from_rows(&rows).map_err(|e| usage(e.to_string()))?;
        print_kernel(&BroadcastKernel::from_mean_matrix(&m)?);
        return Ok(());
    }
    let params = args.model.params()?;
    let kernel = build_kernel(&params)?;
    print_kernel(&kernel);
    if params.k() == 2 {
        let tb = theta_bar_closed_form_k2(&params)?;
        println!("theta_bar (1/4 prefactor) = {}", sig12(tb.quarter));
        println!(
            "theta_bar (1/2 prefactor, second eigenvalue of K) = {}",
            sig12(tb.half)
        );
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Edge list output (one `u v` pair per line, 1-based ids).
    #[arg(long, value_name = "PATH")]
    edges_out: PathBuf,
    /// Label CSV output (`node,label`, 1-based labels).
    #[arg(long, value_name = "PATH")]
    labels_out: Option<PathBuf>,
}

pub fn sample_sbm(args: SampleArgs) -> CliResult {
    let params = args.model.params()?;
    let graph = sample_graph(&params, args.seed);
    write_edge_list(&graph, &args.edges_out)?;
    if let Some(path) = &args.labels_out {
        write_labels(
            &graph,
            graph.truth().expect("sampled graphs carry labels"),
            path,
        )?;
    }
    println!(
        "sampled n = {}, edges = {}, average degree = {:.4}",
        graph.n(),
        graph.num_edges(),
        2.0 * graph.num_edges() as f64 / graph.n() as f64
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SideArg {
    Noisy,
    Partial,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FlowArg {
    MinEnergy,
    Uniform,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TreatmentArg {
    NoisyBoundary,
    AllRevealed,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BoundaryArg {
    DeepestLayer,
    AllLeaves,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    /// Graph as an edge list.
    #[arg(
        long,
        value_name = "PATH",
        required_unless_present = "gml",
        conflicts_with = "gml"
    )]
    edges: Option<PathBuf>,
    /// Graph as GML; node `value` fields become ground truth.
    #[arg(long, value_name = "PATH")]
    gml: Option<PathBuf>,
    /// Ground-truth CSV (`node,label`, labels 1..k).
    #[arg(long, value_name = "PATH")]
    labels: Option<PathBuf>,
    /// Prior labels CSV (`node,label`, labels 1..k); nodes absent from the
    /// file carry no prior. Without it, priors are drawn from the truth.
    #[arg(long, value_name = "PATH")]
    priors: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "noisy")]
    side_info: SideArg,
    /// Side-information strength in (0, 1).
    #[arg(long)]
    delta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    model: ModelArgs,
    /// Neighbourhood radius.
    #[arg(long, default_value_t = 4)]
    depth: usize,
    #[arg(long, value_enum, default_value = "min-energy")]
    flow: FlowArg,
    #[arg(long, value_enum, default_value = "noisy-boundary")]
    partial_treatment: TreatmentArg,
    #[arg(long, value_enum, default_value = "deepest-layer")]
    boundary: BoundaryArg,
    /// Do not score revealed nodes (partial side information).
    #[arg(long)]
    exclude_revealed: bool,
    /// Score nodes without usable labels as errors.
    #[arg(long)]
    uninformed_as_error: bool,
    /// Predicted labels CSV output.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

fn read_priors(graph: &Graph, path: &Path, k: usize) -> CliResult<Vec<Option<usize>>> {
    let text = std::fs::read_to_string(path)?;
    let index: HashMap<i64, usize> = graph
        .ids()
        .iter()
        .enumerate()
        .map(|(i, &id)| (id, i))
        .collect();
    let mut prior = vec![None; graph.n()];
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let (Some(node), Some(label)) = (fields.next(), fields.next()) else {
            return Err(usage(format!(
                "{}:{}: expected node,label",
                path.display(),
                lineno + 1
            )));
        };
        let Ok(id) = node.parse::<i64>() else {
            if lineno == 0 {
                continue;
            }
            return Err(usage(format!(
                "{}:{}: bad node id {node:?}",
                path.display(),
                lineno + 1
            )));
        };
        let v = *index
            .get(&id)
            .ok_or_else(|| CliError::Runtime(Error::UnknownNode(node.into())))?;
        let l: usize = label
            .parse()
            .ok()
            .filter(|l| (1..=k).contains(l))
            .ok_or_else(|| {
                usage(format!(
                    "{}:{}: label {label:?} not in 1..{k}",
                    path.display(),
                    lineno + 1
                ))
            })?;
        prior[v] = Some(l - 1);
    }
    Ok(prior)
}

pub fn classify(args: ClassifyArgs) -> CliResult {
    let mut graph = match (&args.edges, &args.gml) {
        (Some(p), _) => load_edge_list(p)?,
        (None, Some(p)) => load_gml(p)?,
        (None, None) => return Err(usage("give --edges or --gml")),
    };
    if let Some(p) = &args.labels {
        graph = attach_labels(graph, p)?;
    }
    let mode = match args.side_info {
        SideArg::Noisy => SideInfoMode::noisy(args.delta),
        SideArg::Partial => SideInfoMode::partial(args.delta),
    }
    .map_err(|e| usage(e.to_string()))?;
    let kernel = if args.model.given() {
        let params = args.model.params()?;
        if params.n() != graph.n() {
            log::info!("model has {} nodes, graph has {}", params.n(), graph.n());
        }
        build_kernel(&params)?
    } else if graph.truth().is_some() {
        log::info!("no --N/--Q given; using the plug-in model from the labels");
        build_kernel(&plug_in_params(&graph)?)?
    } else {
        return Err(usage(
            "without ground truth the model must be given with --N and --Q",
        ));
    };
    let k = kernel.k();
    if graph.truth().is_some() && graph.k() != k {
        return Err(usage(format!(
            "labels have {} communities, the model has {k}",
            graph.k()
        )));
    }
    let side = match (&args.priors, graph.truth()) {
        (Some(p), _) => SideInfo {
            mode,
            prior: read_priors(&graph, p, k)?,
            seed: args.seed,
        },
        (None, Some(truth)) => make_side_info(truth, mode, k, args.seed)?,
        (None, None) => return Err(usage("give --priors, or --labels to draw priors from")),
    };
    let opts = WmpOptions {
        depth: args.depth,
        flow: match args.flow {
            FlowArg::MinEnergy => FlowWeighting::MinEnergy,
            FlowArg::Uniform => FlowWeighting::Uniform,
        },
        partial: match args.partial_treatment {
            TreatmentArg::NoisyBoundary => PartialTreatment::NoisyBoundary,
            TreatmentArg::AllRevealed => PartialTreatment::AllRevealed,
        },
        boundary: match args.boundary {
            BoundaryArg::DeepestLayer => BoundaryPolicy::DeepestLayer,
            BoundaryArg::AllLeaves => BoundaryPolicy::AllLeaves,
        },
        exclude_revealed: args.exclude_revealed,
        uninformed_as_error: args.uninformed_as_error,
        ..WmpOptions::default()
    };
    let res = wmp_classify_graph(&graph, &side, &kernel, &opts)?;
    println!(
        "nodes = {}, edges = {}, prior labels = {}",
        graph.n(),
        graph.num_edges(),
        side.revealed_count()
    );
    println!(
        "theta = {}, SNR = {}",
        sig12(kernel.theta),
        harness::fmt6(kernel.snr)
    );
    println!("uninformed = {}", harness::fmt6(res.uninformed_rate()));
    if let Some(stats) = &res.stats {
        println!(
            "error = {} over {} nodes",
            harness::fmt6(stats.overall),
            stats.evaluated
        );
        println!("worst-class error = {}", harness::fmt6(stats.worst_class));
        for s in &stats.set_errors {
            println!(
                "set error {}|{} = {}",
                fmt_sets(&[s.s.clone()]),
                fmt_sets(&[s.t.clone()]),
                harness::fmt6(s.rate)
            );
        }
    }
    if let Some(path) = &args.out {
        write_labels(&graph, &res.labels, path)?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// TOML experiment config.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Depth grid override, comma separated.
    #[arg(long, value_name = "LIST")]
    depths: Option<String>,
    /// Delta grid override, comma separated.
    #[arg(long, value_name = "LIST")]
    deltas: Option<String>,
    /// CSV output path (overrides the config).
    #[arg(long, value_name = "PATH")]
    output: Option<PathBuf>,
    /// Also write a JSON mirror of the results.
    #[arg(long)]
    json: bool,
}

fn print_header(cfg: &ExperimentConfig) -> CliResult {
    for line in cfg.to_toml_string()?.lines() {
        println!("# {line}");
    }
    Ok(())
}

fn print_rows(rows: &[ResultRow]) {
    println!(
        "{:<18} {:>5} {:>8} {:>10} {:>10} {:>11}",
        "estimator", "depth", "delta", "error", "std_err", "uninformed"
    );
    for r in rows {
        println!(
            "{:<18} {:>5} {:>8} {:>10} {:>10} {:>11}",
            r.estimator,
            r.depth,
            harness::fmt6(r.delta),
            harness::fmt6(r.error_rate),
            harness::fmt6(r.std_err),
            harness::fmt6(r.uninformed_rate)
        );
    }
}

fn apply_overrides(
    cfg: &mut ExperimentConfig,
    trials: Option<usize>,
    seed: Option<u64>,
    depths: Option<&str>,
    deltas: Option<&str>,
    output: Option<PathBuf>,
) -> CliResult {
    if let Some(t) = trials {
        cfg.trials = t;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(d) = depths {
        cfg.depths = parse::usize_list(d).map_err(usage)?;
    }
    if let Some(d) = deltas {
        cfg.deltas = parse::float_list(d).map_err(usage)?;
    }
    if output.is_some() {
        cfg.output = output;
    }
    cfg.validate()?;
    Ok(())
}

fn finish(cfg: &ExperimentConfig, rows: &[ResultRow], json: bool) -> CliResult {
    if let Some(path) = &cfg.output {
        write_results(path, rows, json)?;
        println!("wrote {} rows to {}", rows.len(), path.display());
    }
    Ok(())
}

pub fn gw_sweep(args: SweepArgs) -> CliResult {
    let text = std::fs::read_to_string(&args.config)?;
    let mut cfg: ExperimentConfig = ExperimentConfig::from_toml_str(&text)?;
    apply_overrides(
        &mut cfg,
        args.trials,
        args.seed,
        args.depths.as_deref(),
        args.deltas.as_deref(),
        args.output,
    )?;
    if cfg.scenario == Scenario::Polblogs {
        return Err(usage(
            "use the polblogs subcommand for the polblogs scenario",
        ));
    }
    print_header(&cfg)?;
    let rows = harness::run_experiment(&cfg)?;
    if cfg.scenario == Scenario::GwTree {
        print_rows(&rows);
    } else {
        print_medians(&rows);
    }
    finish(&cfg, &rows, args.json)
}

#[derive(Debug, Args)]
pub struct PolblogsArgs {
    /// Path to polblogs.gml (default: $WMP_DATA_DIR/polblogs.gml).
    #[arg(long, value_name = "PATH")]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Depth grid, comma separated.
    #[arg(long, value_name = "LIST", default_value = "1,2,3,4,5")]
    depths: String,
    /// Reveal-rate grid, comma separated.
    #[arg(long, value_name = "LIST", default_value = "0.1,0.05,0.025")]
    deltas: String,
    #[arg(long, value_name = "PATH")]
    output: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

fn print_medians(rows: &[ResultRow]) {
    println!(
        "{:<18} {:>8} {:>5} {:>5} {:>14} {:>11}",
        "estimator", "delta", "depth", "runs", "median error", "uninformed"
    );
    for m in median_table(rows) {
        println!(
            "{:<18} {:>8} {:>5} {:>5} {:>13.2}% {:>10.2}%",
            m.estimator,
            harness::fmt6(m.delta),
            m.depth,
            m.runs,
            100.0 * m.median_error,
            100.0 * m.median_uninformed
        );
    }
}

pub fn polblogs(args: PolblogsArgs) -> CliResult {
    let mut cfg = ExperimentConfig::polblogs(args.data);
    apply_overrides(
        &mut cfg,
        Some(args.trials),
        Some(args.seed),
        Some(&args.depths),
        Some(&args.deltas),
        args.output,
    )?;
    print_header(&cfg)?;
    let rows = harness::run_experiment(&cfg)?;
    print_medians(&rows);
    finish(&cfg, &rows, args.json)
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// BP-vs-enumeration instances; a fifth as many flow instances.
    #[arg(long, default_value_t = 500)]
    instances: usize,
    /// Random competing flows per flow instance.
    #[arg(long, default_value_t = 1000)]
    perturbations: usize,
}

pub fn oracle_check(args: OracleArgs) -> CliResult {
    let report = run_oracle_checks(args.seed, args.instances, args.perturbations)?;
    if report.passed() {
        println!("all {} checks passed", report.checks);
        Ok(())
    } else {
        for f in &report.failures {
            eprintln!("FAILED {f}");
        }
        Err(CliError::Runtime(Error::InvalidParams(format!(
            "{} of {} checks failed",
            report.failures.len(),
            report.checks
        ))))
    }
}

//! Weighted message passing for community detection on heterogeneous
//! stochastic block models with side information.

pub mod baselines;
pub mod error;
pub mod flow;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod sbm;
pub mod tree;
pub mod wmp;

pub use baselines::{
    bp_classify_root, exact_posterior_oracle, f_update, spectral_partition, SpectralVariant,
};
pub use error::{Error, Result};
pub use flow::{
    effective_resistance, min_energy_flow, regular_tree_energy, uniform_flow, Depth, FlowAssignment,
};
pub use harness::{
    misclassification_stats, run_experiment, write_results, ErrStats, Estimator, ExperimentConfig,
    ResultRow, Scenario,
};
pub use linalg::Matrix;
pub use model::{build_kernel, BroadcastKernel, SbmParams, SideInfoMode};
pub use sbm::{make_side_info, sample_graph, Graph, SideInfo};
pub use tree::{extract_tree, sample_gw_tree, BoundaryPolicy, LocalTree, RootLabel};
pub use wmp::{classify_tree, wmp_classify_graph, ClassificationResult, WmpOptions};

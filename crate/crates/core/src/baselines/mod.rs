//! Reference estimators: exact belief propagation on trees, a brute-force
//! posterior oracle, and a spectral partition for partially labeled graphs.

mod bp;
mod spectral;

pub use bp::{bp_classify_root, exact_posterior_oracle, f_update, BpResult, ORACLE_MAX_NODES};
pub use spectral::{spectral_partition, SpectralVariant};

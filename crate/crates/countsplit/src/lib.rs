//! Count splitting for single-cell count matrices: binomial thinning into
//! independent train/test matrices, log-link GLM inference, latent-variable
//! estimation, the standard differential-expression baselines, and a
//! Monte-Carlo simulation harness.
//!
//! The typical workflow is `count_split` → estimate a latent variable on the
//! train matrix → test each gene on the test matrix; `pipelines::de_count_split`
//! wires those steps together, and `simulation` measures error rates, power,
//! and coverage on synthetic data.

pub mod cli;
pub mod error;
pub mod glm;
pub mod io;
pub mod latent;
pub mod matrix;
pub mod pipelines;
pub mod rng;
pub mod simulation;
pub mod splitting;
pub mod stats;

pub use error::{Error, Result};
pub use glm::{fit_negbin_glm, fit_poisson_glm, target_parameter, wald_ci, wald_test};
pub use glm::{ConfidenceInterval, Family, GlmFit, WaldResult};
pub use io::{load_matrix, save_matrix, MatrixFormat};
pub use latent::{
    abs_correlation, adjusted_rand_index, first_pc, kmeans, permute, LatentEstimate,
};
pub use matrix::{
    estimate_size_factors, log_normalize, CountMatrix, RealMatrix, SizeFactors,
};
pub use pipelines::{
    cluster_mean_test, run_de, ClusterTestVariant, DeReport, Estimator, FitStatus,
    GammaPolicy, GeneResult, Method, MethodConfig,
};
pub use simulation::{
    estimate_overdispersion_profile, generate, run_calibration, run_overdispersion_sweep,
    run_power_coverage, CalibrationReport, CalibrationSummary, LatentKind,
    OverdispersionProfile, PowerCoverageRecord, PowerCoverageSummary, ScenarioConfig,
    SizeFactorModel,
};
pub use splitting::{
    cell_split, count_split, gene_split, mcv_split, CellSplit, GeneSplit, McvConfig,
    SplitPair,
};

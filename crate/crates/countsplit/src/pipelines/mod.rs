//! End-to-end per-gene differential-expression procedures: count splitting,
//! double dipping, cell splitting, gene splitting, jackstraw, a
//! subsample-permutation pseudotime test, and cluster-mean tests.
//!
//! Every procedure is a pure function of (matrix, size-factor policy,
//! config); per-gene fits run in parallel with per-unit derived seeds, so
//! results do not depend on thread count.

mod cluster_means;
mod resampling;

pub use cluster_means::{cluster_mean_test, ClusterTestVariant};
pub use resampling::{jackstraw, pseudotime_de, JackstrawVariant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::{self, Family, GlmFit};
use crate::latent::{self, LatentEstimate};
use crate::matrix::{
    estimate_size_factors, log_normalize, CountMatrix, RealMatrix, SizeFactors,
    DEFAULT_PSEUDOCOUNT,
};
use crate::rng::{self, tag};
use crate::splitting::{self, DEFAULT_EPSILON};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    CountSplit,
    DoubleDip,
    CellSplit,
    GeneSplit,
    JackstrawFull,
    JackstrawEfficient,
    PseudotimeDe,
    ClusterMeanNaive,
    ClusterMeanCountsplit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Pc1Trajectory,
    Kmeans2,
}

/// Where per-cell size factors come from: supplied by the caller, estimated
/// from whichever matrix the latent variable is estimated on, or all ones.
#[derive(Debug, Clone)]
pub enum GammaPolicy {
    Known(SizeFactors),
    Estimate,
    Unit,
}

impl GammaPolicy {
    pub fn label(&self) -> &'static str {
        match self {
            GammaPolicy::Known(_) => "known",
            GammaPolicy::Estimate => "estimated",
            GammaPolicy::Unit => "unit",
        }
    }
}

/// Method selector plus tuning parameters. Optional fields fall back to
/// per-method defaults (ε = 0.5; subsample fraction 0.5 for cell splitting
/// and 0.8 for the pseudotime test; 100 resamples; s = 10).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodConfig {
    pub method: Method,
    #[serde(default = "MethodConfig::default_estimator")]
    pub estimator: Estimator,
    #[serde(default = "MethodConfig::default_family")]
    pub family: Family,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub fraction: Option<f64>,
    #[serde(default, alias = "B")]
    pub resamples: Option<usize>,
    #[serde(default)]
    pub s: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Report resampling p-values as (1 + hits)/(B + 1) instead of the plain
    /// fraction hits/B.
    #[serde(default)]
    pub add_one_correction: bool,
}

impl MethodConfig {
    fn default_estimator() -> Estimator {
        Estimator::Pc1Trajectory
    }

    fn default_family() -> Family {
        Family::Poisson
    }

    pub fn new(method: Method) -> Self {
        MethodConfig {
            method,
            estimator: Self::default_estimator(),
            family: Self::default_family(),
            epsilon: None,
            fraction: None,
            resamples: None,
            s: None,
            seed: 0,
            add_one_correction: false,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon.unwrap_or(DEFAULT_EPSILON)
    }

    pub fn fraction(&self) -> f64 {
        self.fraction.unwrap_or(match self.method {
            Method::PseudotimeDe => 0.8,
            _ => 0.5,
        })
    }

    pub fn resamples(&self) -> usize {
        self.resamples.unwrap_or(100)
    }

    pub fn s(&self) -> usize {
        self.s.unwrap_or(10)
    }

    pub fn validate(&self) -> Result<()> {
        match self.method {
            Method::CountSplit | Method::ClusterMeanCountsplit => {
                let e = self.epsilon();
                if !(e > 0.0 && e < 1.0) {
                    return Err(Error::InvalidEpsilon { value: e });
                }
            }
            Method::CellSplit | Method::PseudotimeDe => {
                let f = self.fraction();
                if !(f > 0.0 && f < 1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "subsample fraction must lie in (0,1), got {f}"
                    )));
                }
            }
            _ => {}
        }
        match self.method {
            Method::JackstrawFull | Method::JackstrawEfficient | Method::PseudotimeDe => {
                if self.resamples() == 0 {
                    return Err(Error::InvalidConfig(
                        "resample count must be at least 1".into(),
                    ));
                }
                if self.method == Method::JackstrawEfficient && self.s() == 0 {
                    return Err(Error::InvalidConfig(
                        "jackstraw set size s must be at least 1".into(),
                    ));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Ok,
    Unconverged,
    Skipped,
}

impl std::fmt::Display for FitStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FitStatus::Ok => "ok",
            FitStatus::Unconverged => "unconverged",
            FitStatus::Skipped => "skipped",
        })
    }
}

/// One gene's row of a report. `p_value` is present exactly when
/// `status == Ok`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneResult {
    pub gene_index: usize,
    pub estimate: Option<f64>,
    pub std_error: Option<f64>,
    pub p_value: Option<f64>,
    pub status: FitStatus,
}

impl GeneResult {
    fn failed(gene_index: usize) -> Self {
        GeneResult {
            gene_index,
            estimate: None,
            std_error: None,
            p_value: None,
            status: FitStatus::Unconverged,
        }
    }
}

pub const REPORT_SCHEMA_VERSION: &str = "1";

/// Full output of a differential-expression run. `latents` holds every
/// latent estimate used for testing (gene splitting produces two);
/// `gene_latent[j]` is the index of the estimate gene j was tested against.
/// `rows_used` records the tested cells when only a subset was tested.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeReport {
    pub method: MethodConfig,
    pub gamma_policy: String,
    pub latents: Vec<LatentEstimate>,
    pub gene_latent: Vec<usize>,
    pub rows_used: Option<Vec<usize>>,
    /// Resampling statistics dropped because a permuted or subsampled fit
    /// failed; p-value denominators shrink accordingly.
    pub pool_dropped: usize,
    pub results: Vec<GeneResult>,
}

impl DeReport {
    /// The latent estimate used for testing (the first, when there are two).
    pub fn latent(&self) -> &LatentEstimate {
        &self.latents[0]
    }

    pub fn p_values(&self) -> Vec<Option<f64>> {
        self.results.iter().map(|r| r.p_value).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("schema_version,gene_index,estimate,std_error,p_value,status\n");
        for r in &self.results {
            let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                REPORT_SCHEMA_VERSION,
                r.gene_index,
                fmt(r.estimate),
                fmt(r.std_error),
                fmt(r.p_value),
                r.status
            ));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidConfig(format!("report serialization: {e}")))
    }
}

/// Dispatch `cfg.method` to the matching per-gene procedure. The
/// cluster-mean tests produce a single test rather than per-gene rows and
/// have their own entry point.
pub fn run_de(x: &CountMatrix, policy: &GammaPolicy, cfg: &MethodConfig) -> Result<DeReport> {
    match cfg.method {
        Method::CountSplit => de_count_split(x, policy, cfg),
        Method::DoubleDip => de_double_dip(x, policy, cfg),
        Method::CellSplit => de_cell_split(x, policy, cfg),
        Method::GeneSplit => de_gene_split(x, policy, cfg),
        Method::JackstrawFull => jackstraw(x, policy, cfg, JackstrawVariant::Full),
        Method::JackstrawEfficient => {
            jackstraw(x, policy, cfg, JackstrawVariant::Efficient)
        }
        Method::PseudotimeDe => pseudotime_de(x, policy, cfg),
        Method::ClusterMeanNaive | Method::ClusterMeanCountsplit => {
            Err(Error::InvalidConfig(
                "cluster-mean tests yield a single statistic; use cluster_mean_test".into(),
            ))
        }
    }
}

/// Split, estimate the latent variable on the train half, test every gene on
/// the test half.
pub fn de_count_split(
    x: &CountMatrix,
    policy: &GammaPolicy,
    cfg: &MethodConfig,
) -> Result<DeReport> {
    cfg.validate()?;
    let split = splitting::count_split(x, cfg.epsilon(), rng::derive(cfg.seed, tag::SPLIT))?;
    let gamma = resolve_gamma(policy, &split.train)?;
    let latent = estimate_latent(
        &split.train,
        &gamma,
        cfg.estimator,
        rng::derive(cfg.seed, tag::ESTIMATOR),
    )?;
    let regressor = latent.regressor();
    let results = fit_all_genes(&split.test, &regressor, gamma.as_slice(), cfg.family);
    Ok(single_latent_report(cfg, policy, latent, None, 0, results))
}

/// Estimate and test on the same matrix (the uncorrected baseline).
pub fn de_double_dip(
    x: &CountMatrix,
    policy: &GammaPolicy,
    cfg: &MethodConfig,
) -> Result<DeReport> {
    cfg.validate()?;
    let gamma = resolve_gamma(policy, x)?;
    let latent = estimate_latent(x, &gamma, cfg.estimator, rng::derive(cfg.seed, tag::ESTIMATOR))?;
    let regressor = latent.regressor();
    let results = fit_all_genes(x, &regressor, gamma.as_slice(), cfg.family);
    Ok(single_latent_report(cfg, policy, latent, None, 0, results))
}

/// Split the cells: fit the leading principal axis on the train rows,
/// project the test rows onto it (centering by the train column means), and
/// test every gene on the test rows only.
pub fn de_cell_split(
    x: &CountMatrix,
    policy: &GammaPolicy,
    cfg: &MethodConfig,
) -> Result<DeReport> {
    cfg.validate()?;
    if cfg.estimator != Estimator::Pc1Trajectory {
        return Err(Error::InvalidConfig(
            "cell splitting projects onto the leading principal axis; only the \
             trajectory estimator is defined"
                .into(),
        ));
    }
    let split = splitting::cell_split(x, cfg.fraction(), rng::derive(cfg.seed, tag::SPLIT))?;
    let x_train = x.select_rows(&split.train_rows)?;
    let x_test = x.select_rows(&split.test_rows)?;
    let gamma_train = resolve_gamma_rows(policy, &x_train, &split.train_rows)?;
    let gamma_test = resolve_gamma_rows(policy, &x_test, &split.test_rows)?;

    let log_train = log_normalize(&x_train, &gamma_train, DEFAULT_PSEUDOCOUNT)?;
    let (_, loading) = latent::first_pc(&log_train)?;
    let train_means = log_train.column_means();
    let log_test = log_normalize(&x_test, &gamma_test, DEFAULT_PSEUDOCOUNT)?;
    let scores: Vec<f64> = (0..log_test.n_rows())
        .map(|i| {
            (0..log_test.n_cols())
                .map(|j| (log_test.get(i, j) - train_means[j]) * loading[j])
                .sum()
        })
        .collect();

    let results = fit_all_genes(&x_test, &scores, gamma_test.as_slice(), cfg.family);
    let latent = LatentEstimate::Trajectory { scores };
    Ok(single_latent_report(cfg, policy, latent, Some(split.test_rows), 0, results))
}

/// Split the genes in half; each half's latent estimate tests the other
/// half's genes, so every gene is tested but against one of two estimates.
pub fn de_gene_split(
    x: &CountMatrix,
    policy: &GammaPolicy,
    cfg: &MethodConfig,
) -> Result<DeReport> {
    cfg.validate()?;
    let split = splitting::gene_split(x, rng::derive(cfg.seed, tag::SPLIT))?;
    let halves = [&split.train_cols, &split.test_cols];
    let mut latents = Vec::with_capacity(2);
    let mut gammas = Vec::with_capacity(2);
    for (h, cols) in halves.iter().enumerate() {
        let sub = x.select_columns(cols)?;
        let gamma = resolve_gamma(policy, &sub)?;
        let latent = estimate_latent(
            &sub,
            &gamma,
            cfg.estimator,
            rng::derive2(cfg.seed, tag::ESTIMATOR, h as u64),
        )?;
        latents.push(latent);
        gammas.push(gamma);
    }

    // Gene j in half h is tested against the latent estimate (and size
    // factors) from the other half.
    let p = x.n_genes();
    let mut tested_against = vec![0usize; p];
    for &j in &split.train_cols {
        tested_against[j] = 1;
    }
    let regressors: Vec<Vec<f64>> = latents.iter().map(|l| l.regressor()).collect();
    let results: Vec<GeneResult> = (0..p)
        .into_par_iter()
        .map(|j| {
            let other = tested_against[j];
            let y = x.column_f64(j);
            let fit = fit_gene_column(&y, &regressors[other], gammas[other].as_slice(), cfg.family);
            wald_gene_result(j, fit)
        })
        .collect();

    Ok(DeReport {
        method: cfg.clone(),
        gamma_policy: policy.label().to_string(),
        latents,
        gene_latent: tested_against,
        rows_used: None,
        pool_dropped: 0,
        results,
    })
}

fn single_latent_report(
    cfg: &MethodConfig,
    policy: &GammaPolicy,
    latent: LatentEstimate,
    rows_used: Option<Vec<usize>>,
    pool_dropped: usize,
    results: Vec<GeneResult>,
) -> DeReport {
    let p = results.len();
    DeReport {
        method: cfg.clone(),
        gamma_policy: policy.label().to_string(),
        latents: vec![latent],
        gene_latent: vec![0; p],
        rows_used,
        pool_dropped,
        results,
    }
}

pub(crate) fn resolve_gamma(policy: &GammaPolicy, m: &CountMatrix) -> Result<SizeFactors> {
    match policy {
        GammaPolicy::Known(g) => {
            if g.len() != m.n_cells() {
                return Err(Error::DimensionMismatch(format!(
                    "{} size factors for {} cells",
                    g.len(),
                    m.n_cells()
                )));
            }
            Ok(g.clone())
        }
        GammaPolicy::Estimate => estimate_size_factors(m),
        GammaPolicy::Unit => Ok(SizeFactors::unit(m.n_cells())),
    }
}

/// Like `resolve_gamma` for a row-subset matrix: known factors are selected
/// by row, estimation happens on the subset itself.
fn resolve_gamma_rows(
    policy: &GammaPolicy,
    sub: &CountMatrix,
    rows: &[usize],
) -> Result<SizeFactors> {
    match policy {
        GammaPolicy::Known(g) => g.select(rows),
        GammaPolicy::Estimate => estimate_size_factors(sub),
        GammaPolicy::Unit => Ok(SizeFactors::unit(sub.n_cells())),
    }
}

pub(crate) fn estimate_latent(
    m: &CountMatrix,
    gamma: &SizeFactors,
    estimator: Estimator,
    seed: u64,
) -> Result<LatentEstimate> {
    let logm = log_normalize(m, gamma, DEFAULT_PSEUDOCOUNT)?;
    match estimator {
        Estimator::Pc1Trajectory => {
            let (scores, _) = latent::first_pc(&logm)?;
            Ok(LatentEstimate::Trajectory { scores })
        }
        Estimator::Kmeans2 => latent::kmeans(&logm, 2, seed),
    }
}

/// Fit one gene column; `None` when the fit fails outright. A θ that runs
/// off to the Poisson limit still yields usable coefficients, so that fit is
/// kept.
pub(crate) fn fit_gene_column(
    y: &[f64],
    regressor: &[f64],
    offsets: &[f64],
    family: Family,
) -> Option<GlmFit> {
    let z = RealMatrix::column_vector(regressor.to_vec());
    let fitted = match family {
        Family::Poisson => glm::fit_poisson_glm(y, &z, offsets),
        Family::NegativeBinomial => glm::fit_negbin_glm(y, &z, offsets),
    };
    match fitted {
        Ok(fit) => Some(fit),
        Err(Error::ThetaDiverged { fit, .. }) => Some(*fit),
        Err(_) => None,
    }
}

pub(crate) fn wald_gene_result(gene_index: usize, fit: Option<GlmFit>) -> GeneResult {
    let Some(fit) = fit else {
        return GeneResult::failed(gene_index);
    };
    if !fit.converged {
        return GeneResult::failed(gene_index);
    }
    match glm::wald_test(&fit, 1) {
        Ok(w) if w.p_value.is_finite() => GeneResult {
            gene_index,
            estimate: Some(w.estimate),
            std_error: Some(w.std_error),
            p_value: Some(w.p_value),
            status: FitStatus::Ok,
        },
        _ => GeneResult::failed(gene_index),
    }
}

pub(crate) fn fit_all_genes(
    x: &CountMatrix,
    regressor: &[f64],
    offsets: &[f64],
    family: Family,
) -> Vec<GeneResult> {
    (0..x.n_genes())
        .into_par_iter()
        .map(|j| {
            let y = x.column_f64(j);
            wald_gene_result(j, fit_gene_column(&y, regressor, offsets, family))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal, Poisson};

    fn null_matrix(n: usize, p: usize, lambdas: &[f64], seed: u64) -> CountMatrix {
        let mut r = rng::stream(seed);
        let mut counts = Vec::with_capacity(n * p);
        for _ in 0..n {
            for &lam in lambdas {
                counts.push(Poisson::new(lam).unwrap().sample(&mut r) as u64);
            }
        }
        CountMatrix::from_counts(n, p, counts).unwrap()
    }

    fn two_group_lambdas(p: usize) -> Vec<f64> {
        (0..p).map(|j| if j < p / 2 { 1.0 } else { 10.0 }).collect()
    }

    #[test]
    fn count_split_report_shape_and_determinism() {
        let x = null_matrix(120, 8, &two_group_lambdas(8), 101);
        let cfg = MethodConfig::new(Method::CountSplit).with_seed(7);
        let a = de_count_split(&x, &GammaPolicy::Unit, &cfg).unwrap();
        assert_eq!(a.results.len(), 8);
        assert_eq!(a.gene_latent, vec![0; 8]);
        for (j, r) in a.results.iter().enumerate() {
            assert_eq!(r.gene_index, j);
            assert_eq!(r.p_value.is_some(), r.status == FitStatus::Ok);
            if let Some(p) = r.p_value {
                assert!((0.0..=1.0).contains(&p));
            }
        }
        let b = de_count_split(&x, &GammaPolicy::Unit, &cfg).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        let LatentEstimate::Trajectory { scores } = a.latent() else { panic!() };
        assert_eq!(scores.len(), 120);
    }

    #[test]
    fn count_split_all_zero_test_column_is_unconverged() {
        let mut counts = null_matrix(50, 3, &[5.0, 5.0, 5.0], 103).counts().to_vec();
        for i in 0..50 {
            counts[i * 3 + 1] = 0;
        }
        let x = CountMatrix::from_counts(50, 3, counts).unwrap();
        let cfg = MethodConfig::new(Method::CountSplit).with_seed(3);
        let rep = de_count_split(&x, &GammaPolicy::Unit, &cfg).unwrap();
        assert_eq!(rep.results[1].status, FitStatus::Unconverged);
        assert!(rep.results[1].p_value.is_none());
        assert_eq!(rep.results[0].status, FitStatus::Ok);
    }

    #[test]
    fn double_dip_tests_every_gene() {
        let x = null_matrix(80, 6, &[4.0; 6], 105);
        let cfg = MethodConfig::new(Method::DoubleDip).with_seed(11);
        let rep = de_double_dip(&x, &GammaPolicy::Unit, &cfg).unwrap();
        assert!(rep.results.iter().all(|r| r.status == FitStatus::Ok));
    }

    /// Paired Monte-Carlo comparison on the same replicates: double dipping
    /// is farther from uniform than count splitting.
    #[test]
    fn double_dip_is_anticonservative_where_count_split_is_not() {
        let lambdas = two_group_lambdas(10);
        let mut cs_p = Vec::new();
        let mut dd_p = Vec::new();
        for rep in 0..150u64 {
            let x = null_matrix(200, 10, &lambdas, rng::derive2(901, tag::REPLICATE, rep));
            let cfg = MethodConfig::new(Method::CountSplit).with_seed(rng::derive(902, rep));
            cs_p.extend(
                de_count_split(&x, &GammaPolicy::Unit, &cfg).unwrap().p_values().into_iter().flatten(),
            );
            let cfg = MethodConfig { method: Method::DoubleDip, ..cfg };
            dd_p.extend(
                de_double_dip(&x, &GammaPolicy::Unit, &cfg).unwrap().p_values().into_iter().flatten(),
            );
        }
        let frac = |v: &[f64]| v.iter().filter(|p| **p <= 0.05).count() as f64 / v.len() as f64;
        assert!(frac(&dd_p) > 0.08, "double dip rejected {}", frac(&dd_p));
        assert!(frac(&cs_p) < 0.08, "count split rejected {}", frac(&cs_p));
        let ks_cs = crate::stats::ks_distance_uniform(&mut cs_p.clone());
        let ks_dd = crate::stats::ks_distance_uniform(&mut dd_p.clone());
        assert!(ks_dd > ks_cs);
    }

    #[test]
    fn cell_split_reports_test_rows_only() {
        let x = null_matrix(60, 5, &[6.0; 5], 107);
        let cfg = MethodConfig::new(Method::CellSplit).with_seed(13);
        let rep = de_cell_split(&x, &GammaPolicy::Unit, &cfg).unwrap();
        let rows = rep.rows_used.as_ref().unwrap();
        assert_eq!(rows.len(), 30);
        assert_eq!(rep.latent().len(), 30);
        assert_eq!(rep.results.len(), 5);

        let km = MethodConfig { estimator: Estimator::Kmeans2, ..cfg };
        assert!(de_cell_split(&x, &GammaPolicy::Unit, &km).is_err());
    }

    /// The projection axis comes from the train rows alone, so test scores
    /// are a fixed per-row function.
    #[test]
    fn cell_split_projection_is_row_equivariant() {
        let x = null_matrix(40, 4, &[5.0; 4], 109);
        let cfg = MethodConfig::new(Method::CellSplit).with_seed(17);
        let rep = de_cell_split(&x, &GammaPolicy::Unit, &cfg).unwrap();
        let rows = rep.rows_used.clone().unwrap();
        let LatentEstimate::Trajectory { scores } = rep.latent() else { panic!() };
        // Recompute one score by hand from the raw counts.
        let i = rows[3];
        let x_test = x.select_rows(&rows).unwrap();
        let x_train = x.select_rows(
            &(0..40).filter(|r| !rows.contains(r)).collect::<Vec<_>>(),
        )
        .unwrap();
        let log_train =
            log_normalize(&x_train, &SizeFactors::unit(20), 1.0).unwrap();
        let (_, loading) = latent::first_pc(&log_train).unwrap();
        let means = log_train.column_means();
        let mut expect = 0.0;
        for j in 0..4 {
            expect += ((x.get(i, j) as f64 + 1.0).ln() - means[j]) * loading[j];
        }
        let _ = x_test;
        assert!((scores[3] - expect).abs() < 1e-10);
    }

    #[test]
    fn gene_split_tests_each_gene_against_the_other_half() {
        let x = null_matrix(70, 7, &[3.0; 7], 111);
        let cfg = MethodConfig::new(Method::GeneSplit).with_seed(19);
        let rep = de_gene_split(&x, &GammaPolicy::Unit, &cfg).unwrap();
        assert_eq!(rep.latents.len(), 2);
        assert_eq!(rep.results.len(), 7);
        let ones = rep.gene_latent.iter().filter(|&&g| g == 1).count();
        assert_eq!(ones, 4); // ⌈7/2⌉ genes in the first half test against the second estimate
        assert!(rep.results.iter().all(|r| r.status == FitStatus::Ok));

        let two = null_matrix(30, 2, &[5.0, 5.0], 112);
        let rep2 = de_gene_split(&two, &GammaPolicy::Unit, &cfg).unwrap();
        assert_eq!(rep2.results.len(), 2);
    }

    /// Relabeling the two k-means clusters flips the slope sign but not the
    /// p-value.
    #[test]
    fn cluster_relabeling_only_flips_the_sign() {
        let mut r = rng::stream(117);
        let norm = Normal::new(0.0, 0.2).unwrap();
        let n = 60;
        let mut counts = Vec::new();
        for i in 0..n {
            let shift: f64 = if i < n / 2 { 1.0 } else { 3.0 };
            for _ in 0..5 {
                let lam = (shift + norm.sample(&mut r)).exp();
                counts.push(Poisson::new(lam).unwrap().sample(&mut r) as u64);
            }
        }
        let x = CountMatrix::from_counts(n, 5, counts).unwrap();
        let cfg = MethodConfig {
            estimator: Estimator::Kmeans2,
            ..MethodConfig::new(Method::DoubleDip).with_seed(23)
        };
        let rep = de_double_dip(&x, &GammaPolicy::Unit, &cfg).unwrap();
        let LatentEstimate::Clusters { labels, k } = rep.latent().clone() else { panic!() };
        let flipped: Vec<f64> = labels.iter().map(|&l| 1.0 - l as f64).collect();
        let y = x.column_f64(0);
        let fit = fit_gene_column(&y, &flipped, &vec![1.0; n], Family::Poisson).unwrap();
        let w = glm::wald_test(&fit, 1).unwrap();
        let orig = rep.results[0].clone();
        assert_eq!(k, 2);
        assert!((w.estimate + orig.estimate.unwrap()).abs() < 1e-6);
        assert!((w.p_value - orig.p_value.unwrap()).abs() < 1e-9);
    }

    #[test]
    fn known_gamma_length_is_checked() {
        let x = null_matrix(10, 2, &[2.0, 2.0], 119);
        let bad = GammaPolicy::Known(SizeFactors::unit(7));
        let cfg = MethodConfig::new(Method::DoubleDip);
        assert!(matches!(
            de_double_dip(&x, &bad, &cfg),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn config_validation_rejects_bad_ranges() {
        let cfg = MethodConfig {
            epsilon: Some(1.0),
            ..MethodConfig::new(Method::CountSplit)
        };
        assert!(cfg.validate().is_err());
        let cfg = MethodConfig {
            fraction: Some(0.0),
            ..MethodConfig::new(Method::PseudotimeDe)
        };
        assert!(cfg.validate().is_err());
        let cfg = MethodConfig {
            resamples: Some(0),
            ..MethodConfig::new(Method::JackstrawFull)
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn csv_has_schema_version_first_and_blank_missing_fields() {
        let rep = DeReport {
            method: MethodConfig::new(Method::CountSplit),
            gamma_policy: "unit".into(),
            latents: vec![LatentEstimate::Trajectory { scores: vec![0.0] }],
            gene_latent: vec![0, 0],
            rows_used: None,
            pool_dropped: 0,
            results: vec![
                GeneResult {
                    gene_index: 0,
                    estimate: Some(0.5),
                    std_error: Some(0.25),
                    p_value: Some(0.04550026389635842),
                    status: FitStatus::Ok,
                },
                GeneResult::failed(1),
            ],
        };
        let csv = rep.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "schema_version,gene_index,estimate,std_error,p_value,status"
        );
        assert_eq!(lines.next().unwrap(), "1,0,0.5,0.25,0.04550026389635842,ok");
        assert_eq!(lines.next().unwrap(), "1,1,,,,unconverged");
        let json = rep.to_json().unwrap();
        assert!(json.contains("\"gamma_policy\": \"unit\""));
        assert!(json.contains("\"method\": \"count_split\""));
    }

    /// With a real trajectory in the data, the count-split slope estimate for
    /// a strong-signal gene is centered near its target parameter.
    #[test]
    fn strong_signal_gene_rejects() {
        let mut r = rng::stream(131);
        let norm = Normal::new(0.0, 1.0).unwrap();
        let n = 400;
        let p = 10;
        let mut rejected = 0;
        for rep in 0..20u64 {
            let l: Vec<f64> = (0..n).map(|_| norm.sample(&mut r)).collect();
            let mut counts = Vec::with_capacity(n * p);
            for li in &l {
                for j in 0..p {
                    let beta1 = if j == 0 { 1.5 } else { 0.0 };
                    let lam = (25.0f64.ln() + beta1 * li).exp();
                    counts.push(Poisson::new(lam).unwrap().sample(&mut r) as u64);
                }
            }
            let x = CountMatrix::from_counts(n, p, counts).unwrap();
            let cfg = MethodConfig::new(Method::CountSplit).with_seed(rng::derive(500, rep));
            let out = de_count_split(&x, &GammaPolicy::Unit, &cfg).unwrap();
            if out.results[0].p_value.unwrap() < 0.05 {
                rejected += 1;
            }
        }
        assert!(rejected >= 18, "rejected only {rejected}/20");
    }
}

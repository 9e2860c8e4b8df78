//! Synthetic-data scenarios and the Monte-Carlo harness measuring
//! calibration, power, confidence-interval coverage, and overdispersion
//! profiles.
//!
//! Counts are drawn as X_ij ~ Poisson(γ_i·Λ_ij) with
//! Λ_ij = exp(β₀j + β₁j·L_i), optionally Gamma-mixed for overdispersion.
//! Replicates are independent work units with derived seeds, so runs are
//! reproducible under any thread count.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm;
use crate::latent::{abs_correlation, adjusted_rand_index, LatentEstimate};
use crate::matrix::{estimate_size_factors, CountMatrix, RealMatrix, SizeFactors};
use crate::pipelines::{
    cluster_mean_test, run_de, ClusterTestVariant, Estimator, GammaPolicy, Method,
    MethodConfig,
};
use crate::rng::{self, tag};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentKind {
    None,
    Trajectory,
    Clusters,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SizeFactorModel {
    #[serde(rename = "unit")]
    Unit,
    #[serde(rename = "gamma_10_10")]
    Gamma1010,
}

/// One synthetic scenario: the generating latent variable, per-gene
/// log-intercepts and slopes, optional Gamma overdispersion, and the size
/// factor model. `latent_seed` pins the latent draw so separate scenarios
/// (or replicates) can share one realized L.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n: usize,
    pub p: usize,
    pub latent_kind: LatentKind,
    pub beta0: Vec<f64>,
    pub beta1: Vec<f64>,
    #[serde(default)]
    pub overdispersion_b: Option<f64>,
    pub size_factor_model: SizeFactorModel,
    pub seed: u64,
    #[serde(default)]
    pub latent_seed: Option<u64>,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 {
            return Err(Error::InvalidConfig(
                "scenario dimensions must be positive".into(),
            ));
        }
        if self.beta0.len() != self.p || self.beta1.len() != self.p {
            return Err(Error::InvalidConfig(format!(
                "coefficient arrays must have length p = {}",
                self.p
            )));
        }
        if let Some(b) = self.overdispersion_b {
            if !(b.is_finite() && b > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "overdispersion shape must be positive, got {b}"
                )));
            }
        }
        Ok(())
    }

    fn with_seed(&self, seed: u64) -> ScenarioConfig {
        ScenarioConfig { seed, ..self.clone() }
    }
}

/// The constant-Λ null of the motivating example: ten genes, half at mean 1
/// and half at mean 10, no latent structure.
pub fn null_two_level_scenario(seed: u64) -> ScenarioConfig {
    let p = 10;
    let beta0: Vec<f64> = (0..p)
        .map(|j| if j < p / 2 { 0.0 } else { 10.0f64.ln() })
        .collect();
    ScenarioConfig {
        n: 200,
        p,
        latent_kind: LatentKind::None,
        beta0,
        beta1: vec![0.0; p],
        overdispersion_b: None,
        size_factor_model: SizeFactorModel::Unit,
        seed,
        latent_seed: None,
    }
}

/// Constant-Λ null at mean 5 with Gamma overdispersion shape `b`.
pub fn overdispersed_null_scenario(b: f64, seed: u64) -> ScenarioConfig {
    let p = 10;
    ScenarioConfig {
        n: 200,
        p,
        latent_kind: LatentKind::None,
        beta0: vec![5.0f64.ln(); p],
        beta1: vec![0.0; p],
        overdispersion_b: Some(b),
        size_factor_model: SizeFactorModel::Unit,
        seed,
        latent_seed: None,
    }
}

/// Equally spaced slope grid over [0.18, 3].
pub fn signal_grid(k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![3.0];
    }
    (0..k)
        .map(|i| 0.18 + i as f64 * (3.0 - 0.18) / (k - 1) as f64)
        .collect()
}

/// Desk-scale signal scenario: 90% null genes, intercepts log 3 or log 25
/// with equal probability, non-null slopes cycling through `grid`. Gene
/// assignments are drawn once from the seed, so the same seed gives the
/// same gene roles across runs.
pub fn signal_scenario(latent_kind: LatentKind, grid: &[f64], n: usize, p: usize, seed: u64) -> ScenarioConfig {
    use rand::Rng;
    let mut r = rng::stream(rng::derive(seed, tag::SCENARIO));
    let beta0: Vec<f64> = (0..p)
        .map(|_| if r.random::<bool>() { 3.0f64.ln() } else { 25.0f64.ln() })
        .collect();
    let n_signal = (p / 10).max(1);
    let mut order: Vec<usize> = (0..p).collect();
    crate::splitting::shuffle(&mut order, &mut r);
    let mut beta1 = vec![0.0; p];
    for (slot, &gene) in order[..n_signal].iter().enumerate() {
        beta1[gene] = grid[slot % grid.len()];
    }
    ScenarioConfig {
        n,
        p,
        latent_kind,
        beta0,
        beta1,
        overdispersion_b: None,
        size_factor_model: SizeFactorModel::Gamma1010,
        seed,
        latent_seed: None,
    }
}

/// Draw one dataset: (counts, size factors, generating latent variable).
pub fn generate(
    cfg: &ScenarioConfig,
) -> Result<(CountMatrix, SizeFactors, Option<LatentEstimate>)> {
    use rand::Rng;
    use rand_distr::{Distribution, Gamma, Normal, Poisson};

    cfg.validate()?;
    let latent_seed = cfg.latent_seed.unwrap_or(rng::derive(cfg.seed, tag::LATENT));
    let latent = match cfg.latent_kind {
        LatentKind::None => None,
        LatentKind::Trajectory => {
            let mut r = rng::stream(latent_seed);
            let norm = Normal::new(0.0, 1.0).expect("unit normal");
            let mut scores: Vec<f64> = (0..cfg.n).map(|_| norm.sample(&mut r)).collect();
            let mean = stats::mean(&scores);
            scores.iter_mut().for_each(|s| *s -= mean);
            Some(LatentEstimate::Trajectory { scores })
        }
        LatentKind::Clusters => {
            let mut r = rng::stream(latent_seed);
            let labels: Vec<usize> = (0..cfg.n).map(|_| usize::from(r.random::<bool>())).collect();
            Some(LatentEstimate::Clusters { labels, k: 2 })
        }
    };
    let l_values: Vec<f64> = match &latent {
        Some(l) => l.regressor(),
        None => vec![0.0; cfg.n],
    };

    let gamma = match cfg.size_factor_model {
        SizeFactorModel::Unit => SizeFactors::unit(cfg.n),
        SizeFactorModel::Gamma1010 => {
            let mut r = rng::stream(rng::derive(cfg.seed, tag::SIZE_FACTORS));
            let dist = Gamma::new(10.0, 0.1).expect("valid gamma");
            SizeFactors::from_values((0..cfg.n).map(|_| dist.sample(&mut r)).collect())?
        }
    };

    let mut r = rng::stream(rng::derive(cfg.seed, tag::COUNTS));
    let mixing = cfg
        .overdispersion_b
        .map(|b| Gamma::new(b, 1.0 / b).expect("valid gamma"));
    let mut counts = Vec::with_capacity(cfg.n * cfg.p);
    for i in 0..cfg.n {
        for j in 0..cfg.p {
            let mut lam = gamma.get(i) * (cfg.beta0[j] + cfg.beta1[j] * l_values[i]).exp();
            if let Some(mix) = &mixing {
                lam *= mix.sample(&mut r);
            }
            let draw = if lam > 0.0 {
                Poisson::new(lam).expect("positive mean").sample(&mut r) as u64
            } else {
                0
            };
            counts.push(draw);
        }
    }
    Ok((CountMatrix::from_counts(cfg.n, cfg.p, counts)?, gamma, latent))
}

/// Uniformity diagnostics for one pooled set of p-values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub ks_distance: f64,
    /// (level, fraction of p-values ≤ level) at levels 0.01, 0.05, 0.1.
    pub rejection_rate_at: Vec<(f64, f64)>,
    /// (theoretical, empirical) quantile pairs, at most 256 of them.
    pub qq_points: Vec<(f64, f64)>,
    pub n_pvalues: usize,
    pub n_missing: usize,
}

impl CalibrationSummary {
    pub fn rate_at(&self, level: f64) -> Option<f64> {
        self.rejection_rate_at
            .iter()
            .find(|(l, _)| (l - level).abs() < 1e-12)
            .map(|(_, r)| *r)
    }
}

/// Calibration pooled over all genes plus within each gene group (genes
/// sharing an intercept), labeled by mean count like `lambda=10`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub overall: CalibrationSummary,
    pub groups: Vec<(String, CalibrationSummary)>,
}

pub const REJECTION_LEVELS: [f64; 3] = [0.01, 0.05, 0.1];
const MAX_QQ_POINTS: usize = 256;

fn summarize(mut pvalues: Vec<f64>, n_missing: usize) -> CalibrationSummary {
    pvalues.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = pvalues.len();
    let ks_distance = if n == 0 { f64::NAN } else { stats::ks_distance_uniform(&mut pvalues) };
    let rejection_rate_at = REJECTION_LEVELS
        .iter()
        .map(|&level| {
            let count = pvalues.iter().filter(|p| **p <= level).count();
            (level, if n == 0 { f64::NAN } else { count as f64 / n as f64 })
        })
        .collect();
    let qq_points = if n == 0 {
        Vec::new()
    } else if n <= MAX_QQ_POINTS {
        (0..n).map(|i| ((i as f64 + 0.5) / n as f64, pvalues[i])).collect()
    } else {
        (0..MAX_QQ_POINTS)
            .map(|k| {
                let i = (k as f64 * (n - 1) as f64 / (MAX_QQ_POINTS - 1) as f64).round() as usize;
                ((i as f64 + 0.5) / n as f64, pvalues[i])
            })
            .collect()
    };
    CalibrationSummary { ks_distance, rejection_rate_at, qq_points, n_pvalues: n, n_missing }
}

fn lambda_label(beta0: f64) -> String {
    let lambda = beta0.exp();
    let rounded = lambda.round();
    if (lambda - rounded).abs() < 1e-9 {
        format!("lambda={}", rounded as i64)
    } else {
        format!("lambda={lambda:.4}")
    }
}

/// Run `method` on `replicates` fresh draws of `scenario`, pooling p-values
/// overall and per intercept group. Size factors are passed to the pipeline
/// as known. The cluster-mean tests contribute one p-value per replicate and
/// no groups.
pub fn run_calibration(
    scenario: &ScenarioConfig,
    method: &MethodConfig,
    replicates: usize,
) -> Result<CalibrationReport> {
    if replicates == 0 {
        return Err(Error::InvalidConfig("replicate count must be at least 1".into()));
    }
    scenario.validate()?;
    method.validate()?;

    let cluster_variant = match method.method {
        Method::ClusterMeanNaive => Some(ClusterTestVariant::Naive),
        Method::ClusterMeanCountsplit => Some(ClusterTestVariant::CountSplit),
        _ => None,
    };

    let per_replicate: Result<Vec<Vec<(u64, Option<f64>)>>> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let s_cfg = scenario.with_seed(rng::derive2(scenario.seed, tag::REPLICATE, r));
            let (x, gamma, _) = generate(&s_cfg)?;
            let m_cfg = MethodConfig {
                seed: rng::derive2(method.seed, tag::REPLICATE, r),
                ..method.clone()
            };
            if let Some(variant) = cluster_variant {
                let p = match cluster_mean_test(&x, &m_cfg, variant) {
                    Ok(w) => Some(w.p_value),
                    Err(Error::DegenerateClusters) => None,
                    Err(e) => return Err(e),
                };
                return Ok(vec![(0u64, p)]);
            }
            let report = run_de(&x, &GammaPolicy::Known(gamma), &m_cfg)?;
            Ok(report
                .results
                .iter()
                .map(|g| (scenario.beta0[g.gene_index].to_bits(), g.p_value))
                .collect())
        })
        .collect();
    let per_replicate = per_replicate?;

    let mut all = Vec::new();
    let mut all_missing = 0usize;
    let mut grouped: BTreeMap<u64, (Vec<f64>, usize)> = BTreeMap::new();
    for row in &per_replicate {
        for (key, p) in row {
            let slot = grouped.entry(*key).or_default();
            match p {
                Some(p) => {
                    all.push(*p);
                    slot.0.push(*p);
                }
                None => {
                    all_missing += 1;
                    slot.1 += 1;
                }
            }
        }
    }

    let groups = if cluster_variant.is_some() || grouped.len() < 2 {
        Vec::new()
    } else {
        let mut entries: Vec<(f64, Vec<f64>, usize)> = grouped
            .into_iter()
            .map(|(bits, (ps, miss))| (f64::from_bits(bits), ps, miss))
            .collect();
        entries.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        entries
            .into_iter()
            .map(|(beta0, ps, miss)| (lambda_label(beta0), summarize(ps, miss)))
            .collect()
    };

    Ok(CalibrationReport { overall: summarize(all, all_missing), groups })
}

/// One calibration report per overdispersion shape, on otherwise identical
/// scenarios.
pub fn run_overdispersion_sweep(
    b_values: &[f64],
    base: &ScenarioConfig,
    method: &MethodConfig,
    replicates: usize,
) -> Result<Vec<(f64, CalibrationReport)>> {
    b_values
        .iter()
        .enumerate()
        .map(|(idx, &b)| {
            let scenario = ScenarioConfig {
                overdispersion_b: Some(b),
                seed: rng::derive2(base.seed, tag::SWEEP, idx as u64),
                ..base.clone()
            };
            let method = MethodConfig {
                seed: rng::derive2(method.seed, tag::SWEEP, idx as u64),
                ..method.clone()
            };
            run_calibration(&scenario, &method, replicates).map(|rep| (b, rep))
        })
        .collect()
}

/// One gene in one replicate of a power/coverage run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerCoverageRecord {
    pub epsilon: f64,
    pub replicate: u64,
    pub gene_index: usize,
    pub beta0: f64,
    pub beta1_true: f64,
    /// Slope of the best log-link fit of the true mean surface on the
    /// estimated latent variable.
    pub target: f64,
    pub estimate: Option<f64>,
    pub p_value: Option<f64>,
    pub rejected: Option<bool>,
    pub ci_covers_target: Option<bool>,
    /// Latent recovery quality for the replicate: absolute correlation
    /// (trajectory) or adjusted Rand index (clusters) against the truth.
    pub quality: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerCoverageSummary {
    pub records: Vec<PowerCoverageRecord>,
}

impl PowerCoverageSummary {
    pub fn rejection_rate(&self, filter: impl Fn(&PowerCoverageRecord) -> bool) -> Option<f64> {
        let hits: Vec<bool> = self
            .records
            .iter()
            .filter(|r| filter(r))
            .filter_map(|r| r.rejected)
            .collect();
        if hits.is_empty() {
            return None;
        }
        Some(hits.iter().filter(|h| **h).count() as f64 / hits.len() as f64)
    }

    pub fn coverage(&self, filter: impl Fn(&PowerCoverageRecord) -> bool) -> Option<f64> {
        let hits: Vec<bool> = self
            .records
            .iter()
            .filter(|r| filter(r))
            .filter_map(|r| r.ci_covers_target)
            .collect();
        if hits.is_empty() {
            return None;
        }
        Some(hits.iter().filter(|h| **h).count() as f64 / hits.len() as f64)
    }
}

/// Count-splitting power and coverage across ε values: per gene and
/// replicate, the target parameter against the estimated latent variable,
/// rejection at level 0.05, whether the 95% Wald interval covers the target,
/// and the replicate's latent recovery quality.
pub fn run_power_coverage(
    scenario: &ScenarioConfig,
    epsilons: &[f64],
    replicates: usize,
) -> Result<PowerCoverageSummary> {
    if replicates == 0 || epsilons.is_empty() {
        return Err(Error::InvalidConfig(
            "power runs need at least one replicate and one epsilon".into(),
        ));
    }
    scenario.validate()?;
    let estimator = match scenario.latent_kind {
        LatentKind::Clusters => Estimator::Kmeans2,
        _ => Estimator::Pc1Trajectory,
    };
    let z95 = stats::phi_inv(0.975);

    let mut records = Vec::new();
    for (e_idx, &epsilon) in epsilons.iter().enumerate() {
        let per_rep: Result<Vec<Vec<PowerCoverageRecord>>> = (0..replicates as u64)
            .into_par_iter()
            .map(|r| {
                let s_cfg = scenario
                    .with_seed(rng::derive3(scenario.seed, tag::REPLICATE, e_idx as u64, r));
                let (x, gamma, truth) = generate(&s_cfg)?;
                let m_cfg = MethodConfig {
                    epsilon: Some(epsilon),
                    estimator,
                    seed: rng::derive3(
                        rng::derive(scenario.seed, tag::METHOD),
                        tag::REPLICATE,
                        e_idx as u64,
                        r,
                    ),
                    ..MethodConfig::new(Method::CountSplit)
                };
                let report = run_de(&x, &GammaPolicy::Known(gamma.clone()), &m_cfg)?;
                let est_regressor = report.latent().regressor();
                let quality = match (&truth, report.latent()) {
                    (
                        Some(LatentEstimate::Clusters { labels: t, .. }),
                        LatentEstimate::Clusters { labels: e, .. },
                    ) => adjusted_rand_index(t, e).unwrap_or(f64::NAN),
                    (Some(t), e) => {
                        abs_correlation(&t.regressor(), &e.regressor()).unwrap_or(f64::NAN)
                    }
                    (None, _) => f64::NAN,
                };
                let _ = &est_regressor;

                let z = RealMatrix::column_vector(report.latent().regressor());
                let l_true: Vec<f64> = truth
                    .as_ref()
                    .map(|t| t.regressor())
                    .unwrap_or_else(|| vec![0.0; s_cfg.n]);
                let out: Vec<PowerCoverageRecord> = report
                    .results
                    .iter()
                    .map(|g| {
                        let j = g.gene_index;
                        let expected: Vec<f64> = (0..s_cfg.n)
                            .map(|i| {
                                gamma.get(i)
                                    * (s_cfg.beta0[j] + s_cfg.beta1[j] * l_true[i]).exp()
                            })
                            .collect();
                        let target = glm::target_parameter(&expected, &z, &gamma)
                            .map(|c| c[1])
                            .unwrap_or(f64::NAN);
                        let (rejected, covers) = match (g.p_value, g.estimate, g.std_error) {
                            (Some(p), Some(est), Some(se)) => {
                                let lo = est - z95 * se;
                                let hi = est + z95 * se;
                                (Some(p <= 0.05), Some(lo <= target && target <= hi))
                            }
                            _ => (None, None),
                        };
                        PowerCoverageRecord {
                            epsilon,
                            replicate: r,
                            gene_index: j,
                            beta0: s_cfg.beta0[j],
                            beta1_true: s_cfg.beta1[j],
                            target,
                            estimate: g.estimate,
                            p_value: g.p_value,
                            rejected,
                            ci_covers_target: covers,
                            quality,
                        }
                    })
                    .collect();
                Ok(out)
            })
            .collect();
        for rep in per_rep? {
            records.extend(rep);
        }
    }
    Ok(PowerCoverageSummary { records })
}

/// Per-gene negative-binomial dispersion estimates with size factors
/// estimated from the matrix itself, plus a histogram of the fitted
/// mean-to-dispersion ratios Λ̂_ij/θ̂_j.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OverdispersionProfile {
    /// Per-gene θ̂ (the cap value when the fit ran to the Poisson limit);
    /// `None` when the fit failed outright.
    pub theta: Vec<Option<f64>>,
    /// (bin lower edge, count) over ratio bins of width 0.1 up to 2, with a
    /// final overflow bin.
    pub histogram: Vec<(f64, usize)>,
    pub fraction_below_one: f64,
    pub n_failed: usize,
}

pub fn estimate_overdispersion_profile(
    x: &CountMatrix,
    latent: &LatentEstimate,
) -> Result<OverdispersionProfile> {
    if latent.len() != x.n_cells() {
        return Err(Error::DimensionMismatch(format!(
            "latent length {} for {} cells",
            latent.len(),
            x.n_cells()
        )));
    }
    let gamma = estimate_size_factors(x)?;
    let z = RealMatrix::column_vector(latent.regressor());

    let fits: Vec<Option<(f64, Vec<f64>)>> = (0..x.n_genes())
        .into_par_iter()
        .map(|j| {
            let y = x.column_f64(j);
            let fit = match glm::fit_negbin_glm(&y, &z, gamma.as_slice()) {
                Ok(f) => f,
                Err(Error::ThetaDiverged { fit, .. }) => *fit,
                Err(_) => return None,
            };
            if !fit.converged {
                return None;
            }
            let theta = fit.dispersion.expect("negative binomial fit");
            let mu = fit.predict(&z, gamma.as_slice()).ok()?;
            Some((theta, mu))
        })
        .collect();

    let mut histogram: Vec<(f64, usize)> =
        (0..21).map(|k| (k as f64 * 0.1, 0usize)).collect();
    let mut below_one = 0usize;
    let mut total = 0usize;
    let mut theta_out = Vec::with_capacity(x.n_genes());
    let mut n_failed = 0usize;
    for fit in &fits {
        match fit {
            Some((theta, mu)) => {
                theta_out.push(Some(*theta));
                for m in mu {
                    let ratio = m / theta;
                    total += 1;
                    if ratio < 1.0 {
                        below_one += 1;
                    }
                    let bin = ((ratio / 0.1).floor() as usize).min(20);
                    histogram[bin].1 += 1;
                }
            }
            None => {
                theta_out.push(None);
                n_failed += 1;
            }
        }
    }
    let fraction_below_one = if total == 0 { f64::NAN } else { below_one as f64 / total as f64 };
    Ok(OverdispersionProfile { theta: theta_out, histogram, fraction_below_one, n_failed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_level_null_has_the_stated_means() {
        let mut low = Vec::new();
        let mut high = Vec::new();
        for r in 0..20u64 {
            let cfg = null_two_level_scenario(rng::derive(601, r));
            let (x, gamma, latent) = generate(&cfg).unwrap();
            assert!(latent.is_none());
            assert!(gamma.as_slice().iter().all(|g| *g == 1.0));
            for i in 0..cfg.n {
                for j in 0..cfg.p {
                    let v = x.get(i, j) as f64;
                    if j < 5 {
                        low.push(v);
                    } else {
                        high.push(v);
                    }
                }
            }
        }
        assert!((stats::mean(&low) - 1.0).abs() < 0.02);
        assert!((stats::mean(&high) - 10.0).abs() < 0.06);
    }

    #[test]
    fn overdispersed_scenario_matches_the_variance_formula() {
        let mut vals = Vec::new();
        for r in 0..50u64 {
            let cfg = overdispersed_null_scenario(5.0, rng::derive(603, r));
            let (x, _, _) = generate(&cfg).unwrap();
            vals.extend(x.counts().iter().map(|&c| c as f64));
        }
        // Var = Λ + Λ²/b = 5 + 25/5 = 10.
        let v = stats::variance(&vals);
        assert!((v - 10.0).abs() < 0.35, "variance {v}");
        assert!((stats::mean(&vals) - 5.0).abs() < 0.05);
    }

    #[test]
    fn generation_is_deterministic_and_seed_sensitive() {
        let cfg = null_two_level_scenario(77);
        let (a, _, _) = generate(&cfg).unwrap();
        let (b, _, _) = generate(&cfg).unwrap();
        assert_eq!(a.counts(), b.counts());
        let (c, _, _) = generate(&null_two_level_scenario(78)).unwrap();
        assert_ne!(a.counts(), c.counts());
    }

    #[test]
    fn latent_seed_pins_the_latent_draw() {
        let base = signal_scenario(LatentKind::Trajectory, &signal_grid(5), 50, 20, 11);
        let one = ScenarioConfig { latent_seed: Some(99), seed: 1, ..base.clone() };
        let two = ScenarioConfig { latent_seed: Some(99), seed: 2, ..base };
        let (xa, _, la) = generate(&one).unwrap();
        let (xb, _, lb) = generate(&two).unwrap();
        assert_eq!(la.unwrap().regressor(), lb.unwrap().regressor());
        assert_ne!(xa.counts(), xb.counts());
    }

    #[test]
    fn gamma_size_factors_have_mean_one() {
        let cfg = ScenarioConfig {
            size_factor_model: SizeFactorModel::Gamma1010,
            ..signal_scenario(LatentKind::Trajectory, &signal_grid(5), 5000, 2, 21)
        };
        let (_, gamma, _) = generate(&cfg).unwrap();
        let g = gamma.as_slice();
        assert!((stats::mean(g) - 1.0).abs() < 0.02);
        assert!((stats::variance(g) - 0.1).abs() < 0.02);
    }

    #[test]
    fn signal_scenario_layout() {
        let grid = signal_grid(5);
        for (got, want) in grid.iter().zip([0.18, 0.885, 1.59, 2.295, 3.0]) {
            assert!((got - want).abs() < 1e-12, "grid point {got} vs {want}");
        }
        let cfg = signal_scenario(LatentKind::Trajectory, &grid, 100, 200, 31);
        let nonzero = cfg.beta1.iter().filter(|b| **b != 0.0).count();
        assert_eq!(nonzero, 20);
        for g in &grid {
            assert_eq!(cfg.beta1.iter().filter(|b| *b == g).count(), 4);
        }
        let low = cfg.beta0.iter().filter(|b| **b == 3.0f64.ln()).count();
        assert!(low > 60 && low < 140, "intercept split {low}");
        // Same seed, same roles.
        let again = signal_scenario(LatentKind::Trajectory, &grid, 100, 200, 31);
        assert_eq!(cfg.beta1, again.beta1);
    }

    #[test]
    fn calibration_bookkeeping_single_replicate() {
        let scenario = null_two_level_scenario(41);
        let method = MethodConfig::new(Method::CountSplit).with_seed(42);
        let rep = run_calibration(&scenario, &method, 1).unwrap();
        assert_eq!(rep.overall.n_pvalues + rep.overall.n_missing, 10);
        assert_eq!(rep.groups.len(), 2);
        assert_eq!(rep.groups[0].0, "lambda=1");
        assert_eq!(rep.groups[1].0, "lambda=10");
        let total: usize =
            rep.groups.iter().map(|(_, s)| s.n_pvalues + s.n_missing).sum();
        assert_eq!(total, 10);
        assert!(run_calibration(&scenario, &method, 0).is_err());
    }

    #[test]
    fn count_split_calibration_is_near_nominal() {
        let scenario = null_two_level_scenario(43);
        let method = MethodConfig::new(Method::CountSplit).with_seed(44);
        let rep = run_calibration(&scenario, &method, 150).unwrap();
        let rate = rep.overall.rate_at(0.05).unwrap();
        assert!((0.02..=0.09).contains(&rate), "rejection {rate}");
        assert!(rep.overall.ks_distance < 0.06);
        assert!(rep.overall.qq_points.len() <= 256);
        let (t_prev, _) = rep.overall.qq_points[0];
        assert!(rep.overall.qq_points.iter().skip(1).scan(t_prev, |prev, (t, _)| {
            let ok = *t >= *prev;
            *prev = *t;
            Some(ok)
        }).all(|ok| ok));
    }

    #[test]
    fn cluster_method_pools_one_p_per_replicate() {
        let scenario = ScenarioConfig {
            n: 30,
            p: 6,
            ..null_two_level_scenario(45)
        };
        let scenario = ScenarioConfig {
            beta0: vec![5.0f64.ln(); 6],
            beta1: vec![0.0; 6],
            ..scenario
        };
        let method = MethodConfig::new(Method::ClusterMeanCountsplit).with_seed(46);
        let rep = run_calibration(&scenario, &method, 25).unwrap();
        assert_eq!(rep.overall.n_pvalues + rep.overall.n_missing, 25);
        assert!(rep.groups.is_empty());
    }

    #[test]
    fn power_targets_are_zero_for_null_genes() {
        let scenario = signal_scenario(LatentKind::Trajectory, &signal_grid(5), 120, 20, 51);
        let summary = run_power_coverage(&scenario, &[0.5], 3).unwrap();
        assert_eq!(summary.records.len(), 3 * 20);
        for rec in &summary.records {
            if rec.beta1_true == 0.0 && rec.target.is_finite() {
                assert!(rec.target.abs() < 1e-6, "null target {}", rec.target);
            }
            assert!((0.0..=1.0).contains(&rec.quality) || rec.quality.is_nan());
        }
        let cov = summary.coverage(|_| true).unwrap();
        assert!(cov > 0.8, "coverage {cov}");
    }

    #[test]
    fn overdispersion_profile_separates_poisson_from_gamma_mixing() {
        let poisson = overdispersed_null_scenario(5.0, 61);
        let poisson = ScenarioConfig { overdispersion_b: None, n: 400, ..poisson };
        let (x, _, _) = generate(&poisson).unwrap();
        let latent = LatentEstimate::Trajectory {
            scores: {
                let mut v: Vec<f64> = (0..400).map(|i| i as f64).collect();
                let m = stats::mean(&v);
                v.iter_mut().for_each(|s| *s -= m);
                v
            },
        };
        let profile = estimate_overdispersion_profile(&x, &latent).unwrap();
        assert!(profile.fraction_below_one > 0.95, "poisson {}", profile.fraction_below_one);

        let noisy = ScenarioConfig { overdispersion_b: Some(0.5), n: 400, ..overdispersed_null_scenario(0.5, 63) };
        let (x2, _, _) = generate(&noisy).unwrap();
        let profile2 = estimate_overdispersion_profile(&x2, &latent).unwrap();
        assert!(profile2.fraction_below_one < 0.5, "gamma {}", profile2.fraction_below_one);
        let total: usize = profile2.histogram.iter().map(|(_, c)| c).sum();
        assert!(total > 0);
    }
}

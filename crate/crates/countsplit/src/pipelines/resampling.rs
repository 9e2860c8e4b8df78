//! Resampling baselines: jackstraw (per-gene and pooled-reference variants)
//! and a subsample-permutation pseudotime test.
//!
//! Both compare an observed per-gene statistic against statistics recomputed
//! on permuted data, reporting the plain fraction of permuted values at or
//! above the observed one; failed permuted fits drop out of the reference
//! pool and the denominator shrinks with them.

use rayon::prelude::*;

use super::{
    estimate_latent, fit_gene_column, resolve_gamma, DeReport, FitStatus, GammaPolicy,
    GeneResult, MethodConfig,
};
use crate::error::Result;
use crate::glm::GlmFit;
use crate::latent::permute;
use crate::matrix::{CountMatrix, SizeFactors};
use crate::rng::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JackstrawVariant {
    /// Per gene: B datasets with that gene's column permuted, the latent
    /// estimate recomputed each time; the gene's own permuted |z| values
    /// form its reference distribution.
    Full,
    /// B datasets each permuting a fresh random set of s columns; the B·s
    /// permuted |z| values form one reference distribution shared by all
    /// genes.
    Efficient,
}

/// |z| statistic of the slope, defined only for converged fits.
fn abs_z(fit: &GlmFit) -> Option<f64> {
    if !fit.converged {
        return None;
    }
    let z = fit.coefficients[1] / fit.standard_errors[1];
    z.is_finite().then(|| z.abs())
}

/// |β̂₁| statistic, defined only for converged fits.
fn abs_slope(fit: &GlmFit) -> Option<f64> {
    if !fit.converged {
        return None;
    }
    let b = fit.coefficients[1];
    b.is_finite().then(|| b.abs())
}

fn resample_p(hits: usize, denom: usize, add_one: bool) -> f64 {
    if add_one {
        (hits + 1) as f64 / (denom + 1) as f64
    } else {
        hits as f64 / denom as f64
    }
}

/// Observed fits for every gene against one regressor.
fn observed_fits(
    x: &CountMatrix,
    regressor: &[f64],
    gamma: &SizeFactors,
    cfg: &MethodConfig,
) -> Vec<Option<GlmFit>> {
    (0..x.n_genes())
        .into_par_iter()
        .map(|j| fit_gene_column(&x.column_f64(j), regressor, gamma.as_slice(), cfg.family))
        .collect()
}

fn result_from_observed(
    gene_index: usize,
    fit: &Option<GlmFit>,
    statistic: Option<f64>,
    p_value: Option<f64>,
) -> GeneResult {
    match (fit, statistic, p_value) {
        (Some(fit), Some(_), Some(p)) => GeneResult {
            gene_index,
            estimate: Some(fit.coefficients[1]),
            std_error: Some(fit.standard_errors[1]),
            p_value: Some(p),
            status: FitStatus::Ok,
        },
        _ => GeneResult {
            gene_index,
            estimate: None,
            std_error: None,
            p_value: None,
            status: FitStatus::Unconverged,
        },
    }
}

pub fn jackstraw(
    x: &CountMatrix,
    policy: &GammaPolicy,
    cfg: &MethodConfig,
    variant: JackstrawVariant,
) -> Result<DeReport> {
    cfg.validate()?;
    let gamma = resolve_gamma(policy, x)?;
    let latent = estimate_latent(x, &gamma, cfg.estimator, rng::derive(cfg.seed, tag::ESTIMATOR))?;
    let regressor = latent.regressor();
    let fits = observed_fits(x, &regressor, &gamma, cfg);
    let observed: Vec<Option<f64>> = fits.iter().map(|f| f.as_ref().and_then(abs_z)).collect();

    let (results, pool_dropped) = match variant {
        JackstrawVariant::Full => jackstraw_full(x, policy, cfg, &fits, &observed),
        JackstrawVariant::Efficient => jackstraw_efficient(x, policy, cfg, &fits, &observed),
    };

    Ok(super::single_latent_report(cfg, policy, latent, None, pool_dropped, results))
}

/// One permuted dataset for column set `cols`: each listed column is
/// independently row-permuted.
fn permute_columns(x: &CountMatrix, cols: &[usize], orders: &[Vec<usize>]) -> CountMatrix {
    let (n, p) = (x.n_cells(), x.n_genes());
    let mut counts = x.counts().to_vec();
    for (c, order) in cols.iter().zip(orders) {
        for i in 0..n {
            counts[i * p + c] = x.get(order[i], *c);
        }
    }
    CountMatrix::from_counts(n, p, counts).expect("same shape as input")
}

/// The permuted-side statistic for one resample: re-resolve size factors
/// (permuting a column changes estimated row sums), re-estimate the latent
/// variable, refit the permuted column. `None` when any stage fails.
fn permuted_statistic(
    x_star: &CountMatrix,
    col: usize,
    policy: &GammaPolicy,
    cfg: &MethodConfig,
    estimator_seed: u64,
    stat: fn(&GlmFit) -> Option<f64>,
) -> Option<f64> {
    let gamma = resolve_gamma(policy, x_star).ok()?;
    let latent = estimate_latent(x_star, &gamma, cfg.estimator, estimator_seed).ok()?;
    let fit = fit_gene_column(
        &x_star.column_f64(col),
        &latent.regressor(),
        gamma.as_slice(),
        cfg.family,
    )?;
    stat(&fit)
}

fn jackstraw_full(
    x: &CountMatrix,
    policy: &GammaPolicy,
    cfg: &MethodConfig,
    fits: &[Option<GlmFit>],
    observed: &[Option<f64>],
) -> (Vec<GeneResult>, usize) {
    let n = x.n_cells();
    let b_total = cfg.resamples();
    let identity: Vec<usize> = (0..n).collect();
    let per_gene: Vec<(GeneResult, usize)> = (0..x.n_genes())
        .into_par_iter()
        .map(|j| {
            let Some(obs) = observed[j] else {
                return (result_from_observed(j, &fits[j], None, None), 0);
            };
            let mut hits = 0usize;
            let mut kept = 0usize;
            let mut dropped = 0usize;
            for b in 0..b_total {
                let order = permute(
                    &identity,
                    rng::derive3(cfg.seed, tag::PERMUTE, j as u64, b as u64),
                );
                let x_star = permute_columns(x, &[j], &[order]);
                match permuted_statistic(
                    &x_star,
                    j,
                    policy,
                    cfg,
                    rng::derive3(cfg.seed, tag::ESTIMATOR, j as u64, b as u64),
                    abs_z,
                ) {
                    Some(z) => {
                        kept += 1;
                        if z >= obs {
                            hits += 1;
                        }
                    }
                    None => dropped += 1,
                }
            }
            if kept == 0 {
                return (result_from_observed(j, &fits[j], None, None), dropped);
            }
            let p = resample_p(hits, kept, cfg.add_one_correction);
            (result_from_observed(j, &fits[j], Some(obs), Some(p)), dropped)
        })
        .collect();
    let dropped = per_gene.iter().map(|(_, d)| d).sum();
    (per_gene.into_iter().map(|(r, _)| r).collect(), dropped)
}

fn jackstraw_efficient(
    x: &CountMatrix,
    policy: &GammaPolicy,
    cfg: &MethodConfig,
    fits: &[Option<GlmFit>],
    observed: &[Option<f64>],
) -> (Vec<GeneResult>, usize) {
    let (n, p) = (x.n_cells(), x.n_genes());
    let s = cfg.s().min(p);
    let identity: Vec<usize> = (0..n).collect();
    let columns: Vec<usize> = (0..p).collect();

    let per_b: Vec<(Vec<f64>, usize)> = (0..cfg.resamples())
        .into_par_iter()
        .map(|b| {
            let chosen: Vec<usize> = permute(&columns, rng::derive2(cfg.seed, tag::COLUMNS, b as u64))
                [..s]
                .to_vec();
            let orders: Vec<Vec<usize>> = chosen
                .iter()
                .map(|&c| {
                    permute(&identity, rng::derive3(cfg.seed, tag::PERMUTE, b as u64, c as u64))
                })
                .collect();
            let x_star = permute_columns(x, &chosen, &orders);
            let gamma = match resolve_gamma(policy, &x_star) {
                Ok(g) => g,
                Err(_) => return (Vec::new(), s),
            };
            let latent = match estimate_latent(
                &x_star,
                &gamma,
                cfg.estimator,
                rng::derive2(cfg.seed, tag::ESTIMATOR, b as u64),
            ) {
                Ok(l) => l,
                Err(_) => return (Vec::new(), s),
            };
            let regressor = latent.regressor();
            let mut stats = Vec::with_capacity(s);
            let mut dropped = 0usize;
            for &c in &chosen {
                match fit_gene_column(&x_star.column_f64(c), &regressor, gamma.as_slice(), cfg.family)
                    .as_ref()
                    .and_then(|f| abs_z(f))
                {
                    Some(z) => stats.push(z),
                    None => dropped += 1,
                }
            }
            (stats, dropped)
        })
        .collect();

    let pool: Vec<f64> = per_b.iter().flat_map(|(v, _)| v.iter().copied()).collect();
    let dropped: usize = per_b.iter().map(|(_, d)| d).sum();
    let results = (0..p)
        .map(|j| match observed[j] {
            Some(obs) if !pool.is_empty() => {
                let hits = pool.iter().filter(|z| **z >= obs).count();
                let p_value = resample_p(hits, pool.len(), cfg.add_one_correction);
                result_from_observed(j, &fits[j], Some(obs), Some(p_value))
            }
            _ => result_from_observed(j, &fits[j], None, None),
        })
        .collect();
    (results, dropped)
}

/// Observed |β̂₁| per gene from the full-data latent estimate; each resample
/// subsamples rows without replacement, re-estimates the latent variable on
/// the subsample, permutes it, and refits every gene on the permuted vector.
pub fn pseudotime_de(
    x: &CountMatrix,
    policy: &GammaPolicy,
    cfg: &MethodConfig,
) -> Result<DeReport> {
    cfg.validate()?;
    let (n, p) = (x.n_cells(), x.n_genes());
    let gamma = resolve_gamma(policy, x)?;
    let latent = estimate_latent(x, &gamma, cfg.estimator, rng::derive(cfg.seed, tag::ESTIMATOR))?;
    let regressor = latent.regressor();
    let fits = observed_fits(x, &regressor, &gamma, cfg);
    let observed: Vec<Option<f64>> = fits.iter().map(|f| f.as_ref().and_then(abs_slope)).collect();

    let m = ((cfg.fraction() * n as f64).round() as usize).clamp(2, n.saturating_sub(1));
    let identity: Vec<usize> = (0..n).collect();
    let per_b: Vec<Vec<Option<f64>>> = (0..cfg.resamples())
        .into_par_iter()
        .map(|b| {
            let mut rows: Vec<usize> =
                permute(&identity, rng::derive2(cfg.seed, tag::SUBSAMPLE, b as u64))[..m].to_vec();
            rows.sort_unstable();
            let sub = x.select_rows(&rows).expect("subsample indices in range");
            let gamma_b = match policy {
                GammaPolicy::Known(g) => match g.select(&rows) {
                    Ok(g) => g,
                    Err(_) => return vec![None; p],
                },
                GammaPolicy::Estimate => match crate::matrix::estimate_size_factors(&sub) {
                    Ok(g) => g,
                    Err(_) => return vec![None; p],
                },
                GammaPolicy::Unit => SizeFactors::unit(m),
            };
            let latent_b = match estimate_latent(
                &sub,
                &gamma_b,
                cfg.estimator,
                rng::derive2(cfg.seed, tag::ESTIMATOR, b as u64),
            ) {
                Ok(l) => l,
                Err(_) => return vec![None; p],
            };
            let permuted = permute(&latent_b.regressor(), rng::derive2(cfg.seed, tag::PERMUTE, b as u64));
            (0..p)
                .map(|j| {
                    fit_gene_column(&sub.column_f64(j), &permuted, gamma_b.as_slice(), cfg.family)
                        .as_ref()
                        .and_then(abs_slope)
                })
                .collect()
        })
        .collect();

    let mut pool_dropped = 0usize;
    let results: Vec<GeneResult> = (0..p)
        .map(|j| {
            let Some(obs) = observed[j] else {
                return result_from_observed(j, &fits[j], None, None);
            };
            let mut hits = 0usize;
            let mut kept = 0usize;
            for row in &per_b {
                match row[j] {
                    Some(stat) => {
                        kept += 1;
                        if stat >= obs {
                            hits += 1;
                        }
                    }
                    None => pool_dropped += 1,
                }
            }
            if kept == 0 {
                return result_from_observed(j, &fits[j], None, None);
            }
            let p_value = resample_p(hits, kept, cfg.add_one_correction);
            result_from_observed(j, &fits[j], Some(obs), Some(p_value))
        })
        .collect();

    Ok(super::single_latent_report(cfg, policy, latent, None, pool_dropped, results))
}

//! Log-link Poisson and negative-binomial regression via iteratively
//! reweighted least squares, with Wald tests, Wald confidence intervals, and
//! the population-parameter oracle.
//!
//! The design matrix is always `[1 Z]` (intercept first) and size factors
//! enter as offsets on the log scale, so the fitted mean for row i is
//! γ_i·exp(β₀ + Z_iᵀβ₁).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{RealMatrix, SizeFactors};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Poisson,
    NegativeBinomial,
}

/// One fitted regression. `dispersion` is the negative-binomial θ
/// (variance μ + μ²/θ); `None` for Poisson fits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlmFit {
    pub family: Family,
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub dispersion: Option<f64>,
    pub deviance: f64,
    pub iterations: u32,
    pub converged: bool,
}

impl GlmFit {
    /// Fitted means γ_i·exp(β₀ + Z_iᵀβ₁) for new rows.
    pub fn predict(&self, z: &RealMatrix, offsets: &[f64]) -> Result<Vec<f64>> {
        if z.n_cols() + 1 != self.coefficients.len() || z.n_rows() != offsets.len() {
            return Err(Error::DimensionMismatch(format!(
                "predict expects {} columns and matching offsets, got {}x{} and {} offsets",
                self.coefficients.len() - 1,
                z.n_rows(),
                z.n_cols(),
                offsets.len()
            )));
        }
        Ok((0..z.n_rows())
            .map(|i| {
                let mut eta = self.coefficients[0] + offsets[i].ln();
                for j in 0..z.n_cols() {
                    eta += self.coefficients[j + 1] * z.get(i, j);
                }
                eta.exp()
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WaldResult {
    pub estimate: f64,
    pub std_error: f64,
    pub z_value: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
}

/// Componentwise score-residual tolerance at convergence, relative to
/// 1 + ‖y‖_∞.
pub const SCORE_TOL: f64 = 1e-6;

const MAX_ITERATIONS: u32 = 25;
const DEVIANCE_TOL: f64 = 1e-8;
/// |η| beyond this means exp(η) has left any plausible count scale;
/// the likelihood surface is degenerate (separation).
const ETA_GUARD: f64 = 250.0;
/// θ above this is indistinguishable from the Poisson limit.
pub const THETA_CAP: f64 = 1e6;

/// Maximize the Poisson log-likelihood with mean γ_i·exp(β₀ + Z_iᵀβ₁).
/// A response summing to zero is returned unconverged with NaN standard
/// errors; callers treat it as a missing fit.
pub fn fit_poisson_glm(y: &[f64], z: &RealMatrix, offsets: &[f64]) -> Result<GlmFit> {
    validate_inputs(y, z, offsets, false)?;
    irls(y, z, offsets, Family::Poisson, None)
}

/// Negative-binomial fit: IRLS for the coefficients alternates with Newton
/// updates of θ on the log scale. θ reaching the cap means the data carry no
/// detectable overdispersion; the error wraps the fit at the cap so callers
/// can still use its coefficients.
pub fn fit_negbin_glm(y: &[f64], z: &RealMatrix, offsets: &[f64]) -> Result<GlmFit> {
    validate_inputs(y, z, offsets, true)?;
    if y.iter().sum::<f64>() == 0.0 {
        return irls(y, z, offsets, Family::NegativeBinomial, Some(1.0));
    }

    // Poisson fit supplies starting means for the moment estimate of θ.
    let pilot = irls(y, z, offsets, Family::Poisson, None)?;
    let mu = pilot.predict(z, offsets)?;
    let num: f64 = mu.iter().map(|m| m * m).sum();
    let den: f64 = y
        .iter()
        .zip(&mu)
        .map(|(yi, mi)| (yi - mi).powi(2) - mi)
        .sum();
    if den <= 0.0 {
        // Sample variance at or below the Poisson line.
        return Err(Error::ThetaDiverged {
            cap: THETA_CAP,
            fit: Box::new(fit_at_theta(y, z, offsets, THETA_CAP)?),
        });
    }
    let mut theta = (num / den).clamp(1e-3, THETA_CAP);

    let mut fit = fit_at_theta(y, z, offsets, theta)?;
    let mut iterations = fit.iterations;
    let mut converged = fit.converged;
    for _ in 0..50 {
        let mu = fit.predict(z, offsets)?;
        let (new_theta, steps) = update_theta(y, &mu, theta);
        if new_theta >= THETA_CAP {
            let mut capped = fit_at_theta(y, z, offsets, THETA_CAP)?;
            capped.iterations += iterations;
            return Err(Error::ThetaDiverged { cap: THETA_CAP, fit: Box::new(capped) });
        }
        let moved = (new_theta.ln() - theta.ln()).abs();
        theta = new_theta;
        let refit = fit_at_theta(y, z, offsets, theta)?;
        iterations += refit.iterations + steps;
        converged = refit.converged;
        let rel_dev =
            (refit.deviance - fit.deviance).abs() / (refit.deviance.abs() + 0.1);
        fit = refit;
        if moved < 1e-6 && rel_dev < DEVIANCE_TOL {
            break;
        }
    }
    fit.iterations = iterations;
    fit.converged = converged;
    Ok(fit)
}

fn fit_at_theta(y: &[f64], z: &RealMatrix, offsets: &[f64], theta: f64) -> Result<GlmFit> {
    irls(y, z, offsets, Family::NegativeBinomial, Some(theta))
}

/// Two-sided normal-reference test of H₀: coefficient `index` = 0.
pub fn wald_test(fit: &GlmFit, index: usize) -> Result<WaldResult> {
    if !fit.converged {
        return Err(Error::UnconvergedFit);
    }
    if index >= fit.coefficients.len() {
        return Err(Error::InvalidConfig(format!(
            "coefficient index {index} out of range for {} coefficients",
            fit.coefficients.len()
        )));
    }
    let estimate = fit.coefficients[index];
    let std_error = fit.standard_errors[index];
    let z_value = estimate / std_error;
    Ok(WaldResult {
        estimate,
        std_error,
        z_value,
        p_value: stats::two_sided_p(z_value),
    })
}

/// estimate ± z_{(1+level)/2}·SE.
pub fn wald_ci(fit: &GlmFit, index: usize, level: f64) -> Result<ConfidenceInterval> {
    if !fit.converged {
        return Err(Error::UnconvergedFit);
    }
    if index >= fit.coefficients.len() {
        return Err(Error::InvalidConfig(format!(
            "coefficient index {index} out of range for {} coefficients",
            fit.coefficients.len()
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "confidence level must lie in (0,1), got {level}"
        )));
    }
    let half = stats::phi_inv(0.5 * (1.0 + level)) * fit.standard_errors[index];
    Ok(ConfidenceInterval {
        lower: fit.coefficients[index] - half,
        upper: fit.coefficients[index] + half,
        level,
    })
}

/// Population parameters (β₀(Z,·), β₁(Z,·)): the coefficients of the
/// log-link Poisson regression of the expected counts on Z. Feeding the
/// exact mean surface recovers its generating coefficients.
pub fn target_parameter(
    expected_counts: &[f64],
    z: &RealMatrix,
    gamma: &SizeFactors,
) -> Result<Vec<f64>> {
    if expected_counts.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::InvalidConfig(
            "expected counts must be finite and positive".into(),
        ));
    }
    let fit = fit_poisson_glm(expected_counts, z, gamma.as_slice())?;
    if !fit.converged {
        return Err(Error::UnconvergedFit);
    }
    Ok(fit.coefficients)
}

fn validate_inputs(
    y: &[f64],
    z: &RealMatrix,
    offsets: &[f64],
    integer_response: bool,
) -> Result<()> {
    let n = y.len();
    if z.n_rows() != n || offsets.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "response length {n}, design rows {}, offsets {}",
            z.n_rows(),
            offsets.len()
        )));
    }
    let p = z.n_cols() + 1;
    if n <= p {
        return Err(Error::RankDeficient);
    }
    if y.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidConfig(
            "response entries must be finite and non-negative".into(),
        ));
    }
    if integer_response && y.iter().any(|v| v.fract() != 0.0) {
        return Err(Error::InvalidConfig(
            "negative-binomial response must be integer-valued".into(),
        ));
    }
    if offsets.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::InvalidConfig(
            "offsets must be finite and positive".into(),
        ));
    }
    Ok(())
}

/// IRLS core shared by both families; `theta` is present exactly for the
/// negative binomial.
fn irls(
    y: &[f64],
    z: &RealMatrix,
    offsets: &[f64],
    family: Family,
    theta: Option<f64>,
) -> Result<GlmFit> {
    let n = y.len();
    let p = z.n_cols() + 1;
    let log_offsets: Vec<f64> = offsets.iter().map(|g| g.ln()).collect();

    let total: f64 = y.iter().sum();
    let mut beta = vec![0.0; p];
    beta[0] = ((total + 0.1) / offsets.iter().sum::<f64>()).ln();

    if total == 0.0 {
        // No information in the response; leave the start values and let the
        // caller treat the gene as missing.
        return Ok(GlmFit {
            family,
            coefficients: beta,
            standard_errors: vec![f64::NAN; p],
            dispersion: theta,
            deviance: 0.0,
            iterations: 0,
            converged: false,
        });
    }

    let eta_of = |beta: &[f64]| -> Result<Vec<f64>> {
        let mut eta = Vec::with_capacity(n);
        for i in 0..n {
            let mut e = log_offsets[i] + beta[0];
            for j in 1..p {
                e += beta[j] * z.get(i, j - 1);
            }
            if !e.is_finite() || e.abs() > ETA_GUARD {
                return Err(Error::SeparationDetected);
            }
            eta.push(e);
        }
        Ok(eta)
    };

    let mut eta = eta_of(&beta)?;
    let mut mu: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
    let mut dev = deviance(y, &mu, family, theta);
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=MAX_ITERATIONS {
        iterations = iter;
        // Weighted least squares on the working response
        // (η − log γ) + (y − μ)/μ with weights μ (Poisson) or
        // μ/(1 + μ/θ) (negative binomial).
        let mut xtwx = vec![0.0; p * p];
        let mut xtwz = vec![0.0; p];
        for i in 0..n {
            let w = match family {
                Family::Poisson => mu[i],
                Family::NegativeBinomial => {
                    let t = theta.expect("theta set for negative binomial");
                    mu[i] / (1.0 + mu[i] / t)
                }
            };
            let work = (eta[i] - log_offsets[i]) + (y[i] - mu[i]) / mu[i];
            let mut row = [0.0; 16];
            row[0] = 1.0;
            for j in 1..p {
                row[j] = z.get(i, j - 1);
            }
            for a in 0..p {
                xtwz[a] += w * row[a] * work;
                for b in a..p {
                    xtwx[a * p + b] += w * row[a] * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                xtwx[a * p + b] = xtwx[b * p + a];
            }
        }
        let proposal = cholesky_solve(&xtwx, &xtwz, p)?;

        // Step-halve toward the current point until the deviance stops
        // increasing.
        let mut accepted = false;
        let mut candidate = proposal;
        for _ in 0..30 {
            match eta_of(&candidate) {
                Ok(new_eta) => {
                    let new_mu: Vec<f64> = new_eta.iter().map(|e| e.exp()).collect();
                    let new_dev = deviance(y, &new_mu, family, theta);
                    if new_dev <= dev + 1e-10 * (dev.abs() + 1.0) {
                        let rel = (dev - new_dev).abs() / (new_dev.abs() + 0.1);
                        beta = candidate;
                        eta = new_eta;
                        mu = new_mu;
                        dev = new_dev;
                        accepted = true;
                        if rel < DEVIANCE_TOL {
                            converged = true;
                        }
                        break;
                    }
                }
                Err(Error::SeparationDetected) => {}
                Err(e) => return Err(e),
            }
            candidate = candidate
                .iter()
                .zip(&beta)
                .map(|(c, b)| 0.5 * (c + b))
                .collect();
        }
        if !accepted {
            // Even tiny steps fail to move; if the very first full step blew
            // past the η guard the problem is separated.
            if iter == 1 && eta_of(&beta).is_err() {
                return Err(Error::SeparationDetected);
            }
            break;
        }
        if converged {
            break;
        }
    }

    // Fisher information [1 Z]ᵀ diag(w) [1 Z] at the fit.
    let mut info = vec![0.0; p * p];
    for i in 0..n {
        let w = match family {
            Family::Poisson => mu[i],
            Family::NegativeBinomial => {
                let t = theta.expect("theta set for negative binomial");
                mu[i] / (1.0 + mu[i] / t)
            }
        };
        let mut row = [0.0; 16];
        row[0] = 1.0;
        for j in 1..p {
            row[j] = z.get(i, j - 1);
        }
        for a in 0..p {
            for b in a..p {
                info[a * p + b] += w * row[a] * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            info[a * p + b] = info[b * p + a];
        }
    }
    let cov = cholesky_inverse(&info, p)?;
    let standard_errors: Vec<f64> = (0..p).map(|j| cov[j * p + j].sqrt()).collect();

    Ok(GlmFit {
        family,
        coefficients: beta,
        standard_errors,
        dispersion: theta,
        deviance: dev,
        iterations,
        converged,
    })
}

fn deviance(y: &[f64], mu: &[f64], family: Family, theta: Option<f64>) -> f64 {
    match family {
        Family::Poisson => {
            2.0 * y
                .iter()
                .zip(mu)
                .map(|(yi, mi)| {
                    let ll = if *yi > 0.0 { yi * (yi / mi).ln() } else { 0.0 };
                    ll - (yi - mi)
                })
                .sum::<f64>()
        }
        Family::NegativeBinomial => {
            let t = theta.expect("theta set for negative binomial");
            2.0 * y
                .iter()
                .zip(mu)
                .map(|(yi, mi)| {
                    let ll = if *yi > 0.0 { yi * (yi / mi).ln() } else { 0.0 };
                    ll - (yi + t) * ((yi + t) / (mi + t)).ln()
                })
                .sum::<f64>()
        }
    }
}

/// Newton steps for θ on the log scale, holding the means fixed. Returns the
/// updated θ and the number of steps taken.
fn update_theta(y: &[f64], mu: &[f64], theta: f64) -> (f64, u32) {
    let mut t = theta.ln();
    let mut steps = 0;
    for _ in 0..30 {
        steps += 1;
        let th = t.exp();
        if th >= THETA_CAP {
            return (THETA_CAP, steps);
        }
        let mut score = 0.0;
        let mut hess = 0.0;
        for (yi, mi) in y.iter().zip(mu) {
            score += stats::digamma(yi + th) - stats::digamma(th) + th.ln() + 1.0
                - (th + mi).ln()
                - (th + yi) / (th + mi);
            hess += stats::trigamma(yi + th) - stats::trigamma(th) + 1.0 / th
                - 2.0 / (th + mi)
                + (th + yi) / (th + mi).powi(2);
        }
        // Chain rule onto t = ln θ.
        let score_t = th * score;
        let hess_t = th * th * hess + score_t;
        let delta = if hess_t < 0.0 {
            (-score_t / hess_t).clamp(-5.0, 5.0)
        } else {
            0.5 * score_t.signum()
        };
        t += delta;
        if delta.abs() < 1e-10 {
            break;
        }
    }
    (t.exp().min(THETA_CAP), steps)
}

/// Solve A x = b for symmetric positive-definite A (row-major, p×p).
fn cholesky_solve(a: &[f64], b: &[f64], p: usize) -> Result<Vec<f64>> {
    let l = cholesky_factor(a, p)?;
    let mut x = b.to_vec();
    forward_backward(&l, &mut x, p);
    Ok(x)
}

/// Inverse of symmetric positive-definite A via its Cholesky factor.
fn cholesky_inverse(a: &[f64], p: usize) -> Result<Vec<f64>> {
    let l = cholesky_factor(a, p)?;
    let mut inv = vec![0.0; p * p];
    for col in 0..p {
        let mut e = vec![0.0; p];
        e[col] = 1.0;
        forward_backward(&l, &mut e, p);
        for row in 0..p {
            inv[row * p + col] = e[row];
        }
    }
    Ok(inv)
}

fn cholesky_factor(a: &[f64], p: usize) -> Result<Vec<f64>> {
    let scale = (0..p).map(|j| a[j * p + j].abs()).fold(0.0f64, f64::max);
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
    let mut l = vec![0.0; p * p];
    for j in 0..p {
        for i in j..p {
            let mut sum = a[i * p + j];
            for k in 0..j {
                sum -= l[i * p + k] * l[j * p + k];
            }
            if i == j {
                if !(sum > tol) {
                    return Err(Error::RankDeficient);
                }
                l[j * p + j] = sum.sqrt();
            } else {
                l[i * p + j] = sum / l[j * p + j];
            }
        }
    }
    Ok(l)
}

fn forward_backward(l: &[f64], x: &mut [f64], p: usize) {
    for i in 0..p {
        let mut v = x[i];
        for k in 0..i {
            v -= l[i * p + k] * x[k];
        }
        x[i] = v / l[i * p + i];
    }
    for i in (0..p).rev() {
        let mut v = x[i];
        for k in i + 1..p {
            v -= l[k * p + i] * x[k];
        }
        x[i] = v / l[i * p + i];
    }
}

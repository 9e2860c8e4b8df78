//! Data-splitting strategies: binomial count splitting, the three-step
//! overlap variant, cell splitting, and gene splitting.
//!
//! Splits are pure functions of (matrix, config, seed). Per-entry binomial
//! draws consume one ChaCha stream in row-major order — zero counts consume
//! nothing — so a split is bit-reproducible regardless of thread count.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::CountMatrix;
use crate::rng;

/// Train/test pair from thinning. For `count_split` (and `mcv_split` with
/// zero overlap probabilities) train + test reconstructs the input exactly;
/// a positive overlap re-adds drawn counts to the test side and deliberately
/// breaks additivity.
#[derive(Debug, Clone)]
pub struct SplitPair {
    pub train: CountMatrix,
    pub test: CountMatrix,
    pub epsilon: f64,
    pub seed: u64,
}

/// Disjoint row partition; `train_rows` and `test_rows` are sorted.
#[derive(Debug, Clone)]
pub struct CellSplit {
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub fraction: f64,
}

/// Disjoint half/half column partition; both sets sorted.
#[derive(Debug, Clone)]
pub struct GeneSplit {
    pub train_cols: Vec<usize>,
    pub test_cols: Vec<usize>,
}

/// Three-step split configuration. `capture_prob` is the per-cell capture
/// probability of the underlying measurement model; it is validated and
/// carried for reporting but the split itself only consumes `epsilon` and
/// `p_double_prime` (choosing p″ from the capture probabilities is up to the
/// caller).
#[derive(Debug, Clone)]
pub struct McvConfig {
    pub epsilon: f64,
    pub capture_prob: Vec<f64>,
    pub p_double_prime: Vec<f64>,
}

impl McvConfig {
    fn validate(&self, n_cells: usize) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must lie in (0,1), got {}",
                self.epsilon
            )));
        }
        if self.capture_prob.len() != n_cells || self.p_double_prime.len() != n_cells {
            return Err(Error::InvalidConfig(format!(
                "per-cell probability arrays must have length {n_cells}"
            )));
        }
        if self.capture_prob.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
            return Err(Error::InvalidConfig(
                "capture probabilities must lie in (0, 1]".into(),
            ));
        }
        if self.p_double_prime.iter().any(|p| !(*p >= 0.0 && *p < 1.0)) {
            return Err(Error::InvalidConfig(
                "overlap probabilities must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

pub const DEFAULT_EPSILON: f64 = 0.5;

/// Draw Binomial(n, p). Inversion when n·min(p,1−p) < 30, the
/// triangle/parallelogram/exponential acceptance sampler above.
pub(crate) fn sample_binomial(rng: &mut ChaCha8Rng, n: u64, p: f64) -> u64 {
    debug_assert!((0.0..=1.0).contains(&p));
    if n == 0 || p == 0.0 {
        return 0;
    }
    if p == 1.0 {
        return n;
    }
    // Symmetry Binomial(n, p) = n − Binomial(n, 1−p) keeps the working
    // probability at most one half.
    let flipped = p > 0.5;
    let q = if flipped { 1.0 - p } else { p };
    let k = if (n as f64) * q < 30.0 {
        binv(rng, n, q)
    } else {
        btpe(rng, n, q)
    };
    if flipped {
        n - k
    } else {
        k
    }
}

/// Inverse-transform sampling: walk the CDF with a single uniform.
fn binv(rng: &mut ChaCha8Rng, n: u64, p: f64) -> u64 {
    let q = 1.0 - p;
    let s = p / q;
    let a = (n + 1) as f64 * s;
    let mut r = q.powf(n as f64);
    let mut u: f64 = rng.random();
    let mut x = 0u64;
    while u > r {
        u -= r;
        x += 1;
        if x >= n {
            return n;
        }
        r *= a / x as f64 - s;
        // With n·p < 30 the pmf underflows far out in the tail; any residual
        // u there is floating-point dust.
        if r < f64::MIN_POSITIVE {
            return x;
        }
    }
    x
}

/// BTPE acceptance sampling (Kachitvichyanukul & Schmeiser 1988): a
/// triangular envelope over the mode, parallelogram sides, and exponential
/// tails, with a squeeze step before the exact pmf-ratio comparison.
/// Requires p ≤ 0.5 and n·p large enough that the envelope is sound.
fn btpe(rng: &mut ChaCha8Rng, n: u64, p: f64) -> u64 {
    let nf = n as f64;
    let q = 1.0 - p;
    let npq = nf * p * q;
    let f_m = nf * p + p;
    let m = f_m.floor();
    let p1 = (2.195 * npq.sqrt() - 4.6 * q).floor() + 0.5;
    let x_m = m + 0.5;
    let x_l = x_m - p1;
    let x_r = x_m + p1;
    let c = 0.134 + 20.5 / (15.3 + m);
    let mut a = (f_m - x_l) / (f_m - x_l * p);
    let lambda_l = a * (1.0 + 0.5 * a);
    a = (x_r - f_m) / (x_r * q);
    let lambda_r = a * (1.0 + 0.5 * a);
    let p2 = p1 * (1.0 + 2.0 * c);
    let p3 = p2 + c / lambda_l;
    let p4 = p3 + c / lambda_r;

    // Stirling-series tail of ln k! used in the final comparison.
    let stirling = |u: f64| -> f64 {
        let u2 = u * u;
        (13860.0 - (462.0 - (132.0 - (99.0 - 140.0 / u2) / u2) / u2) / u2) / u / 166320.0
    };

    loop {
        let u: f64 = rng.random::<f64>() * p4;
        let mut v: f64 = rng.random();

        let y = if u <= p1 {
            // Triangular central region: accept immediately.
            return (x_m - p1 * v + u) as u64;
        } else if u <= p2 {
            // Parallelogram region.
            let x = x_l + (u - p1) / c;
            v = v * c + 1.0 - (x - x_m).abs() / p1;
            if v > 1.0 || v <= 0.0 {
                continue;
            }
            x.floor()
        } else if u <= p3 {
            // Left exponential tail.
            let y = (x_l + v.ln() / lambda_l).floor();
            if y < 0.0 {
                continue;
            }
            v *= (u - p2) * lambda_l;
            y
        } else {
            // Right exponential tail.
            let y = (x_r - v.ln() / lambda_r).floor();
            if y > nf {
                continue;
            }
            v *= (u - p3) * lambda_r;
            y
        };

        let k = (y - m).abs();
        if k <= 20.0 || k >= npq / 2.0 - 1.0 {
            // Evaluate f(y)/f(m) by the pmf recurrence.
            let s = p / q;
            let aa = s * (nf + 1.0);
            let mut f = 1.0;
            if m < y {
                let mut i = m;
                while i < y {
                    i += 1.0;
                    f *= aa / i - s;
                }
            } else if m > y {
                let mut i = y;
                while i < m {
                    i += 1.0;
                    f /= aa / i - s;
                }
            }
            if v <= f {
                return y as u64;
            }
        } else {
            // Squeeze bounds on ln(f(y)/f(m)).
            let rho =
                (k / npq) * ((k * (k / 3.0 + 0.625) + 1.0 / 6.0) / npq + 0.5);
            let t = -k * k / (2.0 * npq);
            let alpha = v.ln();
            if alpha < t - rho {
                return y as u64;
            }
            if alpha > t + rho {
                continue;
            }
            // Exact comparison through Stirling-corrected factorials.
            let x1 = y + 1.0;
            let f1 = m + 1.0;
            let z = nf + 1.0 - m;
            let w = nf - y + 1.0;
            let bound = x_m * (f1 / x1).ln()
                + (nf - m + 0.5) * (z / w).ln()
                + (y - m) * (w * p / (x1 * q)).ln()
                + stirling(f1)
                + stirling(z)
                - stirling(x1)
                - stirling(w);
            if alpha <= bound {
                return y as u64;
            }
        }
    }
}

/// Split each entry X_ij into Binomial(X_ij, ε) train counts and the
/// remainder; under a Poisson model the two matrices are independent.
pub fn count_split(x: &CountMatrix, epsilon: f64, seed: u64) -> Result<SplitPair> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidEpsilon { value: epsilon });
    }
    let mut rng = rng::stream(seed);
    let (train, test) = thin(x, epsilon, None, &mut rng);
    Ok(SplitPair { train, test, epsilon, seed })
}

/// Three-step split: train ~ Binomial(X, ε), both ~ Binomial(train, p″_i),
/// test = X − train + both. Zero overlap reproduces `count_split` exactly
/// under the same seed (the overlap draw consumes no randomness then).
pub fn mcv_split(x: &CountMatrix, cfg: &McvConfig, seed: u64) -> Result<SplitPair> {
    cfg.validate(x.n_cells())?;
    let mut rng = rng::stream(seed);
    let (train, test) = thin(x, cfg.epsilon, Some(&cfg.p_double_prime), &mut rng);
    Ok(SplitPair { train, test, epsilon: cfg.epsilon, seed })
}

fn thin(
    x: &CountMatrix,
    epsilon: f64,
    overlap: Option<&[f64]>,
    rng: &mut ChaCha8Rng,
) -> (CountMatrix, CountMatrix) {
    let (n, p) = (x.n_cells(), x.n_genes());
    let mut train = Vec::with_capacity(n * p);
    let mut test = Vec::with_capacity(n * p);
    for i in 0..n {
        let p_both = overlap.map_or(0.0, |o| o[i]);
        for &c in x.row(i) {
            let t = sample_binomial(rng, c, epsilon);
            let both = sample_binomial(rng, t, p_both);
            train.push(t);
            test.push(c - t + both);
        }
    }
    let train = CountMatrix::from_counts(n, p, train).expect("same shape as input");
    let test = CountMatrix::from_counts(n, p, test).expect("same shape as input");
    (copy_names(x, train), copy_names(x, test))
}

fn copy_names(src: &CountMatrix, mut dst: CountMatrix) -> CountMatrix {
    if let Some(names) = src.gene_names() {
        dst = dst.with_gene_names(names.to_vec()).expect("same gene count");
    }
    if let Some(names) = src.cell_names() {
        dst = dst.with_cell_names(names.to_vec()).expect("same cell count");
    }
    dst
}

/// Uniformly random row partition with |train| = round(fraction·n), clamped
/// so both sides are non-empty.
pub fn cell_split(x: &CountMatrix, fraction: f64, seed: u64) -> Result<CellSplit> {
    let n = x.n_cells();
    if !(fraction > 0.0 && fraction < 1.0) || !fraction.is_finite() || n < 2 {
        return Err(Error::InvalidFraction { value: fraction, n });
    }
    let train_size = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    shuffle(&mut order, &mut rng::stream(seed));
    let mut train_rows: Vec<usize> = order[..train_size].to_vec();
    let mut test_rows: Vec<usize> = order[train_size..].to_vec();
    train_rows.sort_unstable();
    test_rows.sort_unstable();
    Ok(CellSplit { train_rows, test_rows, fraction })
}

/// Uniformly random half/half column partition (⌈p/2⌉ train, ⌊p/2⌋ test).
pub fn gene_split(x: &CountMatrix, seed: u64) -> Result<GeneSplit> {
    let p = x.n_genes();
    if p < 2 {
        return Err(Error::TooFewGenes { p });
    }
    let mut order: Vec<usize> = (0..p).collect();
    shuffle(&mut order, &mut rng::stream(seed));
    let train_size = p.div_ceil(2);
    let mut train_cols: Vec<usize> = order[..train_size].to_vec();
    let mut test_cols: Vec<usize> = order[train_size..].to_vec();
    train_cols.sort_unstable();
    test_cols.sort_unstable();
    Ok(GeneSplit { train_cols, test_cols })
}

/// Fisher–Yates shuffle in place.
pub(crate) fn shuffle<T>(values: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..values.len()).rev() {
        let j = rng.random_range(0..=i);
        values.swap(i, j);
    }
}

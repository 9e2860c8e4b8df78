//! Latent-variable estimators and agreement metrics: the first principal
//! component of a real matrix, k-means clustering, a permutation utility,
//! absolute Pearson correlation, and the adjusted Rand index.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::RealMatrix;
use crate::rng::{self, tag};
use crate::splitting::shuffle;
use crate::stats;

/// Estimated latent structure: a continuous per-cell score (trajectory) or a
/// hard partition (clusters).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LatentEstimate {
    Trajectory { scores: Vec<f64> },
    Clusters { labels: Vec<usize>, k: usize },
}

impl LatentEstimate {
    pub fn len(&self) -> usize {
        match self {
            LatentEstimate::Trajectory { scores } => scores.len(),
            LatentEstimate::Clusters { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The single regression column this estimate induces: the scores, or the
    /// cluster labels as reals (0/1 when k = 2; which cluster is "1" only
    /// flips the slope's sign).
    pub fn regressor(&self) -> Vec<f64> {
        match self {
            LatentEstimate::Trajectory { scores } => scores.clone(),
            LatentEstimate::Clusters { labels, .. } => {
                labels.iter().map(|&l| l as f64).collect()
            }
        }
    }
}

/// First principal component of `m`: the top eigenvector of the
/// column-centered covariance (power iteration), with the sign fixed so the
/// loading's largest-magnitude entry is positive. Returns (scores, loading);
/// scores are the centered rows projected onto the loading and sum to zero.
pub fn first_pc(m: &RealMatrix) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n, p) = (m.n_rows(), m.n_cols());
    if n < 2 || p == 0 {
        return Err(Error::DegenerateMatrix);
    }
    let means = m.column_means();
    let mut centered = vec![0.0; n * p];
    let mut max_abs = 0.0f64;
    for i in 0..n {
        for j in 0..p {
            let v = m.get(i, j);
            max_abs = max_abs.max(v.abs());
            centered[i * p + j] = v - means[j];
        }
    }
    let total_ss: f64 = centered.iter().map(|v| v * v).sum();
    if total_ss <= 1e-20 * n as f64 * (1.0 + max_abs * max_abs) {
        return Err(Error::DegenerateMatrix);
    }

    let mul_a = |v: &[f64], out: &mut [f64]| {
        for i in 0..n {
            let row = &centered[i * p..(i + 1) * p];
            out[i] = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
    };
    let mul_at = |u: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|o| *o = 0.0);
        for i in 0..n {
            let row = &centered[i * p..(i + 1) * p];
            for j in 0..p {
                out[j] += row[j] * u[i];
            }
        }
    };

    // Fixed-seed random start keeps the result deterministic while making an
    // exactly-orthogonal start vector a measure-zero accident; if one occurs
    // anyway the iteration restarts with fresh draws.
    let mut start_rng = rng::stream(0x9e37_79b9_7f4a_7c15);
    let mut v: Vec<f64> = Vec::new();
    let mut av = vec![0.0; n];
    let mut w = vec![0.0; p];
    let mut lambda = -1.0f64;
    'restart: for _ in 0..8 {
        v = (0..p).map(|_| start_rng.random::<f64>() - 0.5).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        lambda = -1.0;
        for _ in 0..20_000 {
            mul_a(&v, &mut av);
            mul_at(&av, &mut w);
            let wnorm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if wnorm <= f64::MIN_POSITIVE * p as f64 {
                continue 'restart;
            }
            for j in 0..p {
                v[j] = w[j] / wnorm;
            }
            mul_a(&v, &mut av);
            let new_lambda: f64 = av.iter().map(|x| x * x).sum();
            if lambda >= 0.0 && (new_lambda - lambda).abs() <= 1e-10 * new_lambda {
                lambda = new_lambda;
                break;
            }
            lambda = new_lambda;
        }
        break;
    }
    debug_assert!(lambda >= 0.0);

    let mut pivot = 0;
    for j in 1..p {
        if v[j].abs() > v[pivot].abs() {
            pivot = j;
        }
    }
    if v[pivot] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    mul_a(&v, &mut av);
    Ok((av, v))
}

/// Lloyd's algorithm with k-means++ seeding; 10 restarts with per-restart
/// derived seeds, keeping the lowest within-cluster sum of squares.
pub fn kmeans(m: &RealMatrix, k: usize, seed: u64) -> Result<LatentEstimate> {
    let n = m.n_rows();
    if k < 2 {
        return Err(Error::InvalidConfig(format!("k must be at least 2, got {k}")));
    }
    if n < k {
        return Err(Error::TooFewPoints { need: k, got: n });
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for restart in 0..10u64 {
        let mut r = rng::stream(rng::derive2(seed, tag::RESTART, restart));
        let (wcss, labels) = lloyd(m, k, &mut r);
        if best.as_ref().is_none_or(|(b, _)| wcss < *b) {
            best = Some((wcss, labels));
        }
    }
    let (_, labels) = best.expect("at least one restart ran");
    Ok(LatentEstimate::Clusters { labels, k })
}

fn lloyd(m: &RealMatrix, k: usize, r: &mut rand_chacha::ChaCha8Rng) -> (f64, Vec<usize>) {
    use rand::Rng;
    let (n, p) = (m.n_rows(), m.n_cols());
    let dist2 = |row: usize, center: &[f64]| -> f64 {
        (0..p).map(|j| (m.get(row, j) - center[j]).powi(2)).sum()
    };

    // k-means++ seeding: next center drawn with probability proportional to
    // squared distance from the nearest chosen center.
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    let first = r.random_range(0..n);
    centers.push(m.row(first).to_vec());
    let mut d2: Vec<f64> = (0..n).map(|i| dist2(i, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut u = r.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if u < *w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            r.random_range(0..n)
        };
        centers.push(m.row(idx).to_vec());
        for i in 0..n {
            d2[i] = d2[i].min(dist2(i, centers.last().unwrap()));
        }
    }

    let mut labels = vec![0usize; n];
    for _ in 0..200 {
        let mut changed = false;
        for i in 0..n {
            let mut best_c = 0;
            let mut best_d = dist2(i, &centers[0]);
            for (c, center) in centers.iter().enumerate().skip(1) {
                let d = dist2(i, center);
                if d < best_d {
                    best_d = d;
                    best_c = c;
                }
            }
            if labels[i] != best_c {
                labels[i] = best_c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut counts = vec![0usize; k];
        let mut sums = vec![vec![0.0; p]; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            for j in 0..p {
                sums[labels[i]][j] += m.get(i, j);
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Repair: move the farthest member of the largest cluster.
                let donor = (0..k).max_by_key(|&x| counts[x]).unwrap();
                let center: Vec<f64> =
                    sums[donor].iter().map(|s| s / counts[donor] as f64).collect();
                let far = (0..n)
                    .filter(|&i| labels[i] == donor)
                    .max_by(|&a, &b| {
                        dist2(a, &center).partial_cmp(&dist2(b, &center)).unwrap()
                    })
                    .unwrap();
                labels[far] = c;
                counts[donor] -= 1;
                counts[c] = 1;
                for j in 0..p {
                    sums[donor][j] -= m.get(far, j);
                    sums[c][j] = m.get(far, j);
                }
            }
        }
        for c in 0..k {
            for j in 0..p {
                centers[c][j] = sums[c][j] / counts[c] as f64;
            }
        }
    }
    let wcss: f64 = (0..n).map(|i| dist2(i, &centers[labels[i]])).sum();
    (wcss, labels)
}

/// Uniformly random permutation of `v`, deterministic per seed.
pub fn permute<T: Clone>(v: &[T], seed: u64) -> Vec<T> {
    let mut out = v.to_vec();
    shuffle(&mut out, &mut rng::stream(seed));
    out
}

/// |Pearson correlation| of two equal-length non-constant vectors.
pub fn abs_correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "correlation inputs of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::TooFewPoints { need: 2, got: a.len() });
    }
    if stats::variance(a) == 0.0 || stats::variance(b) == 0.0 {
        return Err(Error::ConstantInput);
    }
    Ok(stats::pearson(a, b).abs().min(1.0))
}

/// Hubert–Arabie adjusted Rand index between two labelings. Two partitions
/// whose agreement cannot exceed chance (degenerate denominator) score 1
/// exactly when they are identical by construction.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "label vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    use std::collections::BTreeMap;
    let mut table: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut row: BTreeMap<usize, f64> = BTreeMap::new();
    let mut col: BTreeMap<usize, f64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1.0;
        *row.entry(x).or_default() += 1.0;
        *col.entry(y).or_default() += 1.0;
    }
    let choose2 = |x: f64| x * (x - 1.0) / 2.0;
    let sum_ij: f64 = table.values().map(|&v| choose2(v)).sum();
    let sum_a: f64 = row.values().map(|&v| choose2(v)).sum();
    let sum_b: f64 = col.values().map(|&v| choose2(v)).sum();
    let pairs = choose2(a.len() as f64);
    let expected = if pairs > 0.0 { sum_a * sum_b / pairs } else { 0.0 };
    let denom = 0.5 * (sum_a + sum_b) - expected;
    if denom.abs() < 1e-12 {
        return Ok(1.0);
    }
    Ok((sum_ij - expected) / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal, Poisson};

    use crate::matrix::{log_normalize, CountMatrix, SizeFactors};
    use crate::rng;

    #[test]
    fn two_by_two_identity() {
        let m = RealMatrix::from_values(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let (scores, loading) = first_pc(&m).unwrap();
        let s = 0.5f64.sqrt();
        assert!((loading[0] - s).abs() < 1e-8);
        assert!((loading[1] + s).abs() < 1e-8);
        assert!((scores[0] - s).abs() < 1e-8);
        assert!((scores[1] + s).abs() < 1e-8);
    }

    #[test]
    fn constant_matrix_is_degenerate() {
        let m = RealMatrix::from_values(3, 2, vec![2.0; 6]).unwrap();
        assert!(matches!(first_pc(&m), Err(Error::DegenerateMatrix)));
        let one_row = RealMatrix::from_values(1, 2, vec![1.0, 2.0]).unwrap();
        assert!(first_pc(&one_row).is_err());
    }

    #[test]
    fn scores_sum_to_zero_and_beat_random_directions() {
        let mut r = rng::stream(71);
        let n = 60;
        let p = 5;
        let vals: Vec<f64> = (0..n * p).map(|_| r.random::<f64>() * 4.0).collect();
        let m = RealMatrix::from_values(n, p, vals).unwrap();
        let (scores, loading) = first_pc(&m).unwrap();
        assert!(scores.iter().sum::<f64>().abs() < 1e-8 * n as f64);
        let norm: f64 = loading.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-10);

        let means = m.column_means();
        let pc_var = stats::variance(&scores);
        for _ in 0..100 {
            let mut dir: Vec<f64> = (0..p).map(|_| r.random::<f64>() - 0.5).collect();
            let dnorm: f64 = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
            dir.iter_mut().for_each(|x| *x /= dnorm);
            let proj: Vec<f64> = (0..n)
                .map(|i| (0..p).map(|j| (m.get(i, j) - means[j]) * dir[j]).sum())
                .collect();
            assert!(stats::variance(&proj) <= pc_var + 1e-9);
        }
    }

    #[test]
    fn column_shift_leaves_scores_unchanged() {
        let mut r = rng::stream(73);
        let vals: Vec<f64> = (0..40).map(|_| r.random::<f64>()).collect();
        let m = RealMatrix::from_values(10, 4, vals.clone()).unwrap();
        let shifted: Vec<f64> = vals
            .iter()
            .enumerate()
            .map(|(idx, v)| if idx % 4 == 2 { v + 5.0 } else { *v })
            .collect();
        let m2 = RealMatrix::from_values(10, 4, shifted).unwrap();
        let (s1, _) = first_pc(&m).unwrap();
        let (s2, _) = first_pc(&m2).unwrap();
        for (a, b) in s1.iter().zip(&s2) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn kmeans_separates_blobs() {
        let mut r = rng::stream(79);
        let norm = Normal::new(0.0, 0.3).unwrap();
        let mut vals = Vec::new();
        let mut truth = Vec::new();
        for i in 0..40 {
            let center = if i < 20 { 0.0 } else { 6.0 };
            vals.push(center + norm.sample(&mut r));
            vals.push(center + norm.sample(&mut r));
            truth.push(usize::from(i >= 20));
        }
        let m = RealMatrix::from_values(40, 2, vals).unwrap();
        let est = kmeans(&m, 2, 5).unwrap();
        let LatentEstimate::Clusters { labels, k } = &est else {
            panic!("expected clusters")
        };
        assert_eq!(*k, 2);
        assert_eq!(adjusted_rand_index(labels, &truth).unwrap(), 1.0);

        let again = kmeans(&m, 2, 5).unwrap();
        let LatentEstimate::Clusters { labels: l2, .. } = again else { panic!() };
        assert_eq!(labels, &l2);
    }

    #[test]
    fn kmeans_n_equals_k() {
        let m =
            RealMatrix::from_values(3, 1, vec![0.0, 5.0, 10.0]).unwrap();
        let est = kmeans(&m, 3, 1).unwrap();
        let LatentEstimate::Clusters { labels, .. } = est else { panic!() };
        let mut sorted = labels.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2]);
        assert!(matches!(
            kmeans(&m, 4, 1),
            Err(Error::TooFewPoints { need: 4, got: 3 })
        ));
        assert!(kmeans(&m, 1, 1).is_err());
    }

    #[test]
    fn permutation_is_uniform() {
        assert_eq!(permute(&[7.0], 3), vec![7.0]);
        let v = vec![3i32, 1, 2, 2];
        let mut sorted = permute(&v, 11);
        sorted.sort_unstable();
        assert_eq!(sorted, vec![1, 2, 2, 3]);

        let mut counts = std::collections::HashMap::new();
        let base = vec![1u8, 2, 3];
        for s in 0..100_000u64 {
            let p = permute(&base, rng::derive(991, s));
            *counts.entry(p).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 6);
        for c in counts.values() {
            let freq = *c as f64 / 100_000.0;
            assert!((freq - 1.0 / 6.0).abs() < 0.01);
        }
    }

    #[test]
    fn absolute_correlation_values() {
        let a = vec![1.0, 2.0, 3.0];
        assert!((abs_correlation(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = a.iter().map(|x| -x).collect();
        assert!((abs_correlation(&a, &neg).unwrap() - 1.0).abs() < 1e-12);
        let b = vec![1.0, 3.0, 2.0];
        assert!((abs_correlation(&a, &b).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(
            abs_correlation(&a, &[2.0, 2.0, 2.0]),
            Err(Error::ConstantInput)
        ));
        assert!(abs_correlation(&a, &[1.0]).is_err());
    }

    #[test]
    fn adjusted_rand_index_values() {
        let a = vec![1usize, 1, 2, 2];
        assert_eq!(adjusted_rand_index(&a, &a).unwrap(), 1.0);
        let b = vec![1usize, 1, 1, 2];
        assert!(adjusted_rand_index(&a, &b).unwrap().abs() < 1e-12);
        // Symmetry and label-renaming invariance.
        assert_eq!(
            adjusted_rand_index(&a, &b).unwrap(),
            adjusted_rand_index(&b, &a).unwrap()
        );
        let renamed = vec![9usize, 9, 4, 4];
        assert_eq!(adjusted_rand_index(&a, &renamed).unwrap(), 1.0);
        assert!(adjusted_rand_index(&a, &[1, 2]).is_err());
    }

    #[test]
    fn adjusted_rand_index_is_centered_on_chance() {
        let mut r = rng::stream(83);
        let mut total = 0.0;
        let draws = 10_000;
        for _ in 0..draws {
            let a: Vec<usize> = (0..20).map(|_| r.random_range(0..3usize)).collect();
            let b: Vec<usize> = (0..20).map(|_| r.random_range(0..3usize)).collect();
            total += adjusted_rand_index(&a, &b).unwrap();
        }
        assert!((total / draws as f64).abs() < 0.02);
    }

    /// Strong-signal trajectory recovery: the leading component of the
    /// log-normalized counts tracks the generating latent variable.
    #[test]
    fn first_pc_recovers_a_strong_trajectory() {
        let mut r = rng::stream(89);
        let norm = Normal::new(0.0, 1.0).unwrap();
        let n = 200;
        let p = 50;
        let l: Vec<f64> = (0..n).map(|_| norm.sample(&mut r)).collect();
        let mut counts = Vec::with_capacity(n * p);
        for li in &l {
            for _ in 0..p {
                let lam = (25.0f64.ln() + 3.0 * li).exp();
                counts.push(Poisson::new(lam).unwrap().sample(&mut r) as u64);
            }
        }
        let x = CountMatrix::from_counts(n, p, counts).unwrap();
        let logm = log_normalize(&x, &SizeFactors::unit(n), 1.0).unwrap();
        let (scores, _) = first_pc(&logm).unwrap();
        assert!(abs_correlation(&l, &scores).unwrap() > 0.95);
    }
}

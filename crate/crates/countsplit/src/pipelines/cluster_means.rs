//! Two-cluster mean-difference tests: hierarchical clustering on
//! log-transformed counts followed by a Wald test of the overall mean
//! difference, either on the same data (naive) or on the held-out half of a
//! count split.

use super::MethodConfig;
use crate::error::{Error, Result};
use crate::glm::WaldResult;
use crate::matrix::{log_normalize, CountMatrix, RealMatrix, SizeFactors};
use crate::rng::{self, tag};
use crate::splitting;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterTestVariant {
    /// Cluster and test the same log-transformed matrix.
    Naive,
    /// Cluster the train half, test the mean difference on the test half.
    CountSplit,
}

/// Cut average-linkage hierarchical clustering (Euclidean distances on rows)
/// into two clusters, then Wald-test the difference of the two clusters'
/// overall means with a pooled per-column variance estimate.
pub fn cluster_mean_test(
    x: &CountMatrix,
    cfg: &MethodConfig,
    variant: ClusterTestVariant,
) -> Result<WaldResult> {
    let n = x.n_cells();
    if n < 4 {
        return Err(Error::TooFewPoints { need: 4, got: n });
    }
    let log1p = |m: &CountMatrix| log_normalize(m, &SizeFactors::unit(m.n_cells()), 1.0);
    match variant {
        ClusterTestVariant::Naive => {
            let m = log1p(x)?;
            let labels = average_linkage_two(&m);
            mean_difference_test(&m, &labels)
        }
        ClusterTestVariant::CountSplit => {
            cfg.validate()?;
            let split =
                splitting::count_split(x, cfg.epsilon(), rng::derive(cfg.seed, tag::SPLIT))?;
            let labels = average_linkage_two(&log1p(&split.train)?);
            mean_difference_test(&log1p(&split.test)?, &labels)
        }
    }
}

/// Agglomerate rows under average linkage until two clusters remain; label 0
/// is the cluster containing row 0. Ties merge the lexicographically first
/// pair, keeping the procedure deterministic.
pub(crate) fn average_linkage_two(m: &RealMatrix) -> Vec<usize> {
    let n = m.n_rows();
    let mut dist = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d: f64 = (0..m.n_cols())
                .map(|c| (m.get(i, c) - m.get(j, c)).powi(2))
                .sum::<f64>()
                .sqrt();
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let mut active: Vec<bool> = vec![true; n];
    let mut size: Vec<f64> = vec![1.0; n];
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();

    for _ in 0..n - 2 {
        let mut best = (0usize, 0usize, f64::INFINITY);
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in i + 1..n {
                if active[j] && dist[i * n + j] < best.2 {
                    best = (i, j, dist[i * n + j]);
                }
            }
        }
        let (a, b, _) = best;
        // Lance–Williams update for average linkage.
        for k in 0..n {
            if k == a || k == b || !active[k] {
                continue;
            }
            let d = (size[a] * dist[a * n + k] + size[b] * dist[b * n + k])
                / (size[a] + size[b]);
            dist[a * n + k] = d;
            dist[k * n + a] = d;
        }
        size[a] += size[b];
        active[b] = false;
        let moved = std::mem::take(&mut members[b]);
        members[a].extend(moved);
    }

    let clusters: Vec<&Vec<usize>> =
        (0..n).filter(|&i| active[i]).map(|i| &members[i]).collect();
    debug_assert_eq!(clusters.len(), 2);
    let first_has_row0 = clusters[0].contains(&0);
    let mut labels = vec![0usize; n];
    for (which, rows) in clusters.iter().enumerate() {
        let label = if first_has_row0 { which } else { 1 - which };
        for &r in rows.iter() {
            labels[r] = label;
        }
    }
    labels
}

/// Statistic (m̄₁ − m̄₂) / (σ̂·√(1/(n₁p) + 1/(n₂p))) with the conservative
/// pooled variance σ̂² = Σᵢⱼ(yᵢⱼ − ȳⱼ)² / (p(n−1)) taken on the tested
/// matrix.
fn mean_difference_test(m: &RealMatrix, labels: &[usize]) -> Result<WaldResult> {
    let (n, p) = (m.n_rows(), m.n_cols());
    let n1 = labels.iter().filter(|&&l| l == 0).count();
    let n2 = n - n1;
    if n1 < 2 || n2 < 2 {
        return Err(Error::DegenerateClusters);
    }
    let mut sums = [0.0f64; 2];
    for i in 0..n {
        for j in 0..p {
            sums[labels[i]] += m.get(i, j);
        }
    }
    let mean1 = sums[0] / (n1 * p) as f64;
    let mean2 = sums[1] / (n2 * p) as f64;

    let col_means = m.column_means();
    let mut ss = 0.0;
    for i in 0..n {
        for j in 0..p {
            ss += (m.get(i, j) - col_means[j]).powi(2);
        }
    }
    let sigma = (ss / (p as f64 * (n as f64 - 1.0))).sqrt();
    let std_error =
        sigma * (1.0 / (n1 * p) as f64 + 1.0 / (n2 * p) as f64).sqrt();
    let estimate = mean1 - mean2;
    let z_value = estimate / std_error;
    Ok(WaldResult {
        estimate,
        std_error,
        z_value,
        p_value: stats::two_sided_p(z_value),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipelines::Method;
    use crate::rng;
    use rand_distr::{Distribution, Poisson};

    fn poisson_matrix(n: usize, p: usize, lambda: f64, seed: u64) -> CountMatrix {
        let mut r = rng::stream(seed);
        let pois = Poisson::new(lambda).unwrap();
        let counts: Vec<u64> = (0..n * p).map(|_| pois.sample(&mut r) as u64).collect();
        CountMatrix::from_counts(n, p, counts).unwrap()
    }

    #[test]
    fn average_linkage_finds_obvious_groups() {
        let m = RealMatrix::from_values(
            4,
            1,
            vec![0.0, 1.0, 10.0, 11.0],
        )
        .unwrap();
        let labels = average_linkage_two(&m);
        assert_eq!(labels[0], 0);
        assert_eq!(labels[1], 0);
        assert_eq!(labels[2], 1);
        assert_eq!(labels[3], 1);
    }

    #[test]
    fn separated_populations_reject_under_both_variants() {
        let mut r = rng::stream(401);
        let n = 60;
        let p = 6;
        let mut counts = Vec::with_capacity(n * p);
        for i in 0..n {
            let lam = if i < n / 2 { 2.0 } else { 20.0 };
            let pois = Poisson::new(lam).unwrap();
            for _ in 0..p {
                counts.push(pois.sample(&mut r) as u64);
            }
        }
        let x = CountMatrix::from_counts(n, p, counts).unwrap();
        let cfg = MethodConfig::new(Method::ClusterMeanCountsplit).with_seed(53);
        let naive = cluster_mean_test(&x, &cfg, ClusterTestVariant::Naive).unwrap();
        let split = cluster_mean_test(&x, &cfg, ClusterTestVariant::CountSplit).unwrap();
        assert!(naive.p_value < 1e-6);
        assert!(split.p_value < 1e-6);
        assert!(naive.estimate.abs() > 0.5);
    }

    /// On a pure Poisson null the naive test rejects far too often while the
    /// split test stays near its nominal level.
    #[test]
    fn null_rejection_rates_separate_the_variants() {
        let reps = 200u64;
        let mut tally = |variant| {
            let mut rejected = 0usize;
            let mut done = 0usize;
            for rep in 0..reps {
                let x = poisson_matrix(40, 8, 5.0, rng::derive2(403, 1, rep));
                let cfg = MethodConfig::new(Method::ClusterMeanCountsplit)
                    .with_seed(rng::derive(405, rep));
                match cluster_mean_test(&x, &cfg, variant) {
                    Ok(w) => {
                        done += 1;
                        if w.p_value <= 0.05 {
                            rejected += 1;
                        }
                    }
                    // The 2-cut sometimes isolates one outlier row; those
                    // replicates carry no p-value.
                    Err(Error::DegenerateClusters) => {}
                    Err(e) => panic!("unexpected error {e:?}"),
                }
            }
            assert!(done >= 50, "only {done} usable replicates");
            rejected as f64 / done as f64
        };
        let naive_rate = tally(ClusterTestVariant::Naive);
        let split_rate = tally(ClusterTestVariant::CountSplit);
        assert!(naive_rate > 0.15, "naive rate {naive_rate}");
        assert!(split_rate < 0.12, "split rate {split_rate}");
    }

    #[test]
    fn tiny_inputs_are_rejected() {
        let x = poisson_matrix(3, 2, 4.0, 407);
        let cfg = MethodConfig::new(Method::ClusterMeanNaive);
        assert!(matches!(
            cluster_mean_test(&x, &cfg, ClusterTestVariant::Naive),
            Err(Error::TooFewPoints { need: 4, got: 3 })
        ));
    }

    #[test]
    fn singleton_cluster_is_degenerate() {
        // Three near-identical rows and one extreme outlier: average linkage
        // isolates the outlier, leaving a singleton cluster.
        let counts = vec![
            5, 5, 5, //
            5, 6, 5, //
            6, 5, 5, //
            500, 480, 510,
        ];
        let x = CountMatrix::from_counts(4, 3, counts).unwrap();
        let cfg = MethodConfig::new(Method::ClusterMeanNaive);
        assert!(matches!(
            cluster_mean_test(&x, &cfg, ClusterTestVariant::Naive),
            Err(Error::DegenerateClusters)
        ));
    }

    #[test]
    fn split_variant_is_deterministic_per_seed() {
        let x = poisson_matrix(30, 5, 5.0, 409);
        // Scan for a seed pair where both cuts are non-degenerate.
        let (a, c) = (61..100)
            .find_map(|seed| {
                let cfg = MethodConfig::new(Method::ClusterMeanCountsplit).with_seed(seed);
                let a = cluster_mean_test(&x, &cfg, ClusterTestVariant::CountSplit).ok()?;
                let b = cluster_mean_test(&x, &cfg, ClusterTestVariant::CountSplit).unwrap();
                assert_eq!(a.p_value.to_bits(), b.p_value.to_bits());
                let other = MethodConfig::new(Method::ClusterMeanCountsplit).with_seed(seed + 100);
                let c = cluster_mean_test(&x, &other, ClusterTestVariant::CountSplit).ok()?;
                Some((a, c))
            })
            .expect("some seed with non-degenerate cuts");
        assert_ne!(a.p_value.to_bits(), c.p_value.to_bits());
    }
}

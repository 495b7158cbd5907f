//! Evaluation metrics: coverage, interval length, worst-case subgroup
//! coverage over k-means clusters, Type-I error and power, FDR and power.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{GsiError, Result};
use crate::inference::PredictionInterval;
use crate::seeding;

const KMEANS_MAX_ITER: usize = 100;

/// Fraction of targets inside their intervals.
pub fn marginal_coverage(intervals: &[PredictionInterval], y: &[f64]) -> Result<f64> {
    if intervals.is_empty() {
        return Err(GsiError::Domain("coverage of an empty set".into()));
    }
    if intervals.len() != y.len() {
        return Err(GsiError::Shape(format!("{} intervals but {} targets", intervals.len(), y.len())));
    }
    let hit = intervals.iter().zip(y).filter(|(pi, &v)| pi.contains(v)).count();
    Ok(hit as f64 / y.len() as f64)
}

/// Mean of `2·radius`.
pub fn average_length(intervals: &[PredictionInterval]) -> Result<f64> {
    if intervals.is_empty() {
        return Err(GsiError::Domain("average length of an empty set".into()));
    }
    Ok(intervals.iter().map(PredictionInterval::length).sum::<f64>() / intervals.len() as f64)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid (lowest index on ties).
pub fn nearest_centroid(centroids: &[Vec<f64>], p: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (g, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, p);
        if d < best.1 {
            best = (g, d);
        }
    }
    best.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansFit {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares.
    pub wcss: f64,
    pub iterations: usize,
}

pub fn wcss(points: &[Vec<f64>], centroids: &[Vec<f64>], assignments: &[usize]) -> f64 {
    points.iter().zip(assignments).map(|(p, &g)| sq_dist(p, &centroids[g])).sum()
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> KMeansFit {
    let d = points[0].len();
    let mut assignments: Vec<usize> = points.iter().map(|p| nearest_centroid(&centroids, p)).collect();
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITER {
        iterations += 1;
        let mut sums = vec![vec![0.0; d]; centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for (p, &g) in points.iter().zip(&assignments) {
            counts[g] += 1;
            for (s, v) in sums[g].iter_mut().zip(p) {
                *s += v;
            }
        }
        for (g, c) in centroids.iter_mut().enumerate() {
            // An emptied cluster keeps its previous centroid.
            if counts[g] > 0 {
                *c = sums[g].iter().map(|s| s / counts[g] as f64).collect();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest_centroid(&centroids, p)).collect();
        if next == assignments {
            break;
        }
        assignments = next;
    }
    KMeansFit {
        wcss: wcss(points, &centroids, &assignments),
        centroids,
        assignments,
        iterations,
    }
}

/// Lloyd's algorithm from `restarts` random initializations (distinct data
/// points); keeps the lowest-WCSS run, earliest restart on ties.
pub fn kmeans(points: &[Vec<f64>], g: usize, seed: u64, restarts: usize) -> Result<KMeansFit> {
    if g == 0 || restarts == 0 {
        return Err(GsiError::Config("k-means needs at least one cluster and one restart".into()));
    }
    if g > points.len() {
        return Err(GsiError::Config(format!("{g} clusters requested for {} points", points.len())));
    }
    let d = points[0].len();
    if points.iter().any(|p| p.len() != d) {
        return Err(GsiError::Shape("k-means points differ in dimension".into()));
    }
    let mut best: Option<KMeansFit> = None;
    for r in 0..restarts {
        let mut rng = seeding::rng(seeding::mix(seeding::stage(seed, "kmeans"), r as u64));
        let init = index::sample(&mut rng, points.len(), g).into_iter().map(|i| points[i].clone()).collect();
        let fit = lloyd(points, init);
        if best.as_ref().is_none_or(|b| fit.wcss < b.wcss) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterCoverage {
    pub size: usize,
    /// `None` when no test point falls in the cluster.
    pub coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupReport {
    pub num_groups: usize,
    pub centroids: Vec<Vec<f64>>,
    pub per_cluster: Vec<ClusterCoverage>,
    /// Minimum coverage over clusters with at least one test point.
    pub c_g: f64,
}

/// Clusters `train_x`, assigns test points to the nearest training centroid
/// and reports the lowest per-cluster coverage.
pub fn worst_subgroup_coverage(
    train_x: &[Vec<f64>],
    test_x: &[Vec<f64>],
    intervals: &[PredictionInterval],
    y: &[f64],
    g: usize,
    seed: u64,
    restarts: usize,
) -> Result<SubgroupReport> {
    if train_x.is_empty() {
        return Err(GsiError::Domain("subgroups need training points".into()));
    }
    if test_x.len() != intervals.len() || intervals.len() != y.len() {
        return Err(GsiError::Shape("test points, intervals and targets differ in length".into()));
    }
    if test_x.is_empty() {
        return Err(GsiError::Domain("subgroup coverage of an empty test set".into()));
    }
    let fit = kmeans(train_x, g, seed, restarts)?;
    let mut hits = vec![0usize; g];
    let mut sizes = vec![0usize; g];
    for ((x, pi), &v) in test_x.iter().zip(intervals).zip(y) {
        if x.len() != fit.centroids[0].len() {
            return Err(GsiError::Shape("test point dimension differs from training".into()));
        }
        let k = nearest_centroid(&fit.centroids, x);
        sizes[k] += 1;
        hits[k] += usize::from(pi.contains(v));
    }
    let per_cluster: Vec<ClusterCoverage> = sizes
        .iter()
        .zip(&hits)
        .map(|(&size, &h)| ClusterCoverage {
            size,
            coverage: (size > 0).then(|| h as f64 / size as f64),
        })
        .collect();
    let c_g = per_cluster.iter().filter_map(|c| c.coverage).fold(f64::INFINITY, f64::min);
    Ok(SubgroupReport {
        num_groups: g,
        centroids: fit.centroids,
        per_cluster,
        c_g,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub c_marg: f64,
    pub l_avg: f64,
    pub c_g: f64,
}

/// Rejection rates among label-0 items (Type-I error) and label-1 items (power).
pub fn type1_and_power(rejections: &[bool], labels: &[u8]) -> Result<(f64, f64)> {
    if rejections.len() != labels.len() {
        return Err(GsiError::Shape(format!("{} decisions but {} labels", rejections.len(), labels.len())));
    }
    let rate = |class: u8| -> Result<f64> {
        let (mut n, mut r) = (0usize, 0usize);
        for (&rej, &z) in rejections.iter().zip(labels) {
            if z == class {
                n += 1;
                r += usize::from(rej);
            }
        }
        if n == 0 {
            return Err(GsiError::Metric(format!("no items with label {class}")));
        }
        Ok(r as f64 / n as f64)
    };
    Ok((rate(0)?, rate(1)?))
}

/// `false selections / max(1, |selected|)` and `true selections / max(1, #true)`.
pub fn fdr_and_power(selected: &[usize], is_true: &[bool]) -> Result<(f64, f64)> {
    if let Some(&i) = selected.iter().find(|&&i| i >= is_true.len()) {
        return Err(GsiError::Shape(format!("selected index {i} beyond {} labels", is_true.len())));
    }
    let true_sel = selected.iter().filter(|&&i| is_true[i]).count();
    let false_sel = selected.len() - true_sel;
    let n_true = is_true.iter().filter(|&&t| t).count();
    Ok((
        false_sel as f64 / selected.len().max(1) as f64,
        true_sel as f64 / n_true.max(1) as f64,
    ))
}

/// `min(1, 2·exp(−2mε²))`.
pub fn dkw_bound(m: usize, eps: f64) -> Result<f64> {
    if m == 0 || !(eps > 0.0) {
        return Err(GsiError::Domain(format!("DKW bound needs m >= 1 and eps > 0, got ({m}, {eps})")));
    }
    Ok((2.0 * (-2.0 * m as f64 * eps * eps).exp()).min(1.0))
}

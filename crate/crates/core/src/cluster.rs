//! Clustering of client weight vectors and the adjusted Rand index.
//!
//! All algorithms use Euclidean distance over the raw flattened weights and
//! return a complete assignment compacted to `[0, J)` in order of first
//! appearance.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Default DBSCAN neighbourhood size (a core point needs this many points,
/// itself included, within `eps`).
pub const DEFAULT_MIN_SAMPLES: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterLabels {
    pub labels: Vec<usize>,
    pub cluster_count: usize,
}

impl ClusterLabels {
    /// Renumbers arbitrary labels to `[0, J)` by first appearance.
    pub fn compact(raw: &[usize]) -> Self {
        let mut map = std::collections::HashMap::new();
        let labels = raw
            .iter()
            .map(|&l| {
                let next = map.len();
                *map.entry(l).or_insert(next)
            })
            .collect();
        ClusterLabels {
            labels,
            cluster_count: map.len(),
        }
    }

    /// Member indices of each cluster, in ascending order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.cluster_count];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    #[default]
    Average,
    Complete,
    Single,
}

/// A clustering algorithm with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "lowercase")]
pub enum Clustering {
    Kmeans { k: usize, max_iters: usize },
    Agglomerative { k: usize, linkage: Linkage },
    /// `eps = None` selects eps with [`knee_eps`].
    Dbscan { eps: Option<f64>, min_samples: usize },
}

impl Clustering {
    pub fn cluster<P: AsRef<[f64]>>(&self, points: &[P], seed: u64) -> Result<ClusterLabels> {
        match *self {
            Clustering::Kmeans { k, max_iters } => Ok(kmeans(points, k, seed, max_iters)?.labels),
            Clustering::Agglomerative { k, linkage } => agglomerative(points, k, linkage),
            Clustering::Dbscan { eps, min_samples } => {
                let eps = match eps {
                    Some(e) => e,
                    None => knee_eps(points, min_samples)?,
                };
                dbscan(points, eps, min_samples)
            }
        }
    }
}

pub(crate) fn sq_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_points<P: AsRef<[f64]>>(points: &[P]) -> Result<usize> {
    let first = points.first().ok_or(Error::Empty("points"))?;
    let dim = first.as_ref().len();
    if let Some(p) = points.iter().find(|p| p.as_ref().len() != dim) {
        return Err(Error::shape(format!("{dim} coordinates"), p.as_ref().len()));
    }
    Ok(dim)
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "cluster count {k} must be in [1, {n}]"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct KmeansFit {
    pub labels: ClusterLabels,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances to assigned centroids after each assignment step.
    pub objective: Vec<f64>,
    pub iterations: usize,
}

fn kmeans_plus_plus<P: AsRef<[f64]>>(points: &[P], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].as_ref().to_vec()];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| sq_euclidean(p.as_ref(), &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = points[pick].as_ref().to_vec();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_euclidean(p.as_ref(), &c));
        }
        centroids.push(c);
    }
    centroids
}

fn assign<P: AsRef<[f64]>>(points: &[P], centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut objective = 0.0;
    let labels = points
        .iter()
        .map(|p| {
            let (best, d) = centroids
                .iter()
                .enumerate()
                .map(|(j, c)| (j, sq_euclidean(p.as_ref(), c)))
                .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
            objective += d;
            best
        })
        .collect();
    (labels, objective)
}

/// Lloyd's algorithm with kmeans++ seeding.
///
/// Stops when assignments repeat or after `max_iters` assignment steps. A
/// centroid left without members is moved onto the point farthest from its
/// own centroid.
pub fn kmeans<P: AsRef<[f64]>>(points: &[P], k: usize, seed: u64, max_iters: usize) -> Result<KmeansFit> {
    let dim = check_points(points)?;
    check_k(k, points.len())?;
    let mut rng = rng::rng_for(seed, &[rng::TAG_CLUSTER]);
    let mut centroids = kmeans_plus_plus(points, k, &mut rng);
    let (mut labels, first_obj) = assign(points, &centroids);
    let mut objective = vec![first_obj];
    let mut iterations = 1;

    while iterations < max_iters.max(1) {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(p.as_ref()) {
                *s += x;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                let far = (0..points.len())
                    .map(|i| (i, sq_euclidean(points[i].as_ref(), &centroids[labels[i]])))
                    .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc })
                    .0;
                centroids[j] = points[far].as_ref().to_vec();
            }
        }
        let (next, obj) = assign(points, &centroids);
        objective.push(obj);
        iterations += 1;
        if next == labels {
            break;
        }
        labels = next;
    }
    Ok(KmeansFit {
        labels: ClusterLabels::compact(&labels),
        centroids,
        objective,
        iterations,
    })
}

/// Bottom-up merging until `k` clusters remain. Ties in merge distance go to
/// the pair with the lowest indices.
pub fn agglomerative<P: AsRef<[f64]>>(points: &[P], k: usize, linkage: Linkage) -> Result<ClusterLabels> {
    check_points(points)?;
    let n = points.len();
    check_k(k, n)?;
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = sq_euclidean(points[i].as_ref(), points[j].as_ref()).sqrt();
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    // Cluster `i` is represented by its lowest member index.
    let mut size = vec![1usize; n];
    let mut active: Vec<bool> = vec![true; n];
    let mut owner: Vec<usize> = (0..n).collect();
    for _ in 0..n - k {
        let mut best = (f64::INFINITY, 0, 0);
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in i + 1..n {
                if active[j] && dist[i][j] < best.0 {
                    best = (dist[i][j], i, j);
                }
            }
        }
        let (_, a, b) = best;
        for m in 0..n {
            if !active[m] || m == a || m == b {
                continue;
            }
            let merged = match linkage {
                Linkage::Single => dist[a][m].min(dist[b][m]),
                Linkage::Complete => dist[a][m].max(dist[b][m]),
                Linkage::Average => {
                    (size[a] as f64 * dist[a][m] + size[b] as f64 * dist[b][m])
                        / (size[a] + size[b]) as f64
                }
            };
            dist[a][m] = merged;
            dist[m][a] = merged;
        }
        size[a] += size[b];
        active[b] = false;
        for o in owner.iter_mut() {
            if *o == b {
                *o = a;
            }
        }
    }
    Ok(ClusterLabels::compact(&owner))
}

/// Chooses eps from the ascending curve of each point's mean distance to its
/// `min_samples` nearest neighbours, at the point of maximum curvature.
///
/// The knee is the point lying farthest below the chord from the origin to
/// the last point of the curve (both axes scaled to `[0, 1]`). With no
/// outliers the curve is flat and the knee sits at its top; when a few points
/// sit far from everything else the knee is the last value before the rise.
pub fn knee_eps<P: AsRef<[f64]>>(points: &[P], min_samples: usize) -> Result<f64> {
    check_points(points)?;
    let n = points.len();
    if n == 1 {
        return Ok(1.0);
    }
    let neighbours = min_samples.clamp(1, n - 1);
    let mut means: Vec<f64> = (0..n)
        .map(|i| {
            let mut d: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| sq_euclidean(points[i].as_ref(), points[j].as_ref()).sqrt())
                .collect();
            d.sort_by(f64::total_cmp);
            d[..neighbours].iter().sum::<f64>() / neighbours as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let top = means[n - 1];
    if top <= 0.0 {
        // Coincident points: any positive eps groups them.
        return Ok(1.0);
    }
    let knee = (0..n)
        .map(|i| (i, (i + 1) as f64 / n as f64 - means[i] / top))
        .fold((n - 1, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc })
        .0;
    Ok(if means[knee] > 0.0 {
        means[knee]
    } else {
        means.iter().copied().find(|&m| m > 0.0).unwrap_or(top)
    })
}

/// Density clustering. A point is core when at least `min_samples` points
/// (itself included) lie within `eps`. Noise is then attached to the cluster
/// of its nearest clustered point; if nothing clustered, every point is its
/// own cluster.
pub fn dbscan<P: AsRef<[f64]>>(points: &[P], eps: f64, min_samples: usize) -> Result<ClusterLabels> {
    check_points(points)?;
    if !(eps > 0.0) || min_samples == 0 {
        return Err(Error::InvalidArgument(format!(
            "dbscan needs eps > 0 and min_samples >= 1 (got {eps}, {min_samples})"
        )));
    }
    let n = points.len();
    let dist = |i: usize, j: usize| sq_euclidean(points[i].as_ref(), points[j].as_ref()).sqrt();
    let neighbourhoods: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| dist(i, j) <= eps).collect())
        .collect();
    let core: Vec<bool> = neighbourhoods.iter().map(|nb| nb.len() >= min_samples).collect();

    let mut label: Vec<Option<usize>> = vec![None; n];
    let mut next = 0;
    for start in 0..n {
        if !core[start] || label[start].is_some() {
            continue;
        }
        label[start] = Some(next);
        let mut frontier = vec![start];
        while let Some(p) = frontier.pop() {
            for &q in &neighbourhoods[p] {
                if label[q].is_none() {
                    label[q] = Some(next);
                    if core[q] {
                        frontier.push(q);
                    }
                }
            }
        }
        next += 1;
    }

    let clustered: Vec<usize> = (0..n).filter(|&i| label[i].is_some()).collect();
    let raw: Vec<usize> = if clustered.is_empty() {
        (0..n).collect()
    } else {
        (0..n)
            .map(|i| {
                label[i].unwrap_or_else(|| {
                    let nearest = clustered
                        .iter()
                        .copied()
                        .map(|j| (j, dist(i, j)))
                        .fold((clustered[0], f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc })
                        .0;
                    label[nearest].expect("clustered point")
                })
            })
            .collect()
    };
    Ok(ClusterLabels::compact(&raw))
}

fn choose2(x: u64) -> f64 {
    (x * x.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index via the contingency table. Degenerate tables where
/// the index equals its maximum (e.g. both labelings a single cluster) score 1.
pub fn ari(labels_a: &[usize], labels_b: &[usize]) -> Result<f64> {
    if labels_a.len() != labels_b.len() {
        return Err(Error::shape(
            format!("{} labels", labels_a.len()),
            labels_b.len(),
        ));
    }
    if labels_a.len() < 2 {
        return Err(Error::InvalidArgument("ari needs at least two labels".into()));
    }
    let a = ClusterLabels::compact(labels_a);
    let b = ClusterLabels::compact(labels_b);
    let mut table = vec![vec![0u64; b.cluster_count]; a.cluster_count];
    for (&x, &y) in a.labels.iter().zip(&b.labels) {
        table[x][y] += 1;
    }
    let index: f64 = table.iter().flatten().map(|&c| choose2(c)).sum();
    let rows: f64 = table.iter().map(|r| choose2(r.iter().sum())).sum();
    let cols: f64 = (0..b.cluster_count)
        .map(|j| choose2(table.iter().map(|r| r[j]).sum()))
        .sum();
    let total = choose2(labels_a.len() as u64);
    let expected = rows * cols / total;
    let max = (rows + cols) / 2.0;
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_distr::{Distribution, Normal};

    /// `k` blobs of `per` points, centres `spread` apart along random axes.
    fn blobs(k: usize, per: usize, dim: usize, spread: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = rng::rng_for(seed, &[42]);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for c in 0..k {
            let centre: Vec<f64> = (0..dim).map(|d| if d == c { spread } else { 0.0 }).collect();
            for _ in 0..per {
                pts.push(centre.iter().map(|m| m + noise.sample(&mut rng)).collect());
                truth.push(c);
            }
        }
        (pts, truth)
    }

    #[test]
    fn compaction_orders_by_first_appearance() {
        let c = ClusterLabels::compact(&[7, 7, 2, 9, 2]);
        assert_eq!(c.labels, vec![0, 0, 1, 2, 1]);
        assert_eq!(c.cluster_count, 3);
        assert_eq!(c.members(), vec![vec![0, 1], vec![2, 4], vec![3]]);
    }

    #[test]
    fn kmeans_single_cluster() {
        let (pts, _) = blobs(3, 4, 5, 20.0, 1);
        let fit = kmeans(&pts, 1, 0, 50).unwrap();
        assert!(fit.labels.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn kmeans_recovers_two_blobs() {
        let (pts, truth) = blobs(2, 6, 8, 30.0, 2);
        let fit = kmeans(&pts, 2, 5, 100).unwrap();
        assert_eq!(ari(&fit.labels.labels, &truth).unwrap(), 1.0);
    }

    #[test]
    fn kmeans_terminates_on_identical_points() {
        let pts = vec![vec![1.0, 2.0]; 6];
        let fit = kmeans(&pts, 2, 3, 1000).unwrap();
        assert!(fit.iterations < 1000);
        assert_eq!(fit.labels.cluster_count, 1);
    }

    #[test]
    fn kmeans_rejects_too_many_clusters() {
        let pts = vec![vec![0.0], vec![1.0]];
        assert!(kmeans(&pts, 3, 0, 10).is_err());
        assert!(kmeans(&pts, 0, 0, 10).is_err());
        assert!(kmeans::<Vec<f64>>(&[], 1, 0, 10).is_err());
    }

    #[test]
    fn kmeans_objective_never_increases() {
        for seed in 0..30 {
            let (pts, _) = blobs(4, 5, 6, 3.0, seed);
            let fit = kmeans(&pts, 4, seed, 100).unwrap();
            for w in fit.objective.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "seed {seed}: {:?}", fit.objective);
            }
        }
    }

    #[test]
    fn agglomerative_each_point_alone() {
        let (pts, _) = blobs(2, 3, 3, 10.0, 0);
        let labels = agglomerative(&pts, 6, Linkage::Average).unwrap();
        assert_eq!(labels.labels, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn agglomerative_merges_nearest_pair_first() {
        let pts = vec![vec![0.0], vec![1.0], vec![10.0]];
        for linkage in [Linkage::Average, Linkage::Complete, Linkage::Single] {
            let labels = agglomerative(&pts, 2, linkage).unwrap();
            assert_eq!(labels.labels, vec![0, 0, 1]);
        }
    }

    #[test]
    fn agglomerative_tie_goes_to_lowest_pair() {
        let pts = vec![vec![0.0], vec![1.0], vec![2.0]];
        assert_eq!(agglomerative(&pts, 2, Linkage::Single).unwrap().labels, vec![0, 0, 1]);
    }

    #[test]
    fn agglomerative_recovers_blobs() {
        let (pts, truth) = blobs(2, 5, 4, 25.0, 3);
        for linkage in [Linkage::Average, Linkage::Complete, Linkage::Single] {
            let labels = agglomerative(&pts, 2, linkage).unwrap();
            assert_eq!(ari(&labels.labels, &truth).unwrap(), 1.0);
        }
        assert!(agglomerative(&pts, 11, Linkage::Average).is_err());
    }

    #[test]
    fn dbscan_min_samples_one_has_no_noise() {
        let pts = vec![vec![0.0], vec![0.5], vec![5.0]];
        let labels = dbscan(&pts, 1.0, 1).unwrap();
        assert_eq!(labels.labels, vec![0, 0, 1]);
    }

    #[test]
    fn dbscan_separates_tight_blobs() {
        let (pts, truth) = blobs(2, 6, 5, 40.0, 4);
        let labels = dbscan(&pts, 8.0, DEFAULT_MIN_SAMPLES).unwrap();
        assert_eq!(labels.cluster_count, 2);
        assert_eq!(ari(&labels.labels, &truth).unwrap(), 1.0);
    }

    #[test]
    fn dbscan_noise_joins_nearest_cluster() {
        let pts = vec![vec![0.0], vec![0.1], vec![0.2], vec![3.0], vec![10.0], vec![10.1], vec![10.2]];
        let labels = dbscan(&pts, 0.5, 3).unwrap();
        assert_eq!(labels.labels, vec![0, 0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn dbscan_all_noise_becomes_singletons() {
        let pts = vec![vec![0.0], vec![5.0], vec![10.0]];
        let labels = dbscan(&pts, 1.0, 3).unwrap();
        assert_eq!(labels.cluster_count, 3);
        assert!(dbscan(&pts, 0.0, 3).is_err());
    }

    #[test]
    fn knee_eps_recovers_blobs() {
        for seed in 0..50 {
            let (pts, truth) = blobs(3, 6, 30, 60.0, seed);
            let labels = Clustering::Dbscan { eps: None, min_samples: 3 }.cluster(&pts, 0).unwrap();
            assert_eq!(ari(&labels.labels, &truth).unwrap(), 1.0, "seed {seed}");
        }
        assert!(knee_eps(&vec![vec![1.0]; 4], 3).unwrap() > 0.0);
    }

    #[test]
    fn knee_eps_stops_before_outliers() {
        // Two tight groups of five plus two isolated points.
        let mut pts: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 * 0.1, 0.0]).collect();
        pts.extend((0..5).map(|i| vec![50.0 + i as f64 * 0.1, 0.0]));
        pts.push(vec![0.0, 100.0]);
        pts.push(vec![0.0, -100.0]);
        let eps = knee_eps(&pts, 3).unwrap();
        assert!(eps < 1.0, "{eps}");
    }

    /// Pair-counting definition of the ARI, independent of the contingency route.
    fn ari_pairs(a: &[usize], b: &[usize]) -> f64 {
        let (mut ss, mut sd, mut ds, mut dd) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..a.len() {
            for j in i + 1..a.len() {
                match (a[i] == a[j], b[i] == b[j]) {
                    (true, true) => ss += 1.0,
                    (true, false) => sd += 1.0,
                    (false, true) => ds += 1.0,
                    (false, false) => dd += 1.0,
                }
            }
        }
        let denom = (ss + sd) * (sd + dd) + (ss + ds) * (ds + dd);
        if denom == 0.0 {
            1.0
        } else {
            2.0 * (ss * dd - sd * ds) / denom
        }
    }

    #[test]
    fn ari_hand_cases() {
        assert_eq!(ari(&[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(ari(&[0, 0, 1, 1], &[5, 5, 2, 2]).unwrap(), 1.0);
        // Pairs: (0,1) same/diff, (2,3) same/diff, (0,2) diff/same, (1,3) diff/same,
        // (0,3) diff/diff, (1,2) diff/diff -> 2*(0*2 - 2*2) / (2*4 + 2*4) = -0.5
        let v = ari(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap();
        assert_eq!(ari_pairs(&[0, 0, 1, 1], &[0, 1, 0, 1]), -0.5);
        assert!((v + 0.5).abs() < 1e-12);
        assert_eq!(ari(&[0, 0, 0], &[1, 1, 1]).unwrap(), 1.0);
        assert_eq!(ari(&[0, 0, 1, 1], &[0, 0, 0, 0]).unwrap(), 0.0);
        assert!(ari(&[0, 1], &[0]).is_err());
        assert!(ari(&[0], &[0]).is_err());
    }

    proptest! {
        #[test]
        fn ari_matches_pair_counting(
            pairs in prop::collection::vec((0usize..4, 0usize..4), 2..12)
        ) {
            let (a, b): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let fast = ari(&a, &b).unwrap();
            prop_assert!((fast - ari_pairs(&a, &b)).abs() <= 1e-12);
            prop_assert!((fast - ari(&b, &a).unwrap()).abs() <= 1e-15);
            prop_assert_eq!(ari(&a, &a).unwrap(), 1.0);
        }

        #[test]
        fn clusterings_are_complete(seed in 0u64..200, k in 1usize..4) {
            let (pts, _) = blobs(3, 3, 3, 5.0, seed);
            for labels in [
                kmeans(&pts, k, seed, 100).unwrap().labels,
                agglomerative(&pts, k, Linkage::Average).unwrap(),
                Clustering::Dbscan { eps: None, min_samples: 3 }.cluster(&pts, 0).unwrap(),
            ] {
                prop_assert_eq!(labels.labels.len(), pts.len());
                let mut seen = vec![false; labels.cluster_count];
                for &l in &labels.labels {
                    prop_assert!(l < labels.cluster_count);
                    seen[l] = true;
                }
                prop_assert!(seen.iter().all(|&s| s));
            }
        }
    }
}

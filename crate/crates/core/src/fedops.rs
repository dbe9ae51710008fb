//! Weight-space distances and FedAvg.

use serde::{Deserialize, Serialize};

use crate::cluster::ClusterLabels;
use crate::error::{Error, Result};
use crate::model::WeightVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Manhattan,
    Euclidean,
    Chebyshev,
}

impl Metric {
    /// Norm of `a - b` over raw slices of equal length.
    pub fn between(self, a: &[f64], b: &[f64]) -> f64 {
        let diffs = a.iter().zip(b).map(|(x, y)| (x - y).abs());
        match self {
            Metric::Manhattan => diffs.sum(),
            Metric::Euclidean => diffs.map(|d| d * d).sum::<f64>().sqrt(),
            Metric::Chebyshev => diffs.fold(0.0, f64::max),
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "manhattan" => Ok(Metric::Manhattan),
            "euclidean" => Ok(Metric::Euclidean),
            "chebyshev" => Ok(Metric::Chebyshev),
            other => Err(Error::InvalidArgument(format!("unknown distance `{other}`"))),
        }
    }
}

pub fn distance(a: &WeightVector, b: &WeightVector, metric: Metric) -> Result<f64> {
    a.ensure_same_shape(b)?;
    Ok(metric.between(a.values(), b.values()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientModelUpdate {
    pub client_id: usize,
    pub weights: WeightVector,
    pub sample_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedClusterModel {
    pub cluster_id: usize,
    pub weights: WeightVector,
    pub total_samples: usize,
    pub member_client_ids: Vec<usize>,
}

/// Sample-weighted coordinate-wise mean of `updates`.
///
/// Updates are summed in client-id order, as offsets from the lowest-id
/// member, so the result does not depend on input order and identical inputs
/// come back bit-identical. Each coordinate is clamped to the members' range.
pub fn fedavg(cluster_id: usize, updates: &[ClientModelUpdate]) -> Result<AggregatedClusterModel> {
    if updates.is_empty() {
        return Err(Error::Empty("client updates"));
    }
    let mut order: Vec<&ClientModelUpdate> = updates.iter().collect();
    order.sort_by_key(|u| u.client_id);
    let base = &order[0].weights;
    for u in &order {
        base.ensure_same_shape(&u.weights)?;
        if u.sample_count == 0 {
            return Err(Error::InvalidArgument(format!(
                "client {} reported zero samples",
                u.client_id
            )));
        }
    }
    let total: usize = order.iter().map(|u| u.sample_count).sum();
    let mut values = base.values().to_vec();
    for u in &order[1..] {
        let share = u.sample_count as f64 / total as f64;
        for (v, (x, b)) in values.iter_mut().zip(u.weights.values().iter().zip(base.values())) {
            *v += share * (x - b);
        }
    }
    for (i, v) in values.iter_mut().enumerate() {
        let (lo, hi) = order.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), u| {
            let x = u.weights.values()[i];
            (lo.min(x), hi.max(x))
        });
        *v = v.clamp(lo, hi);
    }
    Ok(AggregatedClusterModel {
        cluster_id,
        weights: WeightVector::new(base.shape().clone(), values)?,
        total_samples: total,
        member_client_ids: order.iter().map(|u| u.client_id).collect(),
    })
}

/// One FedAvg model per cluster, in ascending cluster id. `labels[i]` is the
/// cluster of `updates[i]`.
pub fn aggregate_clusters(
    updates: &[ClientModelUpdate],
    labels: &ClusterLabels,
) -> Result<Vec<AggregatedClusterModel>> {
    if updates.len() != labels.labels.len() {
        return Err(Error::shape(
            format!("{} cluster labels", updates.len()),
            labels.labels.len(),
        ));
    }
    labels
        .members()
        .iter()
        .enumerate()
        .map(|(cluster_id, members)| {
            let group: Vec<ClientModelUpdate> = members.iter().map(|&i| updates[i].clone()).collect();
            fedavg(cluster_id, &group)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LayerShape;
    use proptest::prelude::*;

    /// Shape with exactly `n` parameters: a single 1 -> 1 layer has 2, so use
    /// input `n - 1`, no hidden layers, one output.
    fn wv(values: &[f64]) -> WeightVector {
        let shape = LayerShape::new(values.len() - 1, vec![], 1).unwrap();
        WeightVector::new(shape, values.to_vec()).unwrap()
    }

    fn update(id: usize, values: &[f64], n: usize) -> ClientModelUpdate {
        ClientModelUpdate {
            client_id: id,
            weights: wv(values),
            sample_count: n,
        }
    }

    #[test]
    fn norm_arithmetic() {
        assert_eq!(Metric::Manhattan.between(&[0.0, 0.0, 0.0], &[1.0, -2.0, 3.0]), 6.0);
        assert_eq!(Metric::Euclidean.between(&[0.0, 0.0], &[3.0, 4.0]), 5.0);
        assert_eq!(Metric::Chebyshev.between(&[0.0, 0.0], &[3.0, -4.0]), 4.0);
        let a = wv(&[1.0, 2.0, 3.0]);
        for m in [Metric::Manhattan, Metric::Euclidean, Metric::Chebyshev] {
            assert_eq!(distance(&a, &a, m).unwrap(), 0.0);
        }
        assert!(distance(&a, &wv(&[1.0, 2.0]), Metric::Manhattan).is_err());
        assert_eq!("chebyshev".parse::<Metric>().unwrap(), Metric::Chebyshev);
        assert!("cosine".parse::<Metric>().is_err());
    }

    #[test]
    fn fedavg_examples() {
        let same = fedavg(0, &[update(0, &[0.3, -1.7], 5), update(1, &[0.3, -1.7], 11)]).unwrap();
        assert_eq!(same.weights.values(), &[0.3, -1.7]);
        assert_eq!(same.total_samples, 16);

        let mid = fedavg(0, &[update(0, &[0.0, 2.0], 1), update(1, &[2.0, 0.0], 1)]).unwrap();
        assert_eq!(mid.weights.values(), &[1.0, 1.0]);

        let weighted = fedavg(
            3,
            &[
                ClientModelUpdate { client_id: 0, weights: wv(&[0.0, 0.0]), sample_count: 1 },
                ClientModelUpdate { client_id: 1, weights: wv(&[3.0, 0.0]), sample_count: 2 },
            ],
        )
        .unwrap();
        assert_eq!(weighted.weights.values()[0], 2.0);
        assert_eq!(weighted.cluster_id, 3);
        assert_eq!(weighted.member_client_ids, vec![0, 1]);
    }

    #[test]
    fn fedavg_errors() {
        assert!(fedavg(0, &[]).is_err());
        assert!(fedavg(0, &[update(0, &[1.0, 2.0], 1), update(1, &[1.0, 2.0, 3.0], 1)]).is_err());
        assert!(fedavg(0, &[update(0, &[1.0, 2.0], 0)]).is_err());
    }

    #[test]
    fn clusters_aggregate_in_id_order() {
        let updates = vec![
            update(0, &[0.0, 0.0], 1),
            update(1, &[10.0, 10.0], 1),
            update(2, &[2.0, 2.0], 1),
        ];
        let labels = ClusterLabels::compact(&[0, 1, 0]);
        let agg = aggregate_clusters(&updates, &labels).unwrap();
        assert_eq!(agg.len(), 2);
        assert_eq!(agg[0].weights.values(), &[1.0, 1.0]);
        assert_eq!(agg[0].member_client_ids, vec![0, 2]);
        assert_eq!(agg[1].weights.values(), &[10.0, 10.0]);
    }

    fn vectors(n: usize) -> impl proptest::strategy::Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 4), n)
    }

    proptest! {
        #[test]
        fn triangle_inequality_and_symmetry(vs in vectors(3)) {
            for m in [Metric::Manhattan, Metric::Euclidean, Metric::Chebyshev] {
                let (a, b, c) = (&vs[0], &vs[1], &vs[2]);
                prop_assert!(m.between(a, c) <= m.between(a, b) + m.between(b, c) + 1e-12);
                prop_assert_eq!(m.between(a, b), m.between(b, a));
                prop_assert_eq!(m.between(a, b) == 0.0, a == b);
            }
        }

        #[test]
        fn fedavg_bounded_and_order_free(
            vs in vectors(4),
            counts in prop::collection::vec(1usize..500, 4),
        ) {
            let updates: Vec<_> = vs.iter().zip(&counts).enumerate()
                .map(|(i, (v, &n))| update(i, v, n)).collect();
            let forward = fedavg(0, &updates).unwrap();
            let mut reversed = updates.clone();
            reversed.reverse();
            prop_assert_eq!(&forward, &fedavg(0, &reversed).unwrap());
            for i in 0..4 {
                let lo = vs.iter().map(|v| v[i]).fold(f64::INFINITY, f64::min);
                let hi = vs.iter().map(|v| v[i]).fold(f64::NEG_INFINITY, f64::max);
                let x = forward.weights.values()[i];
                prop_assert!(lo <= x && x <= hi);
            }
            prop_assert_eq!(forward.total_samples, counts.iter().sum::<usize>());
        }
    }
}

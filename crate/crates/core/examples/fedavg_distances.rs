//! Weight-space distances and sample-weighted FedAvg over two clusters.

use cmfl::cluster::ClusterLabels;
use cmfl::fedops::{aggregate_clusters, distance, ClientModelUpdate, Metric};
use cmfl::model::{init_weights, LayerShape};

fn main() -> cmfl::Result<()> {
    let shape = LayerShape::new(2, vec![4], 3)?;
    let updates: Vec<ClientModelUpdate> = (0..4)
        .map(|i| {
            Ok(ClientModelUpdate {
                client_id: i,
                weights: init_weights(&shape, i as u64 % 2)?,
                sample_count: 100 + 50 * i,
            })
        })
        .collect::<cmfl::Result<_>>()?;

    for metric in [Metric::Manhattan, Metric::Euclidean, Metric::Chebyshev] {
        println!(
            "{metric:?}: d(0,1) = {:.3}, d(0,2) = {:.3}",
            distance(&updates[0].weights, &updates[1].weights, metric)?,
            distance(&updates[0].weights, &updates[2].weights, metric)?
        );
    }

    let labels = ClusterLabels::compact(&[0, 1, 0, 1]);
    for agg in aggregate_clusters(&updates, &labels)? {
        println!(
            "cluster {}: members {:?}, {} samples",
            agg.cluster_id, agg.member_client_ids, agg.total_samples
        );
    }
    Ok(())
}

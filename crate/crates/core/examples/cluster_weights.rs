//! Cluster well separated blobs with each algorithm and score the result
//! with the adjusted Rand index.

use cmfl::cluster::{ari, knee_eps, Clustering, Linkage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> cmfl::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (k, per, dim) = (4, 6, 40);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut points = Vec::new();
    let mut truth = Vec::new();
    for blob in 0..k {
        let centre: Vec<f64> = (0..dim).map(|_| rng.random_range(-60.0..60.0)).collect();
        for _ in 0..per {
            points.push(centre.iter().map(|c| c + noise.sample(&mut rng)).collect::<Vec<f64>>());
            truth.push(blob);
        }
    }

    println!("auto eps from the k-distance knee: {:.3}", knee_eps(&points, 3)?);
    let algorithms = [
        Clustering::Kmeans { k, max_iters: 100 },
        Clustering::Agglomerative { k, linkage: Linkage::Average },
        Clustering::Dbscan { eps: None, min_samples: 3 },
    ];
    for alg in algorithms {
        let labels = alg.cluster(&points, 9)?;
        println!("{alg:?}: {} clusters, ARI {:.3}", labels.cluster_count, ari(&labels.labels, &truth)?);
    }
    Ok(())
}

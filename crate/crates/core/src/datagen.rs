//! Synthetic concepts and concept-drifting client streams.
//!
//! Each concept owns a disjoint block of global class ids and draws its inputs
//! from one isotropic Gaussian per class. Class means are well separated
//! *within* a concept, while different concepts share the same input region,
//! so which concept a sample came from is only recoverable from its labels.
//!
//! Each concept's training split is cut into one non-overlapping chunk per
//! client. Every round a client picks a concept uniformly at random and reads
//! the next cyclic window of its local chunk for that concept.

use std::io::Write;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Batch;
use crate::rng;

/// Default number of samples in a client's sliding window.
pub const DEFAULT_WINDOW: usize = 320;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptSpec {
    pub concept_id: usize,
    pub class_ids: Vec<usize>,
    /// One mean per entry of `class_ids`.
    pub means: Vec<Vec<f64>>,
    pub std: f64,
    pub samples_per_class: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptDataset {
    pub spec: ConceptSpec,
    pub train: Batch,
    pub test: Batch,
    pub validation: Batch,
}

impl ConceptDataset {
    pub fn concept_id(&self) -> usize {
        self.spec.concept_id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConceptParams {
    pub k: usize,
    pub classes_per_concept: usize,
    pub input_dim: usize,
    /// Minimum distance between class means of one concept, in units of `std`.
    pub separation: f64,
    pub samples_per_class: usize,
    pub std: f64,
}

impl Default for ConceptParams {
    fn default() -> Self {
        ConceptParams {
            k: 5,
            classes_per_concept: 3,
            input_dim: 2,
            separation: 4.0,
            samples_per_class: 3000,
            std: 1.0,
        }
    }
}

impl ConceptParams {
    pub fn total_classes(&self) -> usize {
        self.k * self.classes_per_concept
    }
}

/// `(train, test, validation)` sizes for `n` samples under a 7:2:1 split.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = (n as f64 * 0.7).round() as usize;
    let test = ((n as f64 * 0.2).round() as usize).min(n - train);
    (train, test, n - train - test)
}

fn sample_means(
    params: &ConceptParams,
    rng: &mut impl Rng,
) -> Vec<Vec<f64>> {
    let min_dist = params.separation * params.std;
    let mut half_width = min_dist;
    loop {
        let mut means: Vec<Vec<f64>> = Vec::with_capacity(params.classes_per_concept);
        let mut attempts = 0;
        while means.len() < params.classes_per_concept && attempts < 10_000 {
            attempts += 1;
            let candidate: Vec<f64> = (0..params.input_dim)
                .map(|_| rng.random_range(-half_width..=half_width))
                .collect();
            let far_enough = means.iter().all(|m| {
                let d2: f64 = m.iter().zip(&candidate).map(|(a, b)| (a - b).powi(2)).sum();
                d2.sqrt() >= min_dist
            });
            if far_enough {
                means.push(candidate);
            }
        }
        if means.len() == params.classes_per_concept {
            return means;
        }
        half_width *= 1.25;
    }
}

fn to_batch(rows: Vec<f64>, labels: Vec<usize>, dim: usize) -> Result<Batch> {
    let n = labels.len();
    Batch::new(
        Array2::from_shape_vec((n, dim), rows).expect("row count matches labels"),
        labels,
    )
}

/// Builds `k` concept datasets with disjoint label blocks
/// `[c * classes_per_concept, (c + 1) * classes_per_concept)`.
pub fn make_concepts(params: &ConceptParams, seed: u64) -> Result<Vec<ConceptDataset>> {
    if params.k == 0 || params.classes_per_concept == 0 || params.input_dim == 0 {
        return Err(Error::InvalidArgument(
            "k, classes_per_concept and input_dim must be positive".into(),
        ));
    }
    if !(params.separation > 0.0) || !(params.std > 0.0) {
        return Err(Error::InvalidArgument(
            "separation and std must be positive".into(),
        ));
    }
    let (n_train, n_test, n_val) = split_sizes(params.samples_per_class);
    if n_train == 0 || n_test == 0 || n_val == 0 {
        return Err(Error::InvalidArgument(format!(
            "samples_per_class {} too small for a 7:2:1 split",
            params.samples_per_class
        )));
    }
    let dim = params.input_dim;
    let noise = Normal::new(0.0, params.std).expect("positive std");

    (0..params.k)
        .map(|concept_id| {
            let mut rng = rng::rng_for(seed, &[rng::TAG_DATA, concept_id as u64]);
            let means = sample_means(params, &mut rng);
            let class_ids: Vec<usize> = (0..params.classes_per_concept)
                .map(|j| concept_id * params.classes_per_concept + j)
                .collect();

            let mut splits = [(vec![], vec![]), (vec![], vec![]), (vec![], vec![])];
            for (mean, &class) in means.iter().zip(&class_ids) {
                for i in 0..params.samples_per_class {
                    let part = if i < n_train {
                        0
                    } else if i < n_train + n_test {
                        1
                    } else {
                        2
                    };
                    let (rows, labels) = &mut splits[part];
                    rows.extend(mean.iter().map(|m| m + noise.sample(&mut rng)));
                    labels.push(class);
                }
            }
            // Interleave classes so any contiguous chunk mixes them.
            let (train_rows, train_labels) = std::mem::take(&mut splits[0]);
            let train = to_batch(train_rows, train_labels, dim)?;
            let mut order: Vec<usize> = (0..train.len()).collect();
            order.shuffle(&mut rng);
            let train = train.select(&order);
            let [_, (test_rows, test_labels), (val_rows, val_labels)] = splits;

            Ok(ConceptDataset {
                spec: ConceptSpec {
                    concept_id,
                    class_ids,
                    means,
                    std: params.std,
                    samples_per_class: params.samples_per_class,
                },
                train,
                test: to_batch(test_rows, test_labels, dim)?,
                validation: to_batch(val_rows, val_labels, dim)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
    Validation,
}

/// Writes one CSV row per sample: `x0,...,x{d-1},label,concept`.
pub fn export_csv<W: Write>(datasets: &[ConceptDataset], split: Split, mut out: W) -> Result<()> {
    let dim = datasets.first().map_or(0, |d| d.train.input_dim());
    let mut header: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
    header.push("label".into());
    header.push("concept".into());
    writeln!(out, "{}", header.join(","))?;
    for ds in datasets {
        let batch = match split {
            Split::Train => &ds.train,
            Split::Test => &ds.test,
            Split::Validation => &ds.validation,
        };
        for (row, label) in batch.inputs().rows().into_iter().zip(batch.labels()) {
            let mut fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            fields.push(label.to_string());
            fields.push(ds.concept_id().to_string());
            writeln!(out, "{}", fields.join(","))?;
        }
    }
    Ok(())
}

/// One client's local view of every concept.
#[derive(Debug, Clone)]
pub struct ClientStream {
    pub client_id: usize,
    /// Local chunk per concept.
    chunks: Vec<Batch>,
    /// Positions of each chunk's rows in the concept's training split.
    chunk_indices: Vec<Vec<usize>>,
    cursors: Vec<usize>,
    window_size: usize,
    seed: u64,
}

/// One client's data for one round. `true_concept` is ground truth for the
/// evaluation harness only.
#[derive(Debug, Clone)]
pub struct Experience {
    pub client_id: usize,
    pub round: usize,
    pub batch: Batch,
    pub true_concept: usize,
}

impl ClientStream {
    pub fn chunk(&self, concept: usize) -> &Batch {
        &self.chunks[concept]
    }

    pub fn chunk_indices(&self, concept: usize) -> &[usize] {
        &self.chunk_indices[concept]
    }

    pub fn cursor(&self, concept: usize) -> usize {
        self.cursors[concept]
    }

    pub fn window_size(&self) -> usize {
        self.window_size
    }

    pub fn concept_count(&self) -> usize {
        self.chunks.len()
    }

    /// The concept this client encounters in `round`. Uniform, seeded by
    /// `(stream seed, client, round)`; does not touch cursors.
    pub fn concept_for_round(&self, round: usize) -> usize {
        let mut rng = rng::rng_for(
            self.seed,
            &[rng::TAG_STREAM, self.client_id as u64, round as u64],
        );
        rng.random_range(0..self.chunks.len())
    }

    /// Positions in the concept's chunk of the next window, advancing its cursor.
    fn advance(&mut self, concept: usize) -> Vec<usize> {
        let len = self.chunks[concept].len();
        let take = self.window_size.min(len);
        let start = self.cursors[concept];
        self.cursors[concept] = (start + take) % len;
        (0..take).map(|i| (start + i) % len).collect()
    }

    pub fn next_experience(&mut self, round: usize) -> Experience {
        let concept = self.concept_for_round(round);
        let window = self.advance(concept);
        Experience {
            client_id: self.client_id,
            round,
            batch: self.chunks[concept].select(&window),
            true_concept: concept,
        }
    }
}

/// Splits every concept's training data into `n_clients` disjoint chunks
/// (sizes differ by at most one) and hands them out in a random order.
pub fn partition_to_clients(
    datasets: &[ConceptDataset],
    n_clients: usize,
    window_size: usize,
    seed: u64,
) -> Result<Vec<ClientStream>> {
    if n_clients == 0 || window_size == 0 {
        return Err(Error::InvalidArgument(
            "n_clients and window_size must be positive".into(),
        ));
    }
    if datasets.is_empty() {
        return Err(Error::Empty("concept datasets"));
    }
    let mut streams: Vec<ClientStream> = (0..n_clients)
        .map(|client_id| ClientStream {
            client_id,
            chunks: Vec::with_capacity(datasets.len()),
            chunk_indices: Vec::with_capacity(datasets.len()),
            cursors: vec![0; datasets.len()],
            window_size,
            seed,
        })
        .collect();

    for (concept, ds) in datasets.iter().enumerate() {
        let n = ds.train.len();
        if n < n_clients {
            return Err(Error::TooFewSamples {
                concept,
                samples: n,
                clients: n_clients,
            });
        }
        let mut rng = rng::rng_for(seed, &[rng::TAG_PARTITION, concept as u64]);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut owners: Vec<usize> = (0..n_clients).collect();
        owners.shuffle(&mut rng);

        let (base, extra) = (n / n_clients, n % n_clients);
        let mut start = 0;
        for (slot, &owner) in owners.iter().enumerate() {
            let size = base + usize::from(slot < extra);
            let mut idx = order[start..start + size].to_vec();
            idx.sort_unstable();
            start += size;
            streams[owner].chunks.push(ds.train.select(&idx));
            streams[owner].chunk_indices.push(idx);
        }
    }
    Ok(streams)
}

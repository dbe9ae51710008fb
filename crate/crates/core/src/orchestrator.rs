//! The federated round loop for concept matching and the single-model
//! baseline, plus the evaluation harness.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{ari, ClusterLabels};
use crate::config::{Mode, RunConfig};
use crate::datagen::{make_concepts, partition_to_clients, ClientStream, ConceptDataset};
use crate::error::{Error, Result};
use crate::fedops::{aggregate_clusters, fedavg, ClientModelUpdate};
use crate::matching::{client_concept_match, server_concept_match, ConceptModelSet, MatchOutcome};
use crate::model::{self, init_weights, AdamState, WeightVector};
use crate::rng::{self, derive_seed};

/// One client's matching decision in one round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchFlag {
    pub client_id: usize,
    pub true_concept: usize,
    /// Concept model the client picked and trained.
    pub matched_concept: usize,
    pub cluster_id: usize,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerSummary {
    pub assignments: Vec<crate::matching::ClusterAssignment>,
    /// Distance record after matching; `None` for a model never updated.
    pub dist_record: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    /// 1-based.
    pub round: usize,
    /// Test accuracy per true concept, taken from the attributed model.
    pub concept_accuracy: Vec<f64>,
    pub weighted_accuracy: f64,
    pub ari: Option<f64>,
    pub cluster_count: usize,
    pub match_flags: Vec<MatchFlag>,
    pub server: Option<ServerSummary>,
    /// Model index scored for each true concept.
    pub attribution: Vec<usize>,
    /// `model_accuracy[m][c]`: model `m` on concept `c`'s test set.
    pub model_accuracy: Vec<Vec<f64>>,
}

impl RoundReport {
    pub fn match_correct(&self) -> usize {
        self.match_flags.iter().filter(|f| f.correct).count()
    }

    pub fn match_total(&self) -> usize {
        self.match_flags.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: RunConfig,
    pub seed: u64,
    pub mode: Mode,
    pub rounds: Vec<RoundReport>,
    pub final_concept_accuracy: Vec<f64>,
    pub final_weighted_accuracy: f64,
    pub test_samples: Vec<usize>,
    pub mean_ari: Option<f64>,
    pub min_ari: Option<f64>,
    pub rounds_with_perfect_clustering: Option<usize>,
    pub concept_matching_accuracy: Option<f64>,
    #[serde(skip)]
    pub final_models: Vec<WeightVector>,
}

struct ClientState {
    stream: ClientStream,
    /// One optimizer per concept model slot.
    optimizers: Vec<AdamState>,
    /// Task-incremental cache: model chosen the first time each task was seen.
    task_models: Vec<Option<usize>>,
}

struct ClientRound {
    update: ClientModelUpdate,
    chosen: usize,
    true_concept: usize,
}

/// A seeded simulation that advances one federated round per [`step`].
///
/// [`step`]: Simulation::step
pub struct Simulation {
    config: RunConfig,
    datasets: Vec<ConceptDataset>,
    clients: Vec<ClientState>,
    concepts: ConceptModelSet,
    /// `tally[c][m]`: rounds in which concept `c`'s majority cluster was
    /// matched to model `m`.
    tally: Vec<Vec<usize>>,
    round: usize,
    reports: Vec<RoundReport>,
}

impl Simulation {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let seed = config.seed;
        let datasets = make_concepts(&config.concept_params(), derive_seed(seed, &[rng::TAG_DATA]))?;
        let streams = partition_to_clients(
            &datasets,
            config.n_clients,
            config.window_size,
            derive_seed(seed, &[rng::TAG_PARTITION]),
        )?;
        let shape = config.layer_shape()?;
        let n_models = match config.mode {
            Mode::Cm => config.n_concepts_configured,
            Mode::Vanilla => 1,
        };
        let models = (0..n_models)
            .map(|k| init_weights(&shape, derive_seed(seed, &[rng::TAG_INIT, k as u64])))
            .collect::<Result<Vec<_>>>()?;
        let len = shape.parameter_count();
        let clients = streams
            .into_iter()
            .map(|stream| ClientState {
                optimizers: (0..n_models).map(|_| config.new_optimizer(len)).collect(),
                task_models: vec![None; stream.concept_count()],
                stream,
            })
            .collect();
        let tally = vec![vec![0; n_models]; config.n_concepts_true];
        Ok(Simulation {
            concepts: ConceptModelSet::new(models)?,
            config,
            datasets,
            clients,
            tally,
            round: 0,
            reports: Vec::new(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn datasets(&self) -> &[ConceptDataset] {
        &self.datasets
    }

    pub fn models(&self) -> &[WeightVector] {
        self.concepts.models()
    }

    pub fn dist_record(&self) -> &[f64] {
        self.concepts.dist_record()
    }

    pub fn reports(&self) -> &[RoundReport] {
        &self.reports
    }

    pub fn rounds_done(&self) -> usize {
        self.round
    }

    fn client_phase(&mut self) -> Result<Vec<ClientRound>> {
        let round = self.round;
        let cfg = &self.config;
        let models = self.concepts.models();
        let params = cfg.train_params();
        let mut results: Vec<Result<ClientRound>> = self
            .clients
            .par_iter_mut()
            .map(|client| {
                let exp = client.stream.next_experience(round);
                let chosen = match (cfg.task_incremental, client.task_models[exp.true_concept]) {
                    (true, Some(m)) => m,
                    _ => {
                        let m = if models.len() == 1 { 0 } else { client_concept_match(models, &exp.batch)? };
                        if cfg.task_incremental {
                            client.task_models[exp.true_concept] = Some(m);
                        }
                        m
                    }
                };
                let opt = client.optimizers[chosen].clone();
                let train_seed = derive_seed(cfg.seed, &[rng::TAG_TRAIN, exp.client_id as u64, round as u64]);
                let (weights, opt) = model::train(&models[chosen], &exp.batch, opt, &params, train_seed)?;
                client.optimizers[chosen] = opt;
                Ok(ClientRound {
                    update: ClientModelUpdate {
                        client_id: exp.client_id,
                        weights,
                        sample_count: exp.batch.len(),
                    },
                    chosen,
                    true_concept: exp.true_concept,
                })
            })
            .collect();
        // Keyed by client id so the server sees the same input whatever the
        // execution order.
        results.sort_by_key(|r| r.as_ref().map(|c| c.update.client_id).unwrap_or(usize::MAX));
        results.into_iter().collect()
    }

    /// Runs one round and returns its report.
    pub fn step(&mut self) -> Result<RoundReport> {
        let updates = self.client_phase()?;
        let truth: Vec<usize> = updates.iter().map(|u| u.true_concept).collect();
        let client_updates: Vec<ClientModelUpdate> = updates.iter().map(|u| u.update.clone()).collect();

        let (labels, outcome) = match self.config.mode {
            Mode::Cm => {
                let points: Vec<&[f64]> = client_updates.iter().map(|u| u.weights.values()).collect();
                let labels = self
                    .config
                    .clustering_for(points.len())
                    .cluster(&points, derive_seed(self.config.seed, &[rng::TAG_CLUSTER, self.round as u64]))?;
                let aggregated = aggregate_clusters(&client_updates, &labels)?;
                let outcome = server_concept_match(&mut self.concepts, &aggregated, self.config.distance)?;
                (labels, Some(outcome))
            }
            Mode::Vanilla => {
                let agg = fedavg(0, &client_updates)?;
                let record = self.concepts.dist_record().to_vec();
                self.concepts = ConceptModelSet::with_records(vec![agg.weights], record)?;
                (ClusterLabels::compact(&vec![0; client_updates.len()]), None)
            }
        };

        let flags = match &outcome {
            Some(outcome) => {
                let chosen: Vec<usize> = updates.iter().map(|u| u.chosen).collect();
                let majority = majority_clusters(&truth, &labels.labels, self.config.n_concepts_true);
                for (c, cluster) in majority.iter().enumerate() {
                    if let Some(m) = cluster.and_then(|j| outcome.concept_of(j)) {
                        self.tally[c][m] += 1;
                    }
                }
                match_flags(&truth, &chosen, &labels.labels, outcome, &majority)
            }
            None => Vec::new(),
        };

        let model_accuracy = self.evaluate()?;
        let attribution: Vec<usize> = match self.config.mode {
            Mode::Cm => self.tally.iter().map(|row| argmax_count(row)).collect(),
            Mode::Vanilla => vec![0; self.config.n_concepts_true],
        };
        let concept_accuracy: Vec<f64> = attribution
            .iter()
            .enumerate()
            .map(|(c, &m)| model_accuracy[m][c])
            .collect();
        let weighted_accuracy = weighted(&concept_accuracy, &self.test_samples());

        self.round += 1;
        let report = RoundReport {
            round: self.round,
            concept_accuracy,
            weighted_accuracy,
            ari: match self.config.mode {
                Mode::Cm => Some(ari(&labels.labels, &truth)?),
                Mode::Vanilla => None,
            },
            cluster_count: labels.cluster_count,
            match_flags: flags,
            server: outcome.map(|o| ServerSummary {
                assignments: o.assignments,
                dist_record: self
                    .concepts
                    .dist_record()
                    .iter()
                    .map(|&d| d.is_finite().then_some(d))
                    .collect(),
            }),
            attribution,
            model_accuracy,
        };
        self.reports.push(report.clone());
        Ok(report)
    }

    fn evaluate(&self) -> Result<Vec<Vec<f64>>> {
        self.concepts
            .models()
            .par_iter()
            .map(|m| self.datasets.iter().map(|d| model::accuracy(m, &d.test)).collect())
            .collect()
    }

    pub fn test_samples(&self) -> Vec<usize> {
        self.datasets.iter().map(|d| d.test.len()).collect()
    }

    /// Runs the remaining rounds and summarises.
    pub fn run(mut self) -> Result<RunSummary> {
        while self.round < self.config.rounds {
            self.step()?;
        }
        self.finish()
    }

    pub fn finish(self) -> Result<RunSummary> {
        let last = self
            .reports
            .last()
            .ok_or(Error::Empty("round reports"))?
            .clone();
        let aris: Vec<f64> = self.reports.iter().filter_map(|r| r.ari).collect();
        let cm = self.config.mode == Mode::Cm;
        Ok(RunSummary {
            seed: self.config.seed,
            mode: self.config.mode,
            final_concept_accuracy: last.concept_accuracy.clone(),
            final_weighted_accuracy: last.weighted_accuracy,
            test_samples: self.test_samples(),
            mean_ari: cm.then(|| aris.iter().sum::<f64>() / aris.len() as f64),
            min_ari: cm.then(|| aris.iter().copied().fold(f64::INFINITY, f64::min)),
            rounds_with_perfect_clustering: cm.then(|| aris.iter().filter(|&&a| a == 1.0).count()),
            concept_matching_accuracy: if cm { Some(concept_matching_accuracy(&self.reports)?) } else { None },
            final_models: self.concepts.models().to_vec(),
            rounds: self.reports,
            config: self.config,
        })
    }
}

fn argmax_count(row: &[usize]) -> usize {
    let mut best = 0;
    for (m, &n) in row.iter().enumerate() {
        if n > row[best] {
            best = m;
        }
    }
    best
}

fn weighted(acc: &[f64], samples: &[usize]) -> f64 {
    let total: usize = samples.iter().sum();
    acc.iter().zip(samples).map(|(a, &n)| a * n as f64).sum::<f64>() / total as f64
}

/// The cluster holding the most clients of each true concept; ties go to the
/// lowest cluster id. `None` for concepts no client drew.
pub fn majority_clusters(truth: &[usize], clusters: &[usize], n_concepts: usize) -> Vec<Option<usize>> {
    let n_clusters = clusters.iter().copied().max().map_or(0, |m| m + 1);
    let mut counts = vec![vec![0usize; n_clusters]; n_concepts];
    for (&c, &j) in truth.iter().zip(clusters) {
        counts[c][j] += 1;
    }
    counts
        .iter()
        .map(|row| (row.iter().any(|&n| n > 0)).then(|| argmax_count(row)))
        .collect()
}

/// A client is correct when the model it picked is the one the server
/// matched to its concept's majority cluster. An unmatched majority cluster
/// makes every client of that concept incorrect.
pub fn match_flags(
    truth: &[usize],
    chosen: &[usize],
    clusters: &[usize],
    outcome: &MatchOutcome,
    majority: &[Option<usize>],
) -> Vec<MatchFlag> {
    (0..truth.len())
        .map(|i| {
            let expected = majority[truth[i]].and_then(|j| outcome.concept_of(j));
            MatchFlag {
                client_id: i,
                true_concept: truth[i],
                matched_concept: chosen[i],
                cluster_id: clusters[i],
                correct: expected == Some(chosen[i]),
            }
        })
        .collect()
}

/// Correct client matchings over all client-rounds.
pub fn concept_matching_accuracy(reports: &[RoundReport]) -> Result<f64> {
    if reports.is_empty() {
        return Err(Error::Empty("round reports"));
    }
    if reports.iter().any(|r| r.server.is_none()) {
        return Err(Error::InvalidArgument(
            "concept matching accuracy needs concept-matching reports".into(),
        ));
    }
    let total: usize = reports.iter().map(|r| r.match_total()).sum();
    let correct: usize = reports.iter().map(|r| r.match_correct()).sum();
    if total == 0 {
        return Err(Error::Empty("client matchings"));
    }
    Ok(correct as f64 / total as f64)
}

fn require_mode(config: &RunConfig, mode: Mode) -> Result<()> {
    if config.mode != mode {
        return Err(Error::config("mode", format!("expected {mode:?}, got {:?}", config.mode)));
    }
    Ok(())
}

pub fn run_cm(config: RunConfig) -> Result<RunSummary> {
    require_mode(&config, Mode::Cm)?;
    Simulation::new(config)?.run()
}

pub fn run_vanilla(config: RunConfig) -> Result<RunSummary> {
    require_mode(&config, Mode::Vanilla)?;
    Simulation::new(config)?.run()
}

/// Runs whichever mode the config names.
pub fn run(config: RunConfig) -> Result<RunSummary> {
    Simulation::new(config)?.run()
}

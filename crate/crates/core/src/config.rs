//! Run configuration and the JSON config file.
//!
//! A config file is a flat JSON object holding any subset of [`RunConfig`]
//! keys plus two extras, `out_dir` and `sweep`. Missing keys take the
//! documented defaults; unknown keys are rejected with their path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cluster::{Clustering, Linkage, DEFAULT_MIN_SAMPLES};
use crate::datagen::{ConceptParams, DEFAULT_WINDOW};
use crate::error::{Error, Result};
use crate::fedops::Metric;
use crate::model::{AdamState, LayerShape, TrainParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Cm,
    Vanilla,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cm" => Ok(Mode::Cm),
            "vanilla" => Ok(Mode::Vanilla),
            other => Err(Error::config("mode", format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    #[default]
    Kmeans,
    Agglomerative,
    Dbscan,
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kmeans" => Ok(Algorithm::Kmeans),
            "agglomerative" => Ok(Algorithm::Agglomerative),
            "dbscan" => Ok(Algorithm::Dbscan),
            other => Err(Error::config(
                "clustering.algorithm",
                format!("unknown clustering `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub classes_per_concept: usize,
    pub samples_per_class: usize,
    pub input_dim: usize,
    pub separation: f64,
    pub std: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        let p = ConceptParams::default();
        DataConfig {
            classes_per_concept: p.classes_per_concept,
            samples_per_class: p.samples_per_class,
            input_dim: p.input_dim,
            separation: p.separation,
            std: p.std,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden_dims: Vec<usize>,
    /// Relative change applied to every hidden width (`-0.2` shrinks by 20%).
    pub scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_dims: vec![16],
            scale: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub patience: usize,
    pub minibatch_size: usize,
    pub holdout_fraction: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let t = TrainParams::default();
        TrainingConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: t.epochs,
            patience: t.patience,
            minibatch_size: t.minibatch_size,
            holdout_fraction: t.holdout_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusteringConfig {
    pub algorithm: Algorithm,
    pub linkage: Linkage,
    /// DBSCAN radius; `null` picks it from the knee of the k-distance curve.
    pub eps: Option<f64>,
    pub min_samples: usize,
    pub max_iters: usize,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        ClusteringConfig {
            algorithm: Algorithm::Kmeans,
            linkage: Linkage::Average,
            eps: None,
            min_samples: DEFAULT_MIN_SAMPLES,
            max_iters: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    pub rounds: usize,
    pub n_clients: usize,
    pub n_concepts_true: usize,
    /// `K` as given to the server; may differ from the true concept count.
    pub n_concepts_configured: usize,
    pub window_size: usize,
    /// Clients remember which model they matched for each concept and skip
    /// matching afterwards.
    pub task_incremental: bool,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub clustering: ClusteringConfig,
    pub distance: Metric,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Cm,
            seed: 0,
            rounds: 100,
            n_clients: 20,
            n_concepts_true: 5,
            n_concepts_configured: 5,
            window_size: DEFAULT_WINDOW,
            task_incremental: false,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            training: TrainingConfig::default(),
            clustering: ClusteringConfig::default(),
            distance: Metric::Manhattan,
        }
    }
}

impl RunConfig {
    /// Defaults with 60 rounds, the size used for the desk-scale experiments.
    pub fn desk() -> Self {
        RunConfig {
            rounds: 60,
            ..RunConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rounds", self.rounds),
            ("n_clients", self.n_clients),
            ("n_concepts_true", self.n_concepts_true),
            ("n_concepts_configured", self.n_concepts_configured),
            ("window_size", self.window_size),
            ("data.classes_per_concept", self.data.classes_per_concept),
            ("data.samples_per_class", self.data.samples_per_class),
            ("data.input_dim", self.data.input_dim),
            ("training.epochs", self.training.epochs),
            ("training.minibatch_size", self.training.minibatch_size),
            ("clustering.min_samples", self.clustering.min_samples),
            ("clustering.max_iters", self.clustering.max_iters),
        ];
        for (key, value) in positive {
            if value == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        let positive_reals = [
            ("data.separation", self.data.separation),
            ("data.std", self.data.std),
            ("training.learning_rate", self.training.learning_rate),
            ("training.epsilon", self.training.epsilon),
        ];
        for (key, value) in positive_reals {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::config(key, format!("must be positive, got {value}")));
            }
        }
        for (key, value) in [("training.beta1", self.training.beta1), ("training.beta2", self.training.beta2)] {
            if !(0.0..1.0).contains(&value) {
                return Err(Error::config(key, format!("must be in [0, 1), got {value}")));
            }
        }
        if !(0.0..1.0).contains(&self.training.holdout_fraction) {
            return Err(Error::config("training.holdout_fraction", "must be in [0, 1)"));
        }
        if self.model.hidden_dims.contains(&0) {
            return Err(Error::config("model.hidden_dims", "widths must be positive"));
        }
        if !(self.model.scale > -1.0 && self.model.scale.is_finite()) {
            return Err(Error::config("model.scale", "must be greater than -1"));
        }
        if let Some(eps) = self.clustering.eps {
            if !(eps > 0.0) {
                return Err(Error::config("clustering.eps", "must be positive"));
            }
        }
        let per_concept_train = crate::datagen::split_sizes(self.data.samples_per_class).0
            * self.data.classes_per_concept;
        if per_concept_train < self.n_clients {
            return Err(Error::config(
                "data.samples_per_class",
                format!(
                    "{per_concept_train} training samples per concept cannot cover {} clients",
                    self.n_clients
                ),
            ));
        }
        Ok(())
    }

    pub fn concept_params(&self) -> ConceptParams {
        ConceptParams {
            k: self.n_concepts_true,
            classes_per_concept: self.data.classes_per_concept,
            input_dim: self.data.input_dim,
            separation: self.data.separation,
            samples_per_class: self.data.samples_per_class,
            std: self.data.std,
        }
    }

    /// Network shape after scaling; one output per class across all concepts.
    pub fn layer_shape(&self) -> Result<LayerShape> {
        let base = LayerShape::new(
            self.data.input_dim,
            self.model.hidden_dims.clone(),
            self.n_concepts_true * self.data.classes_per_concept,
        )?;
        Ok(base.scaled(self.model.scale))
    }

    pub fn train_params(&self) -> TrainParams {
        TrainParams {
            epochs: self.training.epochs,
            minibatch_size: self.training.minibatch_size,
            patience: self.training.patience,
            holdout_fraction: self.training.holdout_fraction,
        }
    }

    pub fn new_optimizer(&self, len: usize) -> AdamState {
        AdamState::with_betas(
            len,
            self.training.learning_rate,
            self.training.beta1,
            self.training.beta2,
            self.training.epsilon,
        )
    }

    /// Clustering for one round over `n_points` client models. The cluster
    /// count is capped at the number of points.
    pub fn clustering_for(&self, n_points: usize) -> Clustering {
        let k = self.n_concepts_configured.min(n_points).max(1);
        match self.clustering.algorithm {
            Algorithm::Kmeans => Clustering::Kmeans {
                k,
                max_iters: self.clustering.max_iters,
            },
            Algorithm::Agglomerative => Clustering::Agglomerative {
                k,
                linkage: self.clustering.linkage,
            },
            Algorithm::Dbscan => Clustering::Dbscan {
                eps: self.clustering.eps,
                min_samples: self.clustering.min_samples,
            },
        }
    }
}

/// Sweep axes. An empty axis keeps the base config's value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepAxes {
    pub clients: Vec<usize>,
    pub model_scale: Vec<f64>,
    pub k_configured: Vec<usize>,
}

impl SweepAxes {
    /// Cartesian product over the non-empty axes, clients outermost.
    pub fn expand(&self, base: &RunConfig) -> Vec<RunConfig> {
        let clients = if self.clients.is_empty() { vec![base.n_clients] } else { self.clients.clone() };
        let scales = if self.model_scale.is_empty() { vec![base.model.scale] } else { self.model_scale.clone() };
        let ks = if self.k_configured.is_empty() {
            vec![base.n_concepts_configured]
        } else {
            self.k_configured.clone()
        };
        let mut out = Vec::new();
        for &n in &clients {
            for &scale in &scales {
                for &k in &ks {
                    let mut cfg = base.clone();
                    cfg.n_clients = n;
                    cfg.model.scale = scale;
                    cfg.n_concepts_configured = k;
                    out.push(cfg);
                }
            }
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.clients.is_empty() && self.model_scale.is_empty() && self.k_configured.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConfigFile {
    pub run: RunConfig,
    pub out_dir: Option<PathBuf>,
    pub sweep: SweepAxes,
}

fn path_error(err: serde_path_to_error::Error<serde_json::Error>) -> Error {
    let path = err.path().to_string();
    let inner = err.into_inner().to_string();
    let key = if path == "." || path.is_empty() {
        match inner.split('`').nth(1) {
            Some(field) if inner.starts_with("unknown field") => field.to_string(),
            _ => "<document>".to_string(),
        }
    } else {
        path
    };
    Error::config(key, inner)
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::config("<document>", e.to_string()))?;
        let obj = value
            .as_object_mut()
            .ok_or_else(|| Error::config("<document>", "config must be a JSON object"))?;
        let out_dir = match obj.remove("out_dir") {
            None | Some(serde_json::Value::Null) => None,
            Some(serde_json::Value::String(s)) => Some(PathBuf::from(s)),
            Some(_) => return Err(Error::config("out_dir", "must be a string")),
        };
        let sweep = match obj.remove("sweep") {
            None => SweepAxes::default(),
            Some(v) => serde_path_to_error::deserialize(v).map_err(|e| {
                let Error::Config { key, message } = path_error(e) else { unreachable!() };
                Error::config(format!("sweep.{key}"), message)
            })?,
        };
        let run: RunConfig = serde_path_to_error::deserialize(value).map_err(path_error)?;
        run.validate()?;
        Ok(ConfigFile { run, out_dir, sweep })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

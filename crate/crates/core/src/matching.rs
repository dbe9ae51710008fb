//! Concept matching.
//!
//! The server keeps `K` concept models and a distance record per concept.
//! After clustering and averaging, each cluster model replaces the concept
//! model it is closest to, but only if that distance is below the concept's
//! record; the record then drops to the accepted distance. Updates along a
//! converging gradient-descent path shrink from round to round, so a cluster
//! trained on some other concept (far away in weight space) cannot pass the
//! record of a concept that is already learning.
//!
//! Clients choose which concept model to fine-tune by lowest loss on their
//! current data.
//!
//! [`verify_descent_contraction`] checks the shrinking-step property itself on
//! strongly convex quadratics, where its preconditions hold exactly.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fedops::{AggregatedClusterModel, Metric};
use crate::model::{self, Batch, WeightVector};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptModelSet {
    models: Vec<WeightVector>,
    dist_record: Vec<f64>,
}

impl ConceptModelSet {
    /// All records start at +inf, so the first cluster near a concept is always admitted.
    pub fn new(models: Vec<WeightVector>) -> Result<Self> {
        let first = models.first().ok_or(Error::Empty("concept models"))?;
        for m in &models[1..] {
            first.ensure_same_shape(m)?;
        }
        let k = models.len();
        Ok(ConceptModelSet {
            models,
            dist_record: vec![f64::INFINITY; k],
        })
    }

    /// Restores a set from explicit records (each positive or +inf).
    pub fn with_records(models: Vec<WeightVector>, dist_record: Vec<f64>) -> Result<Self> {
        let mut set = Self::new(models)?;
        if dist_record.len() != set.models.len() {
            return Err(Error::shape(format!("{} records", set.models.len()), dist_record.len()));
        }
        if dist_record.iter().any(|d| d.is_nan() || *d < 0.0) {
            return Err(Error::InvalidArgument("distance records must be >= 0".into()));
        }
        set.dist_record = dist_record;
        Ok(set)
    }

    pub fn models(&self) -> &[WeightVector] {
        &self.models
    }

    pub fn dist_record(&self) -> &[f64] {
        &self.dist_record
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub cluster_id: usize,
    pub matched_concept: Option<usize>,
    /// Distance to the matched concept model, when matched.
    pub match_distance: Option<f64>,
    /// Closest concept model and its distance, ignoring the record.
    pub nearest_concept: usize,
    pub nearest_distance: f64,
    /// The matched concept had already been replaced earlier in this call.
    pub overwrote_same_round: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchOutcome {
    pub assignments: Vec<ClusterAssignment>,
}

impl MatchOutcome {
    pub fn concept_of(&self, cluster_id: usize) -> Option<usize> {
        self.assignments
            .iter()
            .find(|a| a.cluster_id == cluster_id)
            .and_then(|a| a.matched_concept)
    }

    pub fn unmatched(&self) -> usize {
        self.assignments.iter().filter(|a| a.matched_concept.is_none()).count()
    }
}

/// Server concept matching.
///
/// Clusters are visited in ascending `cluster_id`. For each, every concept
/// `k` whose current model is closer than both `dist_record[k]` and the best
/// candidate so far becomes the candidate. The winning concept's model is
/// replaced by the cluster model and its record set to the winning distance.
/// Distances are always taken against the set as updated so far, so a later
/// cluster can replace a concept again if it beats the freshly lowered
/// record. A cluster with no candidate leaves the set untouched.
pub fn server_concept_match(
    set: &mut ConceptModelSet,
    clusters: &[AggregatedClusterModel],
    metric: Metric,
) -> Result<MatchOutcome> {
    for c in clusters {
        set.models[0].ensure_same_shape(&c.weights)?;
    }
    let mut order: Vec<&AggregatedClusterModel> = clusters.iter().collect();
    order.sort_by_key(|c| c.cluster_id);

    let mut touched = vec![false; set.len()];
    let mut assignments = Vec::with_capacity(order.len());
    for cluster in order {
        let mut candidate = None;
        let mut candidate_dist = f64::INFINITY;
        let mut nearest = (0, f64::INFINITY);
        for (k, concept) in set.models.iter().enumerate() {
            let d = metric.between(cluster.weights.values(), concept.values());
            if d < nearest.1 {
                nearest = (k, d);
            }
            if d < set.dist_record[k] && d < candidate_dist {
                candidate = Some(k);
                candidate_dist = d;
            }
        }
        match candidate {
            Some(k) => {
                set.models[k] = cluster.weights.clone();
                set.dist_record[k] = candidate_dist;
                assignments.push(ClusterAssignment {
                    cluster_id: cluster.cluster_id,
                    matched_concept: Some(k),
                    match_distance: Some(candidate_dist),
                    nearest_concept: nearest.0,
                    nearest_distance: nearest.1,
                    overwrote_same_round: touched[k],
                });
                touched[k] = true;
            }
            None => {
                log::warn!(
                    "cluster {} matched no concept model; concept models left unchanged",
                    cluster.cluster_id
                );
                assignments.push(ClusterAssignment {
                    cluster_id: cluster.cluster_id,
                    matched_concept: None,
                    match_distance: None,
                    nearest_concept: nearest.0,
                    nearest_distance: nearest.1,
                    overwrote_same_round: false,
                });
            }
        }
    }
    Ok(MatchOutcome { assignments })
}

/// Index of the model with the lowest `loss_fn` on `data`; ties go to the
/// lowest index.
pub fn client_concept_match_with<F>(models: &[WeightVector], data: &Batch, loss_fn: F) -> Result<usize>
where
    F: Fn(&WeightVector, &Batch) -> Result<f64>,
{
    if models.is_empty() {
        return Err(Error::Empty("concept models"));
    }
    if data.is_empty() {
        return Err(Error::Empty("client data"));
    }
    let mut best = (0, f64::INFINITY);
    for (k, m) in models.iter().enumerate() {
        let l = loss_fn(m, data)?;
        if l < best.1 {
            best = (k, l);
        }
    }
    Ok(best.0)
}

/// [`client_concept_match_with`] using mean cross-entropy.
pub fn client_concept_match(models: &[WeightVector], data: &Batch) -> Result<usize> {
    client_concept_match_with(models, data, model::loss)
}

/// `L(w) = 1/2 w^T A w - b^T w` with `A` symmetric positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Quadratic {
    pub fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.a * w - &self.b
    }

    /// Largest eigenvalue of `A`, i.e. the Lipschitz constant of the gradient.
    /// Errors unless `A` is square, symmetric and positive definite.
    pub fn lipschitz(&self) -> Result<f64> {
        let n = self.a.nrows();
        if n == 0 || self.a.ncols() != n || self.b.len() != n {
            return Err(Error::shape(format!("{n}x{n} matrix and {n}-vector"), format!("{}x{} and {}", self.a.nrows(), self.a.ncols(), self.b.len())));
        }
        let scale = self.a.amax().max(1.0);
        if (&self.a - self.a.transpose()).amax() > 1e-12 * scale {
            return Err(Error::InvalidArgument("matrix is not symmetric".into()));
        }
        let eig = self.a.clone().symmetric_eigen();
        if eig.eigenvalues.min() <= 0.0 {
            return Err(Error::InvalidArgument("matrix is not positive definite".into()));
        }
        Ok(eig.eigenvalues.max())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentTrace {
    /// `|w^{t+1} - w^t|` for each step.
    pub step_norms: Vec<f64>,
    /// `|grad L(w^t)|` for `t = 0..=steps`.
    pub grad_norms: Vec<f64>,
    pub steps_contract: bool,
    pub grads_contract: bool,
}

impl DescentTrace {
    pub fn holds(&self) -> bool {
        self.steps_contract && self.grads_contract
    }
}

/// Runs `steps` iterations of `w <- w - eta * grad L(w)` and checks that both
/// the step length and the gradient norm strictly decrease at every step.
///
/// Requires `0 < eta < 1 / lambda_max(A)` and a start point that is not the
/// minimiser.
pub fn verify_descent_contraction(
    quad: &Quadratic,
    w0: &DVector<f64>,
    eta: f64,
    steps: usize,
) -> Result<DescentTrace> {
    let lipschitz = quad.lipschitz()?;
    if w0.len() != quad.b.len() {
        return Err(Error::shape(format!("{}-vector", quad.b.len()), w0.len()));
    }
    if !(eta > 0.0 && eta < 1.0 / lipschitz) {
        return Err(Error::InvalidArgument(format!(
            "step size {eta} outside (0, 1/L) with L = {lipschitz}"
        )));
    }
    let mut w = w0.clone();
    let mut grad = quad.gradient(&w);
    if grad.norm() == 0.0 {
        return Err(Error::InvalidArgument("start point is the minimiser".into()));
    }
    let mut step_norms = Vec::with_capacity(steps);
    let mut grad_norms = vec![grad.norm()];
    for _ in 0..steps {
        let step = &grad * eta;
        step_norms.push(step.norm());
        w -= step;
        grad = quad.gradient(&w);
        grad_norms.push(grad.norm());
    }
    let strictly_decreasing = |xs: &[f64]| xs.windows(2).all(|p| p[1] < p[0]);
    Ok(DescentTrace {
        steps_contract: strictly_decreasing(&step_norms),
        grads_contract: strictly_decreasing(&grad_norms),
        step_norms,
        grad_norms,
    })
}

/// A seeded strongly convex instance: `A = Q diag(lambda) Q^T` with
/// eigenvalues in `[0.5, 5]`, a random offset and start point, and a step
/// size drawn in `[0.2, 0.9] / lambda_max`, capped so the slowest direction
/// shrinks by a factor of at least 0.85 per step. The cap keeps a 100-step
/// run far above rounding level, where exact convergence would make two
/// consecutive steps compare equal.
#[derive(Debug, Clone)]
pub struct DescentInstance {
    pub quad: Quadratic,
    pub w0: DVector<f64>,
    pub eta: f64,
}

pub fn random_descent_instance(dim: usize, seed: u64) -> DescentInstance {
    let mut rng = rng::rng_for(seed, &[0x5bd]);
    let mut gauss = |n, m| DMatrix::<f64>::from_fn(n, m, |_, _| StandardNormal.sample(&mut rng));
    let q = gauss(dim, dim).qr().q();
    let b = gauss(dim, 1).column(0).into_owned();
    let w0 = gauss(dim, 1).column(0).into_owned() * 3.0;
    let eigen: Vec<f64> = (0..dim).map(|_| rng.random_range(0.5..5.0)).collect();
    let lambda_max = eigen.iter().copied().fold(f64::MIN, f64::max);
    let lambda_min = eigen.iter().copied().fold(f64::MAX, f64::min);
    let a = &q * DMatrix::from_diagonal(&DVector::from_vec(eigen)) * q.transpose();
    let a = (&a + a.transpose()) * 0.5;
    let eta = (rng.random_range(0.2..0.9) / lambda_max).min(0.15 / lambda_min);
    DescentInstance {
        quad: Quadratic { a, b },
        w0,
        eta,
    }
}

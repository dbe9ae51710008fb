//! Distance-record matching of cluster models to concept models across a
//! few server rounds, plus client-side selection by loss.

use cmfl::datagen::{make_concepts, ConceptParams};
use cmfl::fedops::{AggregatedClusterModel, Metric};
use cmfl::matching::{client_concept_match, server_concept_match, ConceptModelSet};
use cmfl::model::{LayerShape, WeightVector};

fn model(values: &[f64]) -> cmfl::Result<WeightVector> {
    WeightVector::new(LayerShape::new(values.len() - 1, vec![], 1)?, values.to_vec())
}

fn cluster(id: usize, values: &[f64]) -> cmfl::Result<AggregatedClusterModel> {
    Ok(AggregatedClusterModel {
        cluster_id: id,
        weights: model(values)?,
        total_samples: 10,
        member_client_ids: vec![id],
    })
}

fn main() -> cmfl::Result<()> {
    let mut set = ConceptModelSet::new(vec![model(&[0.0, 0.0])?, model(&[10.0, 10.0])?])?;
    let rounds = [
        vec![cluster(0, &[1.0, 1.0])?, cluster(1, &[9.0, 9.0])?],
        vec![cluster(0, &[1.5, 1.0])?, cluster(1, &[3.0, 9.0])?],
        vec![cluster(0, &[4.0, 4.0])?],
    ];
    for (r, clusters) in rounds.iter().enumerate() {
        let outcome = server_concept_match(&mut set, clusters, Metric::Manhattan)?;
        for a in &outcome.assignments {
            println!(
                "round {r} cluster {} -> {:?} (nearest {} at {:.2})",
                a.cluster_id, a.matched_concept, a.nearest_concept, a.nearest_distance
            );
        }
        println!("  record {:?}", set.dist_record());
    }

    // Client side: a model that never saw a concept scores worse on it.
    let concepts = make_concepts(&ConceptParams { k: 2, samples_per_class: 200, ..Default::default() }, 1)?;
    let shape = LayerShape::new(2, vec![8], 6)?;
    let mut models = Vec::new();
    for c in &concepts {
        let w0 = cmfl::model::init_weights(&shape, 0)?;
        let opt = cmfl::model::AdamState::new(w0.len(), 0.01);
        models.push(cmfl::model::train(&w0, &c.train, opt, &Default::default(), 0)?.0);
    }
    for c in &concepts {
        println!("data of concept {} picks model {}", c.concept_id(), client_concept_match(&models, &c.test)?);
    }
    Ok(())
}

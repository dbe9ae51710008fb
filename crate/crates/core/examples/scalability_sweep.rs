//! Clients x model size grid, expanded from sweep axes as in a config file.

use cmfl::config::{RunConfig, SweepAxes};
use cmfl::orchestrator::run_cm;
use rayon::prelude::*;

fn main() -> cmfl::Result<()> {
    let axes = SweepAxes {
        clients: vec![20, 40, 80],
        model_scale: vec![-0.2, 0.0, 0.2],
        k_configured: vec![],
    };
    let base = RunConfig { rounds: 30, ..RunConfig::desk() };
    let results: Vec<_> = axes.expand(&base).into_par_iter().map(run_cm).collect::<cmfl::Result<_>>()?;
    println!("clients  scale  hidden  accuracy  ARI    matching");
    for s in &results {
        println!(
            "{:>7}  {:+.1}   {:>6?}  {:.3}     {:.3}  {:.3}",
            s.config.n_clients,
            s.config.model.scale,
            s.config.layer_shape()?.hidden_dims,
            s.final_weighted_accuracy,
            s.mean_ari.unwrap(),
            s.concept_matching_accuracy.unwrap()
        );
    }
    Ok(())
}

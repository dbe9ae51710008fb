//! Run with the server configured for 3 to 7 concepts against 5 true ones.

use cmfl::config::RunConfig;
use cmfl::orchestrator::run_cm;

fn main() -> cmfl::Result<()> {
    for k in 3..=7 {
        let s = run_cm(RunConfig { n_concepts_configured: k, ..RunConfig::desk() })?;
        println!(
            "K = {k}: weighted accuracy {:.3}, mean ARI {:.3}, concept matching accuracy {:.3}",
            s.final_weighted_accuracy,
            s.mean_ari.unwrap(),
            s.concept_matching_accuracy.unwrap()
        );
    }
    Ok(())
}

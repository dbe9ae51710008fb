//! Concept matching against the single-model baseline on the desk config.
//! Pass a seed as the first argument; writes CSV and JSON to a temp dir.

use cmfl::config::{Mode, RunConfig};
use cmfl::orchestrator::{run_cm, run_vanilla};
use cmfl::report;

fn main() -> cmfl::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let cfg = RunConfig { seed, ..RunConfig::desk() };
    let cm = run_cm(cfg.clone())?;
    let vanilla = run_vanilla(RunConfig { mode: Mode::Vanilla, ..cfg })?;

    println!("concept  cm      vanilla");
    for c in 0..cm.final_concept_accuracy.len() {
        println!("{c:>7}  {:.3}   {:.3}", cm.final_concept_accuracy[c], vanilla.final_concept_accuracy[c]);
    }
    println!(
        "weighted {:.3}   {:.3}",
        cm.final_weighted_accuracy, vanilla.final_weighted_accuracy
    );
    println!(
        "mean ARI {:.3}, perfect rounds {}/{}, concept matching accuracy {:.3}",
        cm.mean_ari.unwrap(),
        cm.rounds_with_perfect_clustering.unwrap(),
        cm.rounds.len(),
        cm.concept_matching_accuracy.unwrap()
    );
    let unmatched: usize = cm
        .rounds
        .iter()
        .map(|r| r.server.as_ref().map_or(0, |s| s.assignments.iter().filter(|a| a.matched_concept.is_none()).count()))
        .sum();
    println!("clusters left unmatched over the run: {unmatched}");

    let dir = std::env::temp_dir().join("cmfl_compare");
    report::write_run(&dir, "cm", &cm)?;
    report::write_run(&dir, "vanilla", &vanilla)?;
    report::write_atomic(&dir.join("compare.csv"), report::compare_csv(&cm, &vanilla)?.as_bytes())?;
    println!("outputs in {}", dir.display());
    Ok(())
}

//! Parse a config document, step a simulation round by round, and write the
//! per-round CSV atomically.

use cmfl::config::ConfigFile;
use cmfl::orchestrator::Simulation;
use cmfl::report;

const DOC: &str = r#"{
    "seed": 3,
    "rounds": 10,
    "n_clients": 10,
    "clustering": {"algorithm": "agglomerative", "linkage": "complete"},
    "distance": "euclidean",
    "training": {"epochs": 5},
    "out_dir": "cmfl_config_example",
    "sweep": {"clients": [10, 20]}
}"#;

fn main() -> cmfl::Result<()> {
    let file = ConfigFile::parse(DOC)?;
    println!("sweep expands to {} runs", file.sweep.expand(&file.run).len());
    match ConfigFile::parse(r#"{"rounds": 10, "learning_rate": 0.1}"#) {
        Err(e) => println!("rejected: {e}"),
        Ok(_) => unreachable!(),
    }

    let mut sim = Simulation::new(file.run.clone())?;
    while sim.rounds_done() < file.run.rounds {
        let r = sim.step()?;
        println!(
            "round {:>2}: weighted {:.3}, clusters {}, ARI {:.3}, matched {}/{}",
            r.round,
            r.weighted_accuracy,
            r.cluster_count,
            r.ari.unwrap(),
            r.match_correct(),
            r.match_total()
        );
    }
    let summary = sim.finish()?;
    let dir = std::env::temp_dir().join(file.out_dir.unwrap());
    let (csv, json) = report::write_run(&dir, "run", &summary)?;
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(())
}

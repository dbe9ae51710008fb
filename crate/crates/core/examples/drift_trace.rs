//! Per-round distance between each concept's majority cluster and its
//! nearest concept model. `*` marks rounds where the server accepted the
//! cluster; the trailing number is the cluster size.
//!
//! Usage: `drift_trace [config-json] [rounds]`

use cmfl::config::{ConfigFile, RunConfig};
use cmfl::orchestrator::{majority_clusters, Simulation};

fn main() -> cmfl::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let mut cfg = match args.get(1) {
        Some(doc) => ConfigFile::parse(doc)?.run,
        None => RunConfig::desk(),
    };
    cfg.rounds = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(30);
    let k = cfg.n_concepts_true;
    let rounds = cfg.rounds;
    let mut sim = Simulation::new(cfg)?;
    let mut rows = vec![String::new(); k];
    for _ in 0..rounds {
        let r = sim.step()?;
        let truth: Vec<usize> = r.match_flags.iter().map(|f| f.true_concept).collect();
        let clusters: Vec<usize> = r.match_flags.iter().map(|f| f.cluster_id).collect();
        let server = r.server.as_ref().expect("concept matching run");
        for (c, majority) in majority_clusters(&truth, &clusters, k).into_iter().enumerate() {
            match majority {
                Some(j) => {
                    let a = &server.assignments[j];
                    let size = clusters.iter().filter(|&&x| x == j).count();
                    let mark = if a.matched_concept.is_some() { '*' } else { ' ' };
                    rows[c].push_str(&format!(" {:6.2}{mark}{size}", a.nearest_distance));
                }
                None => rows[c].push_str("       - "),
            }
        }
    }
    for (c, row) in rows.iter().enumerate() {
        println!("concept {c}:{row}");
    }
    println!("final records: {:?}", sim.dist_record());
    Ok(())
}

//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_RED` are expected to fail (see the README's
//! "Known limitations"); the run exits non-zero if any other criterion fails
//! or if a known-red criterion starts passing, so the list cannot go stale.

use std::time::{Duration, Instant};

use cmfl::cluster::{ari, Clustering, Linkage};
use cmfl::config::{Mode, RunConfig};
use cmfl::fedops::{AggregatedClusterModel, Metric};
use cmfl::matching::{random_descent_instance, server_concept_match, verify_descent_contraction, ConceptModelSet};
use cmfl::model::{gradient, init_weights, loss, Batch, LayerShape, WeightVector};
use cmfl::orchestrator::{run, RunSummary};
use cmfl::report;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

const KNOWN_RED: &[u32] = &[6, 7, 8];

struct Outcome {
    id: u32,
    pass: bool,
    detail: String,
}

fn outcome(id: u32, pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { id, pass, detail: detail.into() }
}

fn within(elapsed: Duration, limit: Duration) -> bool {
    elapsed < limit
}

// 1. Gradient descent on SPD quadratics contracts steps and gradients.
fn descent_contraction() -> Outcome {
    let t = Instant::now();
    let mut failures = 0;
    for i in 0..50u64 {
        let dim = 1 + (i as usize % 20);
        let inst = random_descent_instance(dim, 1000 + i);
        let trace = verify_descent_contraction(&inst.quad, &inst.w0, inst.eta, 100).unwrap();
        // Re-check the trace independently of the library's verdict.
        let strict = |xs: &[f64]| xs.windows(2).all(|w| w[1] < w[0]);
        if !(trace.holds() && strict(&trace.step_norms) && strict(&trace.grad_norms)) {
            failures += 1;
        }
    }
    let el = t.elapsed();
    outcome(
        1,
        failures == 0 && within(el, Duration::from_secs(1)),
        format!("{} of 50 SPD instances contract over 100 steps in {el:.2?}", 50 - failures),
    )
}

// 2. Analytic gradient vs central differences.
fn gradient_check() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let h = 1e-5;
    for net in 0..10u64 {
        let input = rng.random_range(2..6);
        let hidden: Vec<usize> = (0..rng.random_range(1..3)).map(|_| rng.random_range(3..9)).collect();
        let output = rng.random_range(2..6);
        let shape = LayerShape::new(input, hidden, output).unwrap();
        assert!(shape.parameter_count() <= 200);
        let w = init_weights(&shape, net).unwrap();
        let n = 12;
        let inputs = Array2::from_shape_fn((n, input), |_| rng.random_range(-2.0..2.0));
        let labels = (0..n).map(|_| rng.random_range(0..output)).collect();
        let batch = Batch::new(inputs, labels).unwrap();
        let g = gradient(&w, &batch).unwrap();
        for i in 0..w.len() {
            let bump = |d: f64| {
                let mut v = w.values().to_vec();
                v[i] += d;
                loss(&WeightVector::new(shape.clone(), v).unwrap(), &batch).unwrap()
            };
            let fd = (bump(h) - bump(-h)) / (2.0 * h);
            let a = g.values()[i];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    let el = t.elapsed();
    outcome(
        2,
        worst <= 1e-4 && within(el, Duration::from_secs(5)),
        format!("worst relative error {worst:.2e} over 10 networks in {el:.2?}"),
    )
}

fn wv(values: &[f64]) -> WeightVector {
    WeightVector::new(LayerShape::new(values.len() - 1, vec![], 1).unwrap(), values.to_vec()).unwrap()
}

fn cluster(id: usize, values: &[f64]) -> AggregatedClusterModel {
    AggregatedClusterModel { cluster_id: id, weights: wv(values), total_samples: 1, member_client_ids: vec![id] }
}

/// Straight transcription of the matching loop, used as the oracle.
fn oracle_match(models: &mut [Vec<f64>], record: &mut [f64], clusters: &[Vec<f64>]) -> Vec<Option<usize>> {
    let mut out = Vec::new();
    for c in clusters {
        let mut candidate = None;
        let mut candidate_dist = f64::INFINITY;
        for k in 0..models.len() {
            let d: f64 = c.iter().zip(&models[k]).map(|(a, b)| (a - b).abs()).sum();
            if d < record[k] && d < candidate_dist {
                candidate = Some(k);
                candidate_dist = d;
            }
        }
        if let Some(k) = candidate {
            models[k] = c.clone();
            record[k] = candidate_dist;
        }
        out.push(candidate);
    }
    out
}

// 3. Hand-traced matching fixtures plus fuzzed record invariants.
fn matching_fixtures() -> Outcome {
    let mut ok = true;

    // Fresh records; distances (5, 3) to the two concepts.
    let mut set = ConceptModelSet::new(vec![wv(&[0.0, 0.0]), wv(&[8.0, 0.0])]).unwrap();
    let out = server_concept_match(&mut set, &[cluster(0, &[5.0, 0.0])], Metric::Manhattan).unwrap();
    ok &= out.assignments[0].matched_concept == Some(1)
        && set.dist_record()[1] == 3.0
        && set.dist_record()[0] == f64::INFINITY
        && set.models()[0] == wv(&[0.0, 0.0]);

    // Bit-identical cluster wins with distance 0.
    let mut set = ConceptModelSet::with_records(vec![wv(&[1.0, 2.0]), wv(&[1.5, 2.0])], vec![0.2, 0.7]).unwrap();
    let out = server_concept_match(&mut set, &[cluster(0, &[1.5, 2.0])], Metric::Manhattan).unwrap();
    ok &= out.assignments[0].matched_concept == Some(1) && out.assignments[0].match_distance == Some(0.0);

    // Every distance at or above every record: unmatched, set untouched.
    let mut set = ConceptModelSet::with_records(vec![wv(&[0.0, 0.0]), wv(&[4.0, 0.0])], vec![1.0, 1.0]).unwrap();
    let before = set.clone();
    let out = server_concept_match(&mut set, &[cluster(0, &[2.0, 0.0])], Metric::Manhattan).unwrap();
    ok &= out.assignments[0].matched_concept.is_none() && set == before;
    let fixtures_ok = ok;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut fuzz_failures = 0;
    for _ in 0..1000 {
        let k = rng.random_range(1..6);
        let dim = rng.random_range(2..6);
        let n_clusters = rng.random_range(1..6);
        let mut point = |s: f64| -> Vec<f64> { (0..dim).map(|_| rng.random_range(-s..s)).collect() };
        let models: Vec<Vec<f64>> = (0..k).map(|_| point(5.0)).collect();
        let clusters: Vec<Vec<f64>> = (0..n_clusters).map(|_| point(6.0)).collect();
        let records: Vec<f64> = (0..k)
            .map(|_| if rng.random_bool(0.3) { f64::INFINITY } else { rng.random_range(0.5..20.0) })
            .collect();

        let mut set =
            ConceptModelSet::with_records(models.iter().map(|m| wv(m)).collect(), records.clone()).unwrap();
        let aggregated: Vec<_> = clusters.iter().enumerate().map(|(j, c)| cluster(j, c)).collect();
        let out = server_concept_match(&mut set, &aggregated, Metric::Manhattan).unwrap();

        let mut o_models = models.clone();
        let mut o_record = records.clone();
        let expected = oracle_match(&mut o_models, &mut o_record, &clusters);
        let got: Vec<Option<usize>> = out.assignments.iter().map(|a| a.matched_concept).collect();
        let monotone = set.dist_record().iter().zip(&records).all(|(new, old)| new <= old);
        let conserved = (0..k).all(|i| got.contains(&Some(i)) || set.models()[i].values() == models[i].as_slice());
        let agrees = got == expected
            && set.dist_record() == o_record.as_slice()
            && set.models().iter().zip(&o_models).all(|(m, o)| m.values() == o.as_slice());
        if !(monotone && conserved && agrees) {
            fuzz_failures += 1;
        }
    }
    outcome(
        3,
        fixtures_ok && fuzz_failures == 0,
        format!(
            "fixtures {}, {} of 1000 fuzz rounds monotone, conserving and equal to the oracle",
            if fixtures_ok { "exact" } else { "WRONG" },
            1000 - fuzz_failures
        ),
    )
}

// 4. All three clusterers recover well separated blobs exactly.
fn blob_recovery() -> Outcome {
    let t = Instant::now();
    let mut failures = Vec::new();
    for inst in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + inst);
        let dim = rng.random_range(20..=200);
        let k = rng.random_range(2..=5);
        let sigma = 1.0;
        // Blob spread measured as RMS distance of a point from its centre.
        let spread = sigma * (dim as f64).sqrt();
        let min_gap = 10.0 * spread;
        let box_half = min_gap * k as f64;
        let mut centres: Vec<Vec<f64>> = Vec::new();
        while centres.len() < k {
            let c: Vec<f64> = (0..dim).map(|_| rng.random_range(-box_half..box_half)).collect();
            let far = centres
                .iter()
                .all(|o| o.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() >= min_gap);
            if far {
                centres.push(c);
            }
        }
        let noise = Normal::new(0.0, sigma).unwrap();
        let mut points = Vec::new();
        let mut truth = Vec::new();
        for (b, c) in centres.iter().enumerate() {
            for _ in 0..rng.random_range(4..=8) {
                points.push(c.iter().map(|x| x + noise.sample(&mut rng)).collect::<Vec<f64>>());
                truth.push(b);
            }
        }
        for alg in [
            Clustering::Kmeans { k, max_iters: 300 },
            Clustering::Agglomerative { k, linkage: Linkage::Average },
            Clustering::Dbscan { eps: None, min_samples: 3 },
        ] {
            let labels = alg.cluster(&points, inst).unwrap();
            if ari(&labels.labels, &truth).unwrap() != 1.0 {
                failures.push(format!("instance {inst} {alg:?}"));
            }
        }
    }
    let el = t.elapsed();
    outcome(
        4,
        failures.is_empty() && within(el, Duration::from_secs(10)),
        format!("{} of 60 (instance, algorithm) pairs exact in {el:.2?} {failures:?}", 60 - failures.len()),
    )
}

/// ARI from explicit pair counting over all C(n, 2) pairs.
fn brute_ari(a: &[usize], b: &[usize]) -> f64 {
    let (mut ss, mut sd, mut ds, mut dd) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => ss += 1.0,
                (true, false) => sd += 1.0,
                (false, true) => ds += 1.0,
                (false, false) => dd += 1.0,
            }
        }
    }
    let num = 2.0 * (ss * dd - sd * ds);
    let den = (ss + sd) * (sd + dd) + (ss + ds) * (ds + dd);
    if den == 0.0 {
        1.0
    } else {
        num / den
    }
}

// 5. ARI against brute force.
fn ari_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(2..=12);
        let ka = rng.random_range(1..=n.min(5));
        let kb = rng.random_range(1..=n.min(5));
        let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..ka)).collect();
        let b: Vec<usize> = (0..n).map(|_| rng.random_range(0..kb)).collect();
        worst = worst.max((ari(&a, &b).unwrap() - brute_ari(&a, &b)).abs());
    }
    outcome(5, worst <= 1e-12, format!("max |ARI - pair-count ARI| = {worst:.1e} over 100 pairs"))
}

fn desk(seed: u64, mode: Mode) -> RunConfig {
    RunConfig { seed, mode, ..RunConfig::desk() }
}

fn last_std(s: &RunSummary, concept: usize) -> f64 {
    let tail: Vec<f64> = s.rounds[s.rounds.len() - 20..].iter().map(|r| r.concept_accuracy[concept]).collect();
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    (tail.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / tail.len() as f64).sqrt()
}

// 6. Desk-scale comparison against the baseline on three seeds.
fn desk_comparison() -> Outcome {
    let t = Instant::now();
    let pairs: Vec<(RunSummary, RunSummary)> = (0..3u64)
        .into_par_iter()
        .map(|seed| (run(desk(seed, Mode::Cm)).unwrap(), run(desk(seed, Mode::Vanilla)).unwrap()))
        .collect();
    let mut gap_ok = true;
    let mut quality_ok = true;
    let mut smooth_ok = true;
    let mut parts = Vec::new();
    for (cm, va) in &pairs {
        let gap = 100.0 * (cm.final_weighted_accuracy - va.final_weighted_accuracy);
        let (ari_mean, cma) = (cm.mean_ari.unwrap(), cm.concept_matching_accuracy.unwrap());
        let smoother = (0..cm.config.n_concepts_true).all(|c| last_std(cm, c) < last_std(va, c));
        gap_ok &= gap >= 3.0;
        quality_ok &= cma >= 0.95;
        smooth_ok &= smoother;
        parts.push(format!("seed {}: gap {gap:+.1} pts, ARI {ari_mean:.3}, matching {cma:.3}", cm.seed));
    }
    let mean_ari = pairs.iter().map(|(cm, _)| cm.mean_ari.unwrap()).sum::<f64>() / 3.0;
    quality_ok &= mean_ari >= 0.9;
    outcome(
        6,
        gap_ok && quality_ok && smooth_ok,
        format!(
            "(a) {} (b) {} (c) {}; {} [{:.0?}]",
            if gap_ok { "pass" } else { "FAIL" },
            if quality_ok { "pass" } else { "FAIL" },
            if smooth_ok { "pass" } else { "FAIL" },
            parts.join("; "),
            t.elapsed()
        ),
    )
}

// 7. Matching accuracy across client counts and model sizes.
fn scalability() -> Outcome {
    let cells: Vec<(usize, f64)> =
        [20, 40, 80].iter().flat_map(|&n| [-0.2, 0.0, 0.2].map(|s| (n, s))).collect();
    let results: Vec<(usize, f64, f64)> = cells
        .into_par_iter()
        .map(|(n, scale)| {
            let mut cfg = desk(0, Mode::Cm);
            cfg.n_clients = n;
            cfg.model.scale = scale;
            (n, scale, run(cfg).unwrap().concept_matching_accuracy.unwrap())
        })
        .collect();
    let worst = results.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
    let cells: Vec<String> = results.iter().map(|(n, s, a)| format!("{n}/{s:+.1}: {a:.3}")).collect();
    outcome(7, worst >= 0.95, format!("min matching accuracy {worst:.3} [{}]", cells.join(", ")))
}

// 8. Wrong configured K.
fn wrong_k() -> Outcome {
    let results: Vec<(usize, Option<f64>)> = (3..=7usize)
        .into_par_iter()
        .map(|k| {
            let mut cfg = desk(0, Mode::Cm);
            cfg.n_concepts_configured = k;
            (k, run(cfg).ok().map(|s| s.final_weighted_accuracy))
        })
        .collect();
    let all_ran = results.iter().all(|r| r.1.is_some());
    let acc = |k: usize| results.iter().find(|r| r.0 == k).and_then(|r| r.1).unwrap_or(f64::NAN);
    let close = [6, 7].iter().all(|&k| (100.0 * (acc(k) - acc(5))).abs() <= 2.0);
    let list: Vec<String> = results.iter().map(|(k, a)| format!("K={k}: {:.3}", a.unwrap_or(f64::NAN))).collect();
    outcome(
        8,
        all_ran && close,
        format!(
            "all K ran: {all_ran}; K=6,7 within 2 pts of K=5: {close} [{}]",
            list.join(", ")
        ),
    )
}

// 9. Repeated runs give byte-identical CSV and JSON, through the library
// and through the binary.
fn determinism() -> Outcome {
    let mut cfg = desk(7, Mode::Cm);
    cfg.rounds = 6;
    let a = run(cfg.clone()).unwrap();
    let b = run(cfg.clone()).unwrap();
    let lib_same = report::rounds_csv(&a) == report::rounds_csv(&b)
        && report::summary_json(&a).unwrap() == report::summary_json(&b).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.json");
    std::fs::write(&config, serde_json::to_string(&cfg).unwrap()).unwrap();
    let mut outputs = Vec::new();
    for i in 0..2 {
        let out = dir.path().join(format!("out{i}"));
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_cmfl"))
            .args(["run", "--config"])
            .arg(&config)
            .args(["--seed", "7", "--out"])
            .arg(&out)
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        outputs.push((
            std::fs::read(out.join("cm_seed7.csv")).unwrap(),
            std::fs::read(out.join("cm_seed7.json")).unwrap(),
        ));
    }
    let cli_same = outputs[0] == outputs[1];
    outcome(9, lib_same && cli_same, format!("library identical: {lib_same}; cli identical: {cli_same}"))
}

fn main() {
    let mut results = vec![descent_contraction(), gradient_check(), matching_fixtures(), blob_recovery(), ari_oracle()];
    let heavy: [fn() -> Outcome; 4] = [desk_comparison, scalability, wrong_k, determinism];
    results.extend(heavy.into_par_iter().map(|f| f()).collect::<Vec<_>>());
    results.sort_by_key(|r| r.id);

    let mut unexpected = Vec::new();
    for r in &results {
        let known = KNOWN_RED.contains(&r.id);
        let tag = match (r.pass, known) {
            (true, false) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
            (true, true) => "PASS (listed as known red)",
        };
        println!("criterion {}: {tag}: {}", r.id, r.detail);
        if r.pass == known {
            unexpected.push(r.id);
        }
    }
    if !unexpected.is_empty() {
        println!("unexpected outcome for criteria {unexpected:?}");
        std::process::exit(1);
    }
}

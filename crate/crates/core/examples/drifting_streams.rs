//! Build five concepts, hand their training data to clients, and watch
//! which concept each client sees per round.

use std::io::BufWriter;

use cmfl::datagen::{export_csv, make_concepts, partition_to_clients, ConceptParams, Split, DEFAULT_WINDOW};

fn main() -> cmfl::Result<()> {
    let params = ConceptParams::default();
    let concepts = make_concepts(&params, 3)?;
    for c in &concepts {
        println!(
            "concept {}: classes {:?}, train/test/validation {}/{}/{}",
            c.concept_id(),
            c.spec.class_ids,
            c.train.len(),
            c.test.len(),
            c.validation.len()
        );
    }

    let mut clients = partition_to_clients(&concepts, 6, DEFAULT_WINDOW, 4)?;
    println!("client 0 holds {} samples of concept 0", clients[0].chunk(0).len());
    println!("round  concepts per client");
    for round in 0..8 {
        let seen: Vec<usize> = clients.iter_mut().map(|s| s.next_experience(round).true_concept).collect();
        println!("{round:>5}  {seen:?}");
    }

    let path = std::env::temp_dir().join("cmfl_concepts_test.csv");
    export_csv(&concepts, Split::Test, BufWriter::new(std::fs::File::create(&path)?))?;
    println!("test split written to {}", path.display());
    Ok(())
}

//! Train the MLP on one synthetic concept and check the analytic gradient
//! against central differences.

use cmfl::datagen::{make_concepts, ConceptParams};
use cmfl::model::{accuracy, gradient, init_weights, loss, train, AdamState, LayerShape, TrainParams, WeightVector};

fn main() -> cmfl::Result<()> {
    let params = ConceptParams { k: 1, samples_per_class: 500, ..ConceptParams::default() };
    let concept = make_concepts(&params, 11)?.remove(0);
    let shape = LayerShape::new(params.input_dim, vec![16], params.classes_per_concept)?;
    let w0 = init_weights(&shape, 1)?;
    println!("{} parameters, initial test accuracy {:.3}", shape.parameter_count(), accuracy(&w0, &concept.test)?);

    let opt = AdamState::new(w0.len(), 0.01);
    let (w, opt) = train(&w0, &concept.train, opt, &TrainParams::default(), 2)?;
    println!(
        "after {} Adam steps: train loss {:.4}, test accuracy {:.3}",
        opt.step_count,
        loss(&w, &concept.train)?,
        accuracy(&w, &concept.test)?
    );

    let batch = concept.validation.select(&(0..20).collect::<Vec<_>>());
    let g = gradient(&w, &batch)?;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..w.len() {
        let mut plus = w.values().to_vec();
        let mut minus = plus.clone();
        plus[i] += h;
        minus[i] -= h;
        let fd = (loss(&WeightVector::new(shape.clone(), plus)?, &batch)?
            - loss(&WeightVector::new(shape.clone(), minus)?, &batch)?)
            / (2.0 * h);
        let rel = (g.values()[i] - fd).abs() / g.values()[i].abs().max(fd.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    println!("worst relative gradient error: {worst:.2e}");
    Ok(())
}

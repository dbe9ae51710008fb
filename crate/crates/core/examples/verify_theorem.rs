//! Gradient descent on random strongly convex quadratics: step lengths and
//! gradient norms shrink every iteration when the step size is below
//! 1 / lambda_max.

use cmfl::matching::{random_descent_instance, verify_descent_contraction};

fn main() -> cmfl::Result<()> {
    let mut passed = 0;
    for trial in 0..20u64 {
        let dim = 1 + (trial as usize * 7) % 20;
        let inst = random_descent_instance(dim, trial);
        let trace = verify_descent_contraction(&inst.quad, &inst.w0, inst.eta, 100)?;
        println!(
            "trial {trial:>2} dim {dim:>2}: step {:.3e} -> {:.3e}, grad {:.3e} -> {:.3e}, {}",
            trace.step_norms[0],
            trace.step_norms.last().unwrap(),
            trace.grad_norms[0],
            trace.grad_norms.last().unwrap(),
            if trace.holds() { "ok" } else { "violated" }
        );
        passed += trace.holds() as usize;
    }
    println!("{passed}/20 contract");

    // A step size past 1 / lambda_max is refused.
    let inst = random_descent_instance(3, 99);
    let too_big = 1.5 / inst.quad.lipschitz()?;
    println!("eta = 1.5 / L: {:?}", verify_descent_contraction(&inst.quad, &inst.w0, too_big, 10).err());
    Ok(())
}

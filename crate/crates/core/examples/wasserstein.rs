//! Exact transport between small point clouds, and the 1D quantile formula.

use tumor_control::measures::wasserstein_lp_with_plan;
use tumor_control::prelude::*;

fn main() -> tumor_control::Result<()> {
    let a = EmpiricalMeasure::from_samples_1d(&[0.0, 1.0])?;
    let b = EmpiricalMeasure::from_samples_1d(&[0.5, 0.5])?;
    println!("W1 {{0,1}} vs {{0.5,0.5}}: quantile {:.3}, lp {:.3}", wasserstein_1d(1.0, &a, &b)?, wasserstein_lp(1.0, &a, &b)?);

    let mu = EmpiricalMeasure::from_samples_2d(&[[0.1, 0.2], [0.4, 0.9], [0.8, 0.5]])?;
    let nu = EmpiricalMeasure::new(2, vec![[0.2, 0.2], [0.7, 0.6]], vec![0.25, 0.75])?;
    for rho in [1.0, 2.0] {
        let sol = wasserstein_lp_with_plan(rho, &mu, &nu)?;
        println!("\nW{rho} = {:.5}; coupling (from, to, mass):", sol.distance);
        for (i, j, m) in sol.plan.flows.iter().filter(|f| f.2 > 0.0) {
            println!("  {i} -> {j}: {m:.3}");
        }
    }
    Ok(())
}

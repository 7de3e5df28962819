//! Interacting particles: the coupling statistic is the population mean of x2.

use tumor_control::prelude::*;

fn main() -> tumor_control::Result<()> {
    let p = ModelParams { sigma_g: 0.2, sigma_d: 0.2, sigma_v: 0.2, ..ModelParams::default() };
    let grid = TimeGrid::new(5.0, 50)?;
    let st0 = State::new(0.4, 0.5)?;

    for coupling in [CouplingKind::Zero, CouplingKind::MeanX2] {
        println!("coupling {coupling}");
        let mut last = None;
        for n in [64, 256, 1024] {
            let run = evolve_ensemble(&p, &Policy::Zero, &Ensemble::replicate(st0, n)?, &grid, &coupling, SeedSpec::new(5, 0))?;
            let x2: Vec<f64> = run.final_ensemble().particles.iter().map(|s| s.x2).collect();
            let law = EmpiricalMeasure::from_samples_1d(&x2)?;
            let mean = x2.iter().sum::<f64>() / n as f64;
            let theta_end = run.thetas.last().map_or(0.0, |t| t.value);
            print!("  N = {n:5}: mean x2 {mean:.4}, last theta {theta_end:.4}");
            if let Some(prev) = &last {
                print!(", W2 to previous N {:.4}", wasserstein_1d(2.0, prev, &law)?);
            }
            println!();
            last = Some(law);
        }
    }
    Ok(())
}

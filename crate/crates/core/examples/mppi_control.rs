//! Path-integral dose planning: an open-loop plan, then receding-horizon feedback.

use tumor_control::prelude::*;

fn main() -> tumor_control::Result<()> {
    let grid = TimeGrid::new(5.0, 100)?;
    let p = ModelParams { sigma_g: 0.1, sigma_d: 0.1, sigma_v: 0.1, failure_penalty_m: 50.0, ..ModelParams::default() };
    let st0 = State::new(0.4, 0.5)?;
    let cfg = PicConfig {
        k_steps: 100,
        n_rollouts: 256,
        temperature_lambda: 1.5,
        proposal_std: 1.0,
        n_iterations: 4,
        u_init: vec![p.u_max],
        n_eval: 64,
        noise_paths: 8,
        proposal_block: 10,
    };

    let (plan, diag) = mppi_plan(&p, st0, &grid, &cfg, CouplingStat::ZERO, SeedSpec::new(1, 0))?;
    println!("sampled cost per iteration {:?}", diag.cost_trace.iter().map(|c| format!("{c:.3}")).collect::<Vec<_>>());
    println!("accepted {:?}", diag.accepted);
    let every10: Vec<String> = plan.doses.iter().step_by(10).map(|u| format!("{u:.2}")).collect();
    println!("plan (every 10th step): {}", every10.join(" "));

    let feedback_cfg = PicConfig { n_rollouts: 128, n_iterations: 1, ..cfg };
    for seed in 0..3 {
        let tr = mppi_feedback(&p, st0, &grid, &feedback_cfg, &CouplingKind::Zero, SeedSpec::new(seed, 0))?;
        let last = tr.final_state();
        println!(
            "feedback run {seed}: cost {:.3}, final x2 {:.3}, dose integral {:.3}, {:?}",
            tr.total_cost,
            last.x2,
            grid.dt() * tr.controls.iter().sum::<f64>(),
            tr.terminal
        );
    }
    Ok(())
}

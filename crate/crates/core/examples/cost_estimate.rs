//! Compare simple dosing rules by Monte Carlo on common noise.

use tumor_control::prelude::*;

fn main() -> tumor_control::Result<()> {
    let grid = TimeGrid::new(5.0, 100)?;
    let p = ModelParams {
        sigma_g: 0.2,
        sigma_d: 0.2,
        sigma_v: 0.2,
        failure_penalty_m: 100.0 * 0.1 * grid.horizon_t,
        ..ModelParams::default()
    };
    let st0 = State::new(0.4, 0.5)?;
    let policies = [
        Policy::Zero,
        Policy::Constant(0.5),
        Policy::Constant(p.u_max),
        Policy::Threshold { x2_star: 0.3, lo: 0.0, hi: p.u_max },
    ];
    println!("{:<24} {:>9} {:>8} {:>9} {:>9}", "policy", "cost", "se", "success", "failure");
    for policy in &policies {
        let r = estimate_j(&p, policy, st0, &grid, &CouplingKind::Zero, 1000, 3)?;
        println!(
            "{:<24} {:9.3} {:8.3} {:9.3} {:9.3}",
            policy.to_string(),
            r.mean_cost,
            r.std_error,
            r.success_rate,
            r.failure_rate
        );
    }
    Ok(())
}

//! Simulate a handful of controlled paths and optionally write them as CSV.
//!
//! `cargo run --example simulate_paths -- [out_dir]`

use std::path::PathBuf;

use tumor_control::prelude::*;

fn main() -> tumor_control::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from);
    let p = ModelParams { sigma_g: 0.2, sigma_d: 0.15, sigma_v: 0.1, ..ModelParams::default() };
    let grid = TimeGrid::new(5.0, 100)?;
    let st0 = State::new(0.4, 0.5)?;
    let thetas = vec![CouplingStat::ZERO; grid.k_steps];

    // full dose while the glycolytic share is above 0.15
    let policy = Policy::Threshold { x2_star: 0.15, lo: 0.0, hi: p.u_max };
    if let Some(dir) = &out {
        std::fs::create_dir_all(dir)?;
    }
    println!("path  final x1  final x2  dose integral  cost     outcome");
    for i in 0..8 {
        let tr = rollout(&p, &policy, st0, &grid, &thetas, SeedSpec::new(2024, i))?;
        let last = tr.final_state();
        let dose: f64 = grid.dt() * tr.controls.iter().sum::<f64>();
        println!("{i:4}  {:8.4}  {:8.4}  {dose:13.3}  {:7.3}  {:?}", last.x1, last.x2, tr.total_cost, tr.terminal);
        if let Some(dir) = &out {
            tr.save_csv(&dir.join(format!("path_{i:02}.csv")))?;
        }
    }
    Ok(())
}

//! Solve the decoupled HJB equation on a grid, read off the dosing rule
//! and check the value against Monte Carlo.
//!
//! `cargo run --release --example hjb_oracle -- [out_dir]`

use std::path::PathBuf;
use std::sync::Arc;

use tumor_control::hjb::richardson_truncation;
use tumor_control::prelude::*;

fn main() -> tumor_control::Result<()> {
    let grid = TimeGrid::new(5.0, 100)?;
    let p = ModelParams { sigma_g: 0.2, sigma_d: 0.2, sigma_v: 0.2, failure_penalty_m: 50.0, ..ModelParams::default() };
    let cfg = HjbConfig { nx1: 65, nx2: 65, ..HjbConfig::default() };
    let st0 = State::new(0.4, 0.5)?;

    let vg = hjb_solve(&p, &grid, &cfg)?;
    println!("{}x{} grid, {} layers, {} substeps per layer", vg.nx1, vg.nx2, vg.nt, vg.substeps);
    println!("V(0, x0) = {:.4}", vg.value(0, st0.to_array())?);
    println!("grid truncation estimate {:.4}", richardson_truncation(&p, &grid, &cfg, st0, Some(&vg))?);

    // dose map at t = 0: '#' full dose, '.' none
    let policy = HjbPolicy::new(vg.clone());
    println!("\ndose at s = 0 (rows x2 from 1 down to 0, columns x1 from 0 to 1):");
    for r in (0..=10).rev() {
        let row: String =
            (0..=20).map(|c| if policy.dose(0.0, [c as f64 / 20.0, r as f64 / 10.0]).unwrap_or(0.0) > 0.0 { '#' } else { '.' }).collect();
        println!("  {:.1} {row}", r as f64 / 10.0);
    }

    let check = value_vs_rollout(&p, &vg, st0, 1000, &CouplingKind::Zero, 1)?;
    println!("\nMonte Carlo of the grid policy {:.4} +/- {:.4}", check.mc_mean_cost, check.std_error);
    let zero = estimate_j(&p, &Policy::Zero, st0, &grid, &CouplingKind::Zero, 1000, 1)?;
    let hjb = estimate_j(&p, &Policy::Hjb(Arc::new(policy)), st0, &grid, &CouplingKind::Zero, 1000, 1)?;
    println!("no treatment {:.4}, grid policy {:.4}", zero.mean_cost, hjb.mean_cost);

    if let Some(dir) = std::env::args().nth(1).map(PathBuf::from) {
        let header = vg.save(&dir, "value_grid")?;
        println!("wrote {}", header.display());
    }
    Ok(())
}

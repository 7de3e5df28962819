//! Evaluate the tumor SDE coefficients at a few states.
//!
//! Run with `cargo run --example model_drift`.

use tumor_control::model::{
    classify_terminal, diffusion, drift, fractions_from_counts, state_from_fractions, vop_benefit_factor_from_geometric,
};
use tumor_control::prelude::*;

fn main() -> tumor_control::Result<()> {
    // cell counts -> (VOP share of aerobic cells, GLY share)
    let f = fractions_from_counts(200.0, 300.0, 500.0)?;
    let st = state_from_fractions(f)?;
    println!("fractions g/d/v = {:.2}/{:.2}/{:.2} -> state ({:.3}, {:.3})", f.b_g, f.b_d, f.b_v, st.x1, st.x2);

    let p = ModelParams {
        vop_benefit_factor: vop_benefit_factor_from_geometric(0.5, 2)?,
        sigma_g: 0.2,
        sigma_d: 0.1,
        sigma_v: 0.1,
        ..ModelParams::default()
    };
    println!("VOP benefit factor {:.3}", p.vop_benefit_factor);

    let theta = CouplingStat::ZERO;
    println!("\n  x1    x2    u    mu1       mu2");
    for (x1, x2) in [(0.625, 0.2), (0.4, 0.5), (0.4, 0.8)] {
        let s = State::new(x1, x2)?;
        for u in [0.0, p.u_max] {
            let mu = drift(s, u, theta, &p)?;
            println!("{x1:5.3} {x2:5.3} {u:4.1} {:+.5} {:+.5}", mu[0], mu[1]);
        }
    }

    let sg = diffusion(st, theta, &p)?;
    println!("\ndiffusion at ({:.3}, {:.3}):", st.x1, st.x2);
    for row in sg {
        println!("  [{:+.5} {:+.5} {:+.5}]", row[0], row[1], row[2]);
    }

    for x2 in [0.1, 0.5, 0.9] {
        let s = State::new(0.5, x2)?;
        println!("x2 = {x2}: {:?}", classify_terminal(s, &p));
    }
    Ok(())
}

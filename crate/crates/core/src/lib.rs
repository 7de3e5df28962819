//! Stochastic control of tumor composition under drug dosing.
//!
//! The tumor is summarised by two fractions, the VEGF-producer share of the
//! aerobic cells and the glycolytic share of the whole tumor, which follow a
//! controlled McKean–Vlasov SDE. The crate provides
//!
//! - the drift and diffusion of that SDE ([`model`]),
//! - Euler–Maruyama paths and interacting particle ensembles ([`simulate`]),
//! - empirical measures and exact Wasserstein distances ([`measures`]),
//! - the treatment cost and Monte Carlo estimates of it ([`cost`]),
//! - a sampling-based path-integral (MPPI) dose planner ([`pic`]),
//! - a finite-difference HJB solution of the decoupled problem ([`hjb`]),
//! - run configuration and the `tumorctl` front end ([`config`], [`cli`]).
//!
//! ```
//! use tumor_control::prelude::*;
//!
//! let p = ModelParams::default();
//! let grid = TimeGrid::new(5.0, 50).unwrap();
//! let st0 = State::new(0.4, 0.5).unwrap();
//! let report = estimate_j(&p, &Policy::Zero, st0, &grid, &CouplingKind::Zero, 64, 7).unwrap();
//! assert!(report.mean_cost >= p.stabilization_weight_e * grid.horizon_t);
//! ```

pub mod cli;
pub mod config;
pub mod cost;
pub mod error;
pub mod hjb;
pub mod measures;
pub mod model;
pub mod pic;
pub mod policy;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};

/// The types and functions most programs need.
pub mod prelude {
    pub use crate::cost::{estimate_j, estimate_j_with_paths, path_cost, terminal_cost, CostReport};
    pub use crate::error::{Error, Result};
    pub use crate::hjb::{hjb_solve, value_vs_rollout, HjbConfig, HjbPolicy, ValueGrid};
    pub use crate::measures::{wasserstein_1d, wasserstein_lp, CouplingKind, EmpiricalMeasure};
    pub use crate::model::{CouplingStat, Dynamics, ModelParams, State, TerminalClass};
    pub use crate::pic::{mppi_feedback, mppi_plan, ControlSequence, PicConfig};
    pub use crate::policy::Policy;
    pub use crate::rng::SeedSpec;
    pub use crate::simulate::{evolve_ensemble, rollout, Ensemble, TimeGrid, TrajectoryBundle};
}

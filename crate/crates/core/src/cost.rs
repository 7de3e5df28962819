//! Treatment cost: running dose plus a stabilization charge, a terminal
//! penalty for failed therapy, and Monte Carlo estimates of the expected cost.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::CouplingKind;
use crate::model::{classify_terminal, CouplingStat, Dynamics, ModelParams, State, TerminalClass};
use crate::policy::Policy;
use crate::rng::SeedSpec;
use crate::simulate::{evolve_ensemble, Ensemble, TimeGrid, TrajectoryBundle};

/// Running cost rate `u + e`.
#[inline]
pub fn running_cost(u: f64, p: &ModelParams) -> f64 {
    u + p.stabilization_weight_e
}

pub fn terminal_cost(st: State, p: &ModelParams) -> f64 {
    match classify_terminal(st, p) {
        TerminalClass::Success => 0.0,
        TerminalClass::Failure => p.failure_penalty_m,
        TerminalClass::Indeterminate => {
            if p.indeterminate_is_failure {
                p.failure_penalty_m
            } else {
                0.0
            }
        }
    }
}

/// `dt * sum u_i + e * t + terminal`, the left-endpoint quadrature of the dose
/// integral plus the exact stabilization term.
#[inline]
pub fn cost_from_parts(dose_sum: f64, grid: &TimeGrid, last: State, p: &ModelParams) -> f64 {
    grid.dt() * dose_sum + p.stabilization_weight_e * grid.horizon_t + terminal_cost(last, p)
}

pub fn path_cost(tr: &TrajectoryBundle, p: &ModelParams) -> f64 {
    let dose_sum: f64 = tr.controls.iter().sum();
    cost_from_parts(dose_sum, &tr.grid, tr.final_state(), p)
}

/// Path cost under a general running cost `h(s, x, u, theta)`, left-endpoint rule.
pub fn path_cost_with<H>(tr: &TrajectoryBundle, p: &ModelParams, theta_path: &[CouplingStat], h: H) -> Result<f64>
where
    H: Fn(f64, State, f64, CouplingStat) -> f64,
{
    if theta_path.len() != tr.controls.len() {
        return Err(Error::InvalidInput("theta path length differs from the control record".into()));
    }
    let dt = tr.grid.dt();
    let integral: f64 = tr
        .controls
        .iter()
        .enumerate()
        .map(|(i, &u)| h(tr.grid.time(i), tr.states[i], u, theta_path[i]) * dt)
        .sum();
    Ok(integral + terminal_cost(tr.final_state(), p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostReport {
    pub mean_cost: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub failure_rate: f64,
    pub success_rate: f64,
    pub mean_dose_integral: f64,
}

/// Mean and standard error, with the mean anchored at the first sample so a
/// constant sample reproduces that constant exactly.
pub fn mean_and_std_error(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let anchor = xs[0];
    let shift: f64 = xs.iter().map(|x| x - anchor).sum::<f64>() / n as f64;
    let mean = anchor + shift;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1) as f64 / n as f64).sqrt())
}

impl CostReport {
    pub fn from_bundles(bundles: &[TrajectoryBundle], p: &ModelParams) -> Self {
        let n = bundles.len();
        let costs: Vec<f64> = bundles.iter().map(|b| b.total_cost).collect();
        let doses: Vec<f64> = bundles.iter().map(|b| b.grid.dt() * b.controls.iter().sum::<f64>()).collect();
        let (mean_cost, std_error) = mean_and_std_error(&costs);
        let (mean_dose_integral, _) = mean_and_std_error(&doses);
        // the penalty is what decides failure; classification alone ignores indeterminate_is_failure
        let failures = bundles.iter().filter(|b| terminal_cost(b.final_state(), p) > 0.0).count();
        let successes = bundles.iter().filter(|b| b.terminal == TerminalClass::Success).count();
        Self {
            mean_cost,
            std_error,
            n_samples: n,
            failure_rate: failures as f64 / n as f64,
            success_rate: successes as f64 / n as f64,
            mean_dose_integral: mean_dose_integral.max(0.0),
        }
    }
}

/// Monte Carlo estimate of the expected treatment cost of `policy` from `st0`.
///
/// Sample `i` uses noise stream `(master_seed, i)`. With a nonzero coupling the
/// samples form one interacting ensemble.
#[allow(clippy::too_many_arguments)]
pub fn estimate_j<D: Dynamics>(
    sys: &D,
    policy: &Policy,
    st0: State,
    grid: &TimeGrid,
    coupling: &CouplingKind,
    n_samples: usize,
    master_seed: u64,
) -> Result<CostReport> {
    Ok(estimate_j_with_paths(sys, policy, st0, grid, coupling, n_samples, master_seed)?.0)
}

/// [`estimate_j`] that also hands back every simulated path.
pub fn estimate_j_with_paths<D: Dynamics>(
    sys: &D,
    policy: &Policy,
    st0: State,
    grid: &TimeGrid,
    coupling: &CouplingKind,
    n_samples: usize,
    master_seed: u64,
) -> Result<(CostReport, Vec<TrajectoryBundle>)> {
    if n_samples < 2 {
        return Err(Error::InvalidInput(format!("n_samples must be >= 2, got {n_samples}")));
    }
    let ens = Ensemble::replicate(st0, n_samples)?;
    let run = evolve_ensemble(sys, policy, &ens, grid, coupling, SeedSpec::new(master_seed, 0))?;
    let report = CostReport::from_bundles(&run.trajectories, sys.params());
    Ok((report, run.trajectories))
}

/// Largest gap between the recorded path and the unprojected Euler sum
/// `x0 + sum_j (mu_j dt + sigma_j dW_j)`, i.e. the accumulated projection correction.
pub fn lagrangian_residual<D: Dynamics>(tr: &TrajectoryBundle, sys: &D, theta_path: &[CouplingStat]) -> Result<f64> {
    let k = tr.grid.k_steps;
    if tr.noise.len() != k {
        return Err(Error::InvalidInput(format!(
            "bundle carries {} noise increments, expected {k}",
            tr.noise.len()
        )));
    }
    if theta_path.len() != k || tr.controls.len() != k || tr.states.len() != k + 1 {
        return Err(Error::InvalidInput("bundle and theta path lengths are inconsistent".into()));
    }
    let dt = tr.grid.dt();
    let mut raw = tr.states[0].to_array();
    let mut worst = 0.0f64;
    for (j, th) in theta_path.iter().enumerate() {
        let x = tr.states[j].to_array();
        let theta = th.value;
        let mu = sys.drift(x, tr.controls[j], theta);
        let sg = sys.diffusion(x, theta);
        let dw = tr.noise[j];
        // same association order as the integrator, so unclamped paths agree bitwise
        raw = [
            raw[0] + mu[0] * dt + sg[0][0] * dw[0] + sg[0][1] * dw[1] + sg[0][2] * dw[2],
            raw[1] + mu[1] * dt + sg[1][0] * dw[0] + sg[1][1] * dw[1] + sg[1][2] * dw[2],
        ];
        let next = tr.states[j + 1];
        let gap = ((next.x1 - raw[0]).powi(2) + (next.x2 - raw[1]).powi(2)).sqrt();
        worst = worst.max(gap);
    }
    Ok(worst)
}

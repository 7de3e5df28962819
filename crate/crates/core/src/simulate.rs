//! Euler–Maruyama simulation of the controlled SDE.
//!
//! Single trajectories ([`rollout`]), interacting particle ensembles whose
//! empirical law feeds the coupling statistic ([`particle_evolve`]), and a
//! noise-free RK4 replicator integrator used as a deterministic reference.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost;
use crate::error::{Error, Result};
use crate::measures::CouplingKind;
use crate::model::{classify_terminal, CouplingStat, Dynamics, ModelParams, State, TerminalClass};
use crate::policy::{DecisionPoint, Policy, PolicyRun};
use crate::rng::{NoiseStream, SeedSpec};

/// Uniform grid `s_i = i * dt`, `i = 0..=k_steps`, on `[0, horizon_t]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeGrid {
    pub horizon_t: f64,
    pub k_steps: usize,
}

impl Default for TimeGrid {
    fn default() -> Self {
        Self { horizon_t: 5.0, k_steps: 100 }
    }
}

impl TimeGrid {
    pub fn new(horizon_t: f64, k_steps: usize) -> Result<Self> {
        let g = Self { horizon_t, k_steps };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon_t.is_finite() && self.horizon_t > 0.0) {
            return Err(Error::InvalidInput(format!("horizon_t must be > 0, got {}", self.horizon_t)));
        }
        if self.k_steps < 1 {
            return Err(Error::InvalidInput("k_steps must be >= 1".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.horizon_t / self.k_steps as f64
    }

    #[inline]
    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt()
    }

    /// Grid with the same spacing covering the first `steps` intervals.
    pub fn truncated(&self, steps: usize) -> TimeGrid {
        TimeGrid { horizon_t: self.dt() * steps as f64, k_steps: steps }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub particles: Vec<State>,
}

impl Ensemble {
    pub fn new(particles: Vec<State>) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::InvalidInput("ensemble needs at least one particle".into()));
        }
        for p in &particles {
            p.check()?;
        }
        Ok(Self { particles })
    }

    pub fn replicate(st: State, n: usize) -> Result<Self> {
        Self::new(vec![st; n])
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }
}

/// A simulated path with everything needed to audit it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBundle {
    pub grid: TimeGrid,
    /// `k + 1` states.
    pub states: Vec<State>,
    /// `k` doses, dose `i` applied on `[s_i, s_{i+1})`.
    pub controls: Vec<f64>,
    /// `k` Brownian increments `(dW_g, dW_d, dW_v)`.
    pub noise: Vec<[f64; 3]>,
    /// `k` running cost rates.
    pub running_costs: Vec<f64>,
    pub terminal: TerminalClass,
    pub total_cost: f64,
}

impl TrajectoryBundle {
    pub fn final_state(&self) -> State {
        *self.states.last().expect("bundle holds at least the initial state")
    }

    /// CSV with header `step,s,x1,x2,u,dW_g,dW_d,dW_v,running_cost`.
    ///
    /// The last row carries the terminal state and leaves the per-step columns empty.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,s,x1,x2,u,dW_g,dW_d,dW_v,running_cost")?;
        let k = self.grid.k_steps;
        for (i, st) in self.states.iter().enumerate() {
            let s = self.grid.time(i);
            if i < k {
                let dw = self.noise.get(i).copied().unwrap_or([0.0; 3]);
                writeln!(
                    w,
                    "{i},{s},{},{},{},{},{},{},{}",
                    st.x1, st.x2, self.controls[i], dw[0], dw[1], dw[2], self.running_costs[i]
                )?;
            } else {
                writeln!(w, "{i},{s},{},{},,,,,", st.x1, st.x2)?;
            }
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(f)
    }
}

/// One Euler–Maruyama step followed by the model's projection.
#[inline]
pub fn em_step_raw<D: Dynamics + ?Sized>(
    sys: &D,
    x: [f64; 2],
    u: f64,
    theta: f64,
    dt: f64,
    dw: [f64; 3],
) -> [f64; 2] {
    let mu = sys.drift(x, u, theta);
    let sg = sys.diffusion(x, theta);
    let raw = [
        x[0] + mu[0] * dt + sg[0][0] * dw[0] + sg[0][1] * dw[1] + sg[0][2] * dw[2],
        x[1] + mu[1] * dt + sg[1][0] * dw[0] + sg[1][1] * dw[1] + sg[1][2] * dw[2],
    ];
    sys.project(raw)
}

pub fn em_step(
    st: State,
    u: f64,
    theta: CouplingStat,
    dt: f64,
    dw: [f64; 3],
    p: &ModelParams,
) -> Result<State> {
    st.check()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidInput(format!("dt must be > 0, got {dt}")));
    }
    if dw.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("non-finite Brownian increment {dw:?}")));
    }
    Ok(State::from_array(em_step_raw(p, st.to_array(), u, theta.value, dt, dw)))
}

/// Where the Brownian increments of a rollout come from.
pub enum NoiseSource<'a> {
    Seeded(SeedSpec),
    /// Prescribed increments, one per step.
    Given(&'a [[f64; 3]]),
}

pub fn rollout<D: Dynamics>(
    sys: &D,
    policy: &Policy,
    st0: State,
    grid: &TimeGrid,
    theta_path: &[CouplingStat],
    seed: SeedSpec,
) -> Result<TrajectoryBundle> {
    rollout_with_noise(sys, policy, st0, grid, theta_path, seed, NoiseSource::Seeded(seed))
}

/// [`rollout`] with an explicit noise source; `seed` still keys any planner inside `policy`.
pub fn rollout_with_noise<D: Dynamics>(
    sys: &D,
    policy: &Policy,
    st0: State,
    grid: &TimeGrid,
    theta_path: &[CouplingStat],
    seed: SeedSpec,
    noise: NoiseSource<'_>,
) -> Result<TrajectoryBundle> {
    grid.validate()?;
    st0.check()?;
    let k = grid.k_steps;
    if theta_path.len() != k {
        return Err(Error::InvalidInput(format!(
            "theta path has {} entries, grid has {k} steps",
            theta_path.len()
        )));
    }
    let mut stream = match noise {
        NoiseSource::Seeded(s) => Some(s.stream()),
        NoiseSource::Given(g) => {
            if g.len() != k {
                return Err(Error::InvalidInput(format!(
                    "given noise has {} increments, grid has {k} steps",
                    g.len()
                )));
            }
            None
        }
    };
    let given = match noise {
        NoiseSource::Given(g) => g,
        NoiseSource::Seeded(_) => &[][..],
    };

    let p = sys.params();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let mut run = policy.start();
    let mut states = Vec::with_capacity(k + 1);
    let mut controls = Vec::with_capacity(k);
    let mut increments = Vec::with_capacity(k);
    let mut running = Vec::with_capacity(k);
    let mut x = st0.to_array();
    states.push(st0);
    for (i, theta) in theta_path.iter().enumerate() {
        let at = DecisionPoint { step: i, time: grid.time(i), state: x, theta: theta.value, grid, seed };
        let u = run.dose(sys, &at)?;
        let dw = match stream.as_mut() {
            Some(s) => s.brownian_increment(sqrt_dt),
            None => given[i],
        };
        if dw.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite Brownian increment at step {i}")));
        }
        x = em_step_raw(sys, x, u, theta.value, dt, dw);
        states.push(State::from_array(x));
        controls.push(u);
        increments.push(dw);
        running.push(cost::running_cost(u, p));
    }
    let last = State::from_array(x);
    let dose_sum: f64 = controls.iter().sum();
    Ok(TrajectoryBundle {
        grid: *grid,
        states,
        controls,
        noise: increments,
        running_costs: running,
        terminal: classify_terminal(last, p),
        total_cost: sys.trajectory_cost(dose_sum, grid, last),
    })
}

/// Result of an interacting-particle run.
#[derive(Debug, Clone)]
pub struct EnsembleRun {
    /// `k + 1` snapshots, starting with the initial ensemble.
    pub snapshots: Vec<Ensemble>,
    /// Coupling statistic used on each of the `k` steps.
    pub thetas: Vec<CouplingStat>,
    /// Full record of every particle's path, in particle order.
    pub trajectories: Vec<TrajectoryBundle>,
}

impl EnsembleRun {
    pub fn final_ensemble(&self) -> &Ensemble {
        self.snapshots.last().expect("run holds the initial ensemble")
    }
}

struct Particle<'a> {
    x: [f64; 2],
    stream: NoiseStream,
    run: PolicyRun<'a>,
    seed: SeedSpec,
    states: Vec<State>,
    controls: Vec<f64>,
    noise: Vec<[f64; 3]>,
}

/// Advance an ensemble; particle `i` draws from stream `(seed.master_seed, seed.stream_id + i)`.
///
/// The coupling statistic is computed from a snapshot before each step; the
/// particle updates then run in parallel. Every reduction happens in particle
/// index order, so results do not depend on the thread count.
pub fn evolve_ensemble<D: Dynamics>(
    sys: &D,
    policy: &Policy,
    ens0: &Ensemble,
    grid: &TimeGrid,
    coupling: &CouplingKind,
    seed: SeedSpec,
) -> Result<EnsembleRun> {
    grid.validate()?;
    if ens0.is_empty() {
        return Err(Error::InvalidInput("ensemble needs at least one particle".into()));
    }
    let k = grid.k_steps;
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let mut particles: Vec<Particle<'_>> = ens0
        .particles
        .iter()
        .enumerate()
        .map(|(i, st)| {
            st.check()?;
            let s = SeedSpec::new(seed.master_seed, seed.stream_id.wrapping_add(i as u64));
            let mut states = Vec::with_capacity(k + 1);
            states.push(*st);
            Ok(Particle {
                x: st.to_array(),
                stream: s.stream(),
                run: policy.start(),
                seed: s,
                states,
                controls: Vec::with_capacity(k),
                noise: Vec::with_capacity(k),
            })
        })
        .collect::<Result<_>>()?;
    let mut snapshots = Vec::with_capacity(k + 1);
    snapshots.push(ens0.clone());
    let mut thetas = Vec::with_capacity(k);
    for i in 0..k {
        let theta = coupling.evaluate(snapshots.last().expect("nonempty").particles.iter().copied());
        thetas.push(theta);
        let time = grid.time(i);
        particles.par_iter_mut().try_for_each(|pt| -> Result<()> {
            let at = DecisionPoint { step: i, time, state: pt.x, theta: theta.value, grid, seed: pt.seed };
            let u = pt.run.dose(sys, &at)?;
            let dw = pt.stream.brownian_increment(sqrt_dt);
            pt.x = em_step_raw(sys, pt.x, u, theta.value, dt, dw);
            pt.states.push(State::from_array(pt.x));
            pt.controls.push(u);
            pt.noise.push(dw);
            Ok(())
        })?;
        snapshots.push(Ensemble { particles: particles.iter().map(|pt| State::from_array(pt.x)).collect() });
    }
    let p = sys.params();
    let trajectories = particles
        .into_iter()
        .map(|pt| {
            let last = State::from_array(pt.x);
            let dose_sum: f64 = pt.controls.iter().sum();
            TrajectoryBundle {
                grid: *grid,
                running_costs: pt.controls.iter().map(|&u| cost::running_cost(u, p)).collect(),
                terminal: classify_terminal(last, p),
                total_cost: sys.trajectory_cost(dose_sum, grid, last),
                states: pt.states,
                controls: pt.controls,
                noise: pt.noise,
            }
        })
        .collect();
    Ok(EnsembleRun { snapshots, thetas, trajectories })
}

/// Ensemble snapshots per time step (`k + 1` of them).
pub fn particle_evolve<D: Dynamics>(
    sys: &D,
    policy: &Policy,
    ens0: &Ensemble,
    grid: &TimeGrid,
    coupling: &CouplingKind,
    seed: SeedSpec,
) -> Result<Vec<Ensemble>> {
    Ok(evolve_ensemble(sys, policy, ens0, grid, coupling, seed)?.snapshots)
}

/// Classical RK4 on the noise-free drift (all volatilities zeroed, no coupling) at a fixed dose.
pub fn replicator_ode(p: &ModelParams, st0: State, grid: &TimeGrid, u_const: f64) -> Result<Vec<[f64; 2]>> {
    st0.check()?;
    grid.validate()?;
    let quiet = ModelParams { sigma_g: 0.0, sigma_d: 0.0, sigma_v: 0.0, ..p.clone() };
    let f = |x: [f64; 2]| quiet.drift(x, u_const, 0.0);
    let h = grid.dt();
    let mut out = Vec::with_capacity(grid.k_steps + 1);
    let mut x = st0.to_array();
    out.push(x);
    for _ in 0..grid.k_steps {
        let k1 = f(x);
        let k2 = f([x[0] + 0.5 * h * k1[0], x[1] + 0.5 * h * k1[1]]);
        let k3 = f([x[0] + 0.5 * h * k2[0], x[1] + 0.5 * h * k2[1]]);
        let k4 = f([x[0] + h * k3[0], x[1] + h * k3[1]]);
        for j in 0..2 {
            x[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        out.push(x);
    }
    Ok(out)
}

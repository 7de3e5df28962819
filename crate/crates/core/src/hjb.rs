//! Dynamic-programming reference solution for the decoupled problem.
//!
//! The value function `V(s, x)` of the zero-coupling problem solves, backward
//! from `V(t, x) = terminal_cost(x)`,
//!
//! ```text
//! V_s + e + min_{u in [0, u_max]} u (1 - q(x) dV/dx2) + mu0(x) . grad V + 1/2 tr(a(x) D^2 V) = 0
//! ```
//!
//! with `q = x2 (1 - x2)`, `mu0` the dose-free drift and `a = sigma sigma^T`.
//! The Hamiltonian is affine in `u`, so the minimiser is `0` or `u_max`.
//!
//! Discretisation: explicit backward Euler in time; the dose-free drift is
//! upwinded by its sign, the dose term (which always pushes `x2` down) uses
//! the backward difference, second derivatives are central and the mixed
//! derivative uses the seven-point stencil oriented by the sign of `a12`.
//! Boundaries are Neumann via reflected ghost nodes.
//!
//! Layers are stored on the rollout time grid; each layer interval is split
//! into explicit substeps that satisfy
//! `dtau <= c_stab * min(dx^2 / max tr a, dx / max |drift|)`.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{estimate_j, terminal_cost};
use crate::error::{Error, Result};
use crate::measures::CouplingKind;
use crate::model::{diffusion_raw, dose_sensitivity, drift_free, ModelParams, State};
use crate::policy::Policy;
use crate::simulate::TimeGrid;

const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HjbConfig {
    pub nx1: usize,
    pub nx2: usize,
    /// Explicit substeps per stored layer; chosen from the stability bound when absent.
    #[serde(default)]
    pub substeps: Option<usize>,
    #[serde(default = "default_c_stab")]
    pub c_stab: f64,
}

fn default_c_stab() -> f64 {
    0.25
}

impl Default for HjbConfig {
    fn default() -> Self {
        Self { nx1: 129, nx2: 129, substeps: None, c_stab: default_c_stab() }
    }
}

impl HjbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nx1 < 16 || self.nx2 < 16 {
            return Err(Error::InvalidInput(format!(
                "hjb grid must be at least 16 x 16, got {} x {}",
                self.nx1, self.nx2
            )));
        }
        if !(self.c_stab > 0.0 && self.c_stab <= 1.0) {
            return Err(Error::InvalidInput(format!("hjb.c_stab must lie in (0, 1], got {}", self.c_stab)));
        }
        if self.substeps == Some(0) {
            return Err(Error::InvalidInput("hjb.substeps must be >= 1".into()));
        }
        Ok(())
    }

    /// Same domain with half the spacing in both directions.
    pub fn refined(&self) -> HjbConfig {
        HjbConfig { nx1: 2 * self.nx1 - 1, nx2: 2 * self.nx2 - 1, ..*self }
    }
}

/// Metadata written next to the value table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValueGridHeader {
    pub nx1: usize,
    pub nx2: usize,
    pub nt: usize,
    pub dt: f64,
    pub dx1: f64,
    pub dx2: f64,
    pub horizon_t: f64,
    pub substeps: usize,
    pub u_max: f64,
    /// File holding the `i1,i2,layer,value` table, relative to the header.
    pub values_file: String,
}

/// Optimal cost-to-go on a uniform grid of `[0,1]^2`, one layer per rollout step.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrid {
    pub nx1: usize,
    pub nx2: usize,
    /// Number of stored layers, `k + 1`; layer `l` sits at time `l * dt`.
    pub nt: usize,
    pub dt: f64,
    pub dx1: f64,
    pub dx2: f64,
    pub substeps: usize,
    pub u_max: f64,
    /// Layer-major, then `i1`, then `i2`.
    pub values: Vec<f64>,
}

impl ValueGrid {
    #[inline]
    fn layer_len(&self) -> usize {
        self.nx1 * self.nx2
    }

    pub fn layer(&self, l: usize) -> &[f64] {
        let n = self.layer_len();
        &self.values[l * n..(l + 1) * n]
    }

    #[inline]
    pub fn at(&self, layer: usize, i1: usize, i2: usize) -> f64 {
        self.values[layer * self.layer_len() + i1 * self.nx2 + i2]
    }

    pub fn node(&self, i1: usize, i2: usize) -> [f64; 2] {
        [i1 as f64 * self.dx1, i2 as f64 * self.dx2]
    }

    pub fn horizon(&self) -> f64 {
        (self.nt - 1) as f64 * self.dt
    }

    /// Layer whose time is closest to `s`, clamped to the stored range.
    pub fn nearest_layer(&self, s: f64) -> usize {
        let l = (s / self.dt).round();
        if l <= 0.0 {
            0
        } else {
            (l as usize).min(self.nt - 1)
        }
    }

    fn cell(&self, x: [f64; 2]) -> Result<(usize, usize, f64, f64)> {
        if !(0.0..=1.0).contains(&x[0]) || !(0.0..=1.0).contains(&x[1]) {
            return Err(Error::Domain(format!("query ({}, {}) outside [0,1]^2", x[0], x[1])));
        }
        let f1 = x[0] / self.dx1;
        let f2 = x[1] / self.dx2;
        let i1 = (f1.floor() as usize).min(self.nx1 - 2);
        let i2 = (f2.floor() as usize).min(self.nx2 - 2);
        Ok((i1, i2, f1 - i1 as f64, f2 - i2 as f64))
    }

    fn bilinear(&self, x: [f64; 2], f: impl Fn(usize, usize) -> f64) -> Result<f64> {
        let (i1, i2, t1, t2) = self.cell(x)?;
        Ok((1.0 - t1) * ((1.0 - t2) * f(i1, i2) + t2 * f(i1, i2 + 1))
            + t1 * ((1.0 - t2) * f(i1 + 1, i2) + t2 * f(i1 + 1, i2 + 1)))
    }

    /// Bilinear interpolation of layer `layer` at `x`.
    pub fn value(&self, layer: usize, x: [f64; 2]) -> Result<f64> {
        self.bilinear(x, |a, b| self.at(layer, a, b))
    }

    /// `dV/dx2` at a node: central inside, one-sided on the edges.
    pub fn dv_dx2_node(&self, layer: usize, i1: usize, i2: usize) -> f64 {
        if i2 == 0 {
            (self.at(layer, i1, 1) - self.at(layer, i1, 0)) / self.dx2
        } else if i2 == self.nx2 - 1 {
            (self.at(layer, i1, i2) - self.at(layer, i1, i2 - 1)) / self.dx2
        } else {
            (self.at(layer, i1, i2 + 1) - self.at(layer, i1, i2 - 1)) / (2.0 * self.dx2)
        }
    }

    /// The Hamiltonian at node `(i1, i2)` of `layer` for a given dose, in the
    /// exact discrete form used by the backward sweep.
    pub fn hamiltonian(&self, p: &ModelParams, layer: usize, i1: usize, i2: usize, u: f64) -> f64 {
        let coef = NodeCoef::new(p, self.node(i1, i2));
        let st = Stencil { v: self.layer(layer), nx1: self.nx1, nx2: self.nx2, dx1: self.dx1, dx2: self.dx2 };
        let (free, dminus2) = st.free_part(&coef, i1, i2);
        u + p.stabilization_weight_e + free - u * coef.q * dminus2
    }

    /// Switching coefficient `1 - q dV/dx2` interpolated at `x` on `layer`.
    pub fn switching_coefficient(&self, layer: usize, x: [f64; 2]) -> Result<f64> {
        let dv = self.bilinear(x, |a, b| self.dv_dx2_node(layer, a, b))?;
        Ok(1.0 - dose_sensitivity(x) * dv)
    }

    pub fn header(&self, values_file: &str) -> ValueGridHeader {
        ValueGridHeader {
            nx1: self.nx1,
            nx2: self.nx2,
            nt: self.nt,
            dt: self.dt,
            dx1: self.dx1,
            dx2: self.dx2,
            horizon_t: self.horizon(),
            substeps: self.substeps,
            u_max: self.u_max,
            values_file: values_file.to_string(),
        }
    }

    /// CSV `i1,i2,layer,value`, layer-major.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "i1,i2,layer,value")?;
        for l in 0..self.nt {
            for i1 in 0..self.nx1 {
                for i2 in 0..self.nx2 {
                    writeln!(w, "{i1},{i2},{l},{}", self.at(l, i1, i2))?;
                }
            }
        }
        Ok(())
    }

    /// Writes `<stem>.json` (header) and `<stem>.csv` (values) into `dir`; returns the header path.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<PathBuf> {
        let csv_name = format!("{stem}.csv");
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(dir.join(&csv_name))?))?;
        let header_path = dir.join(format!("{stem}.json"));
        let mut f = std::fs::File::create(&header_path)?;
        serde_json::to_writer_pretty(&mut f, &self.header(&csv_name))?;
        writeln!(f)?;
        Ok(header_path)
    }

    /// Loads a grid from its JSON header.
    pub fn load(header_path: &Path) -> Result<Self> {
        let h: ValueGridHeader = serde_json::from_reader(BufReader::new(std::fs::File::open(header_path)?))?;
        if h.nx1 < 2 || h.nx2 < 2 || h.nt < 1 {
            return Err(Error::Parse(format!("{}: degenerate grid sizes", header_path.display())));
        }
        let csv_path = header_path.parent().unwrap_or(Path::new(".")).join(&h.values_file);
        let n = h.nx1 * h.nx2 * h.nt;
        let mut values = vec![f64::NAN; n];
        let mut seen = vec![false; n];
        let r = BufReader::new(std::fs::File::open(&csv_path)?);
        let bad = |line: usize, what: &str| Error::Parse(format!("{}:{line}: {what}", csv_path.display()));
        for (ln, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = ln + 1;
            if ln == 0 {
                if line.trim() != "i1,i2,layer,value" {
                    return Err(bad(lineno, "expected header i1,i2,layer,value"));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad(lineno, "expected 4 fields"));
            }
            let idx = |s: &str| s.trim().parse::<usize>().map_err(|_| bad(lineno, "bad index"));
            let (i1, i2, l) = (idx(f[0])?, idx(f[1])?, idx(f[2])?);
            let v: f64 = f[3].trim().parse().map_err(|_| bad(lineno, "bad value"))?;
            if i1 >= h.nx1 || i2 >= h.nx2 || l >= h.nt || !v.is_finite() {
                return Err(bad(lineno, "index out of range or non-finite value"));
            }
            let k = l * h.nx1 * h.nx2 + i1 * h.nx2 + i2;
            values[k] = v;
            seen[k] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Parse(format!("{}: missing nodes", csv_path.display())));
        }
        Ok(Self {
            nx1: h.nx1,
            nx2: h.nx2,
            nt: h.nt,
            dt: h.dt,
            dx1: h.dx1,
            dx2: h.dx2,
            substeps: h.substeps,
            u_max: h.u_max,
            values,
        })
    }
}

/// Time-independent coefficients at one node.
#[derive(Debug, Clone, Copy)]
struct NodeCoef {
    mu: [f64; 2],
    q: f64,
    a11: f64,
    a12: f64,
    a22: f64,
}

impl NodeCoef {
    fn new(p: &ModelParams, x: [f64; 2]) -> Self {
        let mu = drift_free(x, 0.0, p);
        let s = diffusion_raw(x, 0.0, p);
        let dot = |a: &[f64; 3], b: &[f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        Self { mu, q: dose_sensitivity(x), a11: dot(&s[0], &s[0]), a12: dot(&s[0], &s[1]), a22: dot(&s[1], &s[1]) }
    }
}

struct Stencil<'a> {
    v: &'a [f64],
    nx1: usize,
    nx2: usize,
    dx1: f64,
    dx2: f64,
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    if i < 0 {
        (-i) as usize
    } else if i as usize >= n {
        2 * (n - 1) - i as usize
    } else {
        i as usize
    }
}

impl Stencil<'_> {
    #[inline]
    fn g(&self, i1: isize, i2: isize) -> f64 {
        self.v[reflect(i1, self.nx1) * self.nx2 + reflect(i2, self.nx2)]
    }

    /// Dose-free part `mu0 . grad V + 1/2 tr(a D^2 V)` and the backward difference in `x2`.
    #[inline]
    fn free_part(&self, c: &NodeCoef, i1: usize, i2: usize) -> (f64, f64) {
        let (a, b) = (i1 as isize, i2 as isize);
        let v = self.g(a, b);
        let (e1, w1) = (self.g(a + 1, b), self.g(a - 1, b));
        let (n2, s2) = (self.g(a, b + 1), self.g(a, b - 1));
        let dp1 = (e1 - v) / self.dx1;
        let dm1 = (v - w1) / self.dx1;
        let dp2 = (n2 - v) / self.dx2;
        let dm2 = (v - s2) / self.dx2;
        let adv = if c.mu[0] > 0.0 { c.mu[0] * dp1 } else { c.mu[0] * dm1 }
            + if c.mu[1] > 0.0 { c.mu[1] * dp2 } else { c.mu[1] * dm2 };
        let v11 = (e1 - 2.0 * v + w1) / (self.dx1 * self.dx1);
        let v22 = (n2 - 2.0 * v + s2) / (self.dx2 * self.dx2);
        let v12 = if c.a12 >= 0.0 {
            (2.0 * v - e1 - w1 - n2 - s2 + self.g(a + 1, b + 1) + self.g(a - 1, b - 1)) / (2.0 * self.dx1 * self.dx2)
        } else {
            -(2.0 * v - e1 - w1 - n2 - s2 + self.g(a + 1, b - 1) + self.g(a - 1, b + 1)) / (2.0 * self.dx1 * self.dx2)
        };
        let diff = 0.5 * (c.a11 * v11 + 2.0 * c.a12 * v12 + c.a22 * v22);
        (adv + diff, dm2)
    }
}

/// Largest stable explicit step and the limiting quantities.
fn stable_dt(coefs: &[NodeCoef], dx: f64, u_max: f64, c_stab: f64) -> (f64, f64, f64) {
    let mut max_diff = 0.0f64;
    let mut max_drift = 0.0f64;
    for c in coefs {
        max_diff = max_diff.max(c.a11 + c.a22);
        max_drift = max_drift.max(c.mu[0].abs() + c.mu[1].abs() + u_max * c.q);
    }
    let by_diff = if max_diff > 0.0 { dx * dx / max_diff } else { f64::INFINITY };
    let by_drift = if max_drift > 0.0 { dx / max_drift } else { f64::INFINITY };
    (c_stab * by_diff.min(by_drift), max_diff, max_drift)
}

/// Solve backward from the terminal cost over `grid`.
pub fn hjb_solve(p: &ModelParams, grid: &TimeGrid, cfg: &HjbConfig) -> Result<ValueGrid> {
    cfg.validate()?;
    let (nx1, nx2) = (cfg.nx1, cfg.nx2);
    let dx1 = 1.0 / (nx1 - 1) as f64;
    let dx2 = 1.0 / (nx2 - 1) as f64;
    let mut terminal = Vec::with_capacity(nx1 * nx2);
    for i1 in 0..nx1 {
        for i2 in 0..nx2 {
            terminal.push(terminal_cost(State::from_array([i1 as f64 * dx1, i2 as f64 * dx2]), p));
        }
    }
    hjb_solve_with_terminal(p, grid, cfg, &terminal)
}

/// Solve backward over `grid` from arbitrary terminal data (`nx1 * nx2`, `i1`-major).
pub fn hjb_solve_with_terminal(p: &ModelParams, grid: &TimeGrid, cfg: &HjbConfig, terminal: &[f64]) -> Result<ValueGrid> {
    p.validate()?;
    grid.validate()?;
    cfg.validate()?;
    let (nx1, nx2) = (cfg.nx1, cfg.nx2);
    let n = nx1 * nx2;
    if terminal.len() != n {
        return Err(Error::InvalidInput(format!("terminal data has {} nodes, grid has {n}", terminal.len())));
    }
    if terminal.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("terminal data must be finite".into()));
    }
    let dx1 = 1.0 / (nx1 - 1) as f64;
    let dx2 = 1.0 / (nx2 - 1) as f64;
    let coefs: Vec<NodeCoef> = (0..n)
        .map(|k| NodeCoef::new(p, [(k / nx2) as f64 * dx1, (k % nx2) as f64 * dx2]))
        .collect();
    let dt = grid.dt();
    let (dt_max, max_diff, max_drift) = stable_dt(&coefs, dx1.min(dx2), p.u_max, cfg.c_stab);
    let substeps = match cfg.substeps {
        Some(m) => {
            let dtau = dt / m as f64;
            if dtau > dt_max {
                return Err(Error::Stability(format!(
                    "substep {dtau:.3e} exceeds the stable bound {dt_max:.3e} (ratio {:.3}; max diffusion {max_diff:.3e}, max drift {max_drift:.3e})",
                    dtau / dt_max
                )));
            }
            m
        }
        None if dt_max.is_finite() => ((dt / dt_max).ceil() as usize).max(1),
        None => 1,
    };
    let dtau = dt / substeps as f64;
    let e = p.stabilization_weight_e;
    let u_max = p.u_max;

    let k = grid.k_steps;
    let mut values = vec![0.0; (k + 1) * n];
    values[k * n..].copy_from_slice(terminal);
    let mut cur = terminal.to_vec();
    let mut next = vec![0.0; n];
    for layer in (0..k).rev() {
        for _ in 0..substeps {
            let st = Stencil { v: &cur, nx1, nx2, dx1, dx2 };
            next.par_chunks_mut(nx2).enumerate().for_each(|(i1, row)| {
                for (i2, out) in row.iter_mut().enumerate() {
                    let c = &coefs[i1 * nx2 + i2];
                    let (free, dm2) = st.free_part(c, i1, i2);
                    let control = (u_max * (1.0 - c.q * dm2)).min(0.0);
                    *out = st.v[i1 * nx2 + i2] + dtau * (e + control + free);
                }
            });
            std::mem::swap(&mut cur, &mut next);
        }
        if cur.iter().any(|v| !v.is_finite()) {
            return Err(Error::Stability(format!("value function became non-finite at layer {layer}")));
        }
        values[layer * n..(layer + 1) * n].copy_from_slice(&cur);
    }
    Ok(ValueGrid { nx1, nx2, nt: k + 1, dt, dx1, dx2, substeps, u_max, values })
}

/// Bang-bang feedback read off a solved value grid.
#[derive(Debug, Clone, PartialEq)]
pub struct HjbPolicy {
    pub grid: ValueGrid,
}

impl HjbPolicy {
    pub fn new(grid: ValueGrid) -> Self {
        Self { grid }
    }

    /// `u_max` where `1 - q dV/dx2 < 0` on the nearest layer, else `0`.
    pub fn dose(&self, s: f64, x: [f64; 2]) -> Result<f64> {
        let coef = self.grid.switching_coefficient(self.grid.nearest_layer(s), x)?;
        Ok(if coef < -TIE_TOL { self.grid.u_max } else { 0.0 })
    }
}

/// Outcome of checking `V(0, x0)` against a Monte Carlo run of the HJB policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueCheck {
    pub value_at_start: f64,
    pub mc_mean_cost: f64,
    pub std_error: f64,
    pub discrepancy: f64,
}

pub fn value_vs_rollout(
    p: &ModelParams,
    vg: &ValueGrid,
    st0: State,
    n_samples: usize,
    coupling: &CouplingKind,
    master_seed: u64,
) -> Result<ValueCheck> {
    if !coupling.is_zero() {
        return Err(Error::Scope(format!(
            "oracle valid only for frozen mean field (coupling `zero`), got `{coupling}`"
        )));
    }
    let v0 = vg.value(0, st0.to_array())?;
    let grid = TimeGrid::new(vg.horizon(), vg.nt - 1)?;
    let policy = Policy::Hjb(std::sync::Arc::new(HjbPolicy::new(vg.clone())));
    let report = estimate_j(p, &policy, st0, &grid, coupling, n_samples, master_seed)?;
    Ok(ValueCheck {
        value_at_start: v0,
        mc_mean_cost: report.mean_cost,
        std_error: report.std_error,
        discrepancy: (v0 - report.mean_cost).abs(),
    })
}

/// `|V_h(0, x0) - V_2h(0, x0)|` between `cfg` and a grid with doubled spacing.
///
/// `nx1 - 1` and `nx2 - 1` must be even.
pub fn richardson_truncation(p: &ModelParams, grid: &TimeGrid, cfg: &HjbConfig, st0: State, fine: Option<&ValueGrid>) -> Result<f64> {
    if !(cfg.nx1 - 1).is_multiple_of(2) || !(cfg.nx2 - 1).is_multiple_of(2) {
        return Err(Error::InvalidInput("grid sizes must be odd to coarsen by two".into()));
    }
    let coarse_cfg = HjbConfig { nx1: (cfg.nx1 - 1) / 2 + 1, nx2: (cfg.nx2 - 1) / 2 + 1, substeps: None, ..*cfg };
    let owned;
    let fine = match fine {
        Some(f) => f,
        None => {
            owned = hjb_solve(p, grid, cfg)?;
            &owned
        }
    };
    let coarse = hjb_solve(p, grid, &coarse_cfg)?;
    Ok((fine.value(0, st0.to_array())? - coarse.value(0, st0.to_array())?).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Dynamics;

    fn small() -> HjbConfig {
        HjbConfig { nx1: 17, nx2: 17, substeps: None, c_stab: 0.25 }
    }

    fn bench() -> ModelParams {
        ModelParams { sigma_g: 0.2, sigma_d: 0.15, sigma_v: 0.15, failure_penalty_m: 5.0, ..ModelParams::default() }
    }

    #[test]
    fn terminal_layer_is_terminal_cost() {
        let p = bench();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let vg = hjb_solve(&p, &grid, &small()).unwrap();
        for i1 in 0..17 {
            for i2 in 0..17 {
                let x = vg.node(i1, i2);
                assert_eq!(vg.at(10, i1, i2), terminal_cost(State::from_array(x), &p));
            }
        }
        // x2 = 0.125 succeeds, x2 = 0.875 fails
        assert_eq!(vg.at(10, 3, 2), 0.0);
        assert_eq!(vg.at(10, 3, 14), 5.0);
    }

    #[test]
    fn values_respect_bounds() {
        for sigma in [0.0, 0.1, 0.3] {
            let p = ModelParams { sigma_g: sigma, sigma_d: sigma, sigma_v: sigma, failure_penalty_m: 5.0, ..ModelParams::default() };
            let grid = TimeGrid::new(2.0, 20).unwrap();
            let vg = hjb_solve(&p, &grid, &small()).unwrap();
            let hi = p.failure_penalty_m + (p.u_max + p.stabilization_weight_e) * 2.0;
            for v in &vg.values {
                assert!(*v >= -1e-12 && *v <= hi + 1e-12, "sigma {sigma}: {v}");
            }
        }
    }

    #[test]
    fn noiseless_free_problem_has_zero_value() {
        let p = ModelParams {
            sigma_g: 0.0,
            sigma_d: 0.0,
            sigma_v: 0.0,
            stabilization_weight_e: 0.0,
            failure_penalty_m: 0.0,
            ..ModelParams::default()
        };
        let grid = TimeGrid::new(1.0, 5).unwrap();
        let vg = hjb_solve(&p, &grid, &small()).unwrap();
        assert!(vg.values.iter().all(|v| *v == 0.0));
        let pol = HjbPolicy::new(vg);
        assert_eq!(pol.dose(0.0, [0.3, 0.6]).unwrap(), 0.0);
    }

    #[test]
    fn value_is_monotone_in_penalty() {
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let lo = hjb_solve(&ModelParams { failure_penalty_m: 2.0, ..bench() }, &grid, &small()).unwrap();
        let hi = hjb_solve(&ModelParams { failure_penalty_m: 8.0, ..bench() }, &grid, &small()).unwrap();
        assert_eq!(lo.substeps, hi.substeps);
        for (a, b) in lo.values.iter().zip(&hi.values) {
            assert!(a <= b);
        }
    }

    #[test]
    fn endpoint_doses_minimise_the_hamiltonian() {
        let p = bench();
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let vg = hjb_solve(&p, &grid, &small()).unwrap();
        for layer in [0, 2] {
            for i1 in 0..17 {
                for i2 in 0..17 {
                    let h: Vec<f64> = (0..=100).map(|j| vg.hamiltonian(&p, layer, i1, i2, j as f64 / 100.0)).collect();
                    let grid_min = h.iter().copied().fold(f64::INFINITY, f64::min);
                    let bang = h[0].min(h[100]);
                    assert!((bang - grid_min).abs() <= 1e-12 * (1.0 + grid_min.abs()));
                }
            }
        }
    }

    #[test]
    fn split_horizon_matches_full_solve() {
        let p = bench();
        let full = hjb_solve(&p, &TimeGrid::new(2.0, 20).unwrap(), &small()).unwrap();
        let half = TimeGrid::new(1.0, 10).unwrap();
        let late = hjb_solve(&p, &half, &small()).unwrap();
        let early = hjb_solve_with_terminal(&p, &half, &small(), late.layer(0)).unwrap();
        assert_eq!(early.substeps, full.substeps);
        for (a, b) in early.layer(0).iter().zip(full.layer(0)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    /// With no noise, `mu1 = 0` and `mu0_2 <= 0`, one explicit step is the
    /// exact two-point minimisation over linear interpolation of the next layer.
    #[test]
    fn one_step_matches_brute_force() {
        let p = ModelParams {
            beta_v: 1.0,
            cost_c: 0.5,
            n_neighbors: 1,
            vop_benefit_factor: 1.0,
            beta_alpha: 0.0,
            sigma_g: 0.0,
            sigma_d: 0.0,
            sigma_v: 0.0,
            failure_penalty_m: 3.0,
            x2_success: 0.3,
            x2_fail: 0.7,
            indeterminate_is_failure: false,
            ..ModelParams::default()
        };
        let cfg = HjbConfig { nx1: 17, nx2: 33, substeps: Some(1), c_stab: 1.0 };
        let grid = TimeGrid::new(0.02, 1).unwrap();
        let vg = hjb_solve(&p, &grid, &cfg).unwrap();
        let dt = grid.dt();
        for i1 in 0..17 {
            for i2 in 0..33 {
                let x = vg.node(i1, i2);
                let best = [0.0, p.u_max]
                    .iter()
                    .map(|&u| {
                        let mu = p.drift(x, u, 0.0);
                        assert_eq!(mu[0], 0.0);
                        let y = [x[0], (x[1] + mu[1] * dt).clamp(0.0, 1.0)];
                        (u + p.stabilization_weight_e) * dt + vg.value(1, y).unwrap()
                    })
                    .fold(f64::INFINITY, f64::min);
                assert!((vg.at(0, i1, i2) - best).abs() < 1e-12, "node ({i1},{i2})");
            }
        }
    }

    #[test]
    fn user_substeps_violating_stability_are_rejected() {
        let p = bench();
        let cfg = HjbConfig { substeps: Some(1), ..small() };
        let err = hjb_solve(&p, &TimeGrid::new(5.0, 2).unwrap(), &cfg).unwrap_err();
        assert!(matches!(err, Error::Stability(ref m) if m.contains("ratio")), "{err}");
    }

    #[test]
    fn policy_queries() {
        let p = bench();
        let vg = hjb_solve(&p, &TimeGrid::new(1.0, 10).unwrap(), &small()).unwrap();
        let pol = HjbPolicy::new(vg.clone());
        for x1 in [0.0, 0.3, 1.0] {
            assert_eq!(pol.dose(0.5, [x1, 0.0]).unwrap(), 0.0);
            assert_eq!(pol.dose(0.5, [x1, 1.0]).unwrap(), 0.0);
        }
        assert!(pol.dose(0.0, [1.2, 0.5]).is_err());
        assert!(pol.dose(0.0, [0.5, -0.1]).is_err());
        let mut flat = vg;
        flat.values.iter_mut().for_each(|v| *v = 4.0);
        let pol = HjbPolicy::new(flat);
        assert_eq!(pol.dose(0.3, [0.4, 0.5]).unwrap(), 0.0);
    }

    #[test]
    fn high_penalty_doses_above_the_failure_line() {
        let p = ModelParams { failure_penalty_m: 50.0, ..bench() };
        let vg = hjb_solve(&p, &TimeGrid::new(5.0, 50).unwrap(), &HjbConfig { nx1: 33, nx2: 33, ..small() }).unwrap();
        let pol = HjbPolicy::new(vg);
        assert_eq!(pol.dose(0.0, [0.4, 0.6]).unwrap(), p.u_max);
    }

    #[test]
    fn scope_is_enforced() {
        let p = bench();
        let vg = hjb_solve(&p, &TimeGrid::new(1.0, 4).unwrap(), &small()).unwrap();
        let err = value_vs_rollout(&p, &vg, State { x1: 0.5, x2: 0.5 }, 8, &CouplingKind::MeanX2, 0).unwrap_err();
        assert!(matches!(err, Error::Scope(_)));
    }

    #[test]
    fn deterministic_value_matches_rollout() {
        let p = ModelParams {
            sigma_g: 0.0,
            sigma_d: 0.0,
            sigma_v: 0.0,
            failure_penalty_m: 0.0,
            ..ModelParams::default()
        };
        let vg = hjb_solve(&p, &TimeGrid::new(2.0, 20).unwrap(), &small()).unwrap();
        let chk = value_vs_rollout(&p, &vg, State { x1: 0.4, x2: 0.5 }, 4, &CouplingKind::Zero, 1).unwrap();
        assert!((chk.value_at_start - 0.2).abs() < 1e-12);
        assert!(chk.discrepancy < 1e-12);
        assert_eq!(chk.std_error, 0.0);
    }

    #[test]
    fn save_and_load_round_trip() {
        let p = bench();
        let vg = hjb_solve(&p, &TimeGrid::new(1.0, 3).unwrap(), &small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = vg.save(dir.path(), "value").unwrap();
        assert_eq!(ValueGrid::load(&path).unwrap(), vg);
        std::fs::write(dir.path().join("value.csv"), "i1,i2,layer,value\n0,0,0,oops\n").unwrap();
        let err = ValueGrid::load(&path).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
    }
}

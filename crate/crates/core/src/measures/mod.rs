//! Empirical measures, Wasserstein distances and the mean-field statistic.

pub mod transport;

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CouplingStat, State};

pub use transport::TransportPlan;

/// Largest support the exact LP solver accepts on either side.
pub const LP_MAX_SUPPORT: usize = 256;

const WEIGHT_TOL: f64 = 1e-12;

/// Weighted point cloud in one or two dimensions.
///
/// One-dimensional measures keep their points in the first coordinate; the
/// second is ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    pub dim: usize,
    pub support: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(dim: usize, support: Vec<[f64; 2]>, weights: Vec<f64>) -> Result<Self> {
        let m = Self { dim, support, weights };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dim == 1 || self.dim == 2) {
            return Err(Error::InvalidInput(format!("measure dimension must be 1 or 2, got {}", self.dim)));
        }
        if self.support.is_empty() {
            return Err(Error::InvalidInput("measure has empty support".into()));
        }
        if self.support.len() != self.weights.len() {
            return Err(Error::InvalidInput(format!(
                "{} support points but {} weights",
                self.support.len(),
                self.weights.len()
            )));
        }
        if self.support.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::InvalidInput("support point is not finite".into()));
        }
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidInput("weights must be finite and nonnegative".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::InvalidInput(format!("weights sum to {total}, not 1")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn from_samples_1d(points: &[f64]) -> Result<Self> {
        empirical_from_samples(1, &points.iter().map(|&x| [x, 0.0]).collect::<Vec<_>>())
    }

    pub fn from_samples_2d(points: &[[f64; 2]]) -> Result<Self> {
        empirical_from_samples(2, points)
    }

    pub fn from_states(states: &[State]) -> Result<Self> {
        empirical_from_samples(2, &states.iter().map(|s| s.to_array()).collect::<Vec<_>>())
    }

    /// Marginal on coordinate `axis` as a one-dimensional measure.
    pub fn marginal(&self, axis: usize) -> Result<Self> {
        if axis >= self.dim {
            return Err(Error::InvalidInput(format!("axis {axis} out of range for dim {}", self.dim)));
        }
        Ok(Self {
            dim: 1,
            support: self.support.iter().map(|p| [p[axis], 0.0]).collect(),
            weights: self.weights.clone(),
        })
    }

    /// Multiply every support point by `a`.
    pub fn dilate(&self, a: f64) -> Self {
        Self {
            dim: self.dim,
            support: self.support.iter().map(|p| [a * p[0], a * p[1]]).collect(),
            weights: self.weights.clone(),
        }
    }

    /// CSV with header `x1,weight` or `x1,x2,weight`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        if self.dim == 1 {
            writeln!(w, "x1,weight")?;
            for (p, wt) in self.support.iter().zip(&self.weights) {
                writeln!(w, "{},{wt}", p[0])?;
            }
        } else {
            writeln!(w, "x1,x2,weight")?;
            for (p, wt) in self.support.iter().zip(&self.weights) {
                writeln!(w, "{},{},{wt}", p[0], p[1])?;
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty measure file".into()))??;
        let dim = match header.trim().replace(' ', "").as_str() {
            "x1,weight" => 1,
            "x1,x2,weight" => 2,
            other => return Err(Error::Parse(format!("line 1: unexpected header {other:?}"))),
        };
        let mut support = Vec::new();
        let mut weights = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != dim + 1 {
                return Err(Error::Parse(format!(
                    "line {}: expected {} fields, got {}",
                    n + 2,
                    dim + 1,
                    fields.len()
                )));
            }
            let mut vals = [0.0; 3];
            for (slot, f) in vals.iter_mut().zip(&fields) {
                *slot = f
                    .parse()
                    .map_err(|_| Error::Parse(format!("line {}: bad number {f:?}", n + 2)))?;
            }
            if dim == 1 {
                support.push([vals[0], 0.0]);
                weights.push(vals[1]);
            } else {
                support.push([vals[0], vals[1]]);
                weights.push(vals[2]);
            }
        }
        Self::new(dim, support, weights).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Uniform weights on the given points; duplicates are kept as separate atoms.
pub fn empirical_from_samples(dim: usize, points: &[[f64; 2]]) -> Result<EmpiricalMeasure> {
    if points.is_empty() {
        return Err(Error::InvalidInput("cannot build a measure from zero samples".into()));
    }
    let w = 1.0 / points.len() as f64;
    let mut weights = vec![w; points.len()];
    // put the rounding residue on the last atom so the total is as close to 1 as f64 allows
    let head: f64 = weights[..points.len() - 1].iter().sum();
    weights[points.len() - 1] = (1.0 - head).max(0.0);
    EmpiricalMeasure::new(dim, points.to_vec(), weights)
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho >= 1.0 && rho.is_finite()) {
        return Err(Error::Domain(format!("Wasserstein exponent must be finite and >= 1, got {rho}")));
    }
    Ok(())
}

/// One-dimensional `W_rho` by integrating the quantile-function gap over merged CDF breakpoints.
pub fn wasserstein_1d(rho: f64, mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    check_rho(rho)?;
    mu.validate()?;
    nu.validate()?;
    if mu.dim != 1 || nu.dim != 1 {
        return Err(Error::InvalidInput("wasserstein_1d needs one-dimensional measures".into()));
    }
    let sorted = |m: &EmpiricalMeasure| {
        let mut atoms: Vec<(f64, f64)> = m.support.iter().map(|p| p[0]).zip(m.weights.iter().copied()).collect();
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        atoms
    };
    let a = sorted(mu);
    let b = sorted(nu);
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a[0].1, b[0].1);
    let mut acc = 0.0;
    loop {
        let step = ra.min(rb);
        acc += step * (a[i].0 - b[j].0).abs().powf(rho);
        ra -= step;
        rb -= step;
        let a_done = ra <= WEIGHT_TOL * 1e-3;
        let b_done = rb <= WEIGHT_TOL * 1e-3;
        if a_done {
            i += 1;
            if i < a.len() {
                ra = a[i].1;
            }
        }
        if b_done {
            j += 1;
            if j < b.len() {
                rb = b[j].1;
            }
        }
        if i >= a.len() || j >= b.len() {
            break;
        }
    }
    Ok(acc.powf(1.0 / rho))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WassersteinSolution {
    pub distance: f64,
    pub plan: TransportPlan,
}

/// Exact `W_rho` with Euclidean ground cost via the transportation LP.
pub fn wasserstein_lp(rho: f64, mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    Ok(wasserstein_lp_with_plan(rho, mu, nu)?.distance)
}

pub fn wasserstein_lp_with_plan(rho: f64, mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<WassersteinSolution> {
    check_rho(rho)?;
    if mu.len() > LP_MAX_SUPPORT || nu.len() > LP_MAX_SUPPORT {
        return Err(Error::Size(format!(
            "support sizes {} x {} exceed the exact solver limit of {LP_MAX_SUPPORT}",
            mu.len(),
            nu.len()
        )));
    }
    mu.validate()?;
    nu.validate()?;
    if mu.dim != nu.dim {
        return Err(Error::InvalidInput(format!("dimension mismatch: {} vs {}", mu.dim, nu.dim)));
    }
    let dim = mu.dim;
    let mut cost = Vec::with_capacity(mu.len() * nu.len());
    for x in &mu.support {
        for y in &nu.support {
            let d2: f64 = (0..dim).map(|k| (x[k] - y[k]) * (x[k] - y[k])).sum();
            cost.push(d2.sqrt().powf(rho));
        }
    }
    let plan = transport::solve(&mu.weights, &nu.weights, &cost)?;
    Ok(WassersteinSolution { distance: plan.cost.max(0.0).powf(1.0 / rho), plan })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coord {
    X1,
    X2,
}

/// Scalar functional of the population law used as the coupling input.
#[derive(Debug, Clone, PartialEq)]
pub enum CouplingKind {
    Zero,
    MeanX1,
    MeanX2,
    ScaledMean { coord: Coord, gain: f64 },
}

impl CouplingKind {
    pub fn is_zero(&self) -> bool {
        matches!(self, CouplingKind::Zero)
    }

    /// Statistic of the uniform law on `states`.
    pub fn evaluate(&self, states: impl ExactSizeIterator<Item = State>) -> CouplingStat {
        let n = states.len() as f64;
        let mean = |axis: usize, it: &mut dyn Iterator<Item = State>| {
            it.map(|s| if axis == 0 { s.x1 } else { s.x2 }).sum::<f64>() / n
        };
        let mut it = states;
        let value = match self {
            CouplingKind::Zero => 0.0,
            CouplingKind::MeanX1 => mean(0, &mut it),
            CouplingKind::MeanX2 => mean(1, &mut it),
            CouplingKind::ScaledMean { coord: Coord::X1, gain } => gain * mean(0, &mut it),
            CouplingKind::ScaledMean { coord: Coord::X2, gain } => gain * mean(1, &mut it),
        };
        CouplingStat { value }
    }
}

impl fmt::Display for CouplingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CouplingKind::Zero => write!(f, "zero"),
            CouplingKind::MeanX1 => write!(f, "mean_x1"),
            CouplingKind::MeanX2 => write!(f, "mean_x2"),
            CouplingKind::ScaledMean { coord, gain } => {
                let c = if *coord == Coord::X1 { "x1" } else { "x2" };
                write!(f, "scaled_mean:{c}:{gain}")
            }
        }
    }
}

impl FromStr for CouplingKind {
    type Err = Error;

    /// `zero`, `mean_x1`, `mean_x2` or `scaled_mean:<x1|x2>:<gain>`.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "zero" => Ok(CouplingKind::Zero),
            "mean_x1" => Ok(CouplingKind::MeanX1),
            "mean_x2" => Ok(CouplingKind::MeanX2),
            other => {
                let parts: Vec<&str> = other.split(':').collect();
                match parts.as_slice() {
                    ["scaled_mean", c, g] => {
                        let coord = match *c {
                            "x1" => Coord::X1,
                            "x2" => Coord::X2,
                            _ => return Err(Error::Parse(format!("unknown coordinate {c:?} in coupling"))),
                        };
                        let gain: f64 = g
                            .parse()
                            .map_err(|_| Error::Parse(format!("bad coupling gain {g:?}")))?;
                        if !gain.is_finite() {
                            return Err(Error::Parse(format!("coupling gain must be finite, got {gain}")));
                        }
                        Ok(CouplingKind::ScaledMean { coord, gain })
                    }
                    _ => Err(Error::Parse(format!("unknown coupling kind {other:?}"))),
                }
            }
        }
    }
}

/// Coupling statistic of a two-dimensional measure (weighted means).
pub fn coupling_stat(m: &EmpiricalMeasure, kind: &CouplingKind) -> Result<CouplingStat> {
    m.validate()?;
    if m.dim != 2 {
        return Err(Error::InvalidInput("coupling statistic needs a two-dimensional measure".into()));
    }
    let mean = |axis: usize| m.support.iter().zip(&m.weights).map(|(p, w)| w * p[axis]).sum::<f64>();
    let value = match kind {
        CouplingKind::Zero => 0.0,
        CouplingKind::MeanX1 => mean(0),
        CouplingKind::MeanX2 => mean(1),
        CouplingKind::ScaledMean { coord, gain } => gain * mean(if *coord == Coord::X1 { 0 } else { 1 }),
    };
    CouplingStat::new(value)
}

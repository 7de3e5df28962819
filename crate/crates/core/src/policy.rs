//! Dosing strategies.
//!
//! A [`Policy`] is an immutable description; [`PolicyRun`] carries whatever
//! per-trajectory state a strategy needs (the warm-started plan of the
//! receding-horizon controller) while a trajectory is simulated.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::hjb::HjbPolicy;
use crate::model::Dynamics;
use crate::pic::{self, ControlSequence, PicConfig};
use crate::rng::SeedSpec;
use crate::simulate::TimeGrid;

#[derive(Debug, Clone)]
pub enum Policy {
    Zero,
    Constant(f64),
    /// Dose `hi` while `x2 > x2_star`, otherwise `lo`.
    Threshold { x2_star: f64, lo: f64, hi: f64 },
    /// Dose `doses[step]`; the sequence must cover the whole grid.
    OpenLoop(ControlSequence),
    Hjb(Arc<HjbPolicy>),
    /// Receding-horizon path-integral control, replanned at every step.
    Mppi(PicConfig),
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Zero => write!(f, "zero"),
            Policy::Constant(v) => write!(f, "constant:{v}"),
            Policy::Threshold { x2_star, lo, hi } => write!(f, "threshold:{x2_star},{lo},{hi}"),
            Policy::OpenLoop(seq) => write!(f, "open_loop[{}]", seq.doses.len()),
            Policy::Hjb(_) => write!(f, "hjb"),
            Policy::Mppi(_) => write!(f, "mppi"),
        }
    }
}

/// Everything a feedback law may look at when choosing the next dose.
#[derive(Debug, Clone, Copy)]
pub struct DecisionPoint<'a> {
    pub step: usize,
    pub time: f64,
    pub state: [f64; 2],
    /// Mean-field statistic in force during this step.
    pub theta: f64,
    pub grid: &'a TimeGrid,
    /// Seed of the trajectory being simulated; planners derive their own streams from it.
    pub seed: SeedSpec,
}

impl Policy {
    pub fn start(&self) -> PolicyRun<'_> {
        PolicyRun { policy: self, warm: None }
    }

    pub fn is_deterministic_feedback(&self) -> bool {
        !matches!(self, Policy::Mppi(_))
    }
}

pub struct PolicyRun<'a> {
    policy: &'a Policy,
    warm: Option<Vec<f64>>,
}

impl PolicyRun<'_> {
    /// Dose for the step described by `at`. Doses outside `[0, u_max]` are an error.
    pub fn dose<D: Dynamics>(&mut self, sys: &D, at: &DecisionPoint<'_>) -> Result<f64> {
        let u = match self.policy {
            Policy::Zero => 0.0,
            Policy::Constant(v) => *v,
            Policy::Threshold { x2_star, lo, hi } => {
                if at.state[1] > *x2_star {
                    *hi
                } else {
                    *lo
                }
            }
            Policy::OpenLoop(seq) => *seq.doses.get(at.step).ok_or_else(|| {
                Error::InvalidInput(format!(
                    "open-loop sequence has {} doses, step {} requested",
                    seq.doses.len(),
                    at.step
                ))
            })?,
            Policy::Hjb(h) => h.dose(at.time, at.state)?,
            Policy::Mppi(cfg) => {
                let (u, plan) = pic::receding_step(sys, at, cfg, self.warm.take())?;
                self.warm = Some(plan);
                u
            }
        };
        let u_max = sys.params().u_max;
        if !(0.0..=u_max).contains(&u) {
            return Err(Error::InvalidInput(format!(
                "policy {} returned dose {u} outside [0, {u_max}]",
                self.policy
            )));
        }
        Ok(u)
    }
}

/// Parse `zero`, `constant:<v>`, `threshold:<x2*>,<lo>,<hi>` or `mppi`.
///
/// `hjb:<file>` needs a solved value grid and is resolved by the caller.
pub fn parse_simple(spec: &str, pic_cfg: &PicConfig) -> Result<Policy> {
    let (name, arg) = match spec.split_once(':') {
        Some((n, a)) => (n.trim(), Some(a.trim())),
        None => (spec.trim(), None),
    };
    let num = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::Parse(format!("bad number {s:?} in policy {spec:?}")))
    };
    match (name, arg) {
        ("zero", None) => Ok(Policy::Zero),
        ("constant", Some(a)) => Ok(Policy::Constant(num(a)?)),
        ("threshold", Some(a)) => {
            let parts: Vec<&str> = a.split(',').collect();
            if parts.len() != 3 {
                return Err(Error::Parse(format!(
                    "threshold policy needs <x2*>,<lo>,<hi>, got {a:?}"
                )));
            }
            Ok(Policy::Threshold { x2_star: num(parts[0])?, lo: num(parts[1])?, hi: num(parts[2])? })
        }
        ("mppi", None) => Ok(Policy::Mppi(pic_cfg.clone())),
        _ => Err(Error::Parse(format!("unknown policy {spec:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;

    fn point(grid: &TimeGrid, x2: f64) -> DecisionPoint<'_> {
        DecisionPoint { step: 0, time: 0.0, state: [0.5, x2], theta: 0.0, grid, seed: SeedSpec::new(0, 0) }
    }

    #[test]
    fn parses_simple_policies() {
        let cfg = PicConfig::default();
        assert!(matches!(parse_simple("zero", &cfg).unwrap(), Policy::Zero));
        assert!(matches!(parse_simple("constant:0.5", &cfg).unwrap(), Policy::Constant(v) if v == 0.5));
        assert!(matches!(
            parse_simple("threshold:0.3,0,1", &cfg).unwrap(),
            Policy::Threshold { x2_star, lo, hi } if x2_star == 0.3 && lo == 0.0 && hi == 1.0
        ));
        assert!(matches!(parse_simple("mppi", &cfg).unwrap(), Policy::Mppi(_)));
        for bad in ["", "constant", "constant:x", "threshold:1,2", "bogus", "zero:1"] {
            assert!(parse_simple(bad, &cfg).is_err(), "{bad}");
        }
    }

    #[test]
    fn threshold_switches_on_x2() {
        let p = ModelParams::default();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let pol = Policy::Threshold { x2_star: 0.4, lo: 0.1, hi: 0.9 };
        let mut run = pol.start();
        assert_eq!(run.dose(&p, &point(&grid, 0.5)).unwrap(), 0.9);
        assert_eq!(run.dose(&p, &point(&grid, 0.4)).unwrap(), 0.1);
    }

    #[test]
    fn unsaturated_dose_is_rejected() {
        let p = ModelParams::default();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let pol = Policy::Constant(p.u_max * 2.0);
        assert!(pol.start().dose(&p, &point(&grid, 0.5)).is_err());
        let pol = Policy::OpenLoop(ControlSequence { doses: vec![0.0; 3] });
        let at = DecisionPoint { step: 3, ..point(&grid, 0.5) };
        assert!(pol.start().dose(&p, &at).is_err());
    }
}

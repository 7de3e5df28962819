//! Tumor composition model.
//!
//! Three cell types compete inside the tumor: glycolytic cells (GLY), aerobic
//! defectors (DEF) and aerobic VEGF producers (VOP). The state is reduced to two
//! fractions,
//!
//! | Coordinate | Meaning |
//! |------------|---------|
//! | `x1` | VOP fraction among aerobic cells, `b_v / (b_v + b_d)` |
//! | `x2` | GLY fraction of the whole tumor, `b_g` |
//!
//! and evolves as a controlled Itô SDE driven by a three dimensional Brownian
//! motion `(B_g, B_d, B_v)`. The drift and the 2x3 diffusion matrix are
//! evaluated pointwise here; time stepping lives in [`crate::simulate`].
//!
//! The mean-field input enters as a scalar [`CouplingStat`] that is added to
//! the bracketed fitness terms and to most diffusion entries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulate::TimeGrid;

/// All model constants: game payoffs, noise levels and cost weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    /// Benefit from oxygen per unit of vascularization.
    pub beta_v: f64,
    /// Benefit per unit of acidification.
    pub beta_alpha: f64,
    /// Cost of producing VEGF.
    pub cost_c: f64,
    /// Interaction group size minus one.
    pub n_neighbors: u32,
    /// Aggregated VOP benefit factor (the geometric sum over club sizes).
    pub vop_benefit_factor: f64,
    pub sigma_g: f64,
    pub sigma_d: f64,
    pub sigma_v: f64,
    /// Cost per unit time of keeping the treatment running.
    #[serde(rename = "stabilization_weight_e")]
    pub stabilization_weight_e: f64,
    /// Finite stand-in for the infinite cost of therapy failure.
    #[serde(rename = "failure_penalty_M")]
    pub failure_penalty_m: f64,
    pub u_max: f64,
    pub x2_success: f64,
    pub x2_fail: f64,
    /// Also add the coupling statistic to diffusion entry (2,3).
    #[serde(default)]
    pub symmetrize_theta: bool,
    /// Charge the failure penalty for terminal states strictly between the thresholds.
    #[serde(default = "default_true")]
    pub indeterminate_is_failure: bool,
}

fn default_true() -> bool {
    true
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            beta_v: 1.0,
            beta_alpha: 1.5,
            cost_c: 0.3,
            n_neighbors: 1,
            vop_benefit_factor: 1.0,
            sigma_g: 0.15,
            sigma_d: 0.1,
            sigma_v: 0.1,
            stabilization_weight_e: 0.1,
            failure_penalty_m: 50.0,
            u_max: 1.0,
            x2_success: 0.2,
            x2_fail: 0.8,
            symmetrize_theta: false,
            indeterminate_is_failure: true,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("beta_v", self.beta_v),
            ("beta_alpha", self.beta_alpha),
            ("cost_c", self.cost_c),
            ("vop_benefit_factor", self.vop_benefit_factor),
            ("sigma_g", self.sigma_g),
            ("sigma_d", self.sigma_d),
            ("sigma_v", self.sigma_v),
            ("stabilization_weight_e", self.stabilization_weight_e),
            ("failure_penalty_M", self.failure_penalty_m),
            ("u_max", self.u_max),
            ("x2_success", self.x2_success),
            ("x2_fail", self.x2_fail),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!("{name} must be finite, got {v}")));
            }
            if v < 0.0 {
                return Err(Error::InvalidInput(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.u_max <= 0.0 {
            return Err(Error::InvalidInput("u_max must be > 0".into()));
        }
        if self.n_neighbors < 1 {
            return Err(Error::InvalidInput("n_neighbors must be >= 1".into()));
        }
        if !(self.x2_success <= self.x2_fail && self.x2_fail <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "thresholds must satisfy 0 <= x2_success <= x2_fail <= 1, got ({}, {})",
                self.x2_success, self.x2_fail
            )));
        }
        Ok(())
    }

    /// `beta_v / (n + 1) * V - c`, the VOP-vs-DEF payoff gap before noise corrections.
    #[inline]
    fn vop_advantage(&self) -> f64 {
        self.beta_v / (self.n_neighbors as f64 + 1.0) * self.vop_benefit_factor - self.cost_c
    }

    #[inline]
    fn acid_benefit(&self) -> f64 {
        self.beta_alpha / (self.n_neighbors as f64 + 1.0)
    }
}

/// A point of the unit square: `(x1, x2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub x1: f64,
    pub x2: f64,
}

impl State {
    pub fn new(x1: f64, x2: f64) -> Result<Self> {
        let st = Self { x1, x2 };
        st.check()?;
        Ok(st)
    }

    pub fn check(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.x1) || !(0.0..=1.0).contains(&self.x2) {
            return Err(Error::Domain(format!(
                "state ({}, {}) outside [0,1]^2",
                self.x1, self.x2
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn to_array(self) -> [f64; 2] {
        [self.x1, self.x2]
    }

    /// Unchecked conversion; callers guarantee the point lies in the unit square.
    #[inline]
    pub(crate) fn from_array(x: [f64; 2]) -> Self {
        Self { x1: x[0], x2: x[1] }
    }
}

/// Subpopulation proportions `(b_g, b_d, b_v)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fractions {
    pub b_g: f64,
    pub b_d: f64,
    pub b_v: f64,
}

/// Scalar stand-in for the population law wherever the dynamics add it.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CouplingStat {
    pub value: f64,
}

impl CouplingStat {
    pub const ZERO: CouplingStat = CouplingStat { value: 0.0 };

    pub fn new(value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::Domain(format!("coupling statistic must be finite, got {value}")));
        }
        Ok(Self { value })
    }
}

/// Terminal classification of a tumor state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalClass {
    Success,
    Failure,
    Indeterminate,
}

pub fn fractions_from_counts(m_g: f64, m_d: f64, m_v: f64) -> Result<Fractions> {
    if [m_g, m_d, m_v].iter().any(|m| !m.is_finite() || *m < 0.0) {
        return Err(Error::Domain(format!(
            "counts must be finite and nonnegative, got ({m_g}, {m_d}, {m_v})"
        )));
    }
    let total = m_g + m_d + m_v;
    if total <= 0.0 {
        return Err(Error::Domain("all subpopulation counts are zero".into()));
    }
    Ok(Fractions {
        b_g: m_g / total,
        b_d: m_d / total,
        b_v: m_v / total,
    })
}

pub fn state_from_fractions(f: Fractions) -> Result<State> {
    let aerobic = f.b_v + f.b_d;
    if aerobic <= 0.0 {
        return Err(Error::AerobicExtinct);
    }
    State::new(f.b_v / aerobic, f.b_g)
}

/// Closed form of `sum_{j=0}^{d} q^j`.
pub fn vop_benefit_factor_from_geometric(q: f64, d: u32) -> Result<f64> {
    if !(0.0..1.0).contains(&q) {
        return Err(Error::Domain(format!("geometric ratio must lie in [0,1), got {q}")));
    }
    if q == 0.0 {
        return Ok(1.0);
    }
    Ok((1.0 - q.powi(d as i32 + 1)) / (1.0 - q))
}

/// Drift with the dose term split off: `mu(x, u) = mu_free(x) - u * x2 (1 - x2) e_2`.
#[inline]
pub fn drift_free(x: [f64; 2], theta: f64, p: &ModelParams) -> [f64; 2] {
    let [x1, x2] = x;
    let (sg2, sd2, sv2) = (p.sigma_g * p.sigma_g, p.sigma_d * p.sigma_d, p.sigma_v * p.sigma_v);
    let a1 = x1 * (1.0 - x1);
    let a2 = x2 * (1.0 - x2);
    let mu1 = a1 * (p.vop_advantage() + theta + (1.0 - x1) * sd2 - x1 * sv2);
    let noise_drag =
        sg2 * x2 - sd2 * (1.0 - x2) * (1.0 - x1) * (1.0 - x1) - sv2 * (1.0 - x2) * x1 * x1;
    let mu2 = a2 * (p.acid_benefit() - (p.beta_v - p.cost_c) * x1 + theta - noise_drag);
    [mu1, mu2]
}

/// Magnitude of the dose effect on `x2`: `d mu_2 / d u = -x2 (1 - x2)`.
#[inline]
pub fn dose_sensitivity(x: [f64; 2]) -> f64 {
    x[1] * (1.0 - x[1])
}

#[inline]
pub(crate) fn drift_raw(x: [f64; 2], u: f64, theta: f64, p: &ModelParams) -> [f64; 2] {
    let [m1, m2] = drift_free(x, theta, p);
    [m1, m2 - u * dose_sensitivity(x)]
}

#[inline]
pub(crate) fn diffusion_raw(x: [f64; 2], theta: f64, p: &ModelParams) -> [[f64; 3]; 2] {
    let [x1, x2] = x;
    let a1 = x1 * (1.0 - x1);
    let g = p.sigma_g * x2 * (1.0 - x2);
    let theta_23 = if p.symmetrize_theta { theta } else { 0.0 };
    [
        [0.0, -p.sigma_d * a1 + theta, p.sigma_v * a1 + theta],
        [g + theta, g * (1.0 - x1) + theta, g * x1 + theta_23],
    ]
}

pub fn drift(st: State, u: f64, theta: CouplingStat, p: &ModelParams) -> Result<[f64; 2]> {
    st.check()?;
    if !(0.0..=p.u_max).contains(&u) {
        return Err(Error::Domain(format!("dose {u} outside [0, {}]", p.u_max)));
    }
    Ok(drift_raw(st.to_array(), u, theta.value, p))
}

pub fn diffusion(st: State, theta: CouplingStat, p: &ModelParams) -> Result<[[f64; 3]; 2]> {
    st.check()?;
    Ok(diffusion_raw(st.to_array(), theta.value, p))
}

pub fn classify_terminal(st: State, p: &ModelParams) -> TerminalClass {
    if st.x2 <= p.x2_success {
        TerminalClass::Success
    } else if st.x2 >= p.x2_fail {
        TerminalClass::Failure
    } else {
        TerminalClass::Indeterminate
    }
}

/// Coefficients of a controlled SDE on the plane, driven by three Brownian channels.
///
/// [`ModelParams`] is the tumor model. Other implementations exist for
/// calibrating the integrator and the planner against problems with known
/// answers.
pub trait Dynamics: Sync {
    /// Cost weights, dose bound and terminal thresholds used alongside the dynamics.
    fn params(&self) -> &ModelParams;

    fn drift(&self, x: [f64; 2], u: f64, theta: f64) -> [f64; 2];

    fn diffusion(&self, x: [f64; 2], theta: f64) -> [[f64; 3]; 2];

    /// Cost of a path given `sum_i u_i`, the grid and the final state.
    ///
    /// Defaults to the treatment cost `dt * sum u_i + e * t + terminal`.
    #[inline]
    fn trajectory_cost(&self, dose_sum: f64, grid: &TimeGrid, last: State) -> f64 {
        crate::cost::cost_from_parts(dose_sum, grid, last, self.params())
    }

    /// Map a raw Euler update back into the state space.
    #[inline]
    fn project(&self, x: [f64; 2]) -> [f64; 2] {
        [x[0].clamp(0.0, 1.0), x[1].clamp(0.0, 1.0)]
    }
}

impl Dynamics for ModelParams {
    fn params(&self) -> &ModelParams {
        self
    }

    #[inline]
    fn drift(&self, x: [f64; 2], u: f64, theta: f64) -> [f64; 2] {
        drift_raw(x, u, theta, self)
    }

    #[inline]
    fn diffusion(&self, x: [f64; 2], theta: f64) -> [[f64; 3]; 2] {
        diffusion_raw(x, theta, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn drift_example_params() -> ModelParams {
        ModelParams {
            beta_v: 1.0,
            vop_benefit_factor: 1.0,
            cost_c: 0.5,
            n_neighbors: 1,
            beta_alpha: 1.0,
            sigma_g: 0.0,
            sigma_d: 0.0,
            sigma_v: 0.0,
            ..ModelParams::default()
        }
    }

    #[test]
    fn fractions_examples() {
        let f = fractions_from_counts(1.0, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(f.b_g, 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f.b_v, 1.0 / 3.0, epsilon = 1e-15);
        let f = fractions_from_counts(5.0, 0.0, 0.0).unwrap();
        assert_eq!((f.b_g, f.b_d, f.b_v), (1.0, 0.0, 0.0));
        let f = fractions_from_counts(2.0, 3.0, 5.0).unwrap();
        assert_abs_diff_eq!(f.b_g, 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(f.b_d, 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(f.b_v, 0.5, epsilon = 1e-15);
        assert!(matches!(fractions_from_counts(0.0, 0.0, 0.0), Err(Error::Domain(_))));
        assert!(fractions_from_counts(-1.0, 2.0, 0.0).is_err());
    }

    #[test]
    fn state_from_fraction_examples() {
        let third = 1.0 / 3.0;
        let st = state_from_fractions(Fractions { b_g: third, b_d: third, b_v: third }).unwrap();
        assert_abs_diff_eq!(st.x1, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(st.x2, third, epsilon = 1e-15);
        let st = state_from_fractions(Fractions { b_g: 0.0, b_d: 1.0, b_v: 0.0 }).unwrap();
        assert_eq!(st, State { x1: 0.0, x2: 0.0 });
        let st = state_from_fractions(Fractions { b_g: 0.2, b_d: 0.3, b_v: 0.5 }).unwrap();
        assert_abs_diff_eq!(st.x1, 0.625, epsilon = 1e-15);
        assert_abs_diff_eq!(st.x2, 0.2, epsilon = 1e-15);
        let err = state_from_fractions(Fractions { b_g: 1.0, b_d: 0.0, b_v: 0.0 }).unwrap_err();
        assert!(err.to_string().contains("aerobic-extinct"));
    }

    #[test]
    fn geometric_factor_examples() {
        assert_eq!(vop_benefit_factor_from_geometric(0.0, 3).unwrap(), 1.0);
        assert_abs_diff_eq!(vop_benefit_factor_from_geometric(0.5, 2).unwrap(), 1.75, epsilon = 1e-15);
        assert_eq!(vop_benefit_factor_from_geometric(0.9, 0).unwrap(), 1.0);
        assert!(vop_benefit_factor_from_geometric(1.0, 2).is_err());
        assert!(vop_benefit_factor_from_geometric(-0.1, 2).is_err());
    }

    #[test]
    fn drift_examples() {
        let p = ModelParams::default();
        let d = drift(State { x1: 0.0, x2: 0.5 }, 0.7, CouplingStat::ZERO, &p).unwrap();
        assert_eq!(d[0], 0.0);
        let d = drift(State { x1: 0.5, x2: 1.0 }, 0.3, CouplingStat::ZERO, &p).unwrap();
        assert_eq!(d[1], 0.0);

        let p = drift_example_params();
        let d = drift(State { x1: 0.5, x2: 0.5 }, 0.0, CouplingStat::ZERO, &p).unwrap();
        assert_abs_diff_eq!(d[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d[1], 0.0625, epsilon = 1e-12);
    }

    #[test]
    fn drift_rejects_out_of_range_dose() {
        let p = ModelParams::default();
        let st = State { x1: 0.5, x2: 0.5 };
        assert!(drift(st, -0.1, CouplingStat::ZERO, &p).is_err());
        assert!(drift(st, p.u_max + 0.1, CouplingStat::ZERO, &p).is_err());
    }

    #[test]
    fn diffusion_examples() {
        let p = ModelParams { sigma_g: 1.0, sigma_d: 1.0, sigma_v: 1.0, ..ModelParams::default() };
        let s = diffusion(State { x1: 0.5, x2: 0.5 }, CouplingStat::ZERO, &p).unwrap();
        let expected = [[0.0, -0.25, 0.25], [0.25, 0.125, 0.125]];
        for i in 0..2 {
            for j in 0..3 {
                assert_abs_diff_eq!(s[i][j], expected[i][j], epsilon = 1e-12);
            }
        }
        let s = diffusion(State { x1: 1.0, x2: 0.0 }, CouplingStat::ZERO, &p).unwrap();
        assert!(s.iter().flatten().all(|v| *v == 0.0));

        let p = ModelParams { sigma_g: 0.0, sigma_d: 0.0, sigma_v: 0.0, ..ModelParams::default() };
        let theta = CouplingStat::new(0.1).unwrap();
        let s = diffusion(State { x1: 0.5, x2: 0.5 }, theta, &p).unwrap();
        assert_eq!(s, [[0.0, 0.1, 0.1], [0.1, 0.1, 0.0]]);
        let sym = ModelParams { symmetrize_theta: true, ..p };
        let s = diffusion(State { x1: 0.5, x2: 0.5 }, theta, &sym).unwrap();
        assert_eq!(s[1][2], 0.1);
    }

    #[test]
    fn classification_examples() {
        let p = ModelParams { x2_success: 0.1, x2_fail: 0.9, ..ModelParams::default() };
        assert_eq!(classify_terminal(State { x1: 0.3, x2: 0.0 }, &p), TerminalClass::Success);
        assert_eq!(classify_terminal(State { x1: 0.3, x2: 1.0 }, &p), TerminalClass::Failure);
        assert_eq!(classify_terminal(State { x1: 0.3, x2: 0.5 }, &p), TerminalClass::Indeterminate);
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams::default().validate().is_ok());
        let bad = ModelParams { stabilization_weight_e: -0.1, ..ModelParams::default() };
        assert!(bad.validate().is_err());
        // zero weights are the degenerate limits used by the cost identities
        let free = ModelParams { stabilization_weight_e: 0.0, failure_penalty_m: 0.0, ..ModelParams::default() };
        assert!(free.validate().is_ok());
        let bad = ModelParams { x2_success: 0.9, x2_fail: 0.1, ..ModelParams::default() };
        assert!(bad.validate().is_err());
        let bad = ModelParams { n_neighbors: 0, ..ModelParams::default() };
        assert!(bad.validate().is_err());
        let bad = ModelParams { sigma_g: -0.1, ..ModelParams::default() };
        assert!(bad.validate().is_err());
    }

    fn arb_params() -> impl Strategy<Value = ModelParams> {
        (
            (0.0..3.0f64, 0.0..3.0f64, 0.0..1.0f64, 1u32..10, 0.5..4.0f64),
            (0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64),
        )
            .prop_map(|((bv, ba, c, n, vf), (sg, sd, sv))| ModelParams {
                beta_v: bv,
                beta_alpha: ba,
                cost_c: c,
                n_neighbors: n,
                vop_benefit_factor: vf,
                sigma_g: sg,
                sigma_d: sd,
                sigma_v: sv,
                ..ModelParams::default()
            })
    }

    proptest! {
        #[test]
        fn fractions_sum_to_one(a in 1e-6..1e6f64, b in 1e-6..1e6f64, c in 1e-6..1e6f64) {
            let f = fractions_from_counts(a, b, c).unwrap();
            prop_assert!((f.b_g + f.b_d + f.b_v - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn state_round_trips_through_counts(x1 in 0.0..=1.0f64, x2 in 0.0..0.999f64, mass in 1e-3..1e6f64) {
            // inverse reconstruction: m_g = x2 M, m_v = x1 (1 - x2) M, m_d = (1 - x1)(1 - x2) M
            let aerobic = (1.0 - x2) * mass;
            let f = fractions_from_counts(x2 * mass, (1.0 - x1) * aerobic, x1 * aerobic).unwrap();
            let st = state_from_fractions(f).unwrap();
            prop_assert!((st.x1 - x1).abs() <= 1e-12);
            prop_assert!((st.x2 - x2).abs() <= 1e-12);
        }

        #[test]
        fn geometric_factor_matches_term_sum(q in 0.0..=0.99f64, d in 0u32..=50) {
            let naive: f64 = (0..=d).map(|j| q.powi(j as i32)).sum();
            let closed = vop_benefit_factor_from_geometric(q, d).unwrap();
            prop_assert!((naive - closed).abs() <= 1e-12 * naive.max(1.0));
        }

        #[test]
        fn corners_annihilate_drift_and_diffusion(p in arb_params(), u in 0.0..1.0f64) {
            for x in [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]] {
                let d = drift_raw(x, u, 0.0, &p);
                prop_assert_eq!(d, [0.0, 0.0]);
                let s = diffusion_raw(x, 0.0, &p);
                prop_assert!(s.iter().flatten().all(|v| *v == 0.0));
            }
        }

        #[test]
        fn edges_annihilate_their_drift_component(p in arb_params(), t in 0.0..=1.0f64, u in 0.0..1.0f64) {
            prop_assert_eq!(drift_raw([0.0, t], u, 0.0, &p)[0], 0.0);
            prop_assert_eq!(drift_raw([1.0, t], u, 0.0, &p)[0], 0.0);
            prop_assert_eq!(drift_raw([t, 0.0], u, 0.0, &p)[1], 0.0);
            prop_assert_eq!(drift_raw([t, 1.0], u, 0.0, &p)[1], 0.0);
        }

        #[test]
        fn dose_lowers_glycolytic_drift(p in arb_params(), x1 in 0.0..=1.0f64, x2 in 1e-3..0.999f64,
                                        u in 0.0..0.9f64, h in 1e-4..0.1f64) {
            let lo = drift_raw([x1, x2], u, 0.0, &p)[1];
            let hi = drift_raw([x1, x2], u + h, 0.0, &p)[1];
            prop_assert!(hi <= lo);
            let slope = (hi - lo) / h;
            prop_assert!((slope + x2 * (1.0 - x2)).abs() <= 1e-9);
        }
    }
}

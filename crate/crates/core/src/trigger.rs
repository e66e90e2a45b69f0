//! Dynamic periodic event trigger.
//!
//! At every sampling instant `z ≥ 1` the trigger predicts how far `V` can
//! rise over the worst-case wait for the next successful transmission,
//!
//! ```text
//! σ_z = r·V'(x)f(x,u*) + (2/3)·r^{3/2}·μ·(‖V'(x)‖·‖f(x,u*)‖ + ‖f(x,u*)‖²),   r = h·(m − m̄ + 1)
//! ```
//!
//! and sends the state when `V(x) + σ_z` reaches the decreasing envelope
//! anchored at the last successful transmission, or when more than `ν`
//! periods have passed since then.

use crate::certify::CertificationConstants;
use crate::dynamics::SystemModel;
use crate::error::{PetcError, Result};
use crate::scalar::{from_usize, lit, Scalar};
use crate::vecops::{dot, norm};

/// Largest default forced-trigger horizon.
pub const MAX_DEFAULT_NU: usize = 1_000_000;

/// Piecewise-constant `c_n(z) ≥ 0` over sampling-index ranges.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdaptiveSchedule<T> {
    segments: Vec<(usize, usize, T)>,
}

impl<T: Scalar> AdaptiveSchedule<T> {
    /// Segments are `(start, end_exclusive, value)`; the first segment
    /// containing `z` wins, indices outside every segment give 0.
    pub fn new(segments: Vec<(usize, usize, T)>) -> Result<Self> {
        for &(start, end, value) in &segments {
            if end <= start {
                return Err(PetcError::Config(format!("empty adaptive segment [{start}, {end})")));
            }
            if !(value >= T::zero()) || !value.is_finite() {
                return Err(PetcError::Config(format!("adaptive term must be finite and >= 0, got {value}")));
            }
        }
        Ok(AdaptiveSchedule { segments })
    }

    pub fn zero() -> Self {
        AdaptiveSchedule { segments: Vec::new() }
    }

    pub fn value_at(&self, z: usize) -> T {
        self.segments
            .iter()
            .find(|(start, end, _)| (*start..*end).contains(&z))
            .map_or(T::zero(), |s| s.2)
    }

    pub fn segments(&self) -> &[(usize, usize, T)] {
        &self.segments
    }
}

/// Envelope the predicted Lyapunov value is compared against.
#[derive(Debug, Clone, PartialEq)]
pub enum TriggerRule<T> {
    /// `V_ref − (z − i_ref + m − m̄ + 1)·h·σ·γ(V_ref)`
    Linear,
    /// `exp(−K·σ·(z − i_ref + m − m̄ + 1)·h)·V_ref`, for `γ(v) = K·v`.
    Exponential { k: T },
    /// Linear envelope with `σ` replaced by `σ + c_n(z)`.
    Adaptive(AdaptiveSchedule<T>),
}

impl<T> TriggerRule<T> {
    pub fn name(&self) -> &'static str {
        match self {
            TriggerRule::Linear => "linear",
            TriggerRule::Exponential { .. } => "exponential",
            TriggerRule::Adaptive(_) => "adaptive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriggerReason {
    /// Mandatory transmission of `x₀`.
    Initial,
    ForcedByNu,
    RuleViolated,
    /// Time-triggered baseline sends at every instant.
    Periodic,
    NoSend,
}

impl TriggerReason {
    pub fn as_str(self) -> &'static str {
        match self {
            TriggerReason::Initial => "initial",
            TriggerReason::ForcedByNu => "forced",
            TriggerReason::RuleViolated => "rule",
            TriggerReason::Periodic => "periodic",
            TriggerReason::NoSend => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "initial" => TriggerReason::Initial,
            "forced" => TriggerReason::ForcedByNu,
            "rule" => TriggerReason::RuleViolated,
            "periodic" => TriggerReason::Periodic,
            "none" => TriggerReason::NoSend,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerDecision<T> {
    pub send: bool,
    pub sigma_z: T,
    pub threshold: T,
    pub reason: TriggerReason,
}

/// Mutable trigger variables.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerState<T> {
    /// Sampling index of the last successful transmission.
    pub i_ref: usize,
    pub v_ref: T,
    /// Failed transmissions since the last success.
    pub m_bar: usize,
    /// Input held at the actuator, `κ(x(i_ref·h))`.
    pub u_star: Vec<T>,
    /// State at the last successful transmission (kept for logging).
    pub x_ref: Vec<T>,
    pub nu: usize,
    pub rule: TriggerRule<T>,
}

/// `ν = ⌈1/(σ·K·h)⌉`, clamped to `[1, MAX_DEFAULT_NU]`.
pub fn default_nu<T: Scalar>(sigma: T, k: T, h: T) -> usize {
    let raw = (sigma * k * h).recip().ceil();
    match raw.to_f64() {
        Some(v) if v.is_finite() && v >= 1.0 => (v as usize).min(MAX_DEFAULT_NU),
        Some(v) if v.is_finite() => 1,
        _ => MAX_DEFAULT_NU,
    }
}

/// Predicted rise of `V` over the remaining wait `h·(m − m̄ + 1)`.
pub fn sigma_z<T: Scalar>(
    model: &SystemModel<T>,
    constants: &CertificationConstants<T>,
    x: &[T],
    state: &TriggerState<T>,
) -> Result<T> {
    if !model.in_domain(x) {
        return Err(PetcError::outside_domain(None));
    }
    let steps = from_usize::<T>(constants.m.saturating_sub(state.m_bar) + 1);
    Ok(lyapunov_rise_bound(model, constants.mu_c, x, &state.u_star, constants.h * steps))
}

/// Integrated growth bound on `V` after `r` seconds under frozen input `u`:
/// `r·L_fV + (2/3)·r^{3/2}·μ·(‖V'‖‖f‖ + ‖f‖²)`.
pub fn lyapunov_rise_bound<T: Scalar>(model: &SystemModel<T>, mu: T, x: &[T], u: &[T], r: T) -> T {
    let f = model.vector_field(x, u);
    let g = model.lyapunov_gradient(x);
    let fnorm = norm(&f);
    let drift = norm(&g) * fnorm + fnorm * fnorm;
    r * dot(&g, &f) + lit::<T>(2.0 / 3.0) * r * r.sqrt() * mu * drift
}

impl<T: Scalar> TriggerState<T> {
    /// State after the mandatory initial transmission of `x₀`.
    pub fn initialize(x0: &[T], model: &SystemModel<T>, nu: usize, rule: TriggerRule<T>) -> Result<Self> {
        if !model.in_domain(x0) {
            return Err(PetcError::outside_domain(Some(0.0)));
        }
        if nu == 0 {
            return Err(PetcError::Config("forced-trigger horizon nu must be positive".into()));
        }
        Ok(TriggerState {
            i_ref: 0,
            v_ref: model.lyapunov(x0),
            m_bar: 0,
            u_star: model.feedback(x0),
            x_ref: x0.to_vec(),
            nu,
            rule,
        })
    }

    /// Decision at sampling index `z ≥ 1` for the measured state `x`.
    pub fn evaluate(
        &self,
        z: usize,
        x: &[T],
        model: &SystemModel<T>,
        constants: &CertificationConstants<T>,
    ) -> Result<TriggerDecision<T>> {
        if z == 0 {
            return Err(PetcError::Precondition("sampling index 0 is the initial transmission".into()));
        }
        if z < self.i_ref {
            return Err(PetcError::Precondition(format!("index {z} precedes last success {}", self.i_ref)));
        }
        let sigma_z = sigma_z(model, constants, x, self)?;
        let since = z - self.i_ref;
        let span = from_usize::<T>(since + constants.m.saturating_sub(self.m_bar) + 1) * constants.h;
        let threshold = match &self.rule {
            TriggerRule::Linear => self.v_ref - span * constants.sigma * model.decay(self.v_ref),
            TriggerRule::Exponential { k } => (-*k * constants.sigma * span).exp() * self.v_ref,
            TriggerRule::Adaptive(schedule) => {
                self.v_ref - span * (constants.sigma + schedule.value_at(z)) * model.decay(self.v_ref)
            }
        };
        let reason = if since > self.nu {
            TriggerReason::ForcedByNu
        } else if model.lyapunov(x) + sigma_z >= threshold {
            TriggerReason::RuleViolated
        } else {
            TriggerReason::NoSend
        };
        Ok(TriggerDecision { send: reason != TriggerReason::NoSend, sigma_z, threshold, reason })
    }

    /// Applies the acknowledgment outcome of a transmission sent at `z`.
    pub fn on_transmission_result(
        &mut self,
        z: usize,
        x: &[T],
        model: &SystemModel<T>,
        m: usize,
        success: bool,
    ) -> Result<()> {
        if success {
            self.i_ref = z;
            self.v_ref = model.lyapunov(x);
            self.m_bar = 0;
            model.feedback_into(x, &mut self.u_star);
            self.x_ref.copy_from_slice(x);
        } else {
            if self.m_bar + 1 > m {
                return Err(PetcError::ProtocolViolation {
                    message: format!("{} consecutive losses exceed the bound m = {m}", self.m_bar + 1),
                    index: Some(z),
                });
            }
            self.m_bar += 1;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::pendulum_preset;

    fn pinned_constants() -> CertificationConstants<f64> {
        let sigma = 0.35;
        let l1 = 1.65;
        let l2 = 2.76;
        let mu = crate::certify::compute_mu(l1, l2);
        let m_max = 3.0 * (1.0 - sigma) / (2.0 * mu * 2.77e-5f64.sqrt());
        CertificationConstants::from_values(0.258, sigma, 1, l1, l2, m_max, mu).unwrap()
    }

    #[test]
    fn sigma_z_vanishes_at_origin() {
        let (model, _) = pendulum_preset::<f64>();
        let c = pinned_constants();
        let st = TriggerState::initialize(&[0.0, 0.0], &model, 10, TriggerRule::Linear).unwrap();
        assert_eq!(st.v_ref, 0.0);
        assert_eq!(st.u_star, vec![0.0]);
        assert_eq!(sigma_z(&model, &c, &[0.0, 0.0], &st).unwrap(), 0.0);
    }

    #[test]
    fn sigma_z_shrinks_with_failures() {
        let (model, _) = pendulum_preset::<f64>();
        let c = pinned_constants();
        let x0 = [0.43, 0.0];
        let mut st = TriggerState::initialize(&x0, &model, 10, TriggerRule::Linear).unwrap();
        let fresh = sigma_z(&model, &c, &x0, &st).unwrap();
        st.m_bar = 1;
        let failed = sigma_z(&model, &c, &x0, &st).unwrap();
        assert!(fresh < 0.0 && failed < 0.0);
        // Correction term only: μ·(…)·(2/3)·r^{3/2} with r = 2h vs r = h.
        let corr = |r: f64| lyapunov_rise_bound(&model, c.mu_c, &x0, &st.u_star, r) - r * {
            let f = model.vector_field(&x0, &st.u_star);
            dot(&model.lyapunov_gradient(&x0), &f)
        };
        assert!(corr(c.h) < corr(2.0 * c.h));
        assert!(corr(c.h) > 0.0);
    }

    #[test]
    fn initialize_pendulum() {
        let (model, _) = pendulum_preset::<f64>();
        let st = TriggerState::initialize(&[0.43, 0.0], &model, 5, TriggerRule::Linear).unwrap();
        assert_eq!(st.i_ref, 0);
        assert!((st.v_ref - 0.2363022).abs() < 1e-12);
        assert_eq!(st.m_bar, 0);
        assert_eq!(st.u_star, model.feedback(&[0.43, 0.0]));
    }

    #[test]
    fn forced_after_nu() {
        let (model, _) = pendulum_preset::<f64>();
        let c = pinned_constants();
        let st = TriggerState::initialize(&[0.0, 0.0], &model, 7, TriggerRule::Linear).unwrap();
        let d = st.evaluate(8, &[0.1, 0.0], &model, &c).unwrap();
        assert!(d.send);
        assert_eq!(d.reason, TriggerReason::ForcedByNu);
        assert_eq!(st.evaluate(0, &[0.0, 0.0], &model, &c).unwrap_err().kind(), "PreconditionError");
    }

    #[test]
    fn quiet_at_origin_below_nu() {
        let (model, _) = pendulum_preset::<f64>();
        let c = pinned_constants();
        let nu = default_nu(c.sigma, model.gamma().linear_rate().unwrap(), c.h);
        let st = TriggerState::initialize(&[0.43, 0.0], &model, nu, TriggerRule::Linear).unwrap();
        // The linear envelope reaches zero near z = ν; halfway it is still positive.
        let half = st.v_ref - (nu / 2 + c.m + 1) as f64 * c.h * c.sigma * model.decay(st.v_ref);
        assert!(half > 0.0, "{half}");
        for z in [1, 10, nu / 2] {
            let d = st.evaluate(z, &[0.0, 0.0], &model, &c).unwrap();
            assert!(!d.send, "z = {z}");
            assert_eq!(d.reason, TriggerReason::NoSend);
        }
    }

    #[test]
    fn equality_triggers() {
        let (model, _) = pendulum_preset::<f64>();
        let c = pinned_constants();
        // V_ref = 0 at the origin: 0 + 0 >= 0 - 0.
        let st = TriggerState::initialize(&[0.0, 0.0], &model, 100, TriggerRule::Linear).unwrap();
        let d = st.evaluate(1, &[0.0, 0.0], &model, &c).unwrap();
        assert!(d.send);
        assert_eq!(d.reason, TriggerReason::RuleViolated);
    }

    #[test]
    fn zero_adaptive_term_matches_linear() {
        let (model, _) = pendulum_preset::<f64>();
        let c = pinned_constants();
        let lin = TriggerState::initialize(&[0.43, 0.0], &model, 1000, TriggerRule::Linear).unwrap();
        let mut ada = lin.clone();
        ada.rule = TriggerRule::Adaptive(AdaptiveSchedule::zero());
        for (z, x) in [(1, [0.43, 0.0]), (50, [0.4, -0.1]), (900, [0.42, 0.0]), (3, [0.2, 0.3])] {
            assert_eq!(lin.evaluate(z, &x, &model, &c).unwrap(), ada.evaluate(z, &x, &model, &c).unwrap());
        }
    }

    #[test]
    fn transmission_outcomes() {
        let (model, _) = pendulum_preset::<f64>();
        let mut st = TriggerState::initialize(&[0.43, 0.0], &model, 100, TriggerRule::Linear).unwrap();
        st.on_transmission_result(3, &[0.4, 0.0], &model, 1, false).unwrap();
        assert_eq!((st.i_ref, st.m_bar), (0, 1));
        let err = st.on_transmission_result(4, &[0.4, 0.0], &model, 1, false).unwrap_err();
        assert_eq!(err.kind(), "ProtocolViolation");
        st.on_transmission_result(5, &[0.4, 0.1], &model, 1, true).unwrap();
        assert_eq!((st.i_ref, st.m_bar), (5, 0));
        assert_eq!(st.u_star, model.feedback(&[0.4, 0.1]));
        assert_eq!(st.v_ref, model.lyapunov(&[0.4, 0.1]));
    }

    #[test]
    fn schedule_lookup() {
        let s = AdaptiveSchedule::new(vec![(0, 10, 0.5), (5, 20, 0.1)]).unwrap();
        assert_eq!(s.value_at(3), 0.5);
        assert_eq!(s.value_at(12), 0.1);
        assert_eq!(s.value_at(20), 0.0);
        assert!(AdaptiveSchedule::new(vec![(0, 10, -0.1)]).is_err());
        assert!(AdaptiveSchedule::new(vec![(4, 4, 0.1)]).is_err());
    }

    #[test]
    fn default_nu_caps() {
        assert_eq!(default_nu(0.5, 1.0, 0.1), 20);
        assert_eq!(default_nu(0.35, 1.0, 1e-12), MAX_DEFAULT_NU);
        assert_eq!(default_nu(0.9, 10.0, 1.0), 1);
    }
}

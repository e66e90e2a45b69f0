//! Closed-loop simulation on the sampling grid.

use crate::certify::CertificationConstants;
use crate::channel::ChannelModel;
use crate::dynamics::{LevelSet, SystemModel};
use crate::error::{PetcError, Result};
use crate::scalar::{from_usize, lit, to_f64, Scalar};
use crate::trajectory::TrajectoryLog;
use crate::trigger::{TriggerDecision, TriggerReason, TriggerRule, TriggerState};
use crate::verify::solve_reference_on_grid;

pub const DEFAULT_SUBSTEPS: usize = 1;

/// Fixed-step classical RK4 under a zero-order-hold input.
#[derive(Debug, Clone)]
pub struct Integrator<T> {
    k1: Vec<T>,
    k2: Vec<T>,
    k3: Vec<T>,
    k4: Vec<T>,
    tmp: Vec<T>,
}

impl<T: Scalar> Integrator<T> {
    pub fn new(dim: usize) -> Self {
        let z = vec![T::zero(); dim];
        Integrator { k1: z.clone(), k2: z.clone(), k3: z.clone(), k4: z.clone(), tmp: z }
    }

    /// Advances `x` in place over `dt` with `substeps` equal steps. On leaving
    /// the model domain, returns a domain error carrying the offset (seconds
    /// from the start of the interval) of the first offending substep.
    pub fn advance(&mut self, model: &SystemModel<T>, x: &mut [T], u: &[T], dt: T, substeps: usize) -> Result<()> {
        let n = substeps.max(1);
        let step = dt / from_usize::<T>(n);
        let half = step * lit(0.5);
        let sixth = step / lit(6.0);
        let two = lit::<T>(2.0);
        for k in 0..n {
            model.vector_field_into(x, u, &mut self.k1);
            for i in 0..x.len() {
                self.tmp[i] = x[i] + half * self.k1[i];
            }
            model.vector_field_into(&self.tmp, u, &mut self.k2);
            for i in 0..x.len() {
                self.tmp[i] = x[i] + half * self.k2[i];
            }
            model.vector_field_into(&self.tmp, u, &mut self.k3);
            for i in 0..x.len() {
                self.tmp[i] = x[i] + step * self.k3[i];
            }
            model.vector_field_into(&self.tmp, u, &mut self.k4);
            for i in 0..x.len() {
                x[i] = x[i] + sixth * (self.k1[i] + two * (self.k2[i] + self.k3[i]) + self.k4[i]);
            }
            if !model.in_domain(x) {
                return Err(PetcError::outside_domain(Some(to_f64(from_usize::<T>(k + 1) * step))));
            }
        }
        Ok(())
    }
}

/// Integrates `ẋ = f(x, u)` from `x` over `dt` and returns the end state.
pub fn integrate_interval<T: Scalar>(model: &SystemModel<T>, x: &[T], u: &[T], dt: T, substeps: usize) -> Result<Vec<T>> {
    let mut out = x.to_vec();
    Integrator::new(x.len()).advance(model, &mut out, u, dt, substeps)?;
    Ok(out)
}

/// One closed-loop run.
pub struct SimConfig<'a, T> {
    pub model: &'a SystemModel<T>,
    pub set: &'a LevelSet<T>,
    pub constants: &'a CertificationConstants<T>,
    pub rule: TriggerRule<T>,
    pub nu: usize,
    pub channel: ChannelModel,
    pub x0: Vec<T>,
    /// Simulated time in seconds.
    pub horizon: T,
    /// RK4 steps per sampling period.
    pub substeps: usize,
}

impl<T: Scalar> SimConfig<'_, T> {
    pub fn validate(&self) -> Result<()> {
        let model = self.model;
        if self.x0.len() != model.state_dim() {
            return Err(PetcError::Config(format!(
                "x0 has {} components, model state has {}",
                self.x0.len(),
                model.state_dim()
            )));
        }
        if !self.set.contains(model, &self.x0) {
            return Err(PetcError::Config(format!(
                "x0 lies outside the region of attraction V <= {} (V(x0) = {})",
                self.set.c,
                model.lyapunov(&self.x0)
            )));
        }
        if !(self.constants.h > T::zero()) {
            return Err(PetcError::Config("sampling period must be positive".into()));
        }
        if !(self.horizon >= self.constants.h) {
            return Err(PetcError::Config(format!(
                "horizon {} is shorter than one sampling period {}",
                self.horizon, self.constants.h
            )));
        }
        if self.channel.loss_bound() != self.constants.m {
            return Err(PetcError::Config(format!(
                "channel loss bound {} differs from certified m = {}",
                self.channel.loss_bound(),
                self.constants.m
            )));
        }
        if self.substeps == 0 {
            return Err(PetcError::Config("substeps must be at least 1".into()));
        }
        if self.nu == 0 {
            return Err(PetcError::Config("nu must be positive".into()));
        }
        Ok(())
    }

    /// Number of sampling periods `⌊horizon/h⌋` (rows minus one), with a
    /// few ulps of slack so that `horizon = N·h` yields `N`.
    pub fn periods(&self) -> usize {
        let ratio = to_f64(self.horizon / self.constants.h);
        let slack = 16.0 * to_f64(T::epsilon()) * ratio.max(1.0);
        (ratio + slack).floor() as usize
    }
}

fn finish<T: Scalar>(mut log: TrajectoryLog<T>, model: &SystemModel<T>, sigma: T) -> TrajectoryLog<T> {
    log.reference = solve_reference_on_grid(model.gamma(), sigma, log.lyapunov[0], log.h, log.len());
    log
}

fn initial_decision<T: Scalar>() -> TriggerDecision<T> {
    TriggerDecision { send: true, sigma_z: T::zero(), threshold: T::nan(), reason: TriggerReason::Initial }
}

/// Runs the event-triggered loop: the initial transmission at `z = 0`
/// bypasses the channel, every later send goes through it.
pub fn run<T: Scalar>(mut config: SimConfig<'_, T>) -> Result<TrajectoryLog<T>> {
    config.validate()?;
    let model = config.model;
    let constants = config.constants;
    let h = constants.h;
    let periods = config.periods();
    let mut state = TriggerState::initialize(&config.x0, model, config.nu, config.rule.clone())?;
    let mut log = TrajectoryLog::with_capacity(model.state_dim(), model.input_dim(), h, periods + 1);
    let mut x = config.x0.clone();
    let mut xhat = x.clone();
    let mut u = state.u_star.clone();
    log.push(&x, &xhat, &u, model.lyapunov(&x), T::zero(), &initial_decision(), true);

    let mut integrator = Integrator::new(x.len());
    for z in 1..=periods {
        integrator
            .advance(model, &mut x, &u, h, config.substeps)
            .map_err(|e| shift_time(e, to_f64(from_usize::<T>(z - 1) * h)).at_index(z))?;
        let decision = state.evaluate(z, &x, model, constants).map_err(|e| e.at_index(z))?;
        let mut delivered = false;
        if decision.send {
            delivered = config.channel.attempt(z);
            state.on_transmission_result(z, &x, model, constants.m, delivered)?;
            if delivered {
                xhat.copy_from_slice(&x);
                u.copy_from_slice(&state.u_star);
            }
        }
        log.push(&x, &xhat, &u, model.lyapunov(&x), T::zero(), &decision, delivered);
    }
    log::debug!(
        "{} rule: {} rows, {} sends, {} delivered",
        config.rule.name(),
        log.len(),
        log.send_count(),
        log.success_count()
    );
    Ok(finish(log, model, constants.sigma))
}

/// Time-triggered baseline: a transmission attempt at every sampling index.
pub fn run_periodic_baseline<T: Scalar>(config: &SimConfig<'_, T>) -> Result<TrajectoryLog<T>> {
    config.validate()?;
    let model = config.model;
    let h = config.constants.h;
    let periods = config.periods();
    let mut channel = config.channel.clone();
    let mut log = TrajectoryLog::with_capacity(model.state_dim(), model.input_dim(), h, periods + 1);
    let mut x = config.x0.clone();
    let mut xhat = x.clone();
    let mut u = model.feedback(&x);
    log.push(&x, &xhat, &u, model.lyapunov(&x), T::zero(), &initial_decision(), true);
    let decision = TriggerDecision {
        send: true,
        sigma_z: T::nan(),
        threshold: T::nan(),
        reason: TriggerReason::Periodic,
    };
    let mut integrator = Integrator::new(x.len());
    for z in 1..=periods {
        integrator
            .advance(model, &mut x, &u, h, config.substeps)
            .map_err(|e| shift_time(e, to_f64(from_usize::<T>(z - 1) * h)).at_index(z))?;
        let delivered = channel.attempt(z);
        if delivered {
            xhat.copy_from_slice(&x);
            model.feedback_into(&x, &mut u);
        }
        log.push(&x, &xhat, &u, model.lyapunov(&x), T::zero(), &decision, delivered);
    }
    Ok(finish(log, model, config.constants.sigma))
}

fn shift_time(err: PetcError, offset: f64) -> PetcError {
    match err {
        PetcError::Domain { detail, time, index } => {
            PetcError::Domain { detail, time: time.map(|t| t + offset), index }
        }
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{pendulum_preset, scalar_decay_preset};

    fn pinned_constants(m: usize) -> CertificationConstants<f64> {
        let sigma = 0.35;
        let mu = crate::certify::compute_mu(1.65, 2.76);
        let m_max = 3.0 * (1.0 - sigma) / (2.0 * mu * 2.77e-5f64.sqrt());
        CertificationConstants::from_values(0.258, sigma, m, 1.65, 2.76, m_max, mu).unwrap()
    }

    #[test]
    fn rk4_exponential() {
        let (model, _) = scalar_decay_preset::<f64>();
        let x = integrate_interval(&model, &[1.0], &[0.0], 1.0, 100).unwrap();
        assert!((x[0] - (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn domain_exit_reports_time() {
        let (model, _) = pendulum_preset::<f64>();
        // Large constant torque drives x1 past π/2.
        let err = integrate_interval(&model, &[1.5, 0.0], &[-200.0], 1.0, 100).unwrap_err();
        match err {
            PetcError::Domain { time: Some(t), .. } => assert!(t > 0.0 && t <= 1.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn config<'a>(
        model: &'a SystemModel<f64>,
        set: &'a LevelSet<f64>,
        c: &'a CertificationConstants<f64>,
        channel: ChannelModel,
        horizon: f64,
    ) -> SimConfig<'a, f64> {
        SimConfig {
            model,
            set,
            constants: c,
            rule: TriggerRule::Linear,
            nu: 100,
            channel,
            x0: vec![0.43, 0.0],
            horizon,
            substeps: 2,
        }
    }

    #[test]
    fn row_count_and_initial_row() {
        let (model, set) = pendulum_preset::<f64>();
        let c = pinned_constants(1);
        let horizon = 200.0 * c.h;
        let log = run(config(&model, &set, &c, ChannelModel::always_deliver(1), horizon)).unwrap();
        assert_eq!(log.len(), 201);
        assert_eq!(log.reasons[0], TriggerReason::Initial);
        assert!(log.delivered[0] && log.threshold[0].is_nan());
        assert_eq!(log.reference[0], log.lyapunov[0]);
        assert_eq!(log.u(0), model.feedback(&[0.43, 0.0]).as_slice());
    }

    #[test]
    fn validation_errors() {
        let (model, set) = pendulum_preset::<f64>();
        let c = pinned_constants(1);
        let mut cfg = config(&model, &set, &c, ChannelModel::always_deliver(1), 1.0);
        cfg.x0 = vec![1.0, 1.0];
        let err = run(cfg).unwrap_err();
        assert!(err.to_string().contains("region of attraction"));
        let cfg = config(&model, &set, &c, ChannelModel::always_deliver(2), 1.0);
        assert_eq!(run(cfg).unwrap_err().kind(), "ConfigError");
        let cfg = config(&model, &set, &c, ChannelModel::always_deliver(1), c.h * 0.5);
        assert_eq!(run(cfg).unwrap_err().kind(), "ConfigError");
    }

    #[test]
    fn baseline_sends_every_period() {
        let (model, set) = pendulum_preset::<f64>();
        let c = pinned_constants(1);
        let cfg = config(&model, &set, &c, ChannelModel::bernoulli(0.5, 1, 9).unwrap(), 100.0 * c.h);
        let log = run_periodic_baseline(&cfg).unwrap();
        assert_eq!(log.send_count(), log.len());
        let gaps = log.transmission_indices();
        assert!(gaps.windows(2).all(|w| w[1] - w[0] <= 2));
    }
}

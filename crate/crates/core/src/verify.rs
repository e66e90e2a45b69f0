//! Post-hoc stability and convergence checks on closed-loop logs.
//!
//! Each check reduces to a signed margin `lhs − rhs` in Lyapunov units; a
//! check passes when its worst margin does not exceed the tolerance
//!
//! ```text
//! tol = 1e-7·max(V(x₀), 1e-3·c) + 10·dt⁴·max‖f‖
//! ```
//!
//! where `dt` is the integrator step. The comparison envelope `S` solves
//! `dS/dt = −σ·γ(S)`, `S(0) = V(x₀)` on the sampling grid.

use std::fmt::Write as _;

use crate::certify::CertificationConstants;
use crate::dynamics::{DecayRate, SystemModel};
use crate::error::{PetcError, Result};
use crate::scalar::{format_real, from_usize, lit, to_f64, Scalar};
use crate::trajectory::TrajectoryLog;
use crate::trigger::{lyapunov_rise_bound, TriggerRule};
use crate::vecops::norm;

/// Largest internal step used when integrating the comparison system.
const REFERENCE_MAX_STEP: f64 = 1e-3;

#[inline]
fn rk4_scalar<T: Scalar>(rate: impl Fn(T) -> T, s: T, dt: T) -> T {
    let half = dt * lit(0.5);
    let k1 = rate(s);
    let k2 = rate(s + half * k1);
    let k3 = rate(s + half * k2);
    let k4 = rate(s + dt * k3);
    s + dt / lit(6.0) * (k1 + lit::<T>(2.0) * (k2 + k3) + k4)
}

/// Solves `dS/dt = −σ·γ(S)`, `S(times[0]) = v0` at the given (nondecreasing)
/// times with classical fourth-order steps of at most 1e-3 s.
pub fn solve_reference<T: Scalar>(gamma: &DecayRate<T>, sigma: T, v0: T, times: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(times.len());
    if times.is_empty() {
        return out;
    }
    let rate = |s: T| -sigma * gamma.eval(s.max(T::zero()));
    let max_step = lit::<T>(REFERENCE_MAX_STEP);
    let mut s = v0;
    out.push(s);
    for w in times.windows(2) {
        let span = w[1] - w[0];
        if span > T::zero() && s > T::zero() {
            let steps = (span / max_step).ceil().to_usize().unwrap_or(1).max(1);
            let dt = span / from_usize::<T>(steps);
            for _ in 0..steps {
                s = rk4_scalar(rate, s, dt).max(T::zero());
            }
        }
        out.push(s);
    }
    out
}

/// Comparison envelope on the grid `z·h`, `z = 0..count`.
pub fn solve_reference_on_grid<T: Scalar>(gamma: &DecayRate<T>, sigma: T, v0: T, h: T, count: usize) -> Vec<T> {
    let times: Vec<T> = (0..count).map(|z| from_usize::<T>(z) * h).collect();
    solve_reference(gamma, sigma, v0, &times)
}

/// Upper bound on `V` after `r` seconds from `x` under the frozen input `u`.
pub fn v_bound<T: Scalar>(model: &SystemModel<T>, mu: T, x: &[T], u: &[T], r: T) -> T {
    model.lyapunov(x) + lyapunov_rise_bound(model, mu, x, u, r)
}

/// Tolerance separating theorem violations from round-off and integration error.
pub fn tolerance<T: Scalar>(v0: T, c: T, dt: T, f_scale: T) -> T {
    lit::<T>(1e-7) * v0.max(c * lit(1e-3)) + lit::<T>(10.0) * dt.powi(4) * f_scale
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Largest `lhs − rhs` seen (negative: slack).
    pub worst_margin: f64,
    /// Sampling index of the worst margin.
    pub location: Option<usize>,
    pub tolerance: f64,
    pub evaluated: usize,
    pub note: Option<String>,
}

struct Worst {
    margin: f64,
    location: Option<usize>,
    evaluated: usize,
}

impl Worst {
    fn new() -> Self {
        Worst { margin: f64::NEG_INFINITY, location: None, evaluated: 0 }
    }

    fn see<T: Scalar>(&mut self, margin: T, z: usize) {
        let m = to_f64(margin);
        self.evaluated += 1;
        if m > self.margin || self.location.is_none() || m.is_nan() {
            self.margin = if m.is_nan() { f64::INFINITY } else { m };
            self.location = Some(z);
        }
    }

    fn finish(self, name: &str, tol: f64) -> CheckResult {
        let vacuous = self.evaluated == 0;
        CheckResult {
            name: name.to_string(),
            passed: vacuous || self.margin <= tol,
            worst_margin: if vacuous { 0.0 } else { self.margin },
            location: self.location,
            tolerance: tol,
            evaluated: self.evaluated,
            note: vacuous.then(|| "no instances to check".to_string()),
        }
    }
}

/// Outcome of all checks on one run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VerificationReport {
    pub checks: Vec<CheckResult>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failing(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }

    pub const CSV_HEADER: &'static str = "check,pass,worst_margin,location";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for c in &self.checks {
            let loc = c.location.map(|z| z.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{}", c.name, c.passed, format_real(c.worst_margin), loc);
        }
        s
    }

    /// `key = value` report, one block per check.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let _ = writeln!(s, "{}.pass = {}", c.name, c.passed);
            let _ = writeln!(s, "{}.worst_margin = {}", c.name, format_real(c.worst_margin));
            let _ = writeln!(s, "{}.tolerance = {}", c.name, format_real(c.tolerance));
            if let Some(z) = c.location {
                let _ = writeln!(s, "{}.location = {z}", c.name);
            }
            let _ = writeln!(s, "{}.evaluated = {}", c.name, c.evaluated);
            if let Some(note) = &c.note {
                let _ = writeln!(s, "{}.note = {note}", c.name);
            }
        }
        let _ = writeln!(s, "verdict = {}", if self.passed() { "pass" } else { "fail" });
        s
    }
}

/// `V(x((z+m+1)·h)) ≤ S(z·h)` at every grid index with both ends logged.
pub fn check_shifted_criterion<T: Scalar>(
    log: &TrajectoryLog<T>,
    reference: &[T],
    m: usize,
    h: T,
    tol: T,
) -> Result<CheckResult> {
    if reference.len() != log.len() {
        return Err(PetcError::Config(format!(
            "reference has {} grid points, log has {}",
            reference.len(),
            log.len()
        )));
    }
    if (h - log.h).abs() > log.h * lit(1e-12) {
        return Err(PetcError::Config(format!("reference step {h} differs from log step {}", log.h)));
    }
    let shift = m + 1;
    let mut worst = Worst::new();
    for z in 0..log.len().saturating_sub(shift) {
        worst.see(log.lyapunov[z + shift] - reference[z], z);
    }
    Ok(worst.finish("shifted_criterion", to_f64(tol)))
}

/// Decrease conditions between consecutive successful transmissions:
///
/// * `nonmonotonic_bounded`: `V(x(τ_k + r)) ≤ V(x(τ_k))` on the grid
///   between `τ_k` and `τ_{k+1}` (and after the last success);
/// * `nonmonotonic_decrease`: `V(x(τ_{k+1})) − V(x(τ_k)) ≤ −(τ_{k+1} − τ_k)·σ·γ(V(x(τ_k)))`,
///   or `V(x(τ_{k+1})) ≤ e^{−K·σ·(τ_{k+1} − τ_k)}·V(x(τ_k))` for [`DecreaseForm::Exponential`];
/// * `combined_lyapunov_decrease`: `½(V(ξ₁) + V(ξ₂))` strictly decreases
///   across transmissions (up to tolerance).
pub fn check_nonmonotonic<T: Scalar>(
    log: &TrajectoryLog<T>,
    model: &SystemModel<T>,
    constants: &CertificationConstants<T>,
    decrease_form: DecreaseForm<T>,
    tol: T,
) -> Vec<CheckResult> {
    let tol_f = to_f64(tol);
    let tx = log.transmission_indices();
    let mut bounded = Worst::new();
    let mut decrease = Worst::new();
    let mut combined = Worst::new();
    let half = lit::<T>(0.5);
    let combined_at = |z: usize| half * (log.lyapunov[z] + model.lyapunov(log.xhat(z)));
    for (k, &start) in tx.iter().enumerate() {
        let end = tx.get(k + 1).copied().unwrap_or(log.len() - 1);
        let v_start = log.lyapunov[start];
        for z in start + 1..=end {
            bounded.see(log.lyapunov[z] - v_start, z);
        }
        if let Some(&next) = tx.get(k + 1) {
            let gap = from_usize::<T>(next - start) * log.h;
            let allowed = match decrease_form {
                DecreaseForm::Chord => v_start - gap * constants.sigma * model.decay(v_start),
                DecreaseForm::Exponential { k } => (-k * constants.sigma * gap).exp() * v_start,
            };
            decrease.see(log.lyapunov[next] - allowed, next);
            combined.see(combined_at(next) - combined_at(start), next);
        }
    }
    let mut out = vec![
        bounded.finish("nonmonotonic_bounded", tol_f),
        decrease.finish("nonmonotonic_decrease", tol_f),
        combined.finish("combined_lyapunov_decrease", tol_f),
    ];
    if tx.len() < 2 {
        for c in out.iter_mut().skip(1) {
            c.note = Some("fewer than two successful transmissions; vacuous".into());
        }
        log::warn!("decrease check is vacuous: {} successful transmission(s)", tx.len());
    }
    out
}

/// `V(x(z·h)) ≤ c` for every logged state.
pub fn check_level_set<T: Scalar>(log: &TrajectoryLog<T>, c: T, tol: T) -> CheckResult {
    let mut worst = Worst::new();
    for z in 0..log.len() {
        worst.see(log.lyapunov[z] - c, z);
    }
    worst.finish("level_set_invariance", to_f64(tol))
}

/// Realized `V` after each trigger evaluation stays below the integrated
/// growth bound for the frozen input, over the evaluation horizon
/// `h·(m − m̄ + 1)` and until the next input change.
pub fn check_bound_validity<T: Scalar>(
    log: &TrajectoryLog<T>,
    model: &SystemModel<T>,
    constants: &CertificationConstants<T>,
    tol: T,
) -> CheckResult {
    let failures = log.failures_before();
    let mut worst = Worst::new();
    let mut exits = 0usize;
    for z in 1..log.len() {
        if log.delivered[z] {
            // Input changes at z itself: only r' = 0, where the bound is exact.
            continue;
        }
        let x = log.x(z);
        let u_star = log.u(z - 1);
        let steps = constants.m.saturating_sub(failures[z]) + 1;
        for j in 1..=steps {
            let zz = z + j;
            if zz >= log.len() {
                break;
            }
            if log.lyapunov[zz] > constants.c {
                exits += 1;
            }
            let bound = v_bound(model, constants.mu_c, x, u_star, from_usize::<T>(j) * log.h);
            worst.see(log.lyapunov[zz] - bound, z);
            if log.delivered[zz] {
                break;
            }
        }
    }
    let mut result = worst.finish("bound_validity", to_f64(tol));
    if exits > 0 {
        result.note = Some(format!("{exits} bound horizon(s) left the level set"));
    }
    result
}

/// Successful-transmission gaps lie in `[h, (ν + m + 1)·h]`.
pub fn check_transmission_gaps<T: Scalar>(log: &TrajectoryLog<T>, nu: usize, m: usize) -> CheckResult {
    let limit = (nu + m + 1) as f64;
    let mut worst = Worst::new();
    for w in log.transmission_indices().windows(2) {
        let gap = (w[1] - w[0]) as f64;
        // Lower bound holds by construction (distinct indices).
        worst.see::<f64>(gap - limit, w[1]);
    }
    let mut result = worst.finish("transmission_gaps", 0.0);
    result.note = Some(format!("gap limit {} periods", nu + m + 1));
    result
}

/// Checks the chord inequality `C1 ≤ C2 − r·σ·γ(C2)` and, when it holds,
/// that `C1 ≤ S(s + r)`. Returns whether the hypothesis holds.
pub fn check_proposition3<T: Scalar>(
    c1: T,
    c2: T,
    r: T,
    s: T,
    reference: impl Fn(T) -> T,
    gamma: &DecayRate<T>,
    sigma: T,
) -> Result<bool> {
    if c1 < T::zero() || c2 < T::zero() || r < T::zero() || s < T::zero() {
        return Err(PetcError::Precondition("C1, C2, r and s must be nonnegative".into()));
    }
    let s_at_s = reference(s);
    let slack = lit::<T>(1e-12) * s_at_s.abs().max(T::one());
    if c2 > s_at_s + slack {
        return Err(PetcError::Precondition(format!("C2 = {c2} exceeds S(s) = {s_at_s}")));
    }
    if c1 > c2 - r * sigma * gamma.eval(c2) {
        return Ok(false);
    }
    let s_later = reference(s + r);
    if c1 > s_later + slack {
        return Err(PetcError::AssumptionViolation(format!(
            "C1 = {c1} exceeds S(s + r) = {s_later} although the chord inequality holds"
        )));
    }
    Ok(true)
}

/// Per-interval decrease the trigger rule guarantees between successes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecreaseForm<T> {
    /// `V⁺ ≤ V − Δ·σ·γ(V)` (linear and adaptive rules).
    Chord,
    /// `V⁺ ≤ e^{−K·σ·Δ}·V` (exponential rule).
    Exponential { k: T },
}

impl<T: Scalar> DecreaseForm<T> {
    pub fn for_rule(rule: &TriggerRule<T>) -> Self {
        match rule {
            TriggerRule::Exponential { k } => DecreaseForm::Exponential { k: *k },
            TriggerRule::Linear | TriggerRule::Adaptive(_) => DecreaseForm::Chord,
        }
    }
}

/// Inputs the full verification needs beyond the log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions<T> {
    pub nu: usize,
    /// Integrator substeps per sampling period used to produce the log.
    pub substeps: usize,
    pub decrease_form: DecreaseForm<T>,
}

/// Runs every check on a closed-loop log.
pub fn verify_run<T: Scalar>(
    log: &TrajectoryLog<T>,
    model: &SystemModel<T>,
    constants: &CertificationConstants<T>,
    options: VerifyOptions<T>,
) -> Result<VerificationReport> {
    if log.len() < 2 {
        return Err(PetcError::Config("log needs at least two rows".into()));
    }
    if log.state_dim != model.state_dim() || log.input_dim != model.input_dim() {
        return Err(PetcError::Config("log dimensions do not match the model".into()));
    }
    let v0 = log.lyapunov[0];
    let f_scale = (0..log.len())
        .map(|z| norm(&model.vector_field(log.x(z), log.u(z))))
        .fold(T::zero(), |a, b| a.max(b));
    let dt = log.h / from_usize::<T>(options.substeps.max(1));
    let tol = tolerance(v0, constants.c, dt, f_scale);
    let reference = solve_reference_on_grid(model.gamma(), constants.sigma, v0, log.h, log.len());

    let mut checks = vec![check_shifted_criterion(log, &reference, constants.m, log.h, tol)?];
    checks.extend(check_nonmonotonic(log, model, constants, options.decrease_form, tol));
    checks.push(check_level_set(log, constants.c, tol));
    checks.push(check_bound_validity(log, model, constants, tol));
    checks.push(check_transmission_gaps(log, options.nu, constants.m));
    Ok(VerificationReport { checks })
}

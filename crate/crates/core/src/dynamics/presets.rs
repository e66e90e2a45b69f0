use crate::error::{PetcError, Result};
use crate::scalar::{lit, Scalar};

use super::{check_assumption1, DecayRate, LevelSet, SystemModel, DEFAULT_GRID_DENSITY};

/// Names accepted by [`preset`].
pub const PRESET_NAMES: &[&str] = &["pendulum", "scalar-decay"];

/// Fraction of the grid-measured decay rate used as the pendulum's `γ` slope.
///
/// The grid minimum of `−L_fV/V` sits slightly above the true infimum
/// (about 1.28256, the smallest generalized eigenvalue of the closed-loop
/// Lyapunov pair), so the preset backs off by 1%. The resulting
/// `γ(v) = K·v` has `K ≈ 1.2697`.
pub const PENDULUM_DECAY_MARGIN: f64 = 0.99;

/// Looks up a preset model and its level set by name.
pub fn preset<T: Scalar>(name: &str) -> Result<(SystemModel<T>, LevelSet<T>)> {
    match name {
        "pendulum" => Ok(pendulum_preset()),
        "scalar-decay" => Ok(scalar_decay_preset()),
        other => Err(PetcError::Config(format!(
            "unknown model preset '{other}' (known: {})",
            PRESET_NAMES.join(", ")
        ))),
    }
}

/// Inverted pendulum with a feedback-linearizing controller.
///
/// ```text
/// ẋ₁ = x₂
/// ẋ₂ = (sin x₁ − u·cos x₁)·ω₀,            ω₀ = 0.1
/// κ(x) = (31.6·x₁ + 40.4·x₂ + sin x₁) / cos x₁
/// V(x) = 1.278·x₁² + 0.632·x₁·x₂ + 0.404·x₂²,  c = 0.258
/// ```
///
/// States with `|x₁| ≥ π/2` are outside the domain. The decay rate is linear,
/// `γ(v) = K·v`, with `K` measured on a 201×201 grid over the level set and
/// scaled by [`PENDULUM_DECAY_MARGIN`].
pub fn pendulum_preset<T: Scalar>() -> (SystemModel<T>, LevelSet<T>) {
    let omega0: T = lit(0.1);
    let k1: T = lit(31.6);
    let k2: T = lit(40.4);
    let p11: T = lit(1.278);
    let p12: T = lit(0.632);
    let p22: T = lit(0.404);
    let two: T = lit(2.0);
    let half_pi: T = lit(std::f64::consts::FRAC_PI_2);

    let model = SystemModel::builder("pendulum", 2, 1)
        .vector_field(move |x: &[T], u: &[T], dx: &mut [T]| {
            dx[0] = x[1];
            dx[1] = (x[0].sin() - u[0] * x[0].cos()) * omega0;
        })
        .feedback(move |x: &[T], u: &mut [T]| u[0] = (k1 * x[0] + k2 * x[1] + x[0].sin()) / x[0].cos())
        .lyapunov(move |x: &[T]| p11 * x[0] * x[0] + p12 * x[0] * x[1] + p22 * x[1] * x[1])
        .lyapunov_gradient(move |x: &[T], g: &mut [T]| {
            g[0] = two * p11 * x[0] + p12 * x[1];
            g[1] = p12 * x[0] + two * p22 * x[1];
        })
        .gamma(DecayRate::Linear(T::zero()))
        .domain_guard(move |x: &[T]| x[0].abs() < half_pi)
        .build()
        .expect("pendulum model is complete");
    let set = LevelSet { c: lit(0.258) };

    let report = check_assumption1(&model, &set, DEFAULT_GRID_DENSITY)
        .expect("pendulum level set is bounded and non-empty");
    let k = report.linear_rate * lit(PENDULUM_DECAY_MARGIN);
    (model.with_gamma(DecayRate::Linear(k)), set)
}

/// `ẋ = −x + u`, `κ = 0`, `V = x²`, `γ(v) = v` on `V ≤ 1`.
pub fn scalar_decay_preset<T: Scalar>() -> (SystemModel<T>, LevelSet<T>) {
    let two: T = lit(2.0);
    let model = SystemModel::builder("scalar-decay", 1, 1)
        .vector_field(|x, u, dx| dx[0] = u[0] - x[0])
        .feedback(|_, u| u[0] = T::zero())
        .lyapunov(|x| x[0] * x[0])
        .lyapunov_gradient(move |x: &[T], g: &mut [T]| g[0] = two * x[0])
        .gamma(DecayRate::Linear(T::one()))
        .build()
        .expect("scalar model is complete");
    (model, LevelSet { c: T::one() })
}

//! Plant, feedback law and Lyapunov certificate of the continuous-time loop.
//!
//! A [`SystemModel`] bundles
//!
//! ```text
//! ẋ = f(x, u),   u = κ(x̂),   V(x) ≥ 0,   V'(x) f(x, κ(x)) ≤ −γ(V(x))
//! ```
//!
//! together with an optional domain guard for states where the model is not
//! defined (for instance where a feedback law divides by zero). Everything
//! else in the crate evaluates the loop through this type.

mod presets;

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{PetcError, Result};
use crate::sampling::{probe_directions, BoundingBox, Halton};
use crate::scalar::{lit, to_f64, Scalar};
use crate::vecops::{dot, norm};

pub use presets::{pendulum_preset, preset, scalar_decay_preset, PENDULUM_DECAY_MARGIN, PRESET_NAMES};

type VectorFieldFn<T> = dyn Fn(&[T], &[T], &mut [T]) + Send + Sync;
type FeedbackFn<T> = dyn Fn(&[T], &mut [T]) + Send + Sync;
type ScalarFn<T> = dyn Fn(&[T]) -> T + Send + Sync;
type GuardFn<T> = dyn Fn(&[T]) -> bool + Send + Sync;

/// Maximum allowed value of `L_fV + γ(V)` on the grid for the decrease
/// condition to count as satisfied.
pub const ASSUMPTION1_TOLERANCE: f64 = 1e-9;

/// Default number of grid points per axis for the decrease-condition check.
pub const DEFAULT_GRID_DENSITY: usize = 201;

/// Class-K decay rate `γ`.
#[derive(Clone)]
pub enum DecayRate<T> {
    /// `γ(v) = k·v`
    Linear(T),
    Custom(Arc<dyn Fn(T) -> T + Send + Sync>),
}

impl<T: Scalar> DecayRate<T> {
    pub fn custom(f: impl Fn(T) -> T + Send + Sync + 'static) -> Self {
        DecayRate::Custom(Arc::new(f))
    }

    #[inline]
    pub fn eval(&self, v: T) -> T {
        match self {
            DecayRate::Linear(k) => *k * v,
            DecayRate::Custom(f) => f(v),
        }
    }

    /// The rate `k` when `γ(v) = k·v`.
    pub fn linear_rate(&self) -> Option<T> {
        match self {
            DecayRate::Linear(k) => Some(*k),
            DecayRate::Custom(_) => None,
        }
    }

    pub fn scaled(&self, factor: T) -> Self {
        match self {
            DecayRate::Linear(k) => DecayRate::Linear(*k * factor),
            DecayRate::Custom(f) => {
                let f = Arc::clone(f);
                DecayRate::Custom(Arc::new(move |v| f(v) * factor))
            }
        }
    }
}

impl<T: fmt::Debug> fmt::Debug for DecayRate<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecayRate::Linear(k) => write!(f, "Linear({k:?})"),
            DecayRate::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Continuous-time plant, feedback, Lyapunov function and decay rate.
#[derive(Clone)]
pub struct SystemModel<T> {
    name: String,
    state_dim: usize,
    input_dim: usize,
    vector_field: Arc<VectorFieldFn<T>>,
    feedback: Arc<FeedbackFn<T>>,
    lyapunov: Arc<ScalarFn<T>>,
    lyapunov_gradient: Arc<FeedbackFn<T>>,
    gamma: DecayRate<T>,
    domain_guard: Option<Arc<GuardFn<T>>>,
}

impl<T> fmt::Debug for SystemModel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemModel")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("input_dim", &self.input_dim)
            .field("guarded", &self.domain_guard.is_some())
            .finish_non_exhaustive()
    }
}

impl<T: Scalar> SystemModel<T> {
    pub fn builder(name: impl Into<String>, state_dim: usize, input_dim: usize) -> SystemModelBuilder<T> {
        SystemModelBuilder {
            name: name.into(),
            state_dim,
            input_dim,
            vector_field: None,
            feedback: None,
            lyapunov: None,
            lyapunov_gradient: None,
            gamma: None,
            domain_guard: None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn gamma(&self) -> &DecayRate<T> {
        &self.gamma
    }

    /// Same model with a different decay rate.
    pub fn with_gamma(mut self, gamma: DecayRate<T>) -> Self {
        self.gamma = gamma;
        self
    }

    #[inline]
    pub fn vector_field_into(&self, x: &[T], u: &[T], out: &mut [T]) {
        (self.vector_field)(x, u, out)
    }

    pub fn vector_field(&self, x: &[T], u: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.state_dim];
        self.vector_field_into(x, u, &mut out);
        out
    }

    #[inline]
    pub fn feedback_into(&self, x: &[T], out: &mut [T]) {
        (self.feedback)(x, out)
    }

    pub fn feedback(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.input_dim];
        self.feedback_into(x, &mut out);
        out
    }

    #[inline]
    pub fn lyapunov(&self, x: &[T]) -> T {
        (self.lyapunov)(x)
    }

    #[inline]
    pub fn lyapunov_gradient_into(&self, x: &[T], out: &mut [T]) {
        (self.lyapunov_gradient)(x, out)
    }

    pub fn lyapunov_gradient(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.state_dim];
        self.lyapunov_gradient_into(x, &mut out);
        out
    }

    #[inline]
    pub fn decay(&self, v: T) -> T {
        self.gamma.eval(v)
    }

    #[inline]
    pub fn in_domain(&self, x: &[T]) -> bool {
        x.iter().all(|v| v.is_finite()) && self.domain_guard.as_ref().is_none_or(|g| g(x))
    }
}

pub struct SystemModelBuilder<T> {
    name: String,
    state_dim: usize,
    input_dim: usize,
    vector_field: Option<Arc<VectorFieldFn<T>>>,
    feedback: Option<Arc<FeedbackFn<T>>>,
    lyapunov: Option<Arc<ScalarFn<T>>>,
    lyapunov_gradient: Option<Arc<FeedbackFn<T>>>,
    gamma: Option<DecayRate<T>>,
    domain_guard: Option<Arc<GuardFn<T>>>,
}

impl<T: Scalar> SystemModelBuilder<T> {
    pub fn vector_field(mut self, f: impl Fn(&[T], &[T], &mut [T]) + Send + Sync + 'static) -> Self {
        self.vector_field = Some(Arc::new(f));
        self
    }

    pub fn feedback(mut self, f: impl Fn(&[T], &mut [T]) + Send + Sync + 'static) -> Self {
        self.feedback = Some(Arc::new(f));
        self
    }

    pub fn lyapunov(mut self, f: impl Fn(&[T]) -> T + Send + Sync + 'static) -> Self {
        self.lyapunov = Some(Arc::new(f));
        self
    }

    pub fn lyapunov_gradient(mut self, f: impl Fn(&[T], &mut [T]) + Send + Sync + 'static) -> Self {
        self.lyapunov_gradient = Some(Arc::new(f));
        self
    }

    pub fn gamma(mut self, gamma: DecayRate<T>) -> Self {
        self.gamma = Some(gamma);
        self
    }

    pub fn domain_guard(mut self, f: impl Fn(&[T]) -> bool + Send + Sync + 'static) -> Self {
        self.domain_guard = Some(Arc::new(f));
        self
    }

    pub fn build(self) -> Result<SystemModel<T>> {
        fn need<V>(v: Option<V>, what: &str) -> Result<V> {
            v.ok_or_else(|| PetcError::Config(format!("system model is missing its {what}")))
        }
        if self.state_dim == 0 || self.input_dim == 0 {
            return Err(PetcError::Config("state and input dimensions must be positive".into()));
        }
        Ok(SystemModel {
            vector_field: need(self.vector_field, "vector field")?,
            feedback: need(self.feedback, "feedback law")?,
            lyapunov: need(self.lyapunov, "Lyapunov function")?,
            lyapunov_gradient: need(self.lyapunov_gradient, "Lyapunov gradient")?,
            gamma: need(self.gamma, "decay rate")?,
            name: self.name,
            state_dim: self.state_dim,
            input_dim: self.input_dim,
            domain_guard: self.domain_guard,
        })
    }
}

/// Sublevel set `{x : V(x) ≤ c}` intersected with the model domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelSet<T> {
    pub c: T,
}

impl<T: Scalar> LevelSet<T> {
    pub fn new(c: T) -> Result<Self> {
        if !(c > T::zero()) || !c.is_finite() {
            return Err(PetcError::Config(format!("level c must be positive and finite, got {c}")));
        }
        Ok(LevelSet { c })
    }

    #[inline]
    pub fn contains(&self, model: &SystemModel<T>, x: &[T]) -> bool {
        model.in_domain(x) && model.lyapunov(x) <= self.c
    }

    /// Axis-aligned box enclosing the set.
    ///
    /// The boundary is located by bisection on the ray `r·d` for the
    /// coordinate axes, the sign diagonals and a batch of Halton directions;
    /// the box spans the extreme coordinates found and is widened by 5% on
    /// each side.
    pub fn bounding_box(&self, model: &SystemModel<T>) -> Result<BoundingBox<T>> {
        let n = model.state_dim();
        let origin = vec![T::zero(); n];
        if !self.contains(model, &origin) {
            return Err(PetcError::Config("level set does not contain the origin".into()));
        }
        let mut lo = vec![T::zero(); n];
        let mut hi = vec![T::zero(); n];
        let mut p = vec![T::zero(); n];
        let max_radius = lit::<T>(1e8);
        for d in probe_directions::<T>(n, 64 * n) {
            let inside = |r: T, p: &mut [T]| {
                for (pi, &di) in p.iter_mut().zip(&d) {
                    *pi = r * di;
                }
                self.contains(model, p)
            };
            let mut a = T::zero();
            let mut b = lit::<T>(1e-3);
            while inside(b, &mut p) {
                a = b;
                b = b + b;
                if b > max_radius {
                    return Err(PetcError::Config(format!(
                        "level set V <= {} appears unbounded",
                        self.c
                    )));
                }
            }
            for _ in 0..60 {
                let mid = (a + b) * lit(0.5);
                if inside(mid, &mut p) {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            for k in 0..n {
                let coord = a * d[k];
                lo[k] = lo[k].min(coord);
                hi[k] = hi[k].max(coord);
            }
        }
        for k in 0..n {
            let pad = (hi[k] - lo[k]) * lit(0.05);
            lo[k] = lo[k] - pad;
            hi[k] = hi[k] + pad;
        }
        Ok(BoundingBox { lo, hi })
    }

    /// First `count` Halton points of the bounding box that fall inside the set.
    pub fn halton_points(
        &self,
        model: &SystemModel<T>,
        bbox: &BoundingBox<T>,
        count: usize,
        seed: u64,
    ) -> Vec<Vec<T>> {
        let n = model.state_dim();
        let mut seq = Halton::new(n, seed);
        let mut unit = vec![0.0; n];
        let mut out = Vec::with_capacity(count);
        let budget = count.saturating_mul(1000).max(10_000);
        for _ in 0..budget {
            if out.len() == count {
                break;
            }
            seq.next_into(&mut unit);
            let mut p = vec![T::zero(); n];
            bbox.map_unit(&unit, &mut p);
            if self.contains(model, &p) {
                out.push(p);
            }
        }
        out
    }
}

/// `L_fV(x, u) = V'(x)·f(x, u)`.
pub fn lie_derivative<T: Scalar>(model: &SystemModel<T>, x: &[T], u: &[T]) -> Result<T> {
    if !model.in_domain(x) {
        return Err(PetcError::outside_domain(None));
    }
    let grad = model.lyapunov_gradient(x);
    let f = model.vector_field(x, u);
    Ok(dot(&grad, &f))
}

/// Lie derivative along the closed loop `u = κ(x)`.
pub fn closed_loop_lie_derivative<T: Scalar>(model: &SystemModel<T>, x: &[T]) -> Result<T> {
    if !model.in_domain(x) {
        return Err(PetcError::outside_domain(None));
    }
    let u = model.feedback(x);
    lie_derivative(model, x, &u)
}

/// Outcome of the grid check of the continuous-time decrease condition.
#[derive(Debug, Clone)]
pub struct Assumption1Report<T> {
    pub passed: bool,
    /// `max_x L_fV(x, κ(x)) + γ(V(x))` over grid points in the level set.
    pub max_violation: T,
    pub worst_point: Vec<T>,
    /// `min_x −L_fV(x, κ(x)) / V(x)` over grid points with `V > 0`.
    pub linear_rate: T,
    pub points_in_set: usize,
    pub grid_density: usize,
}

/// Checks `L_fV(x, κ(x)) ≤ −γ(V(x))` on a uniform grid over the level set and
/// measures the tightest linear decay rate.
pub fn check_assumption1<T: Scalar>(
    model: &SystemModel<T>,
    set: &LevelSet<T>,
    grid_density: usize,
) -> Result<Assumption1Report<T>> {
    if grid_density < 2 {
        return Err(PetcError::Config("grid density must be at least 2".into()));
    }
    let n = model.state_dim();
    let bbox = set.bounding_box(model)?;
    let total = grid_density
        .checked_pow(n as u32)
        .ok_or_else(|| PetcError::Config("grid too large".into()))?;
    let v_floor = set.c * lit(1e-12);

    #[derive(Clone)]
    struct Acc<T> {
        max_violation: T,
        worst: usize,
        rate: T,
        count: usize,
    }
    let identity = || Acc { max_violation: T::neg_infinity(), worst: usize::MAX, rate: T::infinity(), count: 0 };

    let acc = (0..total)
        .into_par_iter()
        .fold(identity, |mut acc, idx| {
            let mut x = vec![T::zero(); n];
            bbox.grid_point(grid_density, idx, &mut x);
            if !set.contains(model, &x) {
                return acc;
            }
            let v = model.lyapunov(&x);
            let Ok(lf) = closed_loop_lie_derivative(model, &x) else {
                return acc;
            };
            acc.count += 1;
            let viol = lf + model.decay(v);
            if viol > acc.max_violation || acc.worst == usize::MAX {
                acc.max_violation = viol;
                acc.worst = idx;
            }
            if v > v_floor {
                acc.rate = acc.rate.min(-lf / v);
            }
            acc
        })
        .reduce(identity, |a, b| {
            let (max_violation, worst) = if b.worst != usize::MAX
                && (a.worst == usize::MAX || b.max_violation > a.max_violation)
            {
                (b.max_violation, b.worst)
            } else {
                (a.max_violation, a.worst)
            };
            Acc { max_violation, worst, rate: a.rate.min(b.rate), count: a.count + b.count }
        });

    if acc.count == 0 {
        return Err(PetcError::Config("decrease-condition grid has no points inside the level set".into()));
    }
    let mut worst_point = vec![T::zero(); n];
    bbox.grid_point(grid_density, acc.worst, &mut worst_point);
    Ok(Assumption1Report {
        passed: acc.max_violation <= lit(ASSUMPTION1_TOLERANCE),
        max_violation: acc.max_violation,
        worst_point,
        linear_rate: acc.rate,
        points_in_set: acc.count,
        grid_density,
    })
}

/// Numerical sanity checks on the model's structural invariants.
#[derive(Debug, Clone)]
pub struct ModelDiagnostics {
    pub equilibrium_residual: f64,
    pub lyapunov_at_origin: f64,
    pub positive_definite: bool,
    pub gamma_class_k: bool,
    /// Largest relative gradient / central-difference mismatch.
    pub gradient_rel_error: f64,
    pub samples: usize,
}

impl ModelDiagnostics {
    pub fn passed(&self) -> bool {
        self.equilibrium_residual <= 1e-12
            && self.lyapunov_at_origin == 0.0
            && self.positive_definite
            && self.gamma_class_k
            && self.gradient_rel_error <= 1e-6
    }
}

/// Checks `f(0,0) = 0`, `V(0) = 0`, `V > 0` away from the origin, that γ is
/// class-K on a grid of levels, and the analytic gradient against central
/// differences at `samples` Halton points of the level set.
pub fn diagnose_model<T: Scalar>(
    model: &SystemModel<T>,
    set: &LevelSet<T>,
    samples: usize,
    seed: u64,
) -> Result<ModelDiagnostics> {
    let n = model.state_dim();
    let zero_x = vec![T::zero(); n];
    let zero_u = vec![T::zero(); model.input_dim()];
    let equilibrium_residual = to_f64(norm(&model.vector_field(&zero_x, &zero_u)));
    let lyapunov_at_origin = to_f64(model.lyapunov(&zero_x));

    let bbox = set.bounding_box(model)?;
    let points = set.halton_points(model, &bbox, samples, seed);
    let positive_definite = points
        .iter()
        .filter(|p| norm(p) > T::zero())
        .all(|p| model.lyapunov(p) > T::zero());

    let mut gamma_class_k = model.decay(T::zero()) == T::zero();
    let mut prev = T::zero();
    for i in 1..=200 {
        let v = set.c * lit::<T>(i as f64 / 200.0);
        let g = model.decay(v);
        gamma_class_k &= g > prev;
        prev = g;
    }

    let step = bbox.diameter() * lit(1e-5);
    let mut worst = 0.0f64;
    let mut xp = vec![T::zero(); n];
    let mut xm = vec![T::zero(); n];
    for p in &points {
        let g = model.lyapunov_gradient(p);
        let scale = norm(&g).max(T::one());
        for k in 0..n {
            xp.copy_from_slice(p);
            xm.copy_from_slice(p);
            xp[k] = xp[k] + step;
            xm[k] = xm[k] - step;
            let fd = (model.lyapunov(&xp) - model.lyapunov(&xm)) / (step + step);
            worst = worst.max(to_f64((fd - g[k]).abs() / scale));
        }
    }
    Ok(ModelDiagnostics {
        equilibrium_residual,
        lyapunov_at_origin,
        positive_definite,
        gamma_class_k,
        gradient_rel_error: worst,
        samples: points.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_model(k: f64) -> SystemModel<f64> {
        SystemModel::<f64>::builder("scalar", 1, 1)
            .vector_field(|x, u, dx| dx[0] = -x[0] + u[0])
            .feedback(|_, u| u[0] = 0.0)
            .lyapunov(|x| x[0] * x[0])
            .lyapunov_gradient(|x, g| g[0] = 2.0 * x[0])
            .gamma(DecayRate::Linear(k))
            .build()
            .unwrap()
    }

    #[test]
    fn lie_derivative_vanishes_at_equilibrium() {
        let (model, _) = pendulum_preset::<f64>();
        assert_eq!(lie_derivative(&model, &[0.0, 0.0], &[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn lie_derivative_zero_gradient() {
        let model = SystemModel::<f64>::builder("flat", 2, 1)
            .vector_field(|_, u, dx| {
                dx[0] = u[0];
                dx[1] = 1.0;
            })
            .feedback(|_, u| u[0] = 0.0)
            .lyapunov(|_| 0.0)
            .lyapunov_gradient(|_, g| g.fill(0.0))
            .gamma(DecayRate::Linear(1.0))
            .build()
            .unwrap();
        assert_eq!(lie_derivative(&model, &[0.3, -2.0], &[5.0]).unwrap(), 0.0);
    }

    #[test]
    fn lie_derivative_respects_guard() {
        let (model, _) = pendulum_preset::<f64>();
        let err = lie_derivative(&model, &[1.6, 0.0], &[0.0]).unwrap_err();
        assert_eq!(err.kind(), "DomainError");
    }

    #[test]
    fn pendulum_initial_state_decreases() {
        let (model, set) = pendulum_preset::<f64>();
        let x0 = [0.43, 0.0];
        assert!(set.contains(&model, &x0));
        let lf = closed_loop_lie_derivative(&model, &x0).unwrap();
        let g = model.decay(model.lyapunov(&x0));
        assert!(g > 0.0);
        assert!(lf <= -g, "L_fV = {lf}, -γ(V) = {}", -g);
    }

    #[test]
    fn scalar_linear_model_rate() {
        let model = scalar_model(1.0);
        let set = LevelSet::new(1.0).unwrap();
        let report = check_assumption1(&model, &set, 201).unwrap();
        assert!(report.passed);
        assert!((report.linear_rate - 2.0).abs() < 1e-12);
    }

    #[test]
    fn overly_fast_decay_rate_fails() {
        let (model, set) = pendulum_preset::<f64>();
        let fast = model.clone().with_gamma(model.gamma().scaled(10.0));
        let report = check_assumption1(&fast, &set, 101).unwrap();
        assert!(!report.passed);
        assert!(report.max_violation > 0.0);
    }

    #[test]
    fn degenerate_grid_is_config_error() {
        let model = scalar_model(1.0);
        let set = LevelSet::new(1.0).unwrap();
        let err = check_assumption1(&model, &set, 1).unwrap_err();
        assert_eq!(err.kind(), "ConfigError");
    }

    #[test]
    fn level_set_membership() {
        let (model, set) = pendulum_preset::<f64>();
        assert!(set.contains(&model, &[0.0, 0.0]));
        let bigger = LevelSet::new(set.c * 2.0).unwrap();
        for x in [[0.43, 0.0], [0.3, 0.5], [-0.4, 0.2]] {
            if set.contains(&model, &x) {
                assert!(bigger.contains(&model, &x));
            }
        }
        assert!(LevelSet::new(0.0f64).is_err());
    }

    #[test]
    fn bounding_box_covers_ellipse() {
        let (model, set) = pendulum_preset::<f64>();
        let bbox = set.bounding_box(&model).unwrap();
        // Exact half-widths of {xᵀPx ≤ c}: sqrt(c·(P⁻¹)_kk).
        let det: f64 = 1.278 * 0.404 - 0.316 * 0.316;
        let w1 = (0.258 * 0.404 / det).sqrt();
        let w2 = (0.258 * 1.278 / det).sqrt();
        assert!(bbox.hi[0] >= w1 && bbox.lo[0] <= -w1);
        assert!(bbox.hi[1] >= w2 && bbox.lo[1] <= -w2);
        assert!(bbox.hi[0] < 1.2 * w1 && bbox.hi[1] < 1.2 * w2);
    }

    #[test]
    fn builder_requires_all_parts() {
        let err = SystemModel::<f64>::builder("x", 1, 1).build().unwrap_err();
        assert_eq!(err.kind(), "ConfigError");
    }

    #[test]
    fn pendulum_diagnostics_pass() {
        let (model, set) = pendulum_preset::<f64>();
        let diag = diagnose_model(&model, &set, 1000, 3).unwrap();
        assert_eq!(diag.samples, 1000);
        assert!(diag.passed(), "{diag:?}");
    }
}

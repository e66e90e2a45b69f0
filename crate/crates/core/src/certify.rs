//! Level-set constants and the admissible sampling period.
//!
//! The three suprema below are estimated by sampling the level set with a
//! rotated Halton sequence:
//!
//! ```text
//! L1 = sup ‖f(x₁, κ(x₃)) − f(x₂, κ(x₃))‖ / ‖x₁ − x₂‖
//! L2 = sup ‖V'(x₁) − V'(x₂)‖ / ‖x₁ − x₂‖
//! M  = sup (‖V'(x)‖·‖f(x, κ(x))‖ + ‖f(x, κ(x))‖²) / |V'(x)·f(x, κ(x))|
//! ```
//!
//! and combined into
//!
//! ```text
//! μ        = √e · max{L1, L2·(1 + L1·√e)}
//! h_σ-MASP = min{(3(1−σ) / (2·μ·M))², 1/(1 + 2·L1)}
//! h        = h_σ-MASP / (m + 1)
//! ```
//!
//! Sampled suprema are lower bounds of the true values; [`certify_system`]
//! inflates them by a safety factor before they enter the period bound.

use std::fmt::{self, Write as _};

use crate::dynamics::{LevelSet, SystemModel};
use crate::error::{PetcError, Result};
use crate::sampling::{mix, Halton};
use crate::scalar::{format_real, from_usize, lit, to_f64, Scalar};
use crate::vecops::{distance, dot, norm};

/// Sampling parameters shared by the three estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationConfig {
    /// Accepted level-set points.
    pub samples: usize,
    pub seed: u64,
    /// Multiplier applied to every sampled supremum before use.
    pub safety_factor: f64,
    /// Points with `V(x) < fraction·c` are skipped by the `M` estimator.
    pub excluded_level_fraction: f64,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig { samples: 100_000, seed: 0, safety_factor: 1.1, excluded_level_fraction: 1e-4 }
    }
}

/// Accepted Halton points of the level set plus the box diameter, shared by
/// the estimators.
struct SamplePool<T> {
    points: Vec<Vec<T>>,
    diameter: T,
}

impl<T: Scalar> SamplePool<T> {
    fn draw(model: &SystemModel<T>, set: &LevelSet<T>, samples: usize, seed: u64) -> Result<Self> {
        if samples < 2 {
            return Err(PetcError::Config(format!("need at least 2 samples, got {samples}")));
        }
        let bbox = set.bounding_box(model)?;
        let points = set.halton_points(model, &bbox, samples, seed);
        if points.len() < 2 {
            return Err(PetcError::Config(format!(
                "only {} sample point(s) found inside the level set",
                points.len()
            )));
        }
        Ok(SamplePool { points, diameter: bbox.diameter() })
    }

    /// Visits the probe pairs `(a, b, partner)` in index order. Index `i`
    /// contributes the pair with its predecessor and a short local pair
    /// `(p_i, p_i ± δ·d_i)`; the partner index selects the third point for
    /// the input. Everything depends only on `i`, so the pair set for `N`
    /// samples is a prefix of the pair set for any larger count.
    fn for_each_pair(
        &self,
        model: &SystemModel<T>,
        set: &LevelSet<T>,
        seed: u64,
        mut visit: impl FnMut(&[T], &[T], usize),
    ) {
        let n = model.state_dim();
        let delta = self.diameter * lit(1e-4);
        let mut dirs = Halton::new(n, seed ^ 0xd1b5_4a32_d192_ed03);
        let mut unit = vec![0.0; n];
        let mut q = vec![T::zero(); n];
        for (i, p) in self.points.iter().enumerate() {
            if i >= 1 {
                let partner = (mix(2 * i as u64) % (i as u64 + 1)) as usize;
                visit(p, &self.points[i - 1], partner);
            }
            dirs.next_into(&mut unit);
            let d: Vec<f64> = unit.iter().map(|u| 2.0 * u - 1.0).collect();
            let dn = d.iter().map(|a| a * a).sum::<f64>().sqrt();
            if dn < 1e-9 {
                continue;
            }
            for sign in [1.0, -1.0] {
                for k in 0..n {
                    q[k] = p[k] + delta * lit::<T>(sign * d[k] / dn);
                }
                if set.contains(model, &q) {
                    let partner = (mix(2 * i as u64 + 1) % (i as u64 + 1)) as usize;
                    visit(p, &q, partner);
                    break;
                }
            }
        }
    }
}

/// Sampled Lipschitz constant of `x ↦ f(x, κ(x₃))` over the level set.
pub fn estimate_l1<T: Scalar>(
    model: &SystemModel<T>,
    set: &LevelSet<T>,
    samples: usize,
    seed: u64,
) -> Result<T> {
    let pool = SamplePool::draw(model, set, samples, seed)?;
    Ok(l1_from_pool(model, set, &pool, seed))
}

fn l1_from_pool<T: Scalar>(model: &SystemModel<T>, set: &LevelSet<T>, pool: &SamplePool<T>, seed: u64) -> T {
    let n = model.state_dim();
    let mut u = vec![T::zero(); model.input_dim()];
    let mut fa = vec![T::zero(); n];
    let mut fb = vec![T::zero(); n];
    let mut best = T::zero();
    pool.for_each_pair(model, set, seed, |a, b, partner| {
        let dx = distance(a, b);
        if dx <= T::zero() {
            return;
        }
        model.feedback_into(&pool.points[partner], &mut u);
        model.vector_field_into(a, &u, &mut fa);
        model.vector_field_into(b, &u, &mut fb);
        let ratio = distance(&fa, &fb) / dx;
        if ratio.is_finite() && ratio > best {
            best = ratio;
        }
    });
    best
}

/// Sampled Lipschitz constant of the Lyapunov gradient over the level set.
pub fn estimate_l2<T: Scalar>(
    model: &SystemModel<T>,
    set: &LevelSet<T>,
    samples: usize,
    seed: u64,
) -> Result<T> {
    let pool = SamplePool::draw(model, set, samples, seed)?;
    Ok(l2_from_pool(model, set, &pool, seed))
}

fn l2_from_pool<T: Scalar>(model: &SystemModel<T>, set: &LevelSet<T>, pool: &SamplePool<T>, seed: u64) -> T {
    let n = model.state_dim();
    let mut ga = vec![T::zero(); n];
    let mut gb = vec![T::zero(); n];
    let mut best = T::zero();
    pool.for_each_pair(model, set, seed, |a, b, _| {
        let dx = distance(a, b);
        if dx <= T::zero() {
            return;
        }
        model.lyapunov_gradient_into(a, &mut ga);
        model.lyapunov_gradient_into(b, &mut gb);
        let ratio = distance(&ga, &gb) / dx;
        if ratio.is_finite() && ratio > best {
            best = ratio;
        }
    });
    best
}

/// Sampled supremum of the ratio bounding the Lie-derivative drift, with the
/// default exclusion of `V < 1e-4·c` around the origin.
pub fn estimate_m_max<T: Scalar>(
    model: &SystemModel<T>,
    set: &LevelSet<T>,
    samples: usize,
    seed: u64,
) -> Result<T> {
    let pool = SamplePool::draw(model, set, samples, seed)?;
    m_max_from_pool(model, set, &pool, EstimationConfig::default().excluded_level_fraction)
}

pub fn estimate_m_max_excluding<T: Scalar>(
    model: &SystemModel<T>,
    set: &LevelSet<T>,
    samples: usize,
    seed: u64,
    excluded_level_fraction: f64,
) -> Result<T> {
    let pool = SamplePool::draw(model, set, samples, seed)?;
    m_max_from_pool(model, set, &pool, excluded_level_fraction)
}

fn m_max_from_pool<T: Scalar>(
    model: &SystemModel<T>,
    set: &LevelSet<T>,
    pool: &SamplePool<T>,
    excluded_level_fraction: f64,
) -> Result<T> {
    let n = model.state_dim();
    let floor = set.c * lit(excluded_level_fraction);
    let mut u = vec![T::zero(); model.input_dim()];
    let mut f = vec![T::zero(); n];
    let mut g = vec![T::zero(); n];
    let mut best = T::zero();
    let mut used = 0usize;
    for x in &pool.points {
        if model.lyapunov(x) < floor {
            continue;
        }
        model.feedback_into(x, &mut u);
        model.vector_field_into(x, &u, &mut f);
        model.lyapunov_gradient_into(x, &mut g);
        let denom = dot(&g, &f).abs();
        if denom < lit(1e-14) {
            return Err(PetcError::AssumptionViolation(format!(
                "|V'(x)·f(x, κ(x))| = {:e} vanishes at x = {x:?} outside the excluded ball",
                to_f64(denom)
            )));
        }
        let fnorm = norm(&f);
        let ratio = (norm(&g) * fnorm + fnorm * fnorm) / denom;
        best = best.max(ratio);
        used += 1;
    }
    if used == 0 {
        return Err(PetcError::Config("no sample points outside the excluded ball".into()));
    }
    Ok(best)
}

/// `μ = √e · max{L1, L2·(1 + L1·√e)}`.
pub fn compute_mu<T: Scalar>(l1: T, l2: T) -> T {
    let sqrt_e = lit::<T>(std::f64::consts::E).sqrt();
    sqrt_e * l1.max(l2 * (T::one() + l1 * sqrt_e))
}

/// Which term of the two-term minimum is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// The convergence-rate term `(k(1−σ)/(μM))²`.
    First,
    /// The existence-interval term `1/(1 + 2·L1)`.
    Second,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::First => "first",
            Branch::Second => "second",
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A sampling-period bound and its active branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodBound<T> {
    pub value: T,
    pub branch: Branch,
}

fn check_sigma<T: Scalar>(sigma: T) -> Result<()> {
    if sigma > T::zero() && sigma < T::one() {
        Ok(())
    } else {
        Err(PetcError::Config(format!("sigma must lie in (0, 1), got {sigma}")))
    }
}

fn two_term_bound<T: Scalar>(numerator: T, mu: T, m_max: T, l1: T) -> PeriodBound<T> {
    let denom = mu * m_max;
    let first = if denom > T::zero() {
        let q = numerator / denom;
        q * q
    } else {
        T::infinity()
    };
    let second = (T::one() + l1 + l1).recip();
    if first <= second {
        PeriodBound { value: first, branch: Branch::First }
    } else {
        PeriodBound { value: second, branch: Branch::Second }
    }
}

/// `h_σ-MASP = min{(3(1−σ)/(2μM))², 1/(1 + 2·L1)}`.
pub fn compute_sigma_masp<T: Scalar>(mu: T, m_max: T, l1: T, sigma: T) -> Result<PeriodBound<T>> {
    check_sigma(sigma)?;
    let numerator = lit::<T>(3.0) * (T::one() - sigma) / lit(2.0);
    Ok(two_term_bound(numerator, mu, m_max, l1))
}

/// Earlier bound `min{((1−σ)/(μM))², 1/(1 + 2·L1)}` for comparison.
pub fn compute_masp_prior<T: Scalar>(mu: T, m_max: T, l1: T, sigma: T) -> Result<PeriodBound<T>> {
    check_sigma(sigma)?;
    Ok(two_term_bound(T::one() - sigma, mu, m_max, l1))
}

/// Pinned values replacing sampled constants.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConstantOverrides<T> {
    pub l1c: Option<T>,
    pub l2c: Option<T>,
    pub m_max_c: Option<T>,
    pub mu_c: Option<T>,
    /// Sampling period to use instead of `h_σ-MASP/(m+1)`.
    pub h: Option<T>,
    /// Accept an `h` override that breaks `(m+1)·h ≤ h_σ-MASP` (diagnostic runs).
    pub allow_uncertified_h: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CertifyOptions<T> {
    pub estimation: EstimationConfig,
    pub overrides: ConstantOverrides<T>,
}

/// Where a constant came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Provenance {
    /// Sampled supremum `raw`, multiplied by the safety factor.
    Estimated { raw: f64, factor: f64 },
    Overridden,
    /// Computed in closed form from other constants.
    Derived,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Estimated { raw, factor } => {
                write!(f, "estimated (raw {}, safety factor {factor})", format_real(*raw))
            }
            Provenance::Overridden => f.write_str("overridden"),
            Provenance::Derived => f.write_str("derived"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantProvenance {
    pub l1c: Provenance,
    pub l2c: Provenance,
    pub m_max_c: Provenance,
    pub mu_c: Provenance,
    pub h: Provenance,
}

/// Everything the sampling-period bound consumes and produces.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificationConstants<T> {
    pub c: T,
    pub sigma: T,
    pub l1c: T,
    pub l2c: T,
    pub m_max_c: T,
    pub mu_c: T,
    pub h_sigma_masp: T,
    pub h_masp_prior: T,
    pub active_branch: Branch,
    pub prior_branch: Branch,
    /// Loss bound: maximum number of consecutive lost packets.
    pub m: usize,
    pub h: T,
    /// `false` when `h` was overridden past the certified bound.
    pub h_certified: bool,
    pub provenance: ConstantProvenance,
}

impl<T: Scalar> CertificationConstants<T> {
    /// Assembles constants from explicit values (no sampling), with
    /// `h = h_σ-MASP/(m+1)`.
    pub fn from_values(c: T, sigma: T, m: usize, l1c: T, l2c: T, m_max_c: T, mu_c: T) -> Result<Self> {
        let bound = compute_sigma_masp(mu_c, m_max_c, l1c, sigma)?;
        let prior = compute_masp_prior(mu_c, m_max_c, l1c, sigma)?;
        Ok(CertificationConstants {
            c,
            sigma,
            l1c,
            l2c,
            m_max_c,
            mu_c,
            h_sigma_masp: bound.value,
            h_masp_prior: prior.value,
            active_branch: bound.branch,
            prior_branch: prior.branch,
            m,
            h: bound.value / from_usize::<T>(m + 1),
            h_certified: true,
            provenance: ConstantProvenance {
                l1c: Provenance::Overridden,
                l2c: Provenance::Overridden,
                m_max_c: Provenance::Overridden,
                mu_c: Provenance::Overridden,
                h: Provenance::Derived,
            },
        })
    }

    /// Same constants with a different sampling period (marked uncertified
    /// when it breaks the bound).
    pub fn with_period(mut self, h: T) -> Self {
        self.h = h;
        self.h_certified = self.satisfies_period_bound();
        self.provenance.h = Provenance::Overridden;
        self
    }

    /// `(m+1)·h ≤ h_σ-MASP`, up to one rounding of the division.
    pub fn satisfies_period_bound(&self) -> bool {
        self.h * from_usize::<T>(self.m + 1) <= self.h_sigma_masp * (T::one() + T::epsilon() * lit(4.0))
    }

    pub fn bound_ratio(&self) -> T {
        self.h_sigma_masp / self.h_masp_prior
    }

    pub const CSV_HEADER: &'static str =
        "c,sigma,m,L1c,L2c,M_max_c,mu_c,h_sigma_masp,h_masp_prior,h,active_branch";

    pub fn csv_row(&self) -> String {
        let r = |v: T| format_real(to_f64(v));
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            r(self.c),
            r(self.sigma),
            self.m,
            r(self.l1c),
            r(self.l2c),
            r(self.m_max_c),
            r(self.mu_c),
            r(self.h_sigma_masp),
            r(self.h_masp_prior),
            r(self.h),
            self.active_branch
        )
    }

    /// `key = value` report.
    pub fn report(&self) -> String {
        let r = |v: T| format_real(to_f64(v));
        let mut s = String::new();
        let _ = writeln!(s, "c = {}", r(self.c));
        let _ = writeln!(s, "sigma = {}", r(self.sigma));
        let _ = writeln!(s, "m = {}", self.m);
        let _ = writeln!(s, "L1c = {}", r(self.l1c));
        let _ = writeln!(s, "L1c.source = {}", self.provenance.l1c);
        let _ = writeln!(s, "L2c = {}", r(self.l2c));
        let _ = writeln!(s, "L2c.source = {}", self.provenance.l2c);
        let _ = writeln!(s, "M_max_c = {}", r(self.m_max_c));
        let _ = writeln!(s, "M_max_c.source = {}", self.provenance.m_max_c);
        let _ = writeln!(s, "mu_c = {}", r(self.mu_c));
        let _ = writeln!(s, "mu_c.source = {}", self.provenance.mu_c);
        let _ = writeln!(s, "h_sigma_masp = {}", r(self.h_sigma_masp));
        let _ = writeln!(s, "active_branch = {}", self.active_branch);
        let _ = writeln!(s, "h_masp_prior = {}", r(self.h_masp_prior));
        let _ = writeln!(s, "prior_branch = {}", self.prior_branch);
        let _ = writeln!(s, "bound_ratio = {}", r(self.bound_ratio()));
        let _ = writeln!(s, "h = {}", r(self.h));
        let _ = writeln!(s, "h.source = {}", self.provenance.h);
        let _ = writeln!(s, "h_certified = {}", self.h_certified);
        s
    }
}

/// Runs the estimators (unless overridden), forms `μ`, both period bounds
/// and selects `h = h_σ-MASP/(m+1)`.
pub fn certify_system<T: Scalar>(
    model: &SystemModel<T>,
    set: &LevelSet<T>,
    sigma: T,
    m: usize,
    options: &CertifyOptions<T>,
) -> Result<CertificationConstants<T>> {
    check_sigma(sigma)?;
    let est = &options.estimation;
    let ov = &options.overrides;
    if !(est.safety_factor >= 1.0) {
        return Err(PetcError::Config(format!(
            "safety factor must be at least 1, got {}",
            est.safety_factor
        )));
    }
    for (name, value) in [("L1c", ov.l1c), ("L2c", ov.l2c), ("M_max_c", ov.m_max_c), ("mu_c", ov.mu_c)] {
        if let Some(v) = value {
            if !(v >= T::zero()) || !v.is_finite() {
                return Err(PetcError::Config(format!("override {name} must be finite and nonnegative")));
            }
        }
    }
    let needs_pool = ov.l1c.is_none() || ov.l2c.is_none() || ov.m_max_c.is_none();
    let pool = if needs_pool { Some(SamplePool::draw(model, set, est.samples, est.seed)?) } else { None };
    let factor = lit::<T>(est.safety_factor);
    let inflate = |raw: T| (raw * factor, Provenance::Estimated { raw: to_f64(raw), factor: est.safety_factor });

    let (l1c, l1_src) = match (ov.l1c, &pool) {
        (Some(v), _) => (v, Provenance::Overridden),
        (None, Some(pool)) => inflate(l1_from_pool(model, set, pool, est.seed)),
        (None, None) => unreachable!(),
    };
    let (l2c, l2_src) = match (ov.l2c, &pool) {
        (Some(v), _) => (v, Provenance::Overridden),
        (None, Some(pool)) => inflate(l2_from_pool(model, set, pool, est.seed)),
        (None, None) => unreachable!(),
    };
    let (m_max_c, m_src) = match (ov.m_max_c, &pool) {
        (Some(v), _) => (v, Provenance::Overridden),
        (None, Some(pool)) => inflate(m_max_from_pool(model, set, pool, est.excluded_level_fraction)?),
        (None, None) => unreachable!(),
    };
    let (mu_c, mu_src) = match ov.mu_c {
        Some(v) => (v, Provenance::Overridden),
        None => (compute_mu(l1c, l2c), Provenance::Derived),
    };

    let mut constants = CertificationConstants::from_values(set.c, sigma, m, l1c, l2c, m_max_c, mu_c)?;
    constants.provenance = ConstantProvenance {
        l1c: l1_src,
        l2c: l2_src,
        m_max_c: m_src,
        mu_c: mu_src,
        h: Provenance::Derived,
    };
    if let Some(h) = ov.h {
        if !(h > T::zero()) || !h.is_finite() {
            return Err(PetcError::Config(format!("sampling period override must be positive, got {h}")));
        }
        constants = constants.with_period(h);
        if !constants.h_certified && !ov.allow_uncertified_h {
            return Err(PetcError::Config(format!(
                "sampling period {h} violates (m+1)·h <= h_sigma_masp = {}; set allow_uncertified_h for diagnostic runs",
                constants.h_sigma_masp
            )));
        }
    }
    Ok(constants)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{scalar_decay_preset, DecayRate};

    #[test]
    fn mu_closed_form() {
        assert_eq!(compute_mu(0.0, 0.0), 0.0);
        let se = std::f64::consts::E.sqrt();
        assert!((compute_mu(1.0, 1.0) - se * (1.0 + se)).abs() < 1e-14);
        assert!((compute_mu(1.0f64, 1.0) - 4.367_003_6).abs() < 1e-6);
        assert!((compute_mu(10.0f64, 0.0) - 16.487_212_7).abs() < 1e-6);
    }

    #[test]
    fn sigma_masp_branches() {
        // σ → 1⁻ collapses the first term.
        let b = compute_sigma_masp(1.0, 1.0, 0.0, 1.0 - 1e-9).unwrap();
        assert_eq!(b.branch, Branch::First);
        assert!(b.value < 1e-17);
        // μ = M = 0 leaves only the existence term.
        let b = compute_sigma_masp(0.0, 0.0, 2.0, 0.5).unwrap();
        assert_eq!(b.branch, Branch::Second);
        assert_eq!(b.value, 0.2);
        assert_eq!(compute_sigma_masp(1.0, 1.0, 1.0, 1.2).unwrap_err().kind(), "ConfigError");
        assert_eq!(compute_masp_prior(1.0, 1.0, 1.0, 0.0).unwrap_err().kind(), "ConfigError");
    }

    #[test]
    fn reported_first_branch_value() {
        // μ·M chosen so that (3(1−σ)/(2μM))² = 2.77e-5 at σ = 0.35.
        let sigma = 0.35;
        let mu = 10.0;
        let m_max = 3.0 * (1.0 - sigma) / (2.0 * mu * 2.77e-5f64.sqrt());
        let b = compute_sigma_masp(mu, m_max, 1.65, sigma).unwrap();
        assert_eq!(b.branch, Branch::First);
        assert!((b.value - 2.77e-5).abs() < 1e-12 * 2.77e-5);
        let p = compute_masp_prior(mu, m_max, 1.65, sigma).unwrap();
        assert!((p.value - 2.77e-5 * 4.0 / 9.0).abs() < 1e-12 * 2.77e-5);
        assert!((p.value - 1.2311e-5).abs() < 1e-9);
    }

    #[test]
    fn m_max_scalar_decay_is_three_halves() {
        let (model, set) = scalar_decay_preset::<f64>();
        let m = estimate_m_max(&model, &set, 500, 1).unwrap();
        assert!((m - 1.5).abs() < 1e-12, "{m}");
    }

    #[test]
    fn constant_field_has_zero_l1() {
        let model = SystemModel::<f64>::builder("const", 2, 1)
            .vector_field(|_, _, dx| {
                dx[0] = 1.0;
                dx[1] = -2.0;
            })
            .feedback(|x, u| u[0] = x[0])
            .lyapunov(|x| x[0] * x[0] + x[1] * x[1])
            .lyapunov_gradient(|x, g| {
                g[0] = 2.0 * x[0];
                g[1] = 2.0 * x[1];
            })
            .gamma(DecayRate::Linear(1.0))
            .build()
            .unwrap();
        let set = LevelSet::new(1.0).unwrap();
        assert_eq!(estimate_l1(&model, &set, 1000, 0).unwrap(), 0.0);
    }

    #[test]
    fn linear_gradient_has_zero_l2() {
        let model = SystemModel::<f64>::builder("affine-v", 1, 1)
            .vector_field(|x, u, dx| dx[0] = -x[0] + u[0])
            .feedback(|_, u| u[0] = 0.0)
            .lyapunov(|x| x[0].abs())
            .lyapunov_gradient(|_, g| g[0] = 1.0)
            .gamma(DecayRate::Linear(1.0))
            .build()
            .unwrap();
        let set = LevelSet::new(1.0).unwrap();
        assert_eq!(estimate_l2(&model, &set, 1000, 0).unwrap(), 0.0);
    }

    #[test]
    fn too_few_samples() {
        let (model, set) = scalar_decay_preset::<f64>();
        assert_eq!(estimate_l1(&model, &set, 1, 0).unwrap_err().kind(), "ConfigError");
    }

    #[test]
    fn vanishing_lie_derivative_is_assumption_violation() {
        // f = 0 everywhere: the Lie derivative is zero outside the ball.
        let model = SystemModel::<f64>::builder("frozen", 1, 1)
            .vector_field(|_, _, dx| dx[0] = 0.0)
            .feedback(|_, u| u[0] = 0.0)
            .lyapunov(|x| x[0] * x[0])
            .lyapunov_gradient(|x, g| g[0] = 2.0 * x[0])
            .gamma(DecayRate::Linear(1.0))
            .build()
            .unwrap();
        let set = LevelSet::new(1.0).unwrap();
        let err = estimate_m_max(&model, &set, 100, 0).unwrap_err();
        assert_eq!(err.kind(), "AssumptionViolation");
    }

    #[test]
    fn certify_divides_by_loss_budget() {
        let (model, set) = scalar_decay_preset::<f64>();
        let opts = CertifyOptions {
            estimation: EstimationConfig { samples: 2000, ..Default::default() },
            ..Default::default()
        };
        let c0 = certify_system(&model, &set, 0.5, 0, &opts).unwrap();
        assert_eq!(c0.h, c0.h_sigma_masp);
        let c3 = certify_system(&model, &set, 0.5, 3, &opts).unwrap();
        assert_eq!(c3.h, c3.h_sigma_masp / 4.0);
        assert!(c3.satisfies_period_bound());
        assert_eq!(c0.h_sigma_masp, c3.h_sigma_masp);
    }

    #[test]
    fn uncertified_period_needs_opt_in() {
        let (model, set) = scalar_decay_preset::<f64>();
        let mut opts = CertifyOptions::<f64>::default();
        opts.estimation.samples = 500;
        opts.overrides.h = Some(1.0);
        assert_eq!(certify_system(&model, &set, 0.5, 1, &opts).unwrap_err().kind(), "ConfigError");
        opts.overrides.allow_uncertified_h = true;
        let c = certify_system(&model, &set, 0.5, 1, &opts).unwrap();
        assert!(!c.h_certified);
        assert_eq!(c.h, 1.0);
    }

    #[test]
    fn report_lists_every_constant() {
        let c = CertificationConstants::from_values(0.258, 0.35, 1, 1.65, 2.76, 10.0, 16.0).unwrap();
        let report = c.report();
        for key in ["c", "sigma", "m", "L1c", "L2c", "M_max_c", "mu_c", "h_sigma_masp", "h_masp_prior", "h", "active_branch"] {
            assert!(report.lines().any(|l| l.starts_with(&format!("{key} = "))), "{key}");
        }
        let row = c.csv_row();
        assert_eq!(row.split(',').count(), CertificationConstants::<f64>::CSV_HEADER.split(',').count());
        assert!(row.ends_with(",first"));
    }
}

//! Sampling-period certification, simulation and verification for periodic
//! event-triggered control over lossy networks with acknowledgments.
//!
//! The pipeline is:
//!
//! 1. [`certify`] estimates Lipschitz and growth constants on a Lyapunov
//!    level set and derives the largest admissible sampling period;
//! 2. [`engine`] runs the closed loop on that grid with a [`trigger`] rule
//!    deciding when to transmit over a [`channel`] that loses packets;
//! 3. [`verify`] checks the resulting log against the decrease guarantees.
//!
//! Everything is generic over the scalar type; aliases for `f64` and `f32`
//! are provided below.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::large_enum_variant)]

pub mod certify;
pub mod channel;
pub mod dynamics;
pub mod engine;
pub mod error;
pub mod sampling;
pub mod scalar;
pub mod trajectory;
pub mod trigger;
pub mod vecops;
pub mod verify;

pub use certify::{
    certify_system, compute_masp_prior, compute_mu, compute_sigma_masp, estimate_l1, estimate_l2, estimate_m_max,
    estimate_m_max_excluding, Branch, CertificationConstants, CertifyOptions, ConstantOverrides, EstimationConfig,
    PeriodBound, Provenance,
};
pub use channel::{ChannelModel, LossProcess};
pub use dynamics::{
    check_assumption1, diagnose_model, pendulum_preset, preset, scalar_decay_preset, DecayRate, LevelSet, SystemModel,
    PRESET_NAMES,
};
pub use engine::{integrate_interval, run, run_periodic_baseline, Integrator, SimConfig, DEFAULT_SUBSTEPS};
pub use error::{PetcError, Result};
pub use scalar::{format_real, Scalar};
pub use trajectory::TrajectoryLog;
pub use trigger::{default_nu, AdaptiveSchedule, TriggerDecision, TriggerReason, TriggerRule, TriggerState};
pub use verify::{solve_reference, verify_run, CheckResult, DecreaseForm, VerificationReport, VerifyOptions};

pub type SystemModelF64 = SystemModel<f64>;
pub type SystemModelF32 = SystemModel<f32>;
pub type LevelSetF64 = LevelSet<f64>;
pub type LevelSetF32 = LevelSet<f32>;
pub type CertificationConstantsF64 = CertificationConstants<f64>;
pub type CertificationConstantsF32 = CertificationConstants<f32>;
pub type TrajectoryLogF64 = TrajectoryLog<f64>;
pub type TrajectoryLogF32 = TrajectoryLog<f32>;
pub type TriggerRuleF64 = TriggerRule<f64>;
pub type TriggerRuleF32 = TriggerRule<f32>;

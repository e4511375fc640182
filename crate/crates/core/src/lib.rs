//! Learning dynamics in population games as a feedback loop: an LTI system
//! cascaded with the softmax map plays against a payoff map on the probability
//! simplex.
//!
//! The crate covers the full loop at desk scale:
//!
//! * [`simplex`] — softmax, its Jacobian, and an orthonormal basis of the
//!   zero-sum tangent space.
//! * [`lti`] — SISO rational transfer functions, companion-form realizations,
//!   stability and passivity certificates (sampled frequency response plus an
//!   exact even-polynomial sign test).
//! * [`games`] — matrix and black-box population games, contractiveness
//!   classification, interior Nash equilibria.
//! * [`dynamics`] — the closed-loop ODE (standard replicator, payoff-driven
//!   higher-order replicator, or a general strictly proper cascade) with RK4
//!   and adaptive RK45 integrators.
//! * [`analysis`] — reduced-coordinate linearization spectra, the
//!   frequency-domain convergence certificate for symmetric matrix games,
//!   empirical trajectory-pair contraction probes, and the exponential-RD
//!   fixed point.
//!
//! The crate is `no_std` + `alloc`; all floating-point math goes through
//! `libm` so results are reproducible bit-for-bit across hosts.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod dynamics;
pub mod games;
pub mod lti;
pub mod rng;
pub mod simplex;

pub use analysis::{
    fixed_point_exrd, global_convergence_certificate, incremental_probe, linearize_higher_order,
    variational_sample_check, ConvergenceVerdict, ExRdFixedPoint, GlobalConvergenceCertificate,
    IncrementalReport, LinearizationReport, VariationalEvidence,
};
pub use dynamics::{
    equilibrium_internal_state, init_score_at, integrate, ClosedLoopSystem, IntegrationMethod,
    IntegratorSettings, LearningRule, RuleKind, StateLayout, Trajectory,
};
pub use games::{
    congestion_example, contractiveness, interior_nash, nash_gap, rps_example, Contractiveness,
    ContractivenessReport, MatrixGame, PopulationGame,
};
pub use lti::{
    is_stable, lift, passivity_report, realize, LiftedRealization, PassivityReport,
    StateSpaceRealization, TransferFunction,
};
pub use rng::SplitMix64;
pub use simplex::{
    project_zero_mean, softmax, softmax_jacobian, tangent_basis, SimplexPoint, TangentBasis,
};

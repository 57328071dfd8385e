//! Streaming reinforcement-learning engine built around intentional updates:
//! step sizes chosen so each update produces a specified change in the
//! quantity we care about (a prediction or a log-probability) instead of a
//! specified change in the parameters.
//!
//! The crate is organized as:
//!
//! * [`approx`] — differentiable approximators (linear, small MLP) with
//!   value, action-value, Gaussian-policy, and softmax-policy heads, all over
//!   a flat parameter vector with analytic gradients.
//! * [`intent`] — the update-rule core: bias-corrected exponential averages,
//!   RMS preconditioning, eligibility traces, adaptive delta clipping,
//!   advantage normalization, and the step-size formulas.
//! * [`agents`] — per-step learners: Intentional TD(λ), Intentional Q(λ),
//!   Intentional Policy Gradient, the actor–critic composition, and
//!   comparison baselines.
//! * [`envs`] — desk-scale streaming environments with analytic oracles.
//! * [`diagnostics`] — fidelity/effective-update summaries, KL proxy checks,
//!   prediction RMSE, and the analytic FLOPs cost model.
//! * [`harness`] — config parsing, seeded multi-run execution, CSV/JSON
//!   emission, and the canned experiment suites.

pub mod agents;
pub mod approx;
pub mod diagnostics;
pub mod envs;
pub mod error;
pub mod harness;
pub mod intent;

pub use error::{Error, Result};

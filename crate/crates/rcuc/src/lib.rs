//! RoCoF-constrained unit commitment.
//!
//! Schedules generators under locational rate-of-change-of-frequency limits.
//! A small ReLU network is trained as a RoCoF predictor on simulation-labeled
//! data and embedded — exactly with big-M binaries, or selectively relaxed to
//! its triangle envelope — inside a unit-commitment MILP.
//!
//! Modules, bottom up:
//! - [`grid`]: case files, validation, profile perturbation.
//! - [`dynamics`]: Kron reduction, swing simulation, RoCoF measurement — the
//!   labeling oracle.
//! - [`milp`]: self-contained LP/MILP engine (bounded simplex, branch and
//!   bound).
//! - [`uc`]: the unit-commitment model family (base, inertia floor, cut loop).
//! - [`mlp`]: feature construction, ReLU network, training, metrics.
//! - [`encode`]: embedding a trained network into a MILP.
//! - [`pipeline`]: dataset generation, benchmarks, verification, reports.

pub mod dynamics;
pub mod encode;
pub mod grid;
pub mod milp;
pub mod mlp;
pub mod pipeline;
pub mod uc;

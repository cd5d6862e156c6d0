//! Data-driven model predictive control of a heated plate: DMDc identification,
//! a sparse ADMM QP solver, the receding-horizon controller and the simulation
//! harness around them.

// `!(x > 0.0)` is used on purpose so NaN is rejected by the same test.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod banded;
pub mod dmdc;
pub mod error;
pub mod harness;
pub mod matio;
pub mod mpc;
pub mod plant;
pub mod qpsolve;
pub mod rng;
pub mod svd;

pub use dmdc::{identify, DmdcFactorization, DmdcModel};
pub use error::{Error, Result};
pub use harness::{
    generate_dataset, reference_field, run_closed_loop, ExcitationConfig, Policy, ReferenceField, ReferenceKind,
    RunRecord,
};
pub use matio::{RealMatrix, SnapshotDataset};
pub use mpc::{MpcConfig, MpcController, TrackingForm};
pub use plant::{DiffusionPlant, PlantConfig, PlantState};
pub use qpsolve::{QpProblem, QpSettings, QpSolution, QpStatus};
pub use svd::{SvdFactors, TruncationRule};

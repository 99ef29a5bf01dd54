//! Solvers for empirical group distributionally robust optimization (GDRO)
//! and minimax excess risk optimization (MERO) over linear models.
//!
//! The saddle problem is `min_{||w|| <= R} max_{q in simplex} sum_i q_i R_i(w)`,
//! where `R_i` is the average loss over group `i`.

pub mod dataset;
pub mod datagen;
pub mod format;
pub mod geometry;
pub mod metrics;
pub mod problem;
pub mod solvers;

pub use dataset::{DatasetError, Group, GroupedDataset, LabelKind};
pub use geometry::{Geometry, GeometryError, MergedGradient, Point};
pub use problem::{EvalCounter, LossKind, LossModel, Problem};
pub use solvers::{RunRecord, SolverError};

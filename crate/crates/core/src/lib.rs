//! Anisotropic rotation averaging.
//!
//! Given a view graph of noisy relative rotations, optionally annotated with
//! two-view Hessians, recover absolute camera rotations by block coordinate
//! descent on the (anisotropic) chordal objective, optionally followed by
//! robust iteratively reweighted least squares refinement.
//!
//! The crate also provides the synthetic scene generators and accuracy
//! metrics used to benchmark the solvers.

pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod robust;
pub mod so3;
pub mod stack;
pub mod synth;
pub mod solver;
pub mod view_graph;

pub use error::{Error, Result};
pub use so3::{Rotation, TangentVector};
pub use stack::RotationStack;
pub use solver::{acd_solve, InitKind, SolveResult, SolveStatus, SolverConfig};
pub use view_graph::{assemble_blocks, ConnectionBlocks, EdgeMeasurement, ViewGraph, WeightMode};

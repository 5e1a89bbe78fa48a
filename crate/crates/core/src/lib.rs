//! Numerical laboratory for eigenvalues and eigensections of the sphere
//! Laplacian acting on sections of the real line bundle with -1 monodromy
//! around each point of an even configuration.
//!
//! The pipeline: mesh the sphere conforming to the configuration, realize the
//! bundle by an edge sign cochain along a cut system, assemble twisted
//! stiffness and lumped mass operators, and solve for the lowest eigenpairs.
//! On top of that sit branch-point asymptotics, eigenvalue variation over
//! configuration space, nodal graphs, configuration-space experiments, and
//! the lift to homogeneous 1-forms on R^3.

pub mod asymptotics;
pub mod cuts;
pub mod eigensolver;
pub mod experiments;
pub mod fields;
pub mod geometry;
pub mod hull;
pub mod lift;
pub mod linalg;
pub mod mesh;
pub mod nodal;
pub mod operators;
pub mod report;
pub mod variation;

pub use geometry::{Configuration, UnitVec3};

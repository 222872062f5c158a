//! Constrained trajectory optimization for rigid bodies modeled on SO(3) x R^3.
//!
//! The crate is organized in layers:
//!
//! * [`lie`] — SO(3)/so(3) primitives: hat/vee, exp/log, adjoint action, and
//!   truncated BCH machinery for second-order expansions of group products.
//! * [`rigid_body`] — discrete rigid body dynamics from a Lie group variational
//!   integrator: residual forms, the implicit per-step update, and forward
//!   simulation.
//! * [`expand`] — reusable second-order expansion atoms for expressions built
//!   from rotations acting on vectors.
//! * [`constraints`] — equality/inequality constraint blocks (kinematics,
//!   dynamics, pivot/axis joints, obstacles, input boxes) with closed-form
//!   first/second-order retraction expansions and a finite-difference checker.
//! * [`costs`] — stage/terminal costs (chordal rotation cost, quadratic costs)
//!   with retraction derivatives.
//! * [`nlp`] — variable layout, points on the product manifold, problem
//!   assembly into a sparse KKT system, retraction, and optimality metrics.
//! * [`kkt`] — banded LU factorization and the Newton direction solve.
//! * [`ripm`] — the line-search Riemannian interior point method.
//! * [`scenarios`] — problem generators: drone docking (free / input boxes /
//!   cluttered), kinematic chains, a 7-link manipulator, and benchmark sweeps.
//! * [`cli`] — configuration parsing and the command-line front end.
//!
//! See the crate examples for runnable entry points to each capability.

pub mod banded;
pub mod cli;
pub mod constraints;
pub mod costs;
pub mod expand;
pub mod kkt;
pub mod lie;
pub mod nlp;
pub mod rigid_body;
pub mod ripm;
pub mod scenarios;

pub use lie::{Rotation, Vec3};

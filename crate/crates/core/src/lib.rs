//! Explicit MPC synthesis and bounded-time safety verification of the
//! resulting closed loop.
//!
//! [`mpc`] turns a linear-cost MPC problem into a piecewise-affine law over
//! polyhedral regions by multi-parametric LP. [`hybrid`] wraps a nonlinear
//! plant and that law into a switched system with one mode per region, and
//! [`reach`] bounds its trajectories from a box of initial states with
//! simulation plus a matrix-measure discrepancy.
//!
//! The LP solver, polyhedra and the expression language with its symbolic
//! derivatives live in [`lp`], [`polyhedron`] and [`expr`].

pub mod expr;
pub mod hybrid;
pub mod lp;
pub mod mpc;
pub mod polyhedron;
pub mod reach;

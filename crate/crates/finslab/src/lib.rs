//! Spray, connection and curvature analysis for Riemannian and Finsler
//! metrics given as chart expressions.
//!
//! The crate computes the geodesic spray, nonlinear and Berwald connections
//! and their curvatures from a metric specification, detects parallel
//! one-forms through algebraic curvature constraints combined with holonomy
//! loop transport, and estimates the metrizability freedom of the geodesic
//! spray from the rank of its holonomy distribution.

pub mod analysis;
pub mod catalog;
pub mod config;
pub mod expr;
pub mod geometry;
pub mod holonomy;
pub mod numerics;
pub mod parallel;
pub mod report;

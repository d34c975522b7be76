//! Parametric reduced-order modeling toolkit.
//!
//! Builds databases of projection-based reduced models over a parameter
//! domain, interpolates their operators on matrix manifolds, and drives
//! gradient-based design optimization and coupled-system damping analysis
//! on top of the interpolated models.
//!
//! Module map:
//! - [`model`]: affine-parametric linear systems, sensitivities, adjoints
//! - [`reduction`]: POD bases and Galerkin/Petrov-Galerkin projection
//! - [`manifold`]: matrix exp/log maps and their parameter derivatives
//! - [`interp`]: basis alignment, RBF interpolation of reduced operators
//! - [`database`]: sampling, error indicators, greedy database construction
//! - [`optimizer`]: augmented-Lagrangian NLP solver over interpolated models
//! - [`aeroelastic`]: coupled fluid-structure reduced models and damping
//! - [`problems`]: ready-made parametric systems for tests and examples

pub mod aeroelastic;
pub mod database;
pub mod interp;
pub mod linalg;
pub mod manifold;
pub mod model;
pub mod optimizer;
pub mod problems;
pub mod reduction;

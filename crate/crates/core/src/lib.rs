//! Generative assignment flows for discrete joint distributions.
//!
//! Joint distributions over `n` categorical variables with `c` classes are
//! generated by integrating a learned vector field on the assignment
//! manifold, a product of open probability simplices carrying the
//! Fisher–Rao geometry. A flow-matching objective trains the field so that
//! trajectories started near the barycenter end near the integral
//! configurations of the data distribution.

pub mod cli;
pub mod error;
pub mod flow_match;
pub mod geometry;
pub mod integrate;
pub mod likelihood;
pub mod meta_simplex;
pub mod numeric;
pub mod payoff;

pub use error::{Error, Result};
pub use geometry::{Assignment, NodeMatrix, SimplexPoint, TangentField, TangentVec};
pub use meta_simplex::{DenseJoint, LabelConfig};

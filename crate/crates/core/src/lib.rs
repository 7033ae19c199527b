//! Encapsulated generalized summation-by-parts operators on curvilinear,
//! non-conforming multi-element meshes in two dimensions.
//!
//! The layers build on each other:
//!
//! - [`quadrature`]: Gauss-Legendre and Gauss-Lobatto rules, Lagrange bases
//! - [`sbp`]: 1D pseudo-spectral SBP operators
//! - [`tensor`]: reference-square operators by tensor products
//! - [`varcoef`]: variable-coefficient face correction
//! - [`curvilinear`]: metric terms and physical-element operators
//! - [`mesh`]: rectangular multi-element meshes and their file format
//! - [`coupling`]: inner-product preserving L2 interface projections
//! - [`global`]: the assembled operator with matrix-free apply
//! - [`advection`]: linear advection solver with RK4
//! - [`experiments`]: convergence studies and table output

// comparisons are written negated on purpose so that NaN is rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod advection;
pub mod audit;
pub mod coupling;
pub mod curvilinear;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod global;
pub mod mesh;
pub mod quadrature;
pub mod sbp;
pub mod tensor;
pub mod varcoef;

pub use curvilinear::{Direction, MetricMode};
pub use error::{Error, Result};
pub use exec::Execution;
pub use global::GlobalOperator;
pub use mesh::{ElementSpec, FaceId, MapKind, MeshTopology};
pub use quadrature::NodeFamily;

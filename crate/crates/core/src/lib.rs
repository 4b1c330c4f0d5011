//! Unfitted finite elements for elliptic interface problems.
//!
//! The pipeline solves `-div(K grad u) = f` on a background triangulation that
//! does not follow the material interface (CutFEM with Nitsche coupling and a
//! ghost penalty), recovers edgewise Lagrange multipliers from node-patch
//! problems, reconstructs a locally conservative flux in the immersed
//! Raviart-Thomas space and turns it into a posteriori error indicators that
//! drive adaptive refinement.
//!
//! Module map, bottom-up:
//!
//! * [`mesh`]: conforming triangulations, newest-vertex bisection, Dörfler marking
//! * [`geometry`] and [`quadrature`]: level sets, cut topology, integration rules
//! * [`spaces`]: doubled P1 dofs, multiplier layout, lowest-order Raviart-Thomas helpers
//! * [`assembly`]: the CutFEM system and elementwise residuals
//! * [`linalg`]: sparse Cholesky and small least-squares solves
//! * [`multiplier`]: node-patch multipliers
//! * [`flux`]: conservative flux reconstruction
//! * [`estimator`]: error indicators and exact error norms
//! * [`experiments`], [`driver`], [`output`]: benchmark problems, refinement loops, CSV/VTK

#![allow(
    clippy::needless_range_loop,
    clippy::too_many_arguments,
    clippy::neg_cmp_op_on_partial_ord,
    clippy::excessive_precision
)]

pub mod assembly;
pub mod driver;
pub mod error;
pub mod estimator;
pub mod experiments;
pub mod flux;
pub mod geometry;
pub mod linalg;
pub mod mesh;
pub mod multiplier;
pub mod output;
pub mod par;
pub mod quadrature;
pub mod spaces;

pub use error::{Error, Result};

/// A point (or vector) in the plane.
pub type Point = [f64; 2];

#[inline]
pub(crate) fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub(crate) fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub(crate) fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

#[inline]
pub(crate) fn dist(a: Point, b: Point) -> f64 {
    norm(sub(a, b))
}

#[inline]
pub(crate) fn lerp(a: Point, b: Point, t: f64) -> Point {
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
}

/// Twice the signed area of the triangle `(a, b, c)`.
#[inline]
pub(crate) fn cross3(a: Point, b: Point, c: Point) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

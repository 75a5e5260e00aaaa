//! Constructive fixed-point machinery for commuting families of nonexpansive
//! maps on compact convex subsets of finite-dimensional normed spaces.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: norms, compact convex bodies, metric projections, diameters
//!   and deterministic probe sampling.
//! - [`mappings`]: a small expression language for self-maps of a body and
//!   sampled or structural certificates of their properties.
//! - [`contraction`]: the Banach iteration and the anchored resolvent
//!   `F_s x`, the unique fixed point of `z -> x/s + (1 - 1/s) T(R(z))`.
//! - [`retraction`]: stage-by-stage construction of nonexpansive retractions
//!   onto common fixed-point sets, plus the checks that certify them.
//! - [`tchebyshev`]: Tchebyshev radii and centers of finite sets and the
//!   fixed point located inside the center set.
//! - [`finite`]: exact enumeration on finite metric spaces (eventual cores,
//!   semigroup closures, gamma sets, isometry checks).
//!
//! Every check returns a [`PropertyCertificate`] that records how it was
//! established (structurally, or by sampling) and, on failure, the witnesses.

pub mod certificate;
pub mod contraction;
pub mod error;
pub mod finite;
pub mod geometry;
pub mod mappings;
pub mod retraction;
pub mod tchebyshev;

pub use certificate::{Property, PropertyCertificate, Verdict, Witness};
pub use error::{Error, Result};
pub use geometry::{ConvexBody, NormKind, NormSpec, Point, Shape};
pub use mappings::{MapExpr, SelfMap};
pub use retraction::RetractionModel;

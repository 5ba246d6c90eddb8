//! Symbolic tensor calculus for metrics that change signature across a
//! hypersurface.
//!
//! The library analyzes symmetric metrics `g` on a single chart that
//! degenerate along a locus `Σ = {τ = 0}` (with `τ` a unit multiple of the
//! last coordinate) while `d(det g)` stays nonzero there, so that `Σ`
//! separates a Riemannian from a Lorentzian region. It computes:
//!
//! - the torsion-free metric dual connection, defined across the locus, and
//!   the full curvature stack off the locus (Riemann, Ricci, scalar,
//!   Schouten, Weyl) with exact rational-coefficient symbolics;
//! - the degeneracy invariants: the radical line field, its transversality,
//!   the second and third fundamental forms against the radical, and the
//!   flatness/conformal-flatness classification they induce;
//! - extendibility of the Riemann, Ricci, and Weyl tensors across the locus
//!   by two independent routes (classification criteria and an order-two
//!   Laurent analysis of frame components) which are required to agree;
//! - conformal transformation laws, conformally invariant curvature, and
//!   constructive conformal factors that flatten the fundamental forms;
//! - a warped-product subsystem with closed-form curvature, extendibility
//!   discrimination, and a reparametrization map onto a product metric.
//!
//! Entry points: [`geometry::MetricChart`] for hand-built charts,
//! [`warped::WarpedSpec`] for warped products, [`degeneracy::analyze`] for
//! the full report, and [`specfile`]/[`cli`] for the file-driven interface.

pub mod conformal;
pub mod curvature;
pub mod degeneracy;
pub mod expr;
pub mod geometry;
pub mod report;
pub mod specfile;
pub mod warped;

pub mod cli;

pub use expr::{FunctionTable, ScalarExpr, Strength, Tau};

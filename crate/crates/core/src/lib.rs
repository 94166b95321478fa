//! Joint contrast synthesis and nonrigid registration of 2D image pairs.
//!
//! A regression forest predicts one modality from the other while a discrete
//! Markov random field over per-pixel shifts models the registration. The two
//! are fitted together by variational EM ([`vem`]); the resulting synthesis then
//! drives a final registration, either a discrete MAP labeling solved with
//! graph-cut moves or a regularized cubic B-spline free-form deformation
//! ([`finalreg`]). A mutual-information FFD registration is provided as a
//! baseline, and [`synthgen`] generates phantom benchmarks with ground-truth
//! deformations for evaluation ([`eval`]).

pub mod config;
pub mod deformation;
pub mod error;
pub mod eval;
pub mod finalreg;
pub mod forest;
pub mod imagecore;
pub mod rng;
pub mod synthgen;
pub mod vem;

pub use error::{Error, Result};

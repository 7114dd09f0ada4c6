//! Data-driven linear quadratic integral control.
//!
//! From one open-loop experiment on `x' = A x + B u, y = C x`, the crate
//! builds sample covariances and designs the gain `u = -K [x; z]`, with
//! `z' = r - y`, without identifying the plant. The optimal gain comes
//! either from a semidefinite program ([`sdp`]) or from a projected
//! gradient flow over data parameterizations ([`flow`]).
//!
//! ```
//! use ddlqi::kernels::{mat, Mat, Vector};
//! use ddlqi::lti::{build_covariances, WeightSpec};
//! use ddlqi::sdp::{assemble_sdp, extract_gain, solve_sdp, SdpOptions};
//! use ddlqi::sim::{nominal_dgu, CollectionPlan};
//!
//! let (_, batch) = CollectionPlan::default().collect(&nominal_dgu(), 7, &Vector::zeros(2)).unwrap();
//! let pack = build_covariances(&batch).unwrap();
//! let weights = WeightSpec::new(Mat::identity(2, 2), mat(&[&[100.0]]), mat(&[&[1.0]])).unwrap();
//! let solution = solve_sdp(&assemble_sdp(&pack, &weights).unwrap(), &SdpOptions::default()).unwrap();
//! let k = extract_gain(&solution, &pack).unwrap();
//! assert_eq!(k.shape(), (1, 3));
//! ```
//!
//! The guide in `book/` explains each step; its snippets run as doc-tests.

pub mod error;
pub mod export;
pub mod flow;
pub mod kernels;
pub mod lti;
pub mod param;
pub mod sdp;
pub mod sim;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    struct Readme;
    #[doc = include_str!("../../../book/src/data.md")]
    struct Data;
    #[doc = include_str!("../../../book/src/checks.md")]
    struct Checks;
    #[doc = include_str!("../../../book/src/parameterization.md")]
    struct Parameterization;
    #[doc = include_str!("../../../book/src/synthesis.md")]
    struct Synthesis;
    #[doc = include_str!("../../../book/src/flow.md")]
    struct Flow;
    #[doc = include_str!("../../../book/src/tracking.md")]
    struct Tracking;
}

//! Cross-shutter imaging toolkit.
//!
//! One camera rig observes the same exposure twice: a global-shutter sensor
//! integrates all rows over the full exposure (a blurred view), while a
//! rolling-shutter sensor reads rows sequentially (a sheared but sharp
//! view). This crate synthesizes such paired observations from latent frame
//! stacks and solves the inverse problem: recovering the ordered sharp
//! sequence from one blur / rolling-shutter pair by minimizing a re-synthesis
//! energy over a shared base motion field and a per-pixel fusion mask.
//!
//! Module map:
//! - [`timing`]: row/instant timing model shared by both shutters
//! - [`formation`]: forward synthesis and seeded degradations
//! - [`encoding`]: row-time encoding planes
//! - [`flowwarp`]: displacement fields, warping, fusion
//! - [`pyramid`]: resolution pyramid for the coarse-to-fine solve
//! - [`decompose`]: the variational inverse solver
//! - [`metrics`]: fidelity metrics for evaluating recovered stacks
//! - [`scenes`]: procedural scenes with analytic ground truth
//! - [`io`]: on-disk formats for images, sequences, flows, and reports
//! - [`harness`]: end-to-end experiment pipelines behind the CLI

pub mod decompose;
pub mod encoding;
pub mod error;
pub mod flowwarp;
pub mod formation;
pub mod harness;
pub mod image;
pub mod io;
pub mod metrics;
pub mod pyramid;
pub mod scenes;
pub mod timing;

pub use error::{Error, Result};
pub use image::{Grid, Image};

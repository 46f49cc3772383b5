//! Positive-unlabelled retrieval of a query material in hyperspectral scenes.
//!
//! A user labels a handful of pixels of some material; every other pixel is
//! scored as that material or not. Two training routes are provided: a
//! non-negative PU risk estimator over uniformly sampled unlabelled pixels,
//! and a plain positive/negative classifier trained on pseudo-negatives drawn
//! from a spectral-spatial retrieval model.

pub mod annotate;
pub mod cluster;
pub mod cube;
pub mod error;
pub mod eval;
pub mod grid;
pub mod labels;
pub mod model;
pub mod nonlocal;
pub mod pipeline;
pub mod raster;
pub mod retrieval;
pub mod scene_io;
pub mod synth;

pub use cube::{HsiCube, Patch};
pub use error::{Error, Result};
pub use grid::{ClassGrid, Grid, PixelCoord};
pub use labels::{LabelState, Scope};
pub use scene_io::{load_scene, save_scene, Scene};

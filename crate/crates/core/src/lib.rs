//! # swdstyle
//!
//! Distribution-matching stylization built on the sliced Wasserstein distance.
//!
//! Style is captured as the distribution of feature vectors of an image. Two
//! distributions are compared by projecting them onto random unit directions
//! and matching the sorted 1D projections, which is exact optimal transport
//! in one dimension and costs `O(M log M)` per direction.
//!
//! ## Modules
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`tensors`] | images, feature maps, region masks, the FMAP file format |
//! | [`slicing`] | deterministic projection sampling and projection |
//! | [`swdloss`] | SW1D, SWD, importance-weighted SWD, multi-region SW1D, content loss |
//! | [`ebsw`] | Monte Carlo SW and energy-based (importance sampled) SW on discrete measures |
//! | [`features`] | fixed random convolutional feature stack with exact adjoint |
//! | [`attention`] | AdaIN and reference-anchored shared attention |
//! | [`tiling`] | 2x2 tiled-depth-reference multi-view editing with pluggable stylizers |
//! | [`engine`] | pixel-space gradient descent stylization and the IW vs uniform benchmark |
//! | [`cli`] | the `swdstyle` command line |
//!
//! ## Quick start
//!
//! ```
//! use swdstyle::swdloss::sw1d;
//!
//! let (value, grad) = sw1d(&[0.0, 2.0], &[1.0, 3.0]).unwrap();
//! assert_eq!(value, 1.0);
//! assert_eq!(grad, vec![-1.0, -1.0]);
//! ```

pub mod attention;
pub mod cli;
pub mod ebsw;
pub mod engine;
mod error;
pub mod features;
mod linalg;
pub mod samples;
pub mod slicing;
pub mod swdloss;
pub mod tensors;
pub mod tiling;

pub use error::{Error, Result};

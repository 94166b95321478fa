//! Raster images, interpolation, Gaussian-derivative features and the Harris
//! corner response.
//!
//! Coordinates follow one convention throughout the crate: pixel `(i, j)` is
//! column `i`, row `j`, and its centre sits at `(i * spacing, j * spacing)` mm.
//! Sampling and filtering clamp to the nearest edge pixel.

mod features;
mod filter;
mod harris;
mod image;
pub mod io;

pub use features::{gaussian_derivative_features, FeatureStack};
pub use filter::{central_difference_x, central_difference_y, downsample2, gaussian_blur};
pub use harris::{harris_response, HarrisParams};
pub use image::{GridGeom, Image2D};

//! Calibrated photometric stereo by spatio-photometric heat-map regression.
//!
//! Every pixel is described by an *observation map*: its intensities under
//! known distant lights, binned on a `w × w` grid by the orthographic
//! projection of each light direction. A `b × b` neighborhood of such maps is
//! fed to a bias-free fully-convolutional network that predicts a Gaussian
//! heat-map whose peak marks the projected surface normal.
//!
//! The crate is organized by stage:
//!
//! - [`projection`]: hemisphere ↔ map-plane geometry, observation maps,
//!   heat-map encoding/decoding, rotations.
//! - [`render`]: analytic synthetic scenes (Lambertian plus a specular lobe).
//! - [`baseline`]: the classical per-pixel least-squares solver.
//! - [`nn`]: a small tensor engine with exact gradients, the network and
//!   RMSprop.
//! - [`pipeline`]: patch extraction, augmentation and training.
//! - [`eval`]: rotation-averaged inference and angular-error scoring.
//! - [`io`]: dataset directories, normal maps and reports on disk.
//! - [`cli`]: the `psnet` command-line front end.

pub mod baseline;
pub mod cli;
pub mod error;
pub mod eval;
pub mod io;
pub mod nn;
pub mod normals;
pub mod pipeline;
pub mod projection;
pub mod render;

pub use error::{Error, Result};
pub use normals::NormalMap;
pub use projection::{HeatMap, LightSource, MapCoord, ObservationMap, UnitVector3};
pub use render::{RenderedSample, SceneSpec};

//! Multi-modal 3D Gaussian splatting with an analytic backward pass and
//! unicycle-constrained object track rectification.

pub mod compositor;
pub mod diff;
pub mod error;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod projection;
pub mod raster;
pub mod render;
pub mod scene;
pub mod sh;
pub mod ssim;
pub mod unicycle;

pub use error::{Error, Result};

//! Exemplar-guided gigapixel upscaling.
//!
//! Close-up photos are registered into a full-view photo through chained
//! similarity transforms estimated from point tracks, degraded to match the
//! full view, and sampled into aligned HR/LR patch pairs. The full view is
//! then enhanced window by window with overlap blending and exported as a
//! Deep Zoom tile pyramid.

pub mod dataset;
pub mod degrade;
pub mod enhance;
pub mod fixture;
pub mod geometry;
pub mod metrics;
pub mod mosaic;
pub mod pyramid;
pub mod raster;
pub mod tracker;

pub use geometry::{Correspondence, Similarity};
pub use raster::Image;

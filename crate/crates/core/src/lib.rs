//! Reconstruction and segmentation toolkit for undersampled spiral real-time
//! cardiac cine MRI.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acquisition;
pub mod coils;
pub mod error;
pub mod evalstats;
pub mod fft;
pub mod gating;
pub mod io;
pub mod nufft;
pub mod phantom;
pub mod recon;
pub mod trajectory;
pub mod types;
pub mod volumetry;
pub mod xsdnet;

pub use error::{Error, Result};
pub use types::{label, Geometry, ImageSeries, SegmentationMask, C32, C64};

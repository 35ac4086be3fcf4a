//! Self-configuring cloud segmentation for multispectral satellite imagery.
//!
//! The crate covers the whole chain: a portable tensor format and patch
//! grids ([`raster`]), dataset fingerprinting and normalization
//! ([`fingerprint`]), the rule engine that derives a training plan
//! ([`autoconfig`]), a compact U-Net with hand-written backward passes
//! ([`net`]), training ([`train`]), stitched ensemble inference ([`infer`]),
//! morphological post-processing ([`postproc`]), a thresholding baseline
//! ([`baseline`]), evaluation statistics ([`eval`]), a synthetic scene
//! generator ([`synth`]) and the resumable end-to-end driver ([`pipeline`]).

pub mod autoconfig;
pub mod baseline;
pub mod canonical;
pub mod error;
pub mod eval;
pub mod fingerprint;
pub mod infer;
pub mod net;
pub mod pipeline;
pub mod postproc;
pub mod raster;
pub mod synth;
pub mod train;

pub use error::{Error, Result};

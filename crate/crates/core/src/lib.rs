//! Adaptive and compressive ultrasound beamforming.
//!
//! The crate covers the full receive chain of focused B-mode imaging on a
//! linear array:
//!
//! * [`sim`] generates raw channel data from scatterer phantoms,
//! * [`focusing`] applies dynamic receive delays and cuts out the per-scanline
//!   aperture,
//! * [`subsample`] drops receive channels (compressive acquisition),
//! * [`beamform`] holds the reference DAS, minimum-variance and deconvolution
//!   beamformers, and [`iq`] turns beamformed lines into IQ data,
//! * [`net`] is the learned encoder-decoder beamformer and [`pwl`] analyses
//!   the piecewise-linear map it realises,
//! * [`metrics`] scores B-mode images, and [`pipeline`] wires everything into
//!   reproducible experiments.

pub mod beamform;
pub mod error;
pub mod focusing;
pub mod iq;
pub mod linalg;
pub mod metrics;
pub mod net;
pub mod pipeline;
pub mod pwl;
pub mod rfdata;
pub mod sim;
pub mod subsample;

mod par;

pub use error::{Error, Result};
pub use rfdata::{ChannelMask, CubeKind, IqImage, ProbeConfig, RfCube};

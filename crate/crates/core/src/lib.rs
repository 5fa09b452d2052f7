//! On-sensor compressed sampling simulator.
//!
//! The chain modelled here is: an 8-bit scene is sampled on the sensor by a
//! small integer block matrix applied to adjacent row pairs, optionally
//! LSB-truncated, stored with a JPEG-style codec, decoded, and finally
//! reconstructed at full resolution with smoothed projected Landweber (SPL)
//! iterations in a wavelet or dual-tree wavelet basis.

pub mod codec;
pub mod error;
pub mod image;
pub mod pipeline;
pub mod pixel;
pub mod reconstruct;
pub mod sampler;
pub mod transforms;

pub use error::{Error, Result};

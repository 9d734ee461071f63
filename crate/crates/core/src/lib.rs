//! Luminance–chrominance transformer for low-light image enhancement.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense `f64` tensors with reverse-mode differentiation.
//! * [`color`]: exact luminance/chrominance decomposition.
//! * [`model`]: the enhancement network and its checkpoint format.
//! * [`train`]: losses, Adam, the plateau scheduler and the training loop.
//! * [`data`]: image I/O, patch extraction, curation filters, histogram
//!   matching and synthetic degradation.
//! * [`metrics`]: PSNR, SSIM, distribution summaries and Bradley–Terry
//!   aggregation.
//! * [`gradcheck`]: finite-difference verification of every block.

pub mod color;
pub mod model;
pub mod tensor;
pub mod data;
pub mod metrics;
pub mod train;
pub mod gradcheck;

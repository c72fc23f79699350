//! Compressed-sensing MRI reconstruction by guided error correction.
//!
//! A reconstruction is assembled from three pieces:
//!
//! - a *guide*: any off-the-shelf inversion of undersampled k-space
//!   (zero filling, ISTA with a Haar sparsity penalty, or a small cascaded CNN),
//! - an *error-correction network* trained to predict the guide's residual
//!   from the zero-filled image and the guide,
//! - a *data-fidelity* step that fuses the corrected estimate with the measured
//!   k-space samples in closed form.
//!
//! The [`pipeline`] module ties these together over synthetic phantoms and
//! produces PSNR/SSIM reports.

pub mod error;
pub mod errornet;
pub mod fidelity;
pub mod fourier;
pub mod guide;
pub mod metrics;
pub mod pipeline;
pub mod sampling;

pub use error::{Error, Result};
pub use fourier::{ComplexImage, KSpaceGrid};
pub use sampling::SamplingMask;

pub use num_complex::Complex64;

//! Imaging through scattering media, end to end on a desk: simulate speckle
//! formation behind a glass diffuser and a multi-mode fiber, train one U-net
//! on the blended speckle-object dataset, and measure how well it inverts
//! both channels at once.
//!
//! The crate is organized around five subsystems plus a CLI:
//!
//! - [`autodiff`] — a small differentiable tensor engine (conv, pooling,
//!   upsampling, concat, activations, BCE, Adam) with gradients verified
//!   against finite differences;
//! - [`optics`] — the synthetic bench: angular-spectrum propagation, random
//!   phase screens, a unitary fiber transmission matrix, and a procedural
//!   glyph renderer for offline object images;
//! - [`data`] — deterministic dataset generation and binary persistence,
//!   IDX ingestion, and model checkpoints;
//! - [`unet`] — the encoder/decoder network with skip connections;
//! - [`train`] — blended-dataset training, MSE/Corr metrics, and the
//!   reconstruction experiments;
//! - [`cli`] — the `descatter` binary's subcommands.
//!
//! See the crate examples for runnable walkthroughs of each capability.

pub mod autodiff;
pub mod cli;
pub mod data;
mod error;
pub mod optics;
pub mod pgm;
pub mod plot;
pub mod train;
pub mod unet;

pub use error::{Error, Result};

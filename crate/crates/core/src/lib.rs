//! Explicit vision-text alignment training at desk scale.
//!
//! * [`tensor`]: dense tensors with reverse-mode differentiation.
//! * [`model`]: a toy encoder-MLP-decoder multimodal transformer.
//! * [`losses`]: cross-entropy, the position-weighted alignment term, and
//!   their sum.
//! * [`infotheory`]: exact entropy and mutual-information curves for small
//!   latent-conditioned Markov text models.
//! * [`training`]: synthetic captioning data, SGD with momentum, the
//!   training loop and alignment evaluation.
//! * [`cli`]: the `vista` command-line tool.

pub mod cli;
pub mod error;
pub mod infotheory;
pub mod losses;
pub mod model;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};

/// Crate version written into every output file.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

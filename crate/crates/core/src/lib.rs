//! Transform-domain image steganography: ripplet and integer-wavelet
//! embedding with optimal pixel adjustment, an adaptive genetic algorithm for
//! block mapping, RSA payload protection, and RS steganalysis with a
//! counter-measure pass.

pub mod config;
pub mod crypto;
pub mod error;
pub mod embed;
pub mod ga;
pub mod image;
pub mod metrics;
pub mod rs;
pub mod transform;

pub use error::{Error, Result};
pub use image::Image;

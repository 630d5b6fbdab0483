//! Lossless compression built from a vectorized rANS coder and bits-back
//! coding over hierarchical latent-variable models.
//!
//! The pieces compose bottom-up:
//!
//! - [`ans`]: the scalar range-ANS coder and quantized distributions.
//! - [`message`]: the vectorized coder with a shaped stack head, head
//!   resizing by folding, and low-overhead flatten/unflatten.
//! - [`codec`]: the codec abstraction (a push/pop pair over a message) plus
//!   primitive codecs and combinators.
//! - [`discretize`]: dynamic equal-mass discretization of continuous
//!   conditionals and the posterior-over-indices codec.
//! - [`bitsback`]: bits-back encode/decode for hierarchical latent models,
//!   chaining and ELBO estimation.
//! - [`models`]: analytically specified toy hierarchies with committed
//!   parameters, usable at any image size.
//! - [`image`]: the variable-size image codec, patch partitioning and the
//!   patch-schedule dataset coder.
//! - [`container`], [`pnm`], [`cli`]: the archive format, raw PPM/PGM IO
//!   and the command-line front end.
//!
//! See the `examples/` directory for one runnable example per capability.

pub mod ans;
pub mod bench;
pub mod bitsback;
pub mod cli;
pub mod codec;
pub mod container;
pub mod discretize;
mod error;
pub mod image;
pub mod message;
pub mod models;
pub mod pnm;

pub use error::{Error, Result};

/// Observation dimensions: height, width, channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub const MAX_SIDE: usize = 1 << 16;
    pub const MAX_CHANNELS: usize = 4;

    pub fn new(height: usize, width: usize, channels: usize) -> crate::Result<Self> {
        let shape = ImageShape {
            height,
            width,
            channels,
        };
        if height == 0
            || width == 0
            || channels == 0
            || height > Self::MAX_SIDE
            || width > Self::MAX_SIDE
            || channels > Self::MAX_CHANNELS
        {
            return Err(Error::HeaderBounds(height, width, channels));
        }
        Ok(shape)
    }

    pub fn dims(&self) -> usize {
        self.height * self.width * self.channels
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }
}

/// An 8-bit image in row-major (height, width, channel) order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub shape: ImageShape,
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn new(shape: ImageShape, pixels: Vec<u8>) -> Self {
        assert_eq!(pixels.len(), shape.dims());
        Image { shape, pixels }
    }

    pub fn at(&self, y: usize, x: usize, c: usize) -> u8 {
        self.pixels[self.shape.index(y, x, c)]
    }
}

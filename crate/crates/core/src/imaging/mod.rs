//! Image buffers, color conversion, white balance and PNG/JPEG boundaries.
//!
//! Samples are `f64` in `[0, 1]` internally; files are 8-bit.

mod color;
pub(crate) mod io;

pub use color::{gray_world_white_balance, lab_to_rgb, lab_to_srgb_pixel, lab_to_srgb_pixel_unclamped, rgb_to_lab, srgb_to_lab_pixel, LabImage};
pub use io::{
    decode_gray, decode_rgb, encode_png_gray, encode_png_rgb, load_gray, load_rgb, quantize, save_png_gray,
    save_png_rgb,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("ChannelMismatch: expected {expected} channels, found {found}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("DimensionMismatch: {0}")]
    DimensionMismatch(String),
    #[error("ZeroChannel: channel {0} has (near) zero mean")]
    ZeroChannel(usize),
    #[error("decode error: {0}")]
    Decode(String),
    #[error("encode error: {0}")]
    Encode(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Row-major image with 1 (gray) or 3 (RGB) channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self, ImagingError> {
        if channels != 1 && channels != 3 {
            return Err(ImagingError::ChannelMismatch {
                expected: 3,
                found: channels,
            });
        }
        if data.len() != width * height * channels {
            return Err(ImagingError::DimensionMismatch(format!(
                "{} samples for {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds an image by evaluating `f(x, y)` for every pixel.
    pub fn from_fn<F>(width: usize, height: usize, channels: usize, mut f: F) -> Self
    where
        F: FnMut(usize, usize) -> [f64; 3],
    {
        let mut img = Self::new(width, height, channels);
        for y in 0..height {
            for x in 0..width {
                let v = f(x, y);
                img.pixel_mut(x, y).copy_from_slice(&v[..channels]);
            }
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    /// Pixel as RGB; gray images are replicated.
    pub fn rgb(&self, x: usize, y: usize) -> [f64; 3] {
        let p = self.pixel(x, y);
        if self.channels == 1 {
            [p[0]; 3]
        } else {
            [p[0], p[1], p[2]]
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Clamps every sample into `[0, 1]`.
    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Copy of the rectangle `[x0, x0 + w) × [y0, y0 + h)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Image {
        assert!(x0 + w <= self.width && y0 + h <= self.height, "crop out of range");
        let mut out = Image::new(w, h, self.channels);
        for y in 0..h {
            let src = ((y0 + y) * self.width + x0) * self.channels;
            let dst = y * w * self.channels;
            out.data[dst..dst + w * self.channels].copy_from_slice(&self.data[src..src + w * self.channels]);
        }
        out
    }

    /// Channel means.
    pub fn channel_means(&self) -> Vec<f64> {
        let n = self.pixel_count().max(1) as f64;
        let mut sums = vec![0.0; self.channels];
        for px in self.data.chunks_exact(self.channels) {
            for (s, v) in sums.iter_mut().zip(px) {
                *s += v;
            }
        }
        sums.into_iter().map(|s| s / n).collect()
    }
}

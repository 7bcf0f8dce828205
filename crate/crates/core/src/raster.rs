//! Floating point raster used throughout the pipeline.
//!
//! Samples are interleaved, row-major, nominally in `[0, 1]`. Both luma
//! (1 channel) and RGB (3 channels) images share this type.

use std::path::Path;

use thiserror::Error;

/// Rec. 709 luma weights.
pub const LUMA_WEIGHTS: [f32; 3] = [0.2126, 0.7152, 0.0722];

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("image i/o: {0}")]
    Codec(#[from] image::ImageError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported channel count {0}")]
    Channels(usize),
    #[error("rectangle ({x}, {y}, {w}, {h}) is outside a {width}x{height} image")]
    OutOfBounds {
        x: usize,
        y: usize,
        w: usize,
        h: usize,
        width: usize,
        height: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height * channels, "buffer length mismatch");
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    /// Builds an image by evaluating `f(x, y, channel)` at every sample.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::from_vec(width, height, channels, data)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn row(&self, y: usize) -> &[f32] {
        let stride = self.width * self.channels;
        &self.data[y * stride..(y + 1) * stride]
    }

    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<Image, RasterError> {
        if x + w > self.width || y + h > self.height {
            return Err(RasterError::OutOfBounds {
                x,
                y,
                w,
                h,
                width: self.width,
                height: self.height,
            });
        }
        let mut data = Vec::with_capacity(w * h * self.channels);
        for row in y..y + h {
            let start = (row * self.width + x) * self.channels;
            data.extend_from_slice(&self.data[start..start + w * self.channels]);
        }
        Ok(Image::from_vec(w, h, self.channels, data))
    }

    /// Copies `src` into `self` with its top-left corner at `(x, y)`.
    pub fn paste(&mut self, src: &Image, x: usize, y: usize) {
        assert_eq!(src.channels, self.channels);
        assert!(x + src.width <= self.width && y + src.height <= self.height);
        let n = src.width * self.channels;
        for row in 0..src.height {
            let dst = ((y + row) * self.width + x) * self.channels;
            self.data[dst..dst + n].copy_from_slice(src.row(row));
        }
    }

    /// Rec. 709 luma. A single-channel image is returned unchanged.
    pub fn to_luma(&self) -> Image {
        match self.channels {
            1 => self.clone(),
            3 => {
                let data = self
                    .data
                    .chunks_exact(3)
                    .map(|p| LUMA_WEIGHTS[0] * p[0] + LUMA_WEIGHTS[1] * p[1] + LUMA_WEIGHTS[2] * p[2])
                    .collect();
                Image::from_vec(self.width, self.height, 1, data)
            }
            n => panic!("to_luma on {n}-channel image"),
        }
    }

    pub fn to_rgb(&self) -> Image {
        match self.channels {
            3 => self.clone(),
            1 => {
                let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
                Image::from_vec(self.width, self.height, 3, data)
            }
            n => panic!("to_rgb on {n}-channel image"),
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Image {
        Image::from_vec(
            self.width,
            self.height,
            self.channels,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn clamp01(mut self) -> Image {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
        self
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn channel_mean(&self, c: usize) -> f64 {
        let n = self.width * self.height;
        if n == 0 {
            return 0.0;
        }
        self.data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .map(|&v| v as f64)
            .sum::<f64>()
            / n as f64
    }

    /// Mean absolute difference over all samples. Panics on shape mismatch.
    pub fn mean_abs_diff(&self, other: &Image) -> f64 {
        assert_eq!(self.dims(), other.dims(), "shape mismatch");
        assert_eq!(self.channels, other.channels, "channel mismatch");
        if self.data.is_empty() {
            return 0.0;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a as f64 - b as f64).abs())
            .sum::<f64>()
            / self.data.len() as f64
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        assert_eq!(self.dims(), other.dims(), "shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a as f64 - b as f64).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }

    pub fn from_u8(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Image {
        Image::from_vec(
            width,
            height,
            channels,
            bytes.iter().map(|&b| b as f32 / 255.0).collect(),
        )
    }

    /// Round trip through 8-bit storage.
    pub fn quantized(&self) -> Image {
        self.map(|v| quantize(v) as f32 / 255.0)
    }

    /// Loads an 8-bit PNG (or any format `image` decodes) as RGB.
    pub fn load_rgb(path: impl AsRef<Path>) -> Result<Image, RasterError> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        Ok(Image::from_u8(w as usize, h as usize, 3, img.as_raw()))
    }

    pub fn load_luma(path: impl AsRef<Path>) -> Result<Image, RasterError> {
        let img = image::open(path)?;
        match img {
            image::DynamicImage::ImageLuma8(g) => {
                let (w, h) = g.dimensions();
                Ok(Image::from_u8(w as usize, h as usize, 1, g.as_raw()))
            }
            other => {
                let rgb = other.to_rgb8();
                let (w, h) = rgb.dimensions();
                Ok(Image::from_u8(w as usize, h as usize, 3, rgb.as_raw()).to_luma())
            }
        }
    }

    /// Writes an 8-bit PNG (gray or RGB depending on channel count).
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), RasterError> {
        let color = match self.channels {
            1 => image::ExtendedColorType::L8,
            3 => image::ExtendedColorType::Rgb8,
            n => return Err(RasterError::Channels(n)),
        };
        image::save_buffer_with_format(
            path,
            &self.to_u8(),
            self.width as u32,
            self.height as u32,
            color,
            image::ImageFormat::Png,
        )?;
        Ok(())
    }
}

#[inline]
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

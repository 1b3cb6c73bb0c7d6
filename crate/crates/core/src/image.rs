//! Grayscale image container and resampling helpers.

use crate::error::{Error, Result};
use crate::haar::IntegralImage;

/// 8-bit luminance image stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "expected {} pixels for {width}x{height}, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    /// Photometric negative, `255 - p` per pixel.
    pub fn inverted(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&p| 255 - p).collect(),
        }
    }

    /// Nearest-neighbour enlargement by an integer factor.
    pub fn upscale(&self, factor: usize) -> Self {
        let factor = factor.max(1);
        let (w, h) = (self.width * factor, self.height * factor);
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                data.push(self.get(x / factor, y / factor));
            }
        }
        Self {
            width: w,
            height: h,
            data,
        }
    }

    /// Copy of the region `[x, x + w) x [y, y + h)`.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<Self> {
        if x + w > self.width || y + h > self.height {
            return Err(Error::OutOfBounds {
                ox: x,
                oy: y,
                width: self.width,
                height: self.height,
            });
        }
        let mut data = Vec::with_capacity(w * h);
        for row in y..y + h {
            data.extend_from_slice(&self.data[row * self.width + x..row * self.width + x + w]);
        }
        Self::new(w, h, data)
    }

    /// Box-filter resample of the whole image to `out_w x out_h`.
    pub fn resize(&self, out_w: usize, out_h: usize) -> Result<Self> {
        let ii = IntegralImage::new(self);
        resample_region(&ii, 0, 0, self.width, self.height, out_w, out_h)
    }
}

/// Area-averaging resample of a source region read through its integral image.
///
/// Each destination pixel covers the source span `[floor(i*s), floor((i+1)*s))`,
/// widened to at least one pixel so upsampling degrades to nearest neighbour.
pub fn resample_region(
    ii: &IntegralImage,
    x: usize,
    y: usize,
    w: usize,
    h: usize,
    out_w: usize,
    out_h: usize,
) -> Result<GrayImage> {
    if w == 0 || h == 0 || x + w > ii.width() || y + h > ii.height() {
        return Err(Error::OutOfBounds {
            ox: x,
            oy: y,
            width: ii.width(),
            height: ii.height(),
        });
    }
    let span = |i: usize, len: usize, out: usize| -> (usize, usize) {
        let a = i * len / out;
        let b = ((i + 1) * len / out).max(a + 1).min(len);
        (a, b)
    };
    GrayImage::from_fn(out_w, out_h, |ox, oy| {
        let (x0, x1) = span(ox, w, out_w);
        let (y0, y1) = span(oy, h, out_h);
        let area = ((x1 - x0) * (y1 - y0)) as i64;
        let sum = ii.rect_sum(x + x0, y + y0, x + x1, y + y1);
        ((sum + area / 2) / area) as u8
    })
}

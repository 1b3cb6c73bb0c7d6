//! Haar feature space, integral images and constant-time feature evaluation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Cumulative sum tables with a zero padding row and column.
///
/// `sums[(y) * (w + 1) + x]` holds the sum of all pixels strictly above and
/// to the left of `(x, y)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntegralImage {
    width: usize,
    height: usize,
    sums: Vec<i64>,
    squared_sums: Vec<i64>,
}

impl IntegralImage {
    pub fn new(img: &GrayImage) -> Self {
        let (w, h) = (img.width(), img.height());
        let stride = w + 1;
        let mut sums = vec![0i64; stride * (h + 1)];
        let mut squared_sums = vec![0i64; stride * (h + 1)];
        for y in 0..h {
            let mut row = 0i64;
            let mut row_sq = 0i64;
            for x in 0..w {
                let p = img.get(x, y) as i64;
                row += p;
                row_sq += p * p;
                let at = (y + 1) * stride + x + 1;
                sums[at] = sums[at - stride] + row;
                squared_sums[at] = squared_sums[at - stride] + row_sq;
            }
        }
        Self {
            width: w,
            height: h,
            sums,
            squared_sums,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Raw table entry at padded coordinates `(x, y)`, `0 <= x <= width`.
    pub fn sum_at(&self, x: usize, y: usize) -> i64 {
        self.sums[y * (self.width + 1) + x]
    }

    /// Sum over `[x0, x1) x [y0, y1)`. Empty ranges sum to 0.
    #[inline]
    pub fn rect_sum(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> i64 {
        if x1 <= x0 || y1 <= y0 {
            return 0;
        }
        let s = self.width + 1;
        self.sums[y1 * s + x1] - self.sums[y0 * s + x1] - self.sums[y1 * s + x0]
            + self.sums[y0 * s + x0]
    }

    /// Sum of squared pixels over `[x0, x1) x [y0, y1)`.
    #[inline]
    pub fn rect_squared_sum(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> i64 {
        if x1 <= x0 || y1 <= y0 {
            return 0;
        }
        let s = self.width + 1;
        self.squared_sums[y1 * s + x1] - self.squared_sums[y0 * s + x1]
            - self.squared_sums[y1 * s + x0]
            + self.squared_sums[y0 * s + x0]
    }

    /// Reciprocal of the pixel standard deviation inside a window.
    ///
    /// Feature values multiplied by this factor equal the values computed on a
    /// mean-subtracted, unit-variance copy of the window (the compensation
    /// weights already cancel the mean). Deviations below one grey level are
    /// clamped to one so near-flat windows do not amplify noise.
    pub fn inv_norm(&self, x: usize, y: usize, w: usize, h: usize) -> f64 {
        let area = (w * h) as f64;
        let sum = self.rect_sum(x, y, x + w, y + h) as f64;
        let sq = self.rect_squared_sum(x, y, x + w, y + h) as f64;
        let mean = sum / area;
        let var = (sq / area - mean * mean).max(0.0);
        1.0 / var.sqrt().max(1.0)
    }
}

/// The five upright Haar feature types, in chromosome code order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HaarType {
    HaarX2,
    HaarY2,
    HaarX3,
    HaarY3,
    HaarX2Y2,
}

impl HaarType {
    pub const ALL: [HaarType; 5] = [
        HaarType::HaarX2,
        HaarType::HaarY2,
        HaarType::HaarX3,
        HaarType::HaarY3,
        HaarType::HaarX2Y2,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    /// Width and height divisors of the type's block layout.
    pub fn cells(self) -> (usize, usize) {
        match self {
            HaarType::HaarX2 => (2, 1),
            HaarType::HaarY2 => (1, 2),
            HaarType::HaarX3 => (3, 1),
            HaarType::HaarY3 => (1, 3),
            HaarType::HaarX2Y2 => (2, 2),
        }
    }

    pub fn fits(self, width: usize, height: usize) -> bool {
        let (cx, cy) = self.cells();
        width >= cx && height >= cy && width.is_multiple_of(cx) && height.is_multiple_of(cy)
    }
}

/// One weighted sub-rectangle of a feature, relative to the window origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WeightedRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub weight: i64,
}

impl WeightedRect {
    fn new(x0: usize, y0: usize, x1: usize, y1: usize, weight: i64) -> Self {
        Self {
            x0,
            y0,
            x1,
            y1,
            weight,
        }
    }

    pub fn area(&self) -> usize {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

/// A typed rectangle filter. `(x, y)` is inclusive, `(x1, y1)` exclusive.
///
/// The same five numbers are the genome the genetic search operates on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HaarFeature {
    pub x: usize,
    pub y: usize,
    pub x1: usize,
    pub y1: usize,
    pub htype: HaarType,
}

impl fmt::Display for HaarFeature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?}[{},{})x[{},{})",
            self.htype, self.x, self.x1, self.y, self.y1
        )
    }
}

impl HaarFeature {
    /// Builds a feature, checking it against the window geometry.
    pub fn new(
        x: usize,
        y: usize,
        x1: usize,
        y1: usize,
        htype: HaarType,
        window_w: usize,
        window_h: usize,
    ) -> Result<Self> {
        let f = Self {
            x,
            y,
            x1,
            y1,
            htype,
        };
        f.check(window_w, window_h)?;
        Ok(f)
    }

    pub fn width(&self) -> usize {
        self.x1.saturating_sub(self.x)
    }

    pub fn height(&self) -> usize {
        self.y1.saturating_sub(self.y)
    }

    pub fn is_valid(&self, window_w: usize, window_h: usize) -> bool {
        self.x < self.x1
            && self.y < self.y1
            && self.x1 <= window_w
            && self.y1 <= window_h
            && self.htype.fits(self.width(), self.height())
    }

    pub fn check(&self, window_w: usize, window_h: usize) -> Result<()> {
        if self.is_valid(window_w, window_h) {
            Ok(())
        } else {
            Err(Error::InvalidFeature {
                feature: self.to_string(),
                width: window_w,
                height: window_h,
            })
        }
    }

    /// The feature's weighted sub-rectangles. White regions carry positive
    /// weight; three-block types weight the middle by -2 so that a constant
    /// image evaluates to zero.
    pub fn rects(&self) -> Vec<WeightedRect> {
        let (x, y, x1, y1) = (self.x, self.y, self.x1, self.y1);
        let (w, h) = (self.width(), self.height());
        match self.htype {
            HaarType::HaarX2 => {
                let xm = x + w / 2;
                vec![
                    WeightedRect::new(x, y, xm, y1, 1),
                    WeightedRect::new(xm, y, x1, y1, -1),
                ]
            }
            HaarType::HaarY2 => {
                let ym = y + h / 2;
                vec![
                    WeightedRect::new(x, y, x1, ym, 1),
                    WeightedRect::new(x, ym, x1, y1, -1),
                ]
            }
            HaarType::HaarX3 => {
                let (xa, xb) = (x + w / 3, x + 2 * w / 3);
                vec![
                    WeightedRect::new(x, y, xa, y1, 1),
                    WeightedRect::new(xa, y, xb, y1, -2),
                    WeightedRect::new(xb, y, x1, y1, 1),
                ]
            }
            HaarType::HaarY3 => {
                let (ya, yb) = (y + h / 3, y + 2 * h / 3);
                vec![
                    WeightedRect::new(x, y, x1, ya, 1),
                    WeightedRect::new(x, ya, x1, yb, -2),
                    WeightedRect::new(x, yb, x1, y1, 1),
                ]
            }
            HaarType::HaarX2Y2 => {
                let (xm, ym) = (x + w / 2, y + h / 2);
                vec![
                    WeightedRect::new(x, y, xm, ym, 1),
                    WeightedRect::new(xm, y, x1, ym, -1),
                    WeightedRect::new(x, ym, xm, y1, -1),
                    WeightedRect::new(xm, ym, x1, y1, 1),
                ]
            }
        }
    }
}

/// Precomputed sub-rectangles for repeated evaluation of one feature.
#[derive(Debug, Clone)]
pub struct CompiledFeature {
    rects: [WeightedRect; 4],
    len: usize,
}

impl CompiledFeature {
    pub fn new(f: &HaarFeature) -> Self {
        let parts = f.rects();
        let mut rects = [WeightedRect::new(0, 0, 0, 0, 0); 4];
        rects[..parts.len()].copy_from_slice(&parts);
        Self {
            rects,
            len: parts.len(),
        }
    }

    pub fn rects(&self) -> &[WeightedRect] {
        &self.rects[..self.len]
    }

    /// Unchecked evaluation at window offset `(ox, oy)`.
    #[inline]
    pub fn eval(&self, ii: &IntegralImage, ox: usize, oy: usize) -> i64 {
        self.rects()
            .iter()
            .map(|r| r.weight * ii.rect_sum(ox + r.x0, oy + r.y0, ox + r.x1, oy + r.y1))
            .sum()
    }

    /// Evaluation of the feature scaled by `scale` inside a window at
    /// `(ox, oy)`. Each scaled rectangle sum is renormalised by its actual
    /// area ratio, so at `scale == 1.0` this equals [`CompiledFeature::eval`].
    #[inline]
    pub fn eval_scaled(&self, ii: &IntegralImage, ox: usize, oy: usize, scale: f64) -> f64 {
        let snap = |v: usize| (v as f64 * scale).round() as usize;
        let mut total = 0.0;
        for r in self.rects() {
            let (x0, y0, x1, y1) = (snap(r.x0), snap(r.y0), snap(r.x1), snap(r.y1));
            let scaled_area = x1.saturating_sub(x0) * y1.saturating_sub(y0);
            if scaled_area == 0 {
                continue;
            }
            let sum = ii.rect_sum(ox + x0, oy + y0, ox + x1, oy + y1) as f64;
            total += r.weight as f64 * sum * (r.area() as f64 / scaled_area as f64);
        }
        total
    }
}

/// White-minus-black response of `f` placed at `(ox, oy)` in `ii`.
pub fn eval_feature(ii: &IntegralImage, f: &HaarFeature, ox: usize, oy: usize) -> Result<i64> {
    if f.x >= f.x1 || f.y >= f.y1 || ox + f.x1 > ii.width() || oy + f.y1 > ii.height() {
        return Err(Error::OutOfBounds {
            ox,
            oy,
            width: ii.width(),
            height: ii.height(),
        });
    }
    Ok(CompiledFeature::new(f).eval(ii, ox, oy))
}

/// Every valid feature of a window, type-major then `y, x, y1, x1`.
pub fn enumerate_features(window_w: usize, window_h: usize) -> Vec<HaarFeature> {
    let mut out = Vec::new();
    for htype in HaarType::ALL {
        let (cx, cy) = htype.cells();
        for y in 0..window_h {
            for x in 0..window_w {
                for y1 in (y + cy..=window_h).step_by(cy) {
                    for x1 in (x + cx..=window_w).step_by(cx) {
                        out.push(HaarFeature {
                            x,
                            y,
                            x1,
                            y1,
                            htype,
                        });
                    }
                }
            }
        }
    }
    out
}

/// Stable mixed-radix identifier of a valid feature.
pub fn canonical_id(f: &HaarFeature, window_w: usize, window_h: usize) -> Result<u64> {
    f.check(window_w, window_h)?;
    Ok(canonical_id_unchecked(f, window_w, window_h))
}

#[inline]
pub(crate) fn canonical_id_unchecked(f: &HaarFeature, window_w: usize, window_h: usize) -> u64 {
    let (w, h) = (window_w as u64, window_h as u64);
    let mut id = f.htype.code() as u64;
    id = id * h + f.y as u64;
    id = id * w + f.x as u64;
    id = id * (h + 1) + f.y1 as u64;
    id * (w + 1) + f.x1 as u64
}

//! Dense pixel buffers used throughout the crate.
//!
//! `Image` is an interleaved H x W x C buffer of `f64` in row-major order with
//! the top row at index 0. `Grid` is the single-plane variant used for flow
//! components, masks, and row encodings. Values are plain `f64`; range
//! contracts ([0,1] light, finite flow) are enforced by the types that own
//! the buffers, not here.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    h: usize,
    w: usize,
    c: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        assert!(h > 0 && w > 0 && (c == 1 || c == 3), "unsupported image shape {h}x{w}x{c}");
        Image { h, w, c, data: vec![0.0; h * w * c] }
    }

    pub fn from_fn(h: usize, w: usize, c: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut img = Image::zeros(h, w, c);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    img.data[(y * w + x) * c + ch] = f(y, x, ch);
                }
            }
        }
        img
    }

    pub fn from_raw(h: usize, w: usize, c: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), h * w * c, "raw buffer length mismatch");
        assert!(c == 1 || c == 3, "unsupported channel count {c}");
        Image { h, w, c, data }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.c)
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, ch: usize) -> f64 {
        debug_assert!(y < self.h && x < self.w && ch < self.c);
        self.data[(y * self.w + x) * self.c + ch]
    }

    #[inline]
    pub fn at_mut(&mut self, y: usize, x: usize, ch: usize) -> &mut f64 {
        debug_assert!(y < self.h && x < self.w && ch < self.c);
        &mut self.data[(y * self.w + x) * self.c + ch]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Interleaved pixels of one row.
    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.w * self.c..(y + 1) * self.w * self.c]
    }

    pub fn row_mut(&mut self, y: usize) -> &mut [f64] {
        let stride = self.w * self.c;
        &mut self.data[y * stride..(y + 1) * stride]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            h: self.h,
            w: self.w,
            c: self.c,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Central region with `margin` pixels removed from every side.
    pub fn crop(&self, margin: usize) -> Image {
        assert!(2 * margin < self.h && 2 * margin < self.w, "margin {margin} too large for {}x{}", self.h, self.w);
        let (h, w) = (self.h - 2 * margin, self.w - 2 * margin);
        Image::from_fn(h, w, self.c, |y, x, ch| self.at(y + margin, x + margin, ch))
    }

    /// Errors unless both images share the exact same shape.
    pub fn check_same_shape(&self, other: &Image, what: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                what,
                expected: (self.h, self.w),
                got: (other.h, other.w),
            });
        }
        Ok(())
    }

    /// Verifies every sample lies in [0,1] up to `slack` and clamps the excess away.
    pub fn into_unit_range(mut self, what: &'static str, slack: f64) -> Result<Image> {
        for v in &mut self.data {
            if !v.is_finite() || *v < -slack || *v > 1.0 + slack {
                return Err(Error::invalid(what, format!("sample {v} outside [0,1]")));
            }
            *v = v.clamp(0.0, 1.0);
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn zeros(h: usize, w: usize) -> Self {
        assert!(h > 0 && w > 0, "empty grid {h}x{w}");
        Grid { h, w, data: vec![0.0; h * w] }
    }

    pub fn filled(h: usize, w: usize, value: f64) -> Self {
        assert!(h > 0 && w > 0, "empty grid {h}x{w}");
        Grid { h, w, data: vec![value; h * w] }
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut g = Grid::zeros(h, w);
        for y in 0..h {
            for x in 0..w {
                g.data[y * w + x] = f(y, x);
            }
        }
        g
    }

    pub fn from_raw(h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), h * w, "raw buffer length mismatch");
        Grid { h, w, data }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        debug_assert!(y < self.h && x < self.w);
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn at_mut(&mut self, y: usize, x: usize) -> &mut f64 {
        debug_assert!(y < self.h && x < self.w);
        &mut self.data[y * self.w + x]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid {
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

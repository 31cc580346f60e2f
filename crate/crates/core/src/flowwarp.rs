//! Displacement fields, backward warping, and mask fusion.
//!
//! Warping samples the source image at `p + flow(p)` with bilinear
//! interpolation; coordinates outside the frame clamp to the nearest edge
//! pixel, so the sampled value is constant (and its spatial gradient zero)
//! beyond the border.

use crate::error::{Error, Result};
use crate::image::{Grid, Image};
use crate::timing::TimingConfig;

/// Dense 2D displacement field. `u` is the horizontal (column) component,
/// `v` the vertical (row) component, both in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub u: Grid,
    pub v: Grid,
}

impl FlowField {
    pub fn new(u: Grid, v: Grid) -> Result<FlowField> {
        if u.shape() != v.shape() {
            return Err(Error::ShapeMismatch {
                what: "flow components",
                expected: u.shape(),
                got: v.shape(),
            });
        }
        let f = FlowField { u, v };
        f.check_finite()?;
        Ok(f)
    }

    pub fn zeros(h: usize, w: usize) -> FlowField {
        FlowField { u: Grid::zeros(h, w), v: Grid::zeros(h, w) }
    }

    pub fn constant(h: usize, w: usize, u: f64, v: f64) -> FlowField {
        FlowField { u: Grid::filled(h, w, u), v: Grid::filled(h, w, v) }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.u.shape()
    }

    pub fn check_finite(&self) -> Result<()> {
        if !self.u.is_finite() || !self.v.is_finite() {
            return Err(Error::NonFinite { what: "flow field" });
        }
        Ok(())
    }

    /// Errors if any displacement component exceeds `max_displacement` in
    /// magnitude.
    pub fn check_bounded(&self, max_displacement: f64) -> Result<()> {
        let worst = self
            .u
            .data()
            .iter()
            .chain(self.v.data())
            .fold(0.0f64, |m, &d| m.max(d.abs()));
        if worst > max_displacement {
            return Err(Error::invalid(
                "flow field",
                format!("displacement {worst} exceeds bound {max_displacement}"),
            ));
        }
        Ok(())
    }

    /// Largest absolute displacement component.
    pub fn max_abs(&self) -> f64 {
        self.u
            .data()
            .iter()
            .chain(self.v.data())
            .fold(0.0f64, |m, &d| m.max(d.abs()))
    }
}

/// Per-pixel blend weight in [0,1]; 1 selects the first fusion input.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionMask {
    weights: Grid,
}

impl FusionMask {
    pub fn new(weights: Grid) -> Result<FusionMask> {
        for &w in weights.data() {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::invalid("fusion mask", format!("weight {w} outside [0,1]")));
            }
        }
        Ok(FusionMask { weights })
    }

    pub fn uniform(h: usize, w: usize, value: f64) -> Result<FusionMask> {
        FusionMask::new(Grid::filled(h, w, value))
    }

    pub fn weights(&self) -> &Grid {
        &self.weights
    }
}

/// Neighborhood of a continuous coordinate after clamp-to-edge: cell columns
/// `(i0, i1)`, fractional offset, and whether the pre-clamp coordinate was
/// inside the frame (outside means a zero spatial derivative).
#[inline]
fn prep(extent: usize, coord: f64) -> (usize, usize, f64, bool) {
    let last = (extent - 1) as f64;
    let inside = (0.0..=last).contains(&coord);
    let c = coord.clamp(0.0, last);
    let i0 = c.floor() as usize;
    let i1 = (i0 + 1).min(extent - 1);
    (i0, i1, c - i0 as f64, inside)
}

/// Bilinear sample of one channel at a continuous position, clamp-to-edge.
#[inline]
pub fn sample_bilinear(img: &Image, y: f64, x: f64, ch: usize) -> f64 {
    let (x0, x1, fx, _) = prep(img.width(), x);
    let (y0, y1, fy, _) = prep(img.height(), y);
    let top = (1.0 - fx) * img.at(y0, x0, ch) + fx * img.at(y0, x1, ch);
    let bot = (1.0 - fx) * img.at(y1, x0, ch) + fx * img.at(y1, x1, ch);
    (1.0 - fy) * top + fy * bot
}

/// Bilinear sample plus its derivatives with respect to the sample position:
/// `(value, d/dy, d/dx)`. Derivatives vanish outside the frame where the
/// clamp holds the value constant.
#[inline]
pub fn sample_bilinear_grad(img: &Image, y: f64, x: f64, ch: usize) -> (f64, f64, f64) {
    let (x0, x1, fx, x_in) = prep(img.width(), x);
    let (y0, y1, fy, y_in) = prep(img.height(), y);
    let p00 = img.at(y0, x0, ch);
    let p01 = img.at(y0, x1, ch);
    let p10 = img.at(y1, x0, ch);
    let p11 = img.at(y1, x1, ch);
    let top = (1.0 - fx) * p00 + fx * p01;
    let bot = (1.0 - fx) * p10 + fx * p11;
    let value = (1.0 - fy) * top + fy * bot;
    let dy = if y_in { bot - top } else { 0.0 };
    let dx = if x_in {
        (1.0 - fy) * (p01 - p00) + fy * (p11 - p10)
    } else {
        0.0
    };
    (value, dy, dx)
}

/// Resamples `img` at `p + flow(p)` for every pixel `p`.
pub fn backward_warp(img: &Image, flow: &FlowField) -> Result<Image> {
    flow.check_finite()?;
    let (h, w, c) = img.shape();
    if flow.shape() != (h, w) {
        return Err(Error::ShapeMismatch {
            what: "backward warp",
            expected: (h, w),
            got: flow.shape(),
        });
    }
    let mut out = Image::zeros(h, w, c);
    for y in 0..h {
        for x in 0..w {
            let sx = x as f64 + flow.u.at(y, x);
            let sy = y as f64 + flow.v.at(y, x);
            for ch in 0..c {
                *out.at_mut(y, x, ch) = sample_bilinear(img, sy, sx, ch);
            }
        }
    }
    Ok(out)
}

/// Componentwise rescaling of a displacement field.
pub fn scale_flow(flow: &FlowField, s: f64) -> FlowField {
    FlowField {
        u: flow.u.map(|d| d * s),
        v: flow.v.map(|d| d * s),
    }
}

/// Per-pixel convex blend: `m * a + (1 - m) * b`.
pub fn fuse(a: &Image, b: &Image, m: &FusionMask) -> Result<Image> {
    a.check_same_shape(b, "fusion inputs")?;
    let (h, w, c) = a.shape();
    if m.weights().shape() != (h, w) {
        return Err(Error::ShapeMismatch {
            what: "fusion mask",
            expected: (h, w),
            got: m.weights().shape(),
        });
    }
    let mut out = Image::zeros(h, w, c);
    for y in 0..h {
        for x in 0..w {
            let wgt = m.weights().at(y, x);
            for ch in 0..c {
                *out.at_mut(y, x, ch) = wgt * a.at(y, x, ch) + (1.0 - wgt) * b.at(y, x, ch);
            }
        }
    }
    Ok(out)
}

/// Displacements between the two views under the linear-motion model.
///
/// `base` is the scene displacement over one normalized exposure. Content
/// observed at the blur anchor `t_anchor_b` appears in the rolling-shutter
/// view displaced by `base * (row_time(k) - t_anchor_b)` on row `k`; the
/// reverse flow is its negation. Returns `(blur_to_rs, rs_to_blur)`.
pub fn cross_view_displacement(
    base: &FlowField,
    timing: &TimingConfig,
    t_anchor_b: f64,
) -> Result<(FlowField, FlowField)> {
    timing.validate()?;
    base.check_finite()?;
    if !(0.0..=1.0).contains(&t_anchor_b) {
        return Err(Error::invalid(
            "t_anchor_B",
            format!("anchor must lie in [0,1], got {t_anchor_b}"),
        ));
    }
    let (h, w) = base.shape();
    if (h, w) != (timing.image_height, timing.image_width) {
        return Err(Error::ShapeMismatch {
            what: "cross-view base flow",
            expected: (timing.image_height, timing.image_width),
            got: (h, w),
        });
    }
    let mut fwd = FlowField::zeros(h, w);
    for k in 0..h {
        let s = timing.row_time(k)? - t_anchor_b;
        for x in 0..w {
            *fwd.u.at_mut(k, x) = base.u.at(k, x) * s;
            *fwd.v.at_mut(k, x) = base.v.at(k, x) * s;
        }
    }
    let bwd = scale_flow(&fwd, -1.0);
    Ok((fwd, bwd))
}

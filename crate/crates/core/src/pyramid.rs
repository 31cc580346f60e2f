//! Resolution pyramid primitives: area-average halving and bilinear
//! upsampling to an arbitrary target size.

use crate::image::{Grid, Image};

/// Halves each spatial dimension (rounding up) by averaging 2x2 blocks;
/// truncated blocks at odd borders average the pixels that exist.
pub fn downsample_half(img: &Image) -> Image {
    let (h, w, c) = img.shape();
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Image::zeros(oh, ow, c);
    for y in 0..oh {
        let y1 = (2 * y + 2).min(h);
        for x in 0..ow {
            let x1 = (2 * x + 2).min(w);
            let count = ((y1 - 2 * y) * (x1 - 2 * x)) as f64;
            for ch in 0..c {
                let mut sum = 0.0;
                for sy in 2 * y..y1 {
                    for sx in 2 * x..x1 {
                        sum += img.at(sy, sx, ch);
                    }
                }
                *out.at_mut(y, x, ch) = sum / count;
            }
        }
    }
    out
}

pub fn downsample_half_grid(g: &Grid) -> Grid {
    let (h, w) = g.shape();
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    Grid::from_fn(oh, ow, |y, x| {
        let (y1, x1) = ((2 * y + 2).min(h), (2 * x + 2).min(w));
        let mut sum = 0.0;
        for sy in 2 * y..y1 {
            for sx in 2 * x..x1 {
                sum += g.at(sy, sx);
            }
        }
        sum / ((y1 - 2 * y) * (x1 - 2 * x)) as f64
    })
}

/// Bilinear resampling of a plane to `(oh, ow)` with pixel centers aligned
/// (the resize convention mapping `dst + 0.5` to `src + 0.5`).
pub fn upsample_bilinear_grid(g: &Grid, oh: usize, ow: usize) -> Grid {
    let (h, w) = g.shape();
    let (sy, sx) = (h as f64 / oh as f64, w as f64 / ow as f64);
    Grid::from_fn(oh, ow, |y, x| {
        let src_y = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, h as f64 - 1.0);
        let src_x = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, w as f64 - 1.0);
        let y0 = src_y.floor() as usize;
        let x0 = src_x.floor() as usize;
        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
        let (fy, fx) = (src_y - y0 as f64, src_x - x0 as f64);
        let top = (1.0 - fx) * g.at(y0, x0) + fx * g.at(y0, x1);
        let bot = (1.0 - fx) * g.at(y1, x0) + fx * g.at(y1, x1);
        (1.0 - fy) * top + fy * bot
    })
}

/// Spatial sizes of an `n_levels` pyramid, finest first.
pub fn level_shapes(h: usize, w: usize, n_levels: usize) -> Vec<(usize, usize)> {
    let mut shapes = vec![(h, w)];
    for _ in 1..n_levels {
        let &(ph, pw) = shapes.last().expect("non-empty by construction");
        shapes.push((ph.div_ceil(2), pw.div_ceil(2)));
    }
    shapes
}

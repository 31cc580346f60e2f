//! Fidelity metrics for recovered frame stacks.
//!
//! PSNR assumes values in [0,1] and caps identical images at 100 dB so CSV
//! columns stay finite. SSIM follows the standard windowed form: 11x11
//! Gaussian weights (sigma 1.5), K1 = 0.01, K2 = 0.03, dynamic range 1,
//! averaged over fully valid window positions; color inputs are reduced to
//! grayscale by channel mean first.

use crate::error::{Error, Result};
use crate::formation::LatentSequence;
use crate::image::{Grid, Image};

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Mean squared error over all samples.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b, "metric inputs")?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// Peak signal-to-noise ratio in dB, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let e = mse(a, b)?;
    let floor = 10f64.powf(-PSNR_CAP_DB / 10.0);
    if e <= floor {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * (1.0 / e).log10())
}

/// Per-pixel channel mean as a single plane.
fn to_gray(img: &Image) -> Grid {
    let (h, w, c) = img.shape();
    Grid::from_fn(h, w, |y, x| {
        (0..c).map(|ch| img.at(y, x, ch)).sum::<f64>() / c as f64
    })
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *t;
    }
    for t in taps.iter_mut() {
        *t /= sum;
    }
    taps
}

/// Horizontal then vertical weighted sums over valid positions; the result
/// is the (h - 10) x (w - 10) plane of Gaussian-window means.
fn windowed_mean(src: &Grid, taps: &[f64; SSIM_WINDOW]) -> Grid {
    let (h, w) = src.shape();
    let wv = w - (SSIM_WINDOW - 1);
    let hv = h - (SSIM_WINDOW - 1);
    let mut horiz = Grid::zeros(h, wv);
    for y in 0..h {
        for x in 0..wv {
            let mut acc = 0.0;
            for (i, t) in taps.iter().enumerate() {
                acc += t * src.at(y, x + i);
            }
            *horiz.at_mut(y, x) = acc;
        }
    }
    let mut out = Grid::zeros(hv, wv);
    for y in 0..hv {
        for x in 0..wv {
            let mut acc = 0.0;
            for (i, t) in taps.iter().enumerate() {
                acc += t * horiz.at(y + i, x);
            }
            *out.at_mut(y, x) = acc;
        }
    }
    out
}

/// Mean structural similarity between two images.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b, "metric inputs")?;
    let (h, w, _) = a.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(
            "ssim",
            format!("image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        ));
    }
    let x = to_gray(a);
    let y = to_gray(b);
    let taps = gaussian_taps();

    let mu_x = windowed_mean(&x, &taps);
    let mu_y = windowed_mean(&y, &taps);
    let xx = windowed_mean(&x.map(|v| v * v), &taps);
    let yy = windowed_mean(&y.map(|v| v * v), &taps);
    let xy_prod = Grid::from_fn(h, w, |r, c| x.at(r, c) * y.at(r, c));
    let xy = windowed_mean(&xy_prod, &taps);

    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let (hv, wv) = mu_x.shape();
    let mut acc = 0.0;
    for r in 0..hv {
        for c in 0..wv {
            let (mx, my) = (mu_x.at(r, c), mu_y.at(r, c));
            let vx = xx.at(r, c) - mx * mx;
            let vy = yy.at(r, c) - my * my;
            let cov = xy.at(r, c) - mx * my;
            let num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
            let den = (mx * mx + my * my + c1) * (vx + vy + c2);
            acc += num / den;
        }
    }
    Ok(acc / (hv * wv) as f64)
}

/// Keeps frames at indices `t * (N-1) / (length-1)`, endpoints included, and
/// rescales the timing to the shorter stack.
pub fn subsample_sequence(seq: &LatentSequence, length: usize) -> Result<LatentSequence> {
    let n = seq.len();
    if length < 2 || length > n {
        return Err(Error::invalid(
            "subsample length",
            format!("length must lie in [2, {n}], got {length}"),
        ));
    }
    if !(n - 1).is_multiple_of(length - 1) {
        let valid: Vec<String> = (2..=n)
            .filter(|l| (n - 1).is_multiple_of(l - 1))
            .map(|l| l.to_string())
            .collect();
        return Err(Error::invalid(
            "subsample length",
            format!(
                "length {length} does not divide a {n}-frame stack evenly; valid lengths: {}",
                valid.join(", ")
            ),
        ));
    }
    let stride = (n - 1) / (length - 1);
    let frames: Vec<Image> = (0..length).map(|t| seq.frames()[t * stride].clone()).collect();
    let mut timing = seq.timing().clone();
    timing.n_latent = length;
    LatentSequence::new(frames, timing)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timing::TimingConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn texture(h: usize, w: usize, c: usize) -> Image {
        Image::from_fn(h, w, c, |y, x, ch| {
            let (yf, xf) = (y as f64, x as f64);
            0.5 + 0.2 * (0.13 * xf + 0.07 * yf + ch as f64).sin() + 0.15 * (0.05 * xf - 0.11 * yf).cos()
        })
    }

    #[test]
    fn psnr_reference_points() {
        let x = texture(16, 16, 3);
        assert_eq!(psnr(&x, &x).unwrap(), 100.0);
        let zeros = Image::zeros(8, 8, 1);
        let ones = zeros.map(|_| 1.0);
        assert!((psnr(&zeros, &ones).unwrap() - 0.0).abs() < 1e-12);
        let half = zeros.map(|_| 0.5);
        let shifted = zeros.map(|_| 0.6);
        assert!((psnr(&half, &shifted).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn metric_inputs_must_share_shape() {
        let a = Image::zeros(8, 8, 1);
        let b = Image::zeros(8, 9, 1);
        assert!(psnr(&a, &b).is_err());
        assert!(ssim(&a, &b).is_err());
        assert!(mse(&a, &b).is_err());
    }

    #[test]
    fn ssim_of_identical_images_is_one() {
        let x = texture(32, 32, 1);
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let rgb = texture(20, 24, 3);
        assert!((ssim(&rgb, &rgb).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_of_inverted_binary_image_is_negative() {
        let x = Image::from_fn(24, 24, 1, |y, x, _| ((y / 2 + x / 2) % 2) as f64);
        let inv = x.map(|v| 1.0 - v);
        let s = ssim(&x, &inv).unwrap();
        assert!(s < 0.0, "anti-correlated structure must score negative, got {s}");
    }

    #[test]
    fn ssim_rejects_images_below_window_size() {
        let small = Image::zeros(10, 32, 1);
        assert!(ssim(&small, &small).is_err());
    }

    /// Naive direct-sum SSIM: every window summed explicitly, no separable
    /// pass, no shared buffers.
    #[allow(clippy::needless_range_loop)]
    fn ssim_oracle(a: &Image, b: &Image) -> f64 {
        let (h, w, c) = a.shape();
        let gray = |img: &Image, y: usize, x: usize| {
            (0..c).map(|ch| img.at(y, x, ch)).sum::<f64>() / c as f64
        };
        let mut weights = [[0.0; SSIM_WINDOW]; SSIM_WINDOW];
        let mut wsum = 0.0;
        for (i, row) in weights.iter_mut().enumerate() {
            for (j, wv) in row.iter_mut().enumerate() {
                let dy = i as f64 - 5.0;
                let dx = j as f64 - 5.0;
                *wv = (-(dy * dy + dx * dx) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
                wsum += *wv;
            }
        }
        for row in weights.iter_mut() {
            for wv in row.iter_mut() {
                *wv /= wsum;
            }
        }
        let c1 = SSIM_K1 * SSIM_K1;
        let c2 = SSIM_K2 * SSIM_K2;
        let mut acc = 0.0;
        let mut count = 0usize;
        for y0 in 0..=h - SSIM_WINDOW {
            for x0 in 0..=w - SSIM_WINDOW {
                let (mut mx, mut my) = (0.0, 0.0);
                let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
                for i in 0..SSIM_WINDOW {
                    for j in 0..SSIM_WINDOW {
                        let wv = weights[i][j];
                        let xv = gray(a, y0 + i, x0 + j);
                        let yv = gray(b, y0 + i, x0 + j);
                        mx += wv * xv;
                        my += wv * yv;
                        sxx += wv * xv * xv;
                        syy += wv * yv * yv;
                        sxy += wv * xv * yv;
                    }
                }
                let vx = sxx - mx * mx;
                let vy = syy - my * my;
                let cov = sxy - mx * my;
                acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        acc / count as f64
    }

    #[test]
    fn ssim_matches_direct_sum_oracle_on_noisy_texture() {
        let x = texture(64, 64, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let noisy = Image::from_fn(64, 64, 1, |y, xc, ch| {
            (x.at(y, xc, ch) + rng.gen_range(-0.05..=0.05)).clamp(0.0, 1.0)
        });
        let fast = ssim(&x, &noisy).unwrap();
        let slow = ssim_oracle(&x, &noisy);
        assert!(
            (fast - slow).abs() < 1e-9,
            "separable {fast} vs direct-sum {slow}"
        );
        // Frozen reference for this exact texture / seed pairing.
        let golden = 0.792617874231316;
        assert!(
            (fast - golden).abs() < 1e-9,
            "ssim drifted from frozen value: {fast} vs {golden}"
        );
    }

    #[test]
    fn ssim_color_reduces_by_channel_mean() {
        let rgb = texture(32, 32, 3);
        let gray = Image::from_fn(32, 32, 1, |y, x, _| {
            (rgb.at(y, x, 0) + rgb.at(y, x, 1) + rgb.at(y, x, 2)) / 3.0
        });
        let other = rgb.map(|v| (v * 0.9 + 0.03).clamp(0.0, 1.0));
        let other_gray = Image::from_fn(32, 32, 1, |y, x, _| {
            (other.at(y, x, 0) + other.at(y, x, 1) + other.at(y, x, 2)) / 3.0
        });
        let a = ssim(&rgb, &other).unwrap();
        let b = ssim(&gray, &other_gray).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    fn stack(n: usize) -> LatentSequence {
        let frames: Vec<Image> = (0..n)
            .map(|t| Image::from_fn(8, 8, 1, |y, x, _| ((t * 64 + y * 8 + x) % 97) as f64 / 96.0))
            .collect();
        LatentSequence::new(frames, TimingConfig::synthetic(8, 8, n)).unwrap()
    }

    #[test]
    fn subsample_keeps_endpoint_aligned_frames() {
        let seq = stack(9);
        let three = subsample_sequence(&seq, 3).unwrap();
        assert_eq!(three.len(), 3);
        assert_eq!(three.timing().n_latent, 3);
        for (i, src) in [0usize, 4, 8].iter().enumerate() {
            assert_eq!(&three.frames()[i], &seq.frames()[*src]);
        }
        let five = subsample_sequence(&seq, 5).unwrap();
        for (i, src) in [0usize, 2, 4, 6, 8].iter().enumerate() {
            assert_eq!(&five.frames()[i], &seq.frames()[*src]);
        }
        let nine = subsample_sequence(&seq, 9).unwrap();
        assert_eq!(nine.frames(), seq.frames());
    }

    #[test]
    fn subsample_rejects_uneven_lengths_and_names_valid_ones() {
        let seq = stack(9);
        let err = subsample_sequence(&seq, 4).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('2') && msg.contains('3') && msg.contains('5') && msg.contains('9'), "{msg}");
        assert!(subsample_sequence(&seq, 1).is_err());
        assert!(subsample_sequence(&seq, 10).is_err());
    }
}

//! Forward image formation: blur averaging, rolling-shutter row transfer,
//! and the seeded degradations used for robustness studies.
//!
//! All synthesis runs in linear light. The blur view is the temporal mean of
//! the latent stack; the rolling-shutter view copies each row from the
//! latent frame that owns it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::timing::TimingConfig;

/// Gamma interval for the low-light degradation when none is given.
pub const DEFAULT_GAMMA_RANGE: (f64, f64) = (0.8, 1.2);

/// Ordered stack of sharp frames, one per latent instant, in linear light.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSequence {
    frames: Vec<Image>,
    timing: TimingConfig,
}

impl LatentSequence {
    /// Validates frame count against `timing.n_latent`, geometry against the
    /// sensor, shape agreement across frames, and the [0,1] value range.
    pub fn new(frames: Vec<Image>, timing: TimingConfig) -> Result<LatentSequence> {
        timing.validate()?;
        if frames.len() != timing.n_latent {
            return Err(Error::invalid(
                "latent sequence",
                format!("expected {} frames, got {}", timing.n_latent, frames.len()),
            ));
        }
        let shape = frames[0].shape();
        if shape.0 != timing.image_height || shape.1 != timing.image_width {
            return Err(Error::invalid(
                "latent sequence",
                format!(
                    "frame geometry {}x{} does not match sensor {}x{}",
                    shape.0, shape.1, timing.image_height, timing.image_width
                ),
            ));
        }
        let mut checked = Vec::with_capacity(frames.len());
        for (i, f) in frames.into_iter().enumerate() {
            if f.shape() != shape {
                return Err(Error::ShapeMismatch {
                    what: "latent sequence",
                    expected: (shape.0, shape.1),
                    got: (f.height(), f.width()),
                });
            }
            let _ = i;
            checked.push(f.into_unit_range("latent frame", 1e-9)?);
        }
        Ok(LatentSequence { frames: checked, timing })
    }

    pub fn frames(&self) -> &[Image] {
        &self.frames
    }

    pub fn timing(&self) -> &TimingConfig {
        &self.timing
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn into_frames(self) -> Vec<Image> {
        self.frames
    }

    /// Constructor that skips validation, for code paths that must package
    /// frames under timings a full check would reject.
    pub(crate) fn from_parts_unchecked(frames: Vec<Image>, timing: TimingConfig) -> LatentSequence {
        LatentSequence { frames, timing }
    }
}

/// The two observations the inverse problem starts from: a blurred
/// global-shutter view and a rolling-shutter view of the same exposure.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationPair {
    pub blur: Image,
    pub rs: Image,
    pub timing: TimingConfig,
}

impl ObservationPair {
    pub fn new(blur: Image, rs: Image, timing: TimingConfig) -> Result<ObservationPair> {
        timing.validate()?;
        blur.check_same_shape(&rs, "observation pair")?;
        if blur.height() != timing.image_height || blur.width() != timing.image_width {
            return Err(Error::invalid(
                "observation pair",
                format!(
                    "image geometry {}x{} does not match sensor {}x{}",
                    blur.height(),
                    blur.width(),
                    timing.image_height,
                    timing.image_width
                ),
            ));
        }
        let blur = blur.into_unit_range("blur view", 1e-9)?;
        let rs = rs.into_unit_range("rolling-shutter view", 1e-9)?;
        Ok(ObservationPair { blur, rs, timing })
    }
}

/// Maps gamma-encoded values into linear light: `out = in^gamma`.
pub fn linearize(img: &Image, gamma: f64) -> Result<Image> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::invalid("gamma", format!("must be positive, got {gamma}")));
    }
    Ok(img.map(|v| v.powf(gamma)))
}

/// Inverse of [`linearize`] for the same `gamma`.
pub fn delinearize(img: &Image, gamma: f64) -> Result<Image> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::invalid("gamma", format!("must be positive, got {gamma}")));
    }
    Ok(img.map(|v| v.powf(1.0 / gamma)))
}

/// Temporal mean of the latent stack.
///
/// Computed as `S^0 + mean(S^t - S^0)` so a static stack reproduces its
/// frame bit-exactly instead of within summation rounding.
pub fn synthesize_blur(seq: &LatentSequence) -> Image {
    let first = &seq.frames()[0];
    let n = seq.len() as f64;
    let mut acc = vec![0.0; first.data().len()];
    for frame in &seq.frames()[1..] {
        for (a, (&v, &v0)) in acc.iter_mut().zip(frame.data().iter().zip(first.data())) {
            *a += v - v0;
        }
    }
    let mut out = first.clone();
    for (o, a) in out.data_mut().iter_mut().zip(&acc) {
        *o += a / n;
    }
    out
}

/// Rolling-shutter view: row `k` is copied from the latent frame owning it.
pub fn synthesize_rs(seq: &LatentSequence) -> Image {
    let (h, w, c) = seq.frames()[0].shape();
    let mut out = Image::zeros(h, w, c);
    for k in 0..h {
        let t = seq.timing().row_to_latent(k).expect("row in range by construction");
        out.row_mut(k).copy_from_slice(seq.frames()[t].row(k));
    }
    out
}

/// Both observations of one latent stack.
pub fn synthesize_pair(seq: &LatentSequence) -> Result<ObservationPair> {
    ObservationPair::new(synthesize_blur(seq), synthesize_rs(seq), seq.timing().clone())
}

/// Rigid misalignment: translates the image by an integer offset drawn
/// uniformly from `[-max_px, max_px]` per axis, replicating edge pixels.
/// Returns the shifted image and the `(dx, dy)` offset actually applied.
pub fn degrade_shift(img: &Image, max_px: u32, seed: u64) -> (Image, (i64, i64)) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = max_px as i64;
    let dx = rng.gen_range(-m..=m);
    let dy = rng.gen_range(-m..=m);
    (translate_replicate(img, dx, dy), (dx, dy))
}

/// Content shifted by `(dx, dy)` with clamp-to-edge fill.
pub fn translate_replicate(img: &Image, dx: i64, dy: i64) -> Image {
    let (h, w, c) = img.shape();
    let mut out = Image::zeros(h, w, c);
    for y in 0..h {
        let sy = (y as i64 - dy).clamp(0, h as i64 - 1) as usize;
        for x in 0..w {
            let sx = (x as i64 - dx).clamp(0, w as i64 - 1) as usize;
            for ch in 0..c {
                *out.at_mut(y, x, ch) = img.at(sy, sx, ch);
            }
        }
    }
    out
}

/// Low-light degradation: a random gamma from `gamma_range` followed by
/// Poisson shot noise at the given photon `peak`, clamped back to [0,1].
/// The result is fully determined by `seed`.
pub fn degrade_lowlight(
    img: &Image,
    peak: f64,
    gamma_range: (f64, f64),
    seed: u64,
) -> Result<Image> {
    if !(peak.is_finite() && peak > 0.0) {
        return Err(Error::invalid("peak", format!("must be positive, got {peak}")));
    }
    let (lo, hi) = gamma_range;
    if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo <= hi) {
        return Err(Error::invalid(
            "gamma range",
            format!("need 0 < lo <= hi, got ({lo}, {hi})"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = if lo == hi { lo } else { rng.gen_range(lo..=hi) };
    let mut out = img.clone();
    for v in out.data_mut() {
        let expectation = v.powf(gamma) * peak;
        let counts = if expectation > 0.0 {
            Poisson::new(expectation)
                .expect("positive finite expectation")
                .sample(&mut rng)
        } else {
            0.0
        };
        *v = (counts / peak).clamp(0.0, 1.0);
    }
    Ok(out)
}

//! Procedural scenes with analytic ground truth.
//!
//! Each scene is a closed-form texture translated horizontally at a fixed
//! velocity, sampled per frame directly from the formula, so rendered stacks
//! carry zero resampling error and the true displacement is known exactly.
//! The textures are sums of low-frequency sinusoids: smooth enough that
//! half-resolution pyramid levels still see the motion, textured enough that
//! the data terms pin the flow.

use crate::error::{Error, Result};
use crate::formation::LatentSequence;
use crate::image::Image;
use crate::timing::TimingConfig;

/// Texture families available through scene descriptors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Texture {
    /// First sinusoid mixture used by the direction suite.
    WavesA,
    /// Phase/frequency-shifted sibling of WavesA.
    WavesB,
    /// Horizontally symmetric texture: value at column x equals the value at
    /// column W-1-x bit-exactly.
    Mirror,
}

impl Texture {
    pub fn name(self) -> &'static str {
        match self {
            Texture::WavesA => "waves-a",
            Texture::WavesB => "waves-b",
            Texture::Mirror => "mirror",
        }
    }

    pub fn from_name(name: &str) -> Result<Texture> {
        match name {
            "waves-a" => Ok(Texture::WavesA),
            "waves-b" => Ok(Texture::WavesB),
            "mirror" => Ok(Texture::Mirror),
            other => Err(Error::invalid(
                "scene texture",
                format!("unknown texture {other:?}; expected waves-a, waves-b, or mirror"),
            )),
        }
    }

    /// Texture value at continuous coordinates, always inside [0.07, 0.93].
    fn value(self, x: f64, y: f64, width: usize) -> f64 {
        match self {
            Texture::WavesA => waves(0.0, x, y),
            Texture::WavesB => waves(1.0, x, y),
            Texture::Mirror => {
                // |x - center| makes every term an even function of the
                // centered coordinate, which is what guarantees the bit-exact
                // horizontal symmetry.
                let a = (x - 0.5 * (width - 1) as f64).abs();
                0.5 + 0.18 * (0.051 * a + 0.033 * y).sin()
                    + 0.12 * (0.027 * a - 0.043 * y + 1.3).cos()
                    + 0.08 * (0.105 * a + 0.088 * y - 0.6).sin()
                    + 0.05 * (0.7 + 0.06 * y).sin()
            }
        }
    }
}

/// Shared sinusoid mixture; `s` selects the family variant.
fn waves(s: f64, x: f64, y: f64) -> f64 {
    0.5 + 0.18 * ((0.049 + 0.004 * s) * x + 0.031 * y + s).sin()
        + 0.12 * (0.024 * x - 0.041 * y + 2.3 * s).cos()
        + 0.08 * ((0.11 + 0.01 * s) * x + 0.09 * y - 1.1 * s).sin()
        + 0.05 * (0.23 * x - 0.19 * y + 0.7 * s).cos()
}

/// A texture plus its horizontal velocity in pixels per latent frame step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub texture: Texture,
    pub velocity: f64,
}

impl SceneSpec {
    pub fn new(texture: Texture, velocity: f64) -> Result<SceneSpec> {
        if !velocity.is_finite() {
            return Err(Error::invalid("scene velocity", format!("{velocity} is not finite")));
        }
        Ok(SceneSpec { texture, velocity })
    }

    /// Parses `scene:<texture>:<velocity>`, e.g. `scene:waves-a:2` or
    /// `scene:mirror:-3.5`.
    pub fn parse(descriptor: &str) -> Result<SceneSpec> {
        let rest = descriptor.strip_prefix("scene:").ok_or_else(|| {
            Error::invalid(
                "scene descriptor",
                format!("{descriptor:?} does not start with scene:"),
            )
        })?;
        let (name, vel) = rest.split_once(':').ok_or_else(|| {
            Error::invalid(
                "scene descriptor",
                format!("{descriptor:?} is missing a velocity; expected scene:<texture>:<velocity>"),
            )
        })?;
        let texture = Texture::from_name(name)?;
        let velocity: f64 = vel.parse().map_err(|_| {
            Error::invalid("scene velocity", format!("{vel:?} is not a number"))
        })?;
        SceneSpec::new(texture, velocity)
    }

    pub fn descriptor(&self) -> String {
        format!("scene:{}:{}", self.texture.name(), self.velocity)
    }

    /// True whenever a path string is a scene descriptor rather than a file
    /// system path.
    pub fn is_descriptor(path: &str) -> bool {
        path.starts_with("scene:")
    }

    /// Renders one sharp frame per latent instant; frame t samples the
    /// texture displaced by `velocity * t` pixels.
    pub fn render_sequence(&self, timing: &TimingConfig) -> Result<LatentSequence> {
        timing.validate()?;
        let (h, w) = (timing.image_height, timing.image_width);
        let frames: Vec<Image> = (0..timing.n_latent)
            .map(|t| {
                let shift = self.velocity * t as f64;
                Image::from_fn(h, w, 1, |y, x, _| {
                    self.texture.value(x as f64 - shift, y as f64, w)
                })
            })
            .collect();
        LatentSequence::new(frames, timing.clone())
    }

    /// Ground-truth base flow u: displacement accumulated across the whole
    /// latent span, in pixels.
    pub fn base_flow_u(&self, n_latent: usize) -> f64 {
        self.velocity * (n_latent - 1) as f64
    }
}

/// Geometry the bundled synthetic experiments run at.
pub fn suite_timing() -> TimingConfig {
    TimingConfig::synthetic(128, 128, 9)
}

/// The fixed 16-case direction suite: both wave textures at velocities
/// +-{1,2,3,4} px/frame.
pub fn suite_cases() -> Vec<SceneSpec> {
    let mut cases = Vec::with_capacity(16);
    for texture in [Texture::WavesA, Texture::WavesB] {
        for mag in 1..=4 {
            for sign in [1.0, -1.0] {
                cases.push(SceneSpec { texture, velocity: sign * mag as f64 });
            }
        }
    }
    cases
}

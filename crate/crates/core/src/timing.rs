//! Camera timing model for the paired global-shutter / rolling-shutter rig.
//!
//! All durations are integer microseconds. A rolling-shutter readout exposes
//! row `k` over `[k * row_delay, k * row_delay + row_exposure)`, and the
//! continuous exposure interval is discretized into `n_latent` uniformly
//! spaced instants shared by both views.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Static description of one capture: sensor geometry, per-row timing, and
/// frame cadence. Field values are validated by [`TimingConfig::validate`],
/// which every loader calls; direct construction is allowed for tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingConfig {
    /// Sensor rows (H).
    pub image_height: usize,
    /// Sensor columns.
    pub image_width: usize,
    /// Number of latent instants (N) spanning the exposure.
    pub n_latent: usize,
    /// Exposure time of a single row, microseconds.
    pub row_exposure_us: u64,
    /// Readout offset between consecutive rows, microseconds. Zero for a
    /// global shutter.
    pub row_delay_us: u64,
    /// Total exposure of the frame, microseconds.
    pub frame_exposure_us: u64,
    /// Idle time between frames, microseconds.
    pub deadtime_us: u64,
    /// Capture rate, frames per second.
    pub frame_rate_hz: f64,
}

/// Pairing of one sensor row with the latent instant that owns it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowAssignment {
    pub row: usize,
    pub latent: usize,
}

impl TimingConfig {
    /// Checks the internal consistency of the configuration:
    /// geometry bounds, the row-timing identity
    /// `row_exposure + row_delay * (H - 1) = frame_exposure` (within one
    /// `row_delay`), and that the frame period covers exposure plus deadtime.
    pub fn validate(&self) -> Result<()> {
        if self.image_height < 2 {
            return Err(Error::invalid(
                "timing config",
                format!("image_height must be >= 2, got {}", self.image_height),
            ));
        }
        if self.image_width < 1 {
            return Err(Error::invalid("timing config", "image_width must be >= 1"));
        }
        if self.n_latent < 2 {
            return Err(Error::invalid(
                "timing config",
                format!("n_latent must be >= 2, got {}", self.n_latent),
            ));
        }
        let rolled = self.row_exposure_us + self.row_delay_us * (self.image_height as u64 - 1);
        if rolled.abs_diff(self.frame_exposure_us) > self.row_delay_us {
            return Err(Error::invalid(
                "timing config",
                format!(
                    "row_exposure + row_delay*(H-1) = {} inconsistent with frame_exposure = {}",
                    rolled, self.frame_exposure_us
                ),
            ));
        }
        if !(self.frame_rate_hz.is_finite() && self.frame_rate_hz > 0.0) {
            return Err(Error::invalid(
                "timing config",
                format!("frame_rate_hz must be positive, got {}", self.frame_rate_hz),
            ));
        }
        let period_us = 1e6 / self.frame_rate_hz;
        let busy_us = (self.frame_exposure_us + self.deadtime_us) as f64;
        if period_us < busy_us {
            return Err(Error::invalid(
                "timing config",
                format!("frame period {period_us} us shorter than exposure + deadtime {busy_us} us"),
            ));
        }
        Ok(())
    }

    /// Compact timing for procedurally generated scenes. Keeps the RealBR
    /// per-row constants and rescales the frame exposure to the row count.
    pub fn synthetic(h: usize, w: usize, n: usize) -> TimingConfig {
        let cfg = TimingConfig {
            image_height: h,
            image_width: w,
            n_latent: n,
            row_exposure_us: 2_000,
            row_delay_us: 20,
            frame_exposure_us: 2_000 + 20 * (h as u64 - 1),
            deadtime_us: 0,
            frame_rate_hz: 20.0,
        };
        cfg.validate().expect("synthetic timing must satisfy its own invariants");
        cfg
    }

    /// Latent instant owning row `k`: nearest of the `n_latent` uniform
    /// instants to the row's readout phase, with exact midpoints resolved
    /// toward the later instant.
    pub fn row_to_latent(&self, k: usize) -> Result<usize> {
        if k >= self.image_height {
            return Err(Error::OutOfBounds {
                what: "row",
                index: k,
                len: self.image_height,
            });
        }
        Ok(latent_for_row(self.image_height, self.n_latent, k))
    }

    /// Exposure interval of row `k` as `(start_us, end_us)` relative to the
    /// frame start.
    pub fn exposure_window(&self, k: usize) -> Result<(u64, u64)> {
        if k >= self.image_height {
            return Err(Error::OutOfBounds {
                what: "row",
                index: k,
                len: self.image_height,
            });
        }
        let start = k as u64 * self.row_delay_us;
        Ok((start, start + self.row_exposure_us))
    }

    /// Ownership of every row, in row order.
    pub fn row_assignments(&self) -> Vec<RowAssignment> {
        (0..self.image_height)
            .map(|k| RowAssignment {
                row: k,
                latent: self.row_to_latent(k).expect("row index in range by construction"),
            })
            .collect()
    }

    /// Row readout phase as a fraction of the exposure: `latent / (N - 1)`.
    pub fn row_time(&self, k: usize) -> Result<f64> {
        Ok(self.row_to_latent(k)? as f64 / (self.n_latent as f64 - 1.0))
    }
}

/// Row ownership for an `h`-row frame discretized into `n` instants, without
/// a full config. Same rounding contract as [`TimingConfig::row_to_latent`];
/// `k` must be in range and `h`, `n` at least 2.
pub fn latent_for_row(h: usize, n: usize, k: usize) -> usize {
    debug_assert!(h >= 2 && n >= 2 && k < h);
    let num = 2 * (k as u64) * (n as u64 - 1) + (h as u64 - 1);
    let den = 2 * (h as u64 - 1);
    (num / den) as usize
}

/// Timing of the RealBR rolling-shutter camera: 800x800 at 20 fps, 2 ms row
/// exposure, 20 us row delay, 18 ms frame exposure, 32 ms deadtime, with 9
/// latent instants inside the exposure.
pub fn default_realbr_timing() -> TimingConfig {
    let cfg = TimingConfig {
        image_height: 800,
        image_width: 800,
        n_latent: 9,
        row_exposure_us: 2_000,
        row_delay_us: 20,
        frame_exposure_us: 18_000,
        deadtime_us: 32_000,
        frame_rate_hz: 20.0,
    };
    cfg.validate().expect("reference timing must satisfy its own invariants");
    cfg
}

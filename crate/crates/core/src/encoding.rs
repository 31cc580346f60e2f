//! Temporal positional encodings over sensor rows.
//!
//! A rolling-shutter frame reads row `k` at phase `k` of the readout; a
//! latent instant `t` sits at the constant row phase `(H-1)/(N-1) * t`.
//! The relative encoding is their difference and crosses zero exactly on the
//! rows owned by instant `t`.

use crate::error::{Error, Result};
use crate::image::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodingKind {
    /// Row phase of the rolling-shutter view: value `k` on row `k`.
    RsAbsolute,
    /// Row phase of latent instant `t`: constant `(H-1)/(N-1) * t`.
    LatentAbsolute,
    /// `RsAbsolute - LatentAbsolute` for one instant.
    Relative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodingMap {
    pub kind: EncodingKind,
    pub values: Grid,
}

impl EncodingMap {
    /// Same encoding rescaled by `1 / (H - 1)`, the form the solver
    /// conditions on. The unscaled map is the canonical one.
    pub fn normalized(&self) -> Grid {
        let scale = 1.0 / (self.values.height() as f64 - 1.0);
        self.values.map(|v| v * scale)
    }
}

fn check_geometry(h: usize, w: usize) -> Result<()> {
    if h < 2 || w < 1 {
        return Err(Error::invalid(
            "encoding geometry",
            format!("need at least 2x1 rows, got {h}x{w}"),
        ));
    }
    Ok(())
}

fn latent_phase(h: usize, n: usize, t: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::invalid("encoding", format!("n_latent must be >= 2, got {n}")));
    }
    if t >= n {
        return Err(Error::OutOfBounds { what: "latent instant", index: t, len: n });
    }
    Ok((h as f64 - 1.0) / (n as f64 - 1.0) * t as f64)
}

/// Absolute row phase of the rolling-shutter view.
pub fn encode_rs(h: usize, w: usize) -> Result<EncodingMap> {
    check_geometry(h, w)?;
    Ok(EncodingMap {
        kind: EncodingKind::RsAbsolute,
        values: Grid::from_fn(h, w, |y, _| y as f64),
    })
}

/// Absolute row phase of latent instant `t`, constant over the frame.
pub fn encode_latent(h: usize, w: usize, n: usize, t: usize) -> Result<EncodingMap> {
    check_geometry(h, w)?;
    let phase = latent_phase(h, n, t)?;
    Ok(EncodingMap {
        kind: EncodingKind::LatentAbsolute,
        values: Grid::filled(h, w, phase),
    })
}

/// Row phase of the rolling-shutter view relative to latent instant `t`.
pub fn encode_relative(h: usize, w: usize, n: usize, t: usize) -> Result<EncodingMap> {
    check_geometry(h, w)?;
    let phase = latent_phase(h, n, t)?;
    Ok(EncodingMap {
        kind: EncodingKind::Relative,
        values: Grid::from_fn(h, w, |y, _| y as f64 - phase),
    })
}

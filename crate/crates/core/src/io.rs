//! On-disk formats: 16-bit PNG images, frame-sequence directories, raw flow
//! planes, JSON configs, and CSV reports.
//!
//! Images are stored as 16-bit PNG (grayscale or RGB by channel count) with
//! values quantized by rounding to the 65535-step lattice; reading divides
//! back, so any image already on the lattice round-trips bit-exactly. Flow
//! fields use a little-endian binary format with an 8-byte magic. All text
//! outputs are byte-stable: floats print in Rust's shortest round-trip form.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result, TraceEntry};
use crate::flowwarp::FlowField;
use crate::formation::{LatentSequence, ObservationPair};
use crate::image::{Grid, Image};
use crate::timing::TimingConfig;

/// Magic prefix of the flow binary format.
pub const FLOW_MAGIC: &[u8; 8] = b"XSFLOW01";

const TIMING_FILE: &str = "timing.json";

fn to_u16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// Projects every sample onto the 16-bit storage lattice; the fixed point of
/// a PNG write/read round trip.
pub fn quantize16(img: &Image) -> Image {
    img.map(|v| to_u16(v) as f64 / 65535.0)
}

/// Writes a 16-bit PNG, grayscale for 1-channel images and RGB for 3-channel.
pub fn write_png16(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    let (h, w, c) = img.shape();
    let result = match c {
        1 => {
            let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
                ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
                    Luma([to_u16(img.at(y as usize, x as usize, 0))])
                });
            buf.save(path)
        }
        _ => {
            let buf: ImageBuffer<Rgb<u16>, Vec<u16>> =
                ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
                    let p = |ch| to_u16(img.at(y as usize, x as usize, ch));
                    Rgb([p(0), p(1), p(2)])
                });
            buf.save(path)
        }
    };
    result.map_err(|e| Error::image(path, e))
}

/// Reads an 8- or 16-bit PNG, grayscale or RGB, into unit-range samples.
pub fn read_png(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let dynimg = image::open(path).map_err(|e| Error::image(path, e))?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let img = match dynimg {
        DynamicImage::ImageLuma8(buf) => {
            Image::from_fn(h, w, 1, |y, x, _| buf.get_pixel(x as u32, y as u32)[0] as f64 / 255.0)
        }
        DynamicImage::ImageLuma16(buf) => {
            Image::from_fn(h, w, 1, |y, x, _| buf.get_pixel(x as u32, y as u32)[0] as f64 / 65535.0)
        }
        DynamicImage::ImageRgb8(buf) => Image::from_fn(h, w, 3, |y, x, ch| {
            buf.get_pixel(x as u32, y as u32)[ch] as f64 / 255.0
        }),
        DynamicImage::ImageRgb16(buf) => Image::from_fn(h, w, 3, |y, x, ch| {
            buf.get_pixel(x as u32, y as u32)[ch] as f64 / 65535.0
        }),
        other => {
            return Err(Error::malformed(
                path,
                format!("unsupported pixel format {:?}; expected 8/16-bit grayscale or RGB", other.color()),
            ))
        }
    };
    Ok(img)
}

/// Serializes a value as pretty JSON with a trailing newline.
pub fn save_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::config(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::config(path, e))
}

fn frame_path(dir: &Path, t: usize) -> PathBuf {
    dir.join(format!("frame_{t:03}.png"))
}

/// Writes one PNG per latent frame plus the timing config.
pub fn write_sequence(dir: impl AsRef<Path>, seq: &LatentSequence) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (t, frame) in seq.frames().iter().enumerate() {
        write_png16(frame_path(dir, t), frame)?;
    }
    save_json(dir.join(TIMING_FILE), seq.timing())
}

/// Reads a sequence directory written by [`write_sequence`].
pub fn read_sequence(dir: impl AsRef<Path>) -> Result<LatentSequence> {
    let dir = dir.as_ref();
    let timing: TimingConfig = load_json(dir.join(TIMING_FILE))?;
    let mut frames = Vec::with_capacity(timing.n_latent);
    for t in 0..timing.n_latent {
        let path = frame_path(dir, t);
        if !path.exists() {
            return Err(Error::malformed(
                dir,
                format!("timing names {} frames but frame_{t:03}.png is missing", timing.n_latent),
            ));
        }
        frames.push(read_png(path)?);
    }
    LatentSequence::new(frames, timing)
}

/// Writes the blur view, rolling-shutter view, and timing of a pair.
pub fn write_pair(dir: impl AsRef<Path>, pair: &ObservationPair) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_png16(dir.join("blur.png"), &pair.blur)?;
    write_png16(dir.join("rs.png"), &pair.rs)?;
    save_json(dir.join(TIMING_FILE), &pair.timing)
}

pub fn read_pair(dir: impl AsRef<Path>) -> Result<ObservationPair> {
    let dir = dir.as_ref();
    let timing: TimingConfig = load_json(dir.join(TIMING_FILE))?;
    let blur = read_png(dir.join("blur.png"))?;
    let rs = read_png(dir.join("rs.png"))?;
    ObservationPair::new(blur, rs, timing)
}

/// Flow binary: magic, u32-le height and width, then the u plane and the v
/// plane as f32-le in row-major order.
pub fn write_flow(path: impl AsRef<Path>, flow: &FlowField) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = flow.shape();
    let mut bytes = Vec::with_capacity(16 + 8 * h * w);
    bytes.extend_from_slice(FLOW_MAGIC);
    bytes.extend_from_slice(&(h as u32).to_le_bytes());
    bytes.extend_from_slice(&(w as u32).to_le_bytes());
    for plane in [&flow.u, &flow.v] {
        for &v in plane.data() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_flow(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != FLOW_MAGIC {
        return Err(Error::malformed(path, "missing flow magic"));
    }
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let expected = 16 + 8 * h * w;
    if h == 0 || w == 0 || bytes.len() != expected {
        return Err(Error::malformed(
            path,
            format!("expected {expected} bytes for a {h}x{w} flow, found {}", bytes.len()),
        ));
    }
    let mut planes = [Grid::zeros(h, w), Grid::zeros(h, w)];
    let mut off = 16;
    for plane in planes.iter_mut() {
        for v in plane.data_mut() {
            *v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64;
            off += 4;
        }
    }
    let [u, v] = planes;
    FlowField::new(u, v)
}

/// Energy trace as `iteration,level,energy` rows.
pub fn write_energy_csv(path: impl AsRef<Path>, trace: &[TraceEntry]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from("iteration,level,energy\n");
    for (iter, level, energy) in trace {
        text.push_str(&format!("{iter},{level},{energy}\n"));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_energy_csv(path: impl AsRef<Path>) -> Result<Vec<TraceEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let mut cols = line.split(',');
        let parse_err = || Error::malformed(path, format!("bad trace row at line {}", lineno + 1));
        let iter = cols.next().and_then(|s| s.parse().ok()).ok_or_else(parse_err)?;
        let level = cols.next().and_then(|s| s.parse().ok()).ok_or_else(parse_err)?;
        let energy = cols.next().and_then(|s| s.parse().ok()).ok_or_else(parse_err)?;
        out.push((iter, level, energy));
    }
    Ok(out)
}

/// Per-frame fidelity row; the lpips column is reserved and written empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameMetrics {
    pub frame: usize,
    pub psnr: f64,
    pub ssim: f64,
}

pub fn write_metrics_csv(path: impl AsRef<Path>, rows: &[FrameMetrics]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::from("frame,psnr,ssim,lpips\n");
    for r in rows {
        text.push_str(&format!("{},{},{},\n", r.frame, r.psnr, r.ssim));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

//! Netpbm images: binary PPM (P6) for inputs, binary PGM (P5) for grayscale
//! inputs and 16-bit density maps.

use std::fs;
use std::path::Path;

use fastsal_core::metrics::DensityMap;
use fastsal_core::Tensor;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PnmHeader {
    /// 3 for P6, 1 for P5.
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub maxval: u32,
}

/// Parses the header and returns it with the payload offset.
fn parse_header(bytes: &[u8]) -> std::result::Result<(PnmHeader, usize), String> {
    let channels = match bytes.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => return Err("not a binary PPM/PGM file (expected P6 or P5)".into()),
    };
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for f in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err("header ends early".into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("malformed header field at byte {start}"))?;
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("missing whitespace after maxval".into());
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(format!("bad dimensions {width}x{height} or maxval {maxval}"));
    }
    Ok((
        PnmHeader {
            channels,
            width: width as usize,
            height: height as usize,
            maxval,
        },
        pos + 1,
    ))
}

/// Samples in raster order scaled to `[0, 1]`.
pub fn decode(bytes: &[u8]) -> std::result::Result<(PnmHeader, Vec<f64>), String> {
    let (h, start) = parse_header(bytes)?;
    let wide = h.maxval > 255;
    let count = h.channels * h.width * h.height;
    let need = count * if wide { 2 } else { 1 };
    let raster = &bytes[start..];
    if raster.len() < need {
        return Err(format!("truncated payload: {} of {need} bytes", raster.len()));
    }
    let max = h.maxval as f64;
    let values = if wide {
        raster[..need]
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / max)
            .collect()
    } else {
        raster[..need].iter().map(|&b| b as f64 / max).collect()
    };
    Ok((h, values))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Interleaved samples to a `[3,H,W]` tensor; gray is replicated.
fn to_planar(h: &PnmHeader, values: &[f64]) -> Tensor<f32> {
    let plane = h.width * h.height;
    Tensor::from_fn(&[3, h.height, h.width], |i| {
        let (c, p) = (i / plane, i % plane);
        let v = if h.channels == 3 { values[p * 3 + c] } else { values[p] };
        v as f32
    })
}

pub fn decode_image(bytes: &[u8]) -> std::result::Result<Tensor<f32>, String> {
    let (h, values) = decode(bytes)?;
    Ok(to_planar(&h, &values))
}

/// Loads a P6 (or grayscale P5) image as `[3,H,W]` in `[0,1]`.
pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    decode_image(&read(path)?).map_err(|d| Error::format(path, d))
}

/// 8-bit P6 encoding of a `[3,H,W]` image; values are clamped to `[0,1]`.
pub fn encode_ppm(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let (c, h, w) = match *image.shape() {
        [c, h, w] => (c, h, w),
        ref s => return Err(Error::Usage(format!("expected a [3,H,W] image, got {s:?}"))),
    };
    if c != 3 {
        return Err(Error::Usage(format!("expected 3 channels, got {c}")));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    for p in 0..plane {
        for ch in 0..3 {
            let v = image.data()[ch * plane + p].clamp(0.0, 1.0);
            out.push((v * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub fn save_image(path: &Path, image: &Tensor<f32>) -> Result<()> {
    write(path, &encode_ppm(image)?)
}

/// 16-bit P5 encoding with the map maximum at 65535.
pub fn encode_density(map: &DensityMap) -> Vec<u8> {
    let (h, w) = map.size();
    let top = map.values().iter().cloned().fold(0.0f64, f64::max);
    let mut out = format!("P5\n{w} {h}\n65535\n").into_bytes();
    for &v in map.values() {
        let q = if top > 0.0 { (v / top * 65535.0).round() as u16 } else { 0 };
        out.extend_from_slice(&q.to_be_bytes());
    }
    out
}

pub fn save_density(path: &Path, map: &DensityMap) -> Result<()> {
    write(path, &encode_density(map))
}

/// Loads a grayscale map and renormalizes it to a density.
pub fn load_density(path: &Path) -> Result<DensityMap> {
    let (h, values) = decode(&read(path)?).map_err(|d| Error::format(path, d))?;
    if h.channels != 1 {
        return Err(Error::format(path, "density maps must be single-channel PGM (P5)"));
    }
    DensityMap::new(h.height, h.width, values).map_err(|e| Error::format(path, e.to_string()))
}

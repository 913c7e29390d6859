//! 16-bit single-channel frame files: binary PGM (`P5`, maxval 65535,
//! big-endian samples) and 16-bit grayscale PNG.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use privis_core::{DepthFrame, DepthRange, Provenance};
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

/// How the 16 bits of a stored sample map to depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    /// Millimeters, 0 = no return.
    Millimeters,
    /// Normalized depth scaled to `0..=65535`.
    Unit16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub samples: Vec<u16>,
}

fn is_png(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

pub fn encode_pgm(img: &RawImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", img.width, img.height).into_bytes();
    out.reserve(img.samples.len() * 2);
    for v in &img.samples {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

fn pgm_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| &bytes[start..*pos])
}

pub fn decode_pgm(path: &Path, bytes: &[u8]) -> Result<RawImage> {
    let mut pos = 0;
    let mut field = |name: &str| {
        pgm_token(bytes, &mut pos).ok_or_else(|| Error::format(path, format!("truncated PGM header ({name})")))
    };
    if field("magic")? != b"P5" {
        return Err(Error::format(path, "not a binary PGM (expected P5)"));
    }
    let mut num = |name: &str| -> Result<usize> {
        let tok = field(name)?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(path, format!("bad PGM {name}")))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if maxval != 65535 {
        return Err(Error::format(path, format!("PGM maxval {maxval}, expected 65535")));
    }
    // exactly one whitespace byte separates the header from the raster
    let data = &bytes[pos + 1..];
    if width == 0 || height == 0 || data.len() != width * height * 2 {
        return Err(Error::format(
            path,
            format!("{width}x{height} PGM needs {} raster bytes, found {}", width * height * 2, data.len()),
        ));
    }
    let samples = data.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
    Ok(RawImage {
        width,
        height,
        samples,
    })
}

pub fn encode_png(path: &Path, img: &RawImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(BufWriter::new(&mut out), img.width as u32, img.height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut w = enc.write_header().map_err(|e| Error::format(path, e.to_string()))?;
        let mut raster = Vec::with_capacity(img.samples.len() * 2);
        for v in &img.samples {
            raster.extend_from_slice(&v.to_be_bytes());
        }
        w.write_image_data(&raster).map_err(|e| Error::format(path, e.to_string()))?;
    }
    Ok(out)
}

pub fn decode_png(path: &Path, bytes: &[u8]) -> Result<RawImage> {
    let dec = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = dec.read_info().map_err(|e| Error::format(path, e.to_string()))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(Error::format(path, "expected 16-bit grayscale PNG"));
    }
    let (width, height) = (info.width as usize, info.height as usize);
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(width * height * 2)];
    let frame = reader.next_frame(&mut buf).map_err(|e| Error::format(path, e.to_string()))?;
    let samples = buf[..frame.buffer_size()]
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    Ok(RawImage {
        width,
        height,
        samples,
    })
}

pub fn read_image(path: &Path) -> Result<RawImage> {
    let bytes = fs::read(path).at(path)?;
    if is_png(path) {
        decode_png(path, &bytes)
    } else {
        decode_pgm(path, &bytes)
    }
}

/// Width and height from the file header only.
pub fn read_dims(path: &Path) -> Result<(usize, usize)> {
    let img = read_image(path)?;
    Ok((img.width, img.height))
}

pub fn write_image(path: &Path, img: &RawImage) -> Result<()> {
    let bytes = if is_png(path) {
        encode_png(path, img)?
    } else {
        encode_pgm(img)
    };
    fs::write(path, bytes).at(path)
}

/// Stored samples for a frame: raw frames keep their millimeters,
/// normalized frames are quantized to `Unit16`.
pub fn frame_samples(frame: &DepthFrame) -> (Encoding, Vec<u16>) {
    match (frame.as_raw(), frame.as_normalized()) {
        (Some(raw), _) => (Encoding::Millimeters, raw.to_vec()),
        (None, Some(v)) => (
            Encoding::Unit16,
            v.iter().map(|&x| (x as f64 * 65535.0).round() as u16).collect(),
        ),
        (None, None) => unreachable!("frame holds either raw or normalized data"),
    }
}

pub fn save_frame(path: &Path, frame: &DepthFrame) -> Result<Encoding> {
    let (enc, samples) = frame_samples(frame);
    write_image(
        path,
        &RawImage {
            width: frame.width(),
            height: frame.height(),
            samples,
        },
    )?;
    Ok(enc)
}

pub fn load_frame(path: &Path, encoding: Encoding, provenance: Provenance) -> Result<DepthFrame> {
    let img = read_image(path)?;
    let frame = match encoding {
        Encoding::Millimeters => {
            DepthFrame::raw(img.width, img.height, img.samples, DepthRange::SENSOR, provenance)?
        }
        Encoding::Unit16 => DepthFrame::normalized(
            img.width,
            img.height,
            img.samples.iter().map(|&v| (v as f64 / 65535.0) as f32).collect(),
            provenance,
        )?,
    };
    Ok(frame)
}

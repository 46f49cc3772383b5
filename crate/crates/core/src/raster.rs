//! PNG and PGM encoders for maps. Text metadata goes into PNG `tEXt` chunks
//! and PGM header comments.

use crate::error::{Error, Result};

pub enum PngPixels<'a> {
    Gray8(&'a [u8]),
    Rgb8(&'a [u8]),
    /// Palette indices plus an RGB palette (3 bytes per entry).
    Indexed(&'a [u8], &'a [u8]),
}

pub fn encode_png(width: usize, height: usize, pixels: PngPixels<'_>, text: &[(&str, &str)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
    enc.set_depth(png::BitDepth::Eight);
    let (data, channels) = match pixels {
        PngPixels::Gray8(d) => {
            enc.set_color(png::ColorType::Grayscale);
            (d, 1)
        }
        PngPixels::Rgb8(d) => {
            enc.set_color(png::ColorType::Rgb);
            (d, 3)
        }
        PngPixels::Indexed(d, palette) => {
            enc.set_color(png::ColorType::Indexed);
            enc.set_palette(palette.to_vec());
            (d, 1)
        }
    };
    if data.len() != width * height * channels {
        return Err(Error::data(format!(
            "{} bytes for a {width}x{height} image with {channels} channels",
            data.len()
        )));
    }
    let png_err = |e: png::EncodingError| Error::data(format!("png encoding failed: {e}"));
    for (k, v) in text {
        enc.add_text_chunk(k.to_string(), v.to_string()).map_err(png_err)?;
    }
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(data).map_err(png_err)?;
    writer.finish().map_err(png_err)?;
    Ok(out)
}

fn pgm_header(width: usize, height: usize, maxval: u32, text: &[(&str, &str)]) -> Vec<u8> {
    let mut h = String::from("P5\n");
    for (k, v) in text {
        h.push_str(&format!("# {k}: {v}\n"));
    }
    h.push_str(&format!("{width} {height}\n{maxval}\n"));
    h.into_bytes()
}

pub fn encode_pgm8(width: usize, height: usize, data: &[u8], text: &[(&str, &str)]) -> Vec<u8> {
    let mut out = pgm_header(width, height, 255, text);
    out.extend_from_slice(data);
    out
}

/// 16-bit samples are written big-endian.
pub fn encode_pgm16(width: usize, height: usize, data: &[u16], text: &[(&str, &str)]) -> Vec<u8> {
    let mut out = pgm_header(width, height, 65535, text);
    for v in data {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

/// Parses a binary PGM with maxval 65535 as written by [`encode_pgm16`].
/// Returns `(width, height, samples, comments)`; comments of the form
/// `key: value` are split, others dropped.
pub fn decode_pgm16(bytes: &[u8]) -> Result<(usize, usize, Vec<u16>, Vec<(String, String)>)> {
    let bad = |m: &str| Error::data(format!("not a 16-bit PGM: {m}"));
    let mut pos = 0;
    let mut comments = Vec::new();
    let mut tokens = Vec::new();
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos >= bytes.len() {
            return Err(bad("truncated header"));
        }
        if bytes[pos] == b'#' {
            let end = bytes[pos..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |e| pos + e);
            let line = String::from_utf8_lossy(&bytes[pos + 1..end]).trim().to_string();
            if let Some((k, v)) = line.split_once(": ") {
                comments.push((k.to_string(), v.to_string()));
            }
            pos = end;
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).to_string());
    }
    if tokens[0] != "P5" {
        return Err(bad("missing P5 magic"));
    }
    let num = |t: &str| t.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, maxval) = (num(&tokens[1])?, num(&tokens[2])?, num(&tokens[3])?);
    if maxval != 65535 {
        return Err(bad("maxval is not 65535"));
    }
    // Exactly one whitespace byte separates the header from the samples.
    let data = &bytes[(pos + 1).min(bytes.len())..];
    if data.len() != w * h * 2 {
        return Err(bad("sample count does not match dimensions"));
    }
    let samples = data.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
    Ok((w, h, samples, comments))
}

/// Score in `[0, 1]` to a 16-bit sample.
pub fn quantize16(s: f64) -> u16 {
    (s.clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// Score in `[0, 1]` to an 8-bit sample.
pub fn quantize8(s: f64) -> u8 {
    (s.clamp(0.0, 1.0) * 255.0).round() as u8
}

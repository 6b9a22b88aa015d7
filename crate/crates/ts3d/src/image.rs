//! Binary portable pixmaps (P6), graymaps (P5) and float maps (Pf).

use std::path::Path;

use ts3d_core::Tensor;

use crate::error::{read, write, Error, Result};

/// Reads whitespace-separated header tokens, skipping `#` comments, and
/// returns them with the offset of the byte after the single separator.
fn header(bytes: &[u8], count: usize, path: &Path) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::Format(format!("{}: truncated header", path.display())));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    Ok((tokens, i + 1))
}

fn dims(tokens: &[String], path: &Path) -> Result<(usize, usize)> {
    let parse = |t: &String| t.parse::<usize>().map_err(|_| Error::Format(format!("{}: bad dimension `{t}`", path.display())));
    Ok((parse(&tokens[1])?, parse(&tokens[2])?))
}

/// `[H, W, 3]` image in `[0, 1]`.
pub fn read_ppm(path: &Path) -> Result<Tensor<f32>> {
    let bytes = read(path)?;
    let (tokens, start) = header(&bytes, 4, path)?;
    if tokens[0] != "P6" || tokens[3] != "255" {
        return Err(Error::Format(format!("{}: expected an 8-bit P6 pixmap", path.display())));
    }
    let (w, h) = dims(&tokens, path)?;
    let body = bytes.get(start..start + w * h * 3).ok_or_else(|| Error::Format(format!("{}: truncated pixel data", path.display())))?;
    Ok(Tensor::new(&[h, w, 3], body.iter().map(|&b| f32::from(b) / 255.0).collect())?)
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_ppm(img: &Tensor<f32>) -> Result<Vec<u8>> {
    let s = img.shape();
    if s.len() != 3 || s[2] != 3 {
        return Err(Error::Format(format!("pixmap needs [H, W, 3], got {s:?}")));
    }
    let mut out = format!("P6\n{} {}\n255\n", s[1], s[0]).into_bytes();
    out.extend(img.data().iter().map(|&v| quantize(v)));
    Ok(out)
}

pub fn write_ppm(path: &Path, img: &Tensor<f32>) -> Result<()> {
    write(path, encode_ppm(img)?)
}

/// Writes a row-major `w×h` graymap of values in `[0, 1]`.
pub fn write_pgm(path: &Path, w: usize, h: usize, values: &[f32]) -> Result<()> {
    if values.len() != w * h {
        return Err(Error::Format(format!("graymap of {w}x{h} needs {} values, got {}", w * h, values.len())));
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| quantize(v)));
    write(path, out)
}

/// Reads an 8-bit graymap as `(width, height, values in [0, 1])`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let bytes = read(path)?;
    let (tokens, start) = header(&bytes, 4, path)?;
    if tokens[0] != "P5" || tokens[3] != "255" {
        return Err(Error::Format(format!("{}: expected an 8-bit P5 graymap", path.display())));
    }
    let (w, h) = dims(&tokens, path)?;
    let body = bytes.get(start..start + w * h).ok_or_else(|| Error::Format(format!("{}: truncated pixel data", path.display())))?;
    Ok((w, h, body.iter().map(|&b| f32::from(b) / 255.0).collect()))
}

/// Little-endian single-channel float map, rows stored bottom-up as the
/// format requires. Returns `(width, height, row-major top-down values)`.
pub fn read_pfm(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let bytes = read(path)?;
    let (tokens, start) = header(&bytes, 4, path)?;
    if tokens[0] != "Pf" {
        return Err(Error::Format(format!("{}: expected a greyscale Pf float map", path.display())));
    }
    let (w, h) = dims(&tokens, path)?;
    let scale: f64 = tokens[3].parse().map_err(|_| Error::Format(format!("{}: bad scale", path.display())))?;
    if scale >= 0.0 {
        return Err(Error::Format(format!("{}: only little-endian float maps are supported", path.display())));
    }
    let body = bytes.get(start..start + 4 * w * h).ok_or_else(|| Error::Format(format!("{}: truncated float data", path.display())))?;
    let mut out = vec![0.0f32; w * h];
    for (k, c) in body.chunks_exact(4).enumerate() {
        let (row, col) = (k / w, k % w);
        out[(h - 1 - row) * w + col] = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
    }
    Ok((w, h, out))
}

pub fn write_pfm(path: &Path, w: usize, h: usize, values: &[f32]) -> Result<()> {
    if values.len() != w * h {
        return Err(Error::Format(format!("float map of {w}x{h} needs {} values, got {}", w * h, values.len())));
    }
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    for row in (0..h).rev() {
        for v in &values[row * w..(row + 1) * w] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    write(path, out)
}

//! Binary PPM (P6) and PGM (P5) frames, 8-bit only.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn parse_header(bytes: &[u8]) -> Result<(usize, usize, usize, usize)> {
    let channels = match bytes.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => return Err(Error::format("PPM/PGM", "expected P6 or P5 magic")),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        // whitespace and comments before each number
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::format("PPM/PGM", "truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap_or("");
        *field = text.parse().map_err(|_| {
            let what = ["width", "height", "maxval"][i];
            Error::format("PPM/PGM", format!("invalid {what} in header"))
        })?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::format("PPM/PGM", "missing whitespace after maxval")),
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(Error::format("PPM/PGM", format!("maxval must be 255, got {maxval}")));
    }
    if w == 0 || h == 0 {
        return Err(Error::format("PPM/PGM", "zero-sized image"));
    }
    Ok((channels, h, w, pos))
}

/// Decodes to `(C, H, W)` with `C = 3` for P6 and `C = 1` for P5.
pub fn decode_image(bytes: &[u8]) -> Result<Tensor<f32>> {
    let (c, h, w, start) = parse_header(bytes)?;
    let n = c * h * w;
    let payload = &bytes[start..];
    if payload.len() < n {
        return Err(Error::format(
            "PPM/PGM",
            format!("truncated payload: {} of {n} bytes", payload.len()),
        ));
    }
    let mut data = vec![0f32; n];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v = payload[(y * w + x) * c + ch];
                data[(ch * h + y) * w + x] = v as f32 / 255.0;
            }
        }
    }
    Tensor::new([c, h, w], data)
}

/// `v ∈ [0, 1]` to a byte: clamp, scale by 255, round half away from zero.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes a 3-channel tensor as P6 or a 1-channel tensor as P5.
pub fn encode_image(t: &Tensor<f32>) -> Result<Vec<u8>> {
    let (c, h, w) = t.chw()?;
    let magic = match c {
        3 => "P6",
        1 => "P5",
        _ => {
            return Err(Error::invalid(
                "write_frame",
                format!("need 1 or 3 channels, got {c}"),
            ))
        }
    };
    if !t.is_finite() {
        return Err(Error::NonFinite { op: "write_frame".into() });
    }
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.reserve(c * h * w);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out.push(quantize(t[[ch, y, x]]));
            }
        }
    }
    Ok(out)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(Error::at_path(path))?;
    decode_image(&bytes).map_err(|e| match e {
        Error::Format { what, msg } => Error::Format {
            what,
            msg: format!("{}: {msg}", path.display()),
        },
        e => e,
    })
}

/// Reads a colour frame as `(3, H, W)` in `[0, 1]`.
pub fn read_frame(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let t = read_image(path)?;
    if t.shape()[0] != 3 {
        return Err(Error::format(
            "PPM",
            format!("{}: expected a colour (P6) frame", path.display()),
        ));
    }
    Ok(t)
}

pub fn write_frame(t: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    super::write_atomic(path, &encode_image(t)?)
}

/// `.ppm` files of a directory in name order.
pub fn list_frames(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut paths = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(Error::at_path(dir))? {
        let p = entry.map_err(Error::at_path(dir))?.path();
        if p.extension().is_some_and(|e| e == "ppm") {
            paths.push(p);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Error::invalid("read frames", format!("no .ppm files in {}", dir.display())));
    }
    Ok(paths)
}

pub fn read_sequence(dir: impl AsRef<Path>) -> Result<(Vec<PathBuf>, Vec<Tensor<f32>>)> {
    let paths = list_frames(dir)?;
    let frames = paths.iter().map(read_frame).collect::<Result<Vec<_>>>()?;
    Ok((paths, frames))
}

pub fn frame_name(i: usize) -> String {
    format!("frame_{i:04}.ppm")
}

//! Raster file formats.
//!
//! * `TFR1`: the native lossless format. A text header line
//!   `TFR1 <width> <height>\n` followed by `width * height` little-endian
//!   `f32` values, row-major, top to bottom.
//! * Binary PGM (`P5`) with 8- or 16-bit samples, read with linear scaling to
//!   `[0, 1]` (16-bit samples are big-endian as the format requires).

use std::fs;
use std::path::Path;

use super::ImageGrid;
use crate::error::{Error, Result};

const TFR_MAGIC: &str = "TFR1";

pub fn encode_tfr(img: &ImageGrid) -> Vec<u8> {
    let mut out = format!("{TFR_MAGIC} {} {}\n", img.width(), img.height()).into_bytes();
    out.reserve(img.data().len() * 4);
    for &v in img.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Splits off the first line (without the newline) from `bytes`.
fn split_header(bytes: &[u8]) -> Result<(&str, &[u8])> {
    let nl = bytes
        .iter()
        .take(256)
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::MalformedHeader("missing header line".into()))?;
    let line = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| Error::MalformedHeader("header is not valid text".into()))?;
    Ok((line, &bytes[nl + 1..]))
}

pub fn decode_tfr(bytes: &[u8]) -> Result<ImageGrid> {
    let (line, payload) = split_header(bytes)?;
    let mut parts = line.split_ascii_whitespace();
    if parts.next() != Some(TFR_MAGIC) {
        return Err(Error::UnsupportedFormat(format!("expected {TFR_MAGIC} header, got {line:?}")));
    }
    let mut dim = || -> Result<usize> {
        parts
            .next()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| Error::MalformedHeader(format!("bad dimensions in {line:?}")))
    };
    let (w, h) = (dim()?, dim()?);
    if parts.next().is_some() {
        return Err(Error::MalformedHeader(format!("trailing tokens in {line:?}")));
    }
    let n = w
        .checked_mul(h)
        .ok_or_else(|| Error::MalformedHeader("dimensions overflow".into()))?;
    let expected = n * 4;
    if payload.len() < expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    let data: Vec<f64> = payload[..expected]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    ImageGrid::new(w, h, data).map_err(|e| Error::UnsupportedFormat(format!("invalid raster values: {e}")))
}

/// Reads the next whitespace-delimited PNM header token, skipping comments.
fn pnm_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
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
    if start == *pos {
        return Err(Error::MalformedHeader("unexpected end of PGM header".into()));
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| Error::MalformedHeader("non-text PGM header".into()))
}

pub fn decode_pgm(bytes: &[u8]) -> Result<ImageGrid> {
    let mut pos = 0;
    let magic = pnm_token(bytes, &mut pos)?;
    if magic != "P5" {
        return Err(Error::UnsupportedFormat(format!("PNM variant {magic:?} (only P5 is supported)")));
    }
    let mut num = |what: &str| -> Result<usize> {
        pnm_token(bytes, &mut pos)?
            .parse::<usize>()
            .map_err(|_| Error::MalformedHeader(format!("bad PGM {what}")))
    };
    let w = num("width")?;
    let h = num("height")?;
    let maxval = num("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::MalformedHeader(format!("PGM maxval {maxval} out of range")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let payload = bytes.get(pos..).unwrap_or(&[]);
    let bytes_per = if maxval < 256 { 1 } else { 2 };
    let expected = w * h * bytes_per;
    if payload.len() < expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    let scale = maxval as f64;
    let data: Vec<f64> = if bytes_per == 1 {
        payload[..expected].iter().map(|&b| b as f64 / scale).collect()
    } else {
        payload[..expected]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / scale)
            .collect()
    };
    ImageGrid::new(w, h, data)
}

/// 8-bit PGM of values clamped to `[0, 1]`.
pub fn encode_pgm8(img: &ImageGrid) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

/// 16-bit PGM of values clamped to `[0, 1]`.
pub fn encode_pgm16(img: &ImageGrid) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", img.width(), img.height()).into_bytes();
    for &v in img.data() {
        let q = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    out
}

pub fn decode_image(bytes: &[u8]) -> Result<ImageGrid> {
    if bytes.starts_with(TFR_MAGIC.as_bytes()) {
        decode_tfr(bytes)
    } else if bytes.starts_with(b"P") {
        decode_pgm(bytes)
    } else {
        Err(Error::UnsupportedFormat("unrecognised raster signature".into()))
    }
}

/// Reads a TFR1 or binary PGM raster, detected from the file signature.
pub fn read_image(path: impl AsRef<Path>) -> Result<ImageGrid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes)
}

/// Writes a raster; `.pgm` paths get 16-bit PGM, everything else TFR1.
pub fn write_image(img: &ImageGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => encode_pgm16(img),
        _ => encode_tfr(img),
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tfr_round_trip_is_bit_identical_for_f32_values() {
        let img = ImageGrid::from_fn(7, 5, |x, y| ((x * 31 + y * 17) as f32 * 0.137 - 2.0) as f64);
        let back = decode_tfr(&encode_tfr(&img)).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn tfr_header_layout() {
        let img = ImageGrid::filled(3, 2, 1.0);
        let bytes = encode_tfr(&img);
        assert!(bytes.starts_with(b"TFR1 3 2\n"));
        assert_eq!(bytes.len(), 9 + 6 * 4);
        assert_eq!(&bytes[9..13], &1.0f32.to_le_bytes());
    }

    #[test]
    fn pgm16_scaling() {
        let mut bytes = b"P5\n2 1\n65535\n".to_vec();
        bytes.extend_from_slice(&65535u16.to_be_bytes());
        bytes.extend_from_slice(&32768u16.to_be_bytes());
        let img = decode_pgm(&bytes).unwrap();
        assert_eq!(img.get(0, 0), 1.0);
        assert_eq!(img.get(1, 0), 32768.0 / 65535.0);
    }

    #[test]
    fn pgm8_with_comment() {
        let mut bytes = b"P5\n# comment\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 255, 51, 102]);
        let img = decode_pgm(&bytes).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0, 0.2, 0.4]);
    }

    #[test]
    fn distinct_errors() {
        assert!(matches!(decode_tfr(b"TFR1 2\n"), Err(Error::MalformedHeader(_))));
        assert!(matches!(decode_tfr(b"TFR1 2 2\n\0\0\0\0"), Err(Error::TruncatedPayload { .. })));
        assert!(matches!(decode_image(b"GIF89a"), Err(Error::UnsupportedFormat(_))));
        assert!(matches!(decode_pgm(b"P2\n1 1\n255\n0"), Err(Error::UnsupportedFormat(_))));
        assert!(matches!(decode_pgm(b"P5\n4 4\n255\n\0"), Err(Error::TruncatedPayload { .. })));
        assert!(matches!(decode_tfr(b"TFR1 x y\n"), Err(Error::MalformedHeader(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageGrid::from_fn(4, 3, |x, y| (x + y) as f64 * 0.25);
        let p = dir.path().join("a.tfr");
        write_image(&img, &p).unwrap();
        assert_eq!(read_image(&p).unwrap(), img);
        let q = dir.path().join("a.pgm");
        write_image(&img.map(|v| v / 2.0), &q).unwrap();
        let back = read_image(&q).unwrap();
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b / 2.0).abs() < 1.0 / 65535.0);
        }
        assert!(matches!(read_image(dir.path().join("missing.tfr")), Err(Error::Io { .. })));
    }
}

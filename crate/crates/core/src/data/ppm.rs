//! Binary PPM (P6, maxval 255) frames.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::video::Frame;

pub fn encode(frame: &Frame) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    out.extend(
        frame
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

pub fn decode(bytes: &[u8]) -> Result<Frame> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // skip whitespace and comments
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Data("truncated PPM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P6" {
        return Err(Error::Data(format!(
            "unsupported PPM magic `{}`",
            fields[0]
        )));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Data(format!("bad PPM header field `{s}`")))
    };
    let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval != 255 {
        return Err(Error::Data(format!(
            "PPM maxval {maxval} unsupported (need 255)"
        )));
    }
    // exactly one whitespace byte separates header and raster
    let raster = &bytes[pos + 1..];
    let need = width * height * 3;
    if raster.len() < need {
        return Err(Error::Data(format!(
            "PPM raster has {} bytes, need {need}",
            raster.len()
        )));
    }
    Frame::new(
        height,
        width,
        raster[..need].iter().map(|&b| b as f64 / 255.0).collect(),
    )
}

pub fn write(path: &Path, frame: &Frame) -> Result<()> {
    fs::write(path, encode(frame))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Frame> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_exact_on_byte_values() {
        let data: Vec<f64> = (0..2 * 3 * 3)
            .map(|i| (i * 13 % 256) as f64 / 255.0)
            .collect();
        let f = Frame::new(2, 3, data).unwrap();
        let bytes = encode(&f);
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(decode(&bytes).unwrap(), f);
    }

    #[test]
    fn header_comments_and_errors() {
        let mut bytes = b"P6 # comment\n1 1\n255\n".to_vec();
        bytes.extend([255, 0, 0]);
        assert_eq!(decode(&bytes).unwrap().pixel(0, 0), [1.0, 0.0, 0.0]);
        assert!(decode(b"P3\n1 1\n255\n").is_err());
        assert!(decode(b"P6\n2 2\n255\n\x00").is_err());
    }
}

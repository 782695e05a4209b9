//! Binary PPM (P6) reader/writer — the bit-exactly specified native image
//! format, so the core needs no decoding dependencies. Other formats come
//! in through the pluggable decoder hook.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major, 3 bytes per pixel.
    pub pixels: Vec<u8>,
}

fn read_token(bytes: &[u8], pos: &mut usize) -> Result<Vec<u8>> {
    // skip whitespace and '#' comments
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
        return Err(Error::Format("ppm: truncated header".into()));
    }
    Ok(bytes[start..*pos].to_vec())
}

fn parse_usize(tok: &[u8], what: &str) -> Result<usize> {
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format(format!("ppm: bad {what}")))
}

pub fn decode(bytes: &[u8]) -> Result<RgbImage> {
    let mut pos = 0usize;
    let magic = read_token(bytes, &mut pos)?;
    if magic != b"P6" {
        return Err(Error::Format("ppm: not a P6 file".into()));
    }
    let width = parse_usize(&read_token(bytes, &mut pos)?, "width")?;
    let height = parse_usize(&read_token(bytes, &mut pos)?, "height")?;
    let maxval = parse_usize(&read_token(bytes, &mut pos)?, "maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("ppm: unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte after maxval
    pos += 1;
    let need = width * height * 3;
    if bytes.len() < pos + need {
        return Err(Error::Format(format!(
            "ppm: truncated pixel data, need {need} bytes, have {}",
            bytes.len().saturating_sub(pos)
        )));
    }
    let mut pixels = bytes[pos..pos + need].to_vec();
    if maxval != 255 {
        for p in pixels.iter_mut() {
            *p = ((*p as usize * 255) / maxval) as u8;
        }
    }
    Ok(RgbImage {
        width,
        height,
        pixels,
    })
}

pub fn read_file(path: &Path) -> Result<RgbImage> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

pub fn write_file(path: &Path, img: &RgbImage) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    write!(f, "P6\n{} {}\n255\n", img.width, img.height)?;
    f.write_all(&img.pixels)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_byte_exact() {
        let img = RgbImage {
            width: 3,
            height: 2,
            pixels: (0..18).collect(),
        };
        let dir = std::env::temp_dir().join("hsict_ppm_test");
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("t.ppm");
        write_file(&p, &img).unwrap();
        let back = read_file(&p).unwrap();
        assert_eq!(back.width, 3);
        assert_eq!(back.height, 2);
        assert_eq!(back.pixels, img.pixels);
    }

    #[test]
    fn comments_and_whitespace_are_skipped() {
        let mut data = b"P6 # a comment\n# another\n 2\t1\n255\n".to_vec();
        data.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        let img = decode(&data).unwrap();
        assert_eq!((img.width, img.height), (2, 1));
        assert_eq!(img.pixels, vec![1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn truncation_is_a_format_error() {
        let data = b"P6\n2 2\n255\n\x00\x01".to_vec();
        assert!(matches!(decode(&data), Err(Error::Format(_))));
    }
}

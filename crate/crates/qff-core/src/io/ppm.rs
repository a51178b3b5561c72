//! Binary PPM (P6) reading and writing, dependency-free.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::RgbImage;
use crate::error::{QffError, Result};

/// Pull the next whitespace-separated token, skipping `#` comments.
fn next_token(data: &[u8], pos: &mut usize) -> Result<Vec<u8>> {
    loop {
        while *pos < data.len() && data[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < data.len() && data[*pos] == b'#' {
            while *pos < data.len() && data[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < data.len() && !data[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(QffError::Format("unexpected end of ppm header".into()));
    }
    Ok(data[start..*pos].to_vec())
}

fn parse_dim(token: &[u8], what: &str) -> Result<usize> {
    std::str::from_utf8(token)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| QffError::Format(format!("invalid {what} in ppm header")))
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    let data = fs::read(path).map_err(|e| QffError::io_at(path, e))?;
    if data.len() < 2 || &data[..2] != b"P6" {
        return Err(QffError::Format(format!(
            "{} is not a binary ppm (P6) file",
            path.display()
        )));
    }
    let mut pos = 2;
    let width = parse_dim(&next_token(&data, &mut pos)?, "width")?;
    let height = parse_dim(&next_token(&data, &mut pos)?, "height")?;
    let maxval = parse_dim(&next_token(&data, &mut pos)?, "maxval")?;
    if maxval != 255 {
        return Err(QffError::Format(format!(
            "only maxval 255 ppm files are supported, got {maxval}"
        )));
    }
    // Exactly one whitespace byte separates the header from the payload.
    pos += 1;
    let need = width * height * 3;
    let pixels = data
        .get(pos..pos + need)
        .ok_or_else(|| QffError::Corruption("ppm pixel payload truncated".into()))?;
    RgbImage::from_rgb8(width, height, pixels)
}

pub fn write_ppm(path: &Path, image: &RgbImage) -> Result<()> {
    let mut out = fs::File::create(path).map_err(|e| QffError::io_at(path, e))?;
    write!(out, "P6\n{} {}\n255\n", image.width, image.height)?;
    out.write_all(&image.to_rgb8())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_byte_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        let mut img = RgbImage::filled(5, 3, [0.0, 0.5, 1.0]);
        img.set_pixel(2, 1, [0.1, 0.9, 0.3]);
        write_ppm(&path, &img).unwrap();
        let back = read_ppm(&path).unwrap();
        assert_eq!(back.width, 5);
        assert_eq!(back.height, 3);
        assert_eq!(back.to_rgb8(), img.to_rgb8());

        // Writing the re-read image reproduces the file exactly.
        let path2 = dir.path().join("img2.ppm");
        write_ppm(&path2, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn comments_in_header_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ppm");
        std::fs::write(&path, b"P6\n# a comment\n2 1\n255\n\x00\x7f\xff\x01\x02\x03").unwrap();
        let img = read_ppm(&path).unwrap();
        assert_eq!(img.width, 2);
        assert_eq!(img.to_rgb8(), vec![0, 127, 255, 1, 2, 3]);
    }

    #[test]
    fn truncated_payload_is_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ppm");
        std::fs::write(&path, b"P6\n4 4\n255\n\x00\x01").unwrap();
        assert!(matches!(read_ppm(&path), Err(QffError::Corruption(_))));
    }

    #[test]
    fn wrong_magic_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ppm");
        std::fs::write(&path, b"P5\n1 1\n255\n\x00").unwrap();
        assert!(matches!(read_ppm(&path), Err(QffError::Format(_))));
    }
}

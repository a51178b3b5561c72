//! PNG reading/writing via the `image` crate (feature `png`).

use std::path::Path;

use super::RgbImage;
use crate::error::{QffError, Result};

pub fn read_png(path: &Path) -> Result<RgbImage> {
    let img = image::open(path)
        .map_err(|e| QffError::Format(format!("cannot decode {}: {e}", path.display())))?
        .to_rgb8();
    RgbImage::from_rgb8(img.width() as usize, img.height() as usize, img.as_raw())
}

pub fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, img.to_rgb8())
        .expect("buffer sized by to_rgb8");
    buf.save(path)
        .map_err(|e| QffError::Format(format!("cannot encode {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let mut img = RgbImage::filled(4, 2, [0.2, 0.4, 0.6]);
        img.set_pixel(0, 0, [1.0, 0.0, 0.5]);
        write_png(&path, &img).unwrap();
        let back = read_png(&path).unwrap();
        assert_eq!(back.to_rgb8(), img.to_rgb8());
    }
}

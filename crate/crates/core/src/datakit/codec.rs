//! 8-bit PNG codecs: RGB images and single-channel label maps.

use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::mask::LabelMask;

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other),
    })
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    Ok(open(path)?.to_rgb8())
}

pub fn write_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    img.save(path).map_err(|e| Error::format(path, e))
}

/// Reads a single-channel 8-bit label map; other pixel formats are rejected.
pub fn read_label(path: &Path) -> Result<LabelMask> {
    match open(path)? {
        DynamicImage::ImageLuma8(g) => {
            let (w, h) = g.dimensions();
            LabelMask::new(h as usize, w as usize, g.into_raw())
        }
        other => Err(Error::format(
            path,
            format!("label must be 8-bit single channel, found {:?}", other.color()),
        )),
    }
}

pub fn write_label(path: &Path, label: &LabelMask) -> Result<()> {
    let img = GrayImage::from_raw(label.width() as u32, label.height() as u32, label.as_slice().to_vec())
        .expect("mask dimensions");
    img.save(path).map_err(|e| Error::format(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.png");
        let data: Vec<u8> = (0..12 * 7).map(|i| if i % 5 == 0 { 255 } else { (i % 19) as u8 }).collect();
        let label = LabelMask::new(7, 12, data).unwrap();
        write_label(&path, &label).unwrap();
        assert_eq!(read_label(&path).unwrap(), label);
    }

    #[test]
    fn missing_file_names_path() {
        let err = read_label(Path::new("/nonexistent/x.png")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.png"));
    }

    #[test]
    fn rgb_label_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.png");
        write_rgb(&path, &RgbImage::new(2, 2)).unwrap();
        assert!(matches!(read_label(&path), Err(Error::Format { .. })));
    }
}

//! Lossless raster file I/O.
//!
//! Images are stored as 8- or 16-bit PNG (grayscale or RGB) and rescaled to
//! `[0, 1]` on load. Label maps are single-channel 8-bit PNG whose pixel
//! value is the category index.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};
use thiserror::Error;

use crate::raster::{Image, LabelMap, RasterError};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Decode {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: unsupported pixel format {format} (expected 8/16-bit gray or RGB)")]
    UnsupportedFormat { path: String, format: String },
    #[error("{path}: category index {value} at pixel ({row}, {col}) is out of range (num_categories = {num_categories})")]
    LabelOutOfRange {
        path: String,
        value: u8,
        row: usize,
        col: usize,
        num_categories: usize,
    },
    #[error(transparent)]
    Raster(#[from] RasterError),
}

fn path_str(path: &Path) -> String {
    path.display().to_string()
}

/// Writes an image as 8-bit PNG. One channel becomes grayscale, three become RGB.
pub fn write_image_png(path: &Path, img: &Image) -> Result<(), IoError> {
    let (h, w) = (img.height() as u32, img.width() as u32);
    let quantize = |v: f64| (v * 255.0).round() as u8;
    let dynimg = match img.channels() {
        1 => {
            let raw: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
            DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, raw).expect("sized raw buffer"))
        }
        3 => {
            let raw: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
            DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, raw).expect("sized raw buffer"))
        }
        c => {
            return Err(IoError::UnsupportedFormat {
                path: path_str(path),
                format: format!("{c} channels"),
            })
        }
    };
    dynimg
        .save_with_format(path, ImageFormat::Png)
        .map_err(|source| IoError::Decode { path: path_str(path), source })
}

/// Reads an 8- or 16-bit grayscale or RGB PNG, rescaling values to `[0, 1]`.
pub fn read_image_png(path: &Path) -> Result<Image, IoError> {
    let dynimg = image::open(path).map_err(|source| IoError::Decode { path: path_str(path), source })?;
    let (img, channels): (Vec<f64>, usize) = match &dynimg {
        DynamicImage::ImageLuma8(buf) => (buf.as_raw().iter().map(|&v| v as f64 / 255.0).collect(), 1),
        DynamicImage::ImageLuma16(buf) => (buf.as_raw().iter().map(|&v| v as f64 / 65535.0).collect(), 1),
        DynamicImage::ImageRgb8(buf) => (buf.as_raw().iter().map(|&v| v as f64 / 255.0).collect(), 3),
        DynamicImage::ImageRgb16(buf) => (buf.as_raw().iter().map(|&v| v as f64 / 65535.0).collect(), 3),
        other => {
            return Err(IoError::UnsupportedFormat {
                path: path_str(path),
                format: format!("{:?}", other.color()),
            })
        }
    };
    Ok(Image::new(dynimg.height() as usize, dynimg.width() as usize, channels, img)?)
}

/// Writes a label map as single-channel 8-bit PNG with raw category indices.
pub fn write_label_png(path: &Path, labels: &LabelMap) -> Result<(), IoError> {
    let buf = GrayImage::from_raw(labels.width() as u32, labels.height() as u32, labels.data().to_vec())
        .expect("sized raw buffer");
    DynamicImage::ImageLuma8(buf)
        .save_with_format(path, ImageFormat::Png)
        .map_err(|source| IoError::Decode { path: path_str(path), source })
}

/// Reads a label map, rejecting any pixel whose value is `>= num_categories`.
pub fn read_label_png(path: &Path, num_categories: usize) -> Result<LabelMap, IoError> {
    let dynimg = image::open(path).map_err(|source| IoError::Decode { path: path_str(path), source })?;
    let buf = match dynimg {
        DynamicImage::ImageLuma8(buf) => buf,
        other => {
            return Err(IoError::UnsupportedFormat {
                path: path_str(path),
                format: format!("{:?}", other.color()),
            })
        }
    };
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let raw = buf.into_raw();
    if let Some((i, &value)) = raw.iter().enumerate().find(|(_, &v)| v as usize >= num_categories) {
        return Err(IoError::LabelOutOfRange {
            path: path_str(path),
            value,
            row: i / w,
            col: i % w,
            num_categories,
        });
    }
    Ok(LabelMap::new(h, w, num_categories, raw)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_round_trip_is_bit_exact_on_quantized_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        // Values already on the 1/255 grid survive a write/read cycle exactly.
        let data: Vec<f64> = (0..2 * 3 * 3).map(|i| ((i * 17) % 256) as f64 / 255.0).collect();
        let img = Image::new(2, 3, 3, data).unwrap();
        write_image_png(&path, &img).unwrap();
        let back = read_image_png(&path).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn label_round_trip_and_range_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lab.png");
        let labels = LabelMap::new(2, 2, 3, vec![0, 1, 2, 0]).unwrap();
        write_label_png(&path, &labels).unwrap();
        assert_eq!(read_label_png(&path, 3).unwrap(), labels);

        let err = read_label_png(&path, 2).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("category index 2"), "got: {msg}");
    }
}

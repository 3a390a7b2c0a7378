use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, ImageReader, Luma, Rgb};
use ndarray::Array3;

use super::{convert_colorspace, ColorSpace, Image, Range};
use crate::error::{Error, Result};

/// Reads an 8- or 16-bit gray or RGB PNG and rescales it into `range`.
pub fn read_png(path: impl AsRef<Path>, range: Range) -> Result<Image> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    if reader.format() != Some(ImageFormat::Png) {
        return Err(Error::Format(format!("{} is not a PNG", path.display())));
    }
    let decoded = reader
        .decode()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let (raw, channels, max, colorspace): (Vec<f64>, usize, f64, ColorSpace) = match decoded {
        DynamicImage::ImageLuma8(b) => (to_f64(b.into_raw()), 1, 255.0, ColorSpace::Gray),
        DynamicImage::ImageLuma16(b) => (to_f64(b.into_raw()), 1, 65535.0, ColorSpace::Gray),
        DynamicImage::ImageRgb8(b) => (to_f64(b.into_raw()), 3, 255.0, ColorSpace::Rgb),
        DynamicImage::ImageRgb16(b) => (to_f64(b.into_raw()), 3, 65535.0, ColorSpace::Rgb),
        other => {
            return Err(Error::Format(format!(
                "{}: unsupported pixel layout {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    let (lo, hi) = range.bounds();
    let scale = (hi - lo) / max;
    let data = Array3::from_shape_vec((h, w, channels), raw)
        .map_err(|e| Error::shape(e.to_string()))?
        .mapv(|v| lo + v * scale);
    Image::new(data, range, colorspace)
}

fn to_f64<T: Into<f64> + Copy>(v: Vec<T>) -> Vec<f64> {
    v.into_iter().map(Into::into).collect()
}

fn prepare(img: &Image) -> Result<Image> {
    match img.colorspace() {
        ColorSpace::YCbCr => convert_colorspace(img, ColorSpace::Rgb),
        _ => Ok(img.clone()),
    }
}

fn quantized(img: &Image, max: f64) -> Vec<f64> {
    let (lo, hi) = img.range().bounds();
    img.data()
        .iter()
        .map(|v| ((v - lo) / (hi - lo) * max).round().clamp(0.0, max))
        .collect()
}

/// Writes an 8-bit PNG. YCbCr images are converted to RGB first.
pub fn write_png(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    let img = prepare(img)?;
    let (h, w) = (img.height() as u32, img.width() as u32);
    let raw: Vec<u8> = quantized(&img, 255.0).into_iter().map(|v| v as u8).collect();
    let dynamic = match img.colorspace() {
        ColorSpace::Gray => DynamicImage::ImageLuma8(
            ImageBuffer::<Luma<u8>, _>::from_raw(w, h, raw).expect("buffer size"),
        ),
        _ => DynamicImage::ImageRgb8(
            ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, raw).expect("buffer size"),
        ),
    };
    save(path, &dynamic)
}

/// Writes a 16-bit PNG.
pub fn write_png16(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    let img = prepare(img)?;
    let (h, w) = (img.height() as u32, img.width() as u32);
    let raw: Vec<u16> = quantized(&img, 65535.0).into_iter().map(|v| v as u16).collect();
    let dynamic = match img.colorspace() {
        ColorSpace::Gray => DynamicImage::ImageLuma16(
            ImageBuffer::<Luma<u16>, _>::from_raw(w, h, raw).expect("buffer size"),
        ),
        _ => DynamicImage::ImageRgb16(
            ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, raw).expect("buffer size"),
        ),
    };
    save(path, &dynamic)
}

fn save(path: &Path, img: &DynamicImage) -> Result<()> {
    img.save_with_format(path, ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    })
}

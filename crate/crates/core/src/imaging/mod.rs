//! Pixel-domain primitives: the [`Image`] raster, color conversion, differential
//! operators, patch reshaping and PNG I/O.

mod color;
mod filters;
mod io;
mod patch;

pub use color::{convert_colorspace, luma};
pub use filters::{laplacian_magnitude, max_fuse, sobel_magnitude, sobel_xy};
pub use io::{read_png, write_png, write_png16};
pub use patch::{patchify, unpatchify, GridShape, PixelTokens};

use ndarray::{s, Array3};

use crate::error::{Error, Result};

/// Declared value domain of an [`Image`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Range {
    /// `[0, 1]`
    Unit,
    /// `[0, 255]`
    Byte,
    /// An explicit `[lo, hi]` domain, used for derived images such as gradient maps.
    Span { lo: f64, hi: f64 },
}

impl Range {
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            Range::Unit => (0.0, 1.0),
            Range::Byte => (0.0, 255.0),
            Range::Span { lo, hi } => (lo, hi),
        }
    }

    pub fn max(&self) -> f64 {
        self.bounds().1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorSpace {
    Gray,
    Rgb,
    /// Channel order is Y, Cb, Cr.
    YCbCr,
}

impl ColorSpace {
    pub fn channels(&self) -> usize {
        match self {
            ColorSpace::Gray => 1,
            ColorSpace::Rgb | ColorSpace::YCbCr => 3,
        }
    }
}

impl std::fmt::Display for ColorSpace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ColorSpace::Gray => "gray",
            ColorSpace::Rgb => "rgb",
            ColorSpace::YCbCr => "ycbcr",
        };
        f.write_str(s)
    }
}

/// An `H×W×C` raster (`C` is 1 or 3) whose values always lie inside its declared range.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    data: Array3<f64>,
    range: Range,
    colorspace: ColorSpace,
}

impl Image {
    /// Builds an image, clamping every value into `range`. NaN becomes the lower bound.
    pub fn new(mut data: Array3<f64>, range: Range, colorspace: ColorSpace) -> Result<Self> {
        let c = data.dim().2;
        if c != colorspace.channels() {
            return Err(Error::InvalidChannelCount {
                expected: colorspace.channels(),
                got: c,
            });
        }
        let (lo, hi) = range.bounds();
        data.mapv_inplace(|v| if v.is_nan() { lo } else { v.clamp(lo, hi) });
        Ok(Self {
            data,
            range,
            colorspace,
        })
    }

    /// Single-channel image from row-major values.
    pub fn gray(height: usize, width: usize, values: Vec<f64>, range: Range) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape(format!(
                "{} values cannot fill a {height}x{width} image",
                values.len()
            )));
        }
        let data = Array3::from_shape_vec((height, width, 1), values)
            .map_err(|e| Error::shape(e.to_string()))?;
        Self::new(data, range, ColorSpace::Gray)
    }

    pub fn filled(height: usize, width: usize, value: f64, range: Range) -> Self {
        Self::new(
            Array3::from_elem((height, width, 1), value),
            range,
            ColorSpace::Gray,
        )
        .expect("gray has one channel")
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    pub fn range(&self) -> Range {
        self.range
    }

    pub fn colorspace(&self) -> ColorSpace {
        self.colorspace
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    /// Pixel of a single-channel image.
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[[y, x, 0]]
    }

    /// Row-major copy of the values of channel `c`.
    pub fn plane(&self, c: usize) -> Vec<f64> {
        self.data.slice(s![.., .., c]).iter().copied().collect()
    }

    /// Row-major copy of a gray image's values.
    pub fn values(&self) -> Vec<f64> {
        self.data.iter().copied().collect()
    }

    pub fn require_gray(&self) -> Result<()> {
        if self.channels() != 1 {
            return Err(Error::InvalidChannelCount {
                expected: 1,
                got: self.channels(),
            });
        }
        Ok(())
    }

    /// Extracts channel `c` as a gray image in the same range.
    pub fn channel(&self, c: usize) -> Result<Image> {
        if c >= self.channels() {
            return Err(Error::InvalidChannelCount {
                expected: c + 1,
                got: self.channels(),
            });
        }
        let plane = self.data.slice(s![.., .., c..c + 1]).to_owned();
        Image::new(plane, self.range, ColorSpace::Gray)
    }

    /// Linearly rescales into another range.
    pub fn to_range(&self, target: Range) -> Image {
        if target == self.range {
            return self.clone();
        }
        let (lo, hi) = self.range.bounds();
        let (tlo, thi) = target.bounds();
        let scale = (thi - tlo) / (hi - lo);
        let data = self.data.mapv(|v| tlo + (v - lo) * scale);
        Image::new(data, target, self.colorspace).expect("channel count unchanged")
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        if top + height > self.height() || left + width > self.width() {
            return Err(Error::shape(format!(
                "crop {height}x{width}@({top},{left}) exceeds {}x{}",
                self.height(),
                self.width()
            )));
        }
        let data = self
            .data
            .slice(s![top..top + height, left..left + width, ..])
            .to_owned();
        Ok(Image {
            data,
            range: self.range,
            colorspace: self.colorspace,
        })
    }

    pub fn center_crop(&self, height: usize, width: usize) -> Result<Image> {
        if height > self.height() || width > self.width() {
            return Err(Error::shape(format!(
                "center crop {height}x{width} exceeds {}x{}",
                self.height(),
                self.width()
            )));
        }
        let top = (self.height() - height) / 2;
        let left = (self.width() - width) / 2;
        self.crop(top, left, height, width)
    }

    /// Center-crops to the largest size whose sides are multiples of `patch`.
    pub fn crop_to_multiple(&self, patch: usize) -> Result<Image> {
        let h = self.height() / patch * patch;
        let w = self.width() / patch * patch;
        if h == 0 || w == 0 {
            return Err(Error::shape(format!(
                "{}x{} image is smaller than patch {patch}",
                self.height(),
                self.width()
            )));
        }
        self.center_crop(h, w)
    }

    pub(crate) fn same_gray_shape(&self, other: &Image) -> Result<()> {
        self.require_gray()?;
        other.require_gray()?;
        if self.dims() != other.dims() {
            return Err(Error::shape(format!(
                "{}x{} vs {}x{}",
                self.height(),
                self.width(),
                other.height(),
                other.width()
            )));
        }
        Ok(())
    }
}

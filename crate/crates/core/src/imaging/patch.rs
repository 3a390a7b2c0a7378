use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::{ColorSpace, Image, Range};
use crate::error::{Error, Result};

/// Token grid layout: `rows·patch = H`, `cols·patch = W`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridShape {
    pub rows: usize,
    pub cols: usize,
    pub patch: usize,
}

impl GridShape {
    pub fn for_image(height: usize, width: usize, patch: usize) -> Result<Self> {
        if patch == 0 || height % patch != 0 || width % patch != 0 || height == 0 || width == 0 {
            return Err(Error::shape(format!(
                "{height}x{width} is not divisible by patch {patch}"
            )));
        }
        Ok(Self {
            rows: height / patch,
            cols: width / patch,
            patch,
        })
    }

    pub fn tokens(&self) -> usize {
        self.rows * self.cols
    }

    pub fn token_dim(&self) -> usize {
        self.patch * self.patch
    }

    pub fn height(&self) -> usize {
        self.rows * self.patch
    }

    pub fn width(&self) -> usize {
        self.cols * self.patch
    }
}

/// Raw pixel patches, one row per token in row-major grid order.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelTokens {
    pub values: Array2<f64>,
    pub grid: GridShape,
    pub range: Range,
}

pub fn patchify(img: &Image, patch: usize) -> Result<PixelTokens> {
    img.require_gray()?;
    let grid = GridShape::for_image(img.height(), img.width(), patch)?;
    let data = img.data();
    let values = Array2::from_shape_fn((grid.tokens(), grid.token_dim()), |(t, k)| {
        let (r, c) = (t / grid.cols, t % grid.cols);
        let (py, px) = (k / patch, k % patch);
        data[[r * patch + py, c * patch + px, 0]]
    });
    Ok(PixelTokens {
        values,
        grid,
        range: img.range(),
    })
}

pub fn unpatchify(tokens: &PixelTokens) -> Result<Image> {
    let grid = tokens.grid;
    let (n, d) = tokens.values.dim();
    if n != grid.tokens() || d != grid.token_dim() {
        return Err(Error::shape(format!(
            "{n}x{d} tokens do not fit grid {}x{} with patch {}",
            grid.rows, grid.cols, grid.patch
        )));
    }
    let p = grid.patch;
    let data = Array3::from_shape_fn((grid.height(), grid.width(), 1), |(y, x, _)| {
        tokens.values[[(y / p) * grid.cols + x / p, (y % p) * p + x % p]]
    });
    Image::new(data, tokens.range, ColorSpace::Gray)
}

//! RGB image payload shared by the renderer, feature extractor and IO.

use ndarray::Array3;

use crate::{Error, Result};

/// An RGB image with values in `[0, 1]`, stored `H x W x 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewImage {
    data: Array3<f32>,
}

impl ViewImage {
    pub fn new(data: Array3<f32>) -> Result<Self> {
        if data.dim().2 != 3 {
            return Err(Error::input(format!(
                "view image needs 3 channels, got {}",
                data.dim().2
            )));
        }
        if data.dim().0 == 0 || data.dim().1 == 0 {
            return Err(Error::input("view image must be non-empty"));
        }
        Ok(ViewImage { data })
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    /// BT.601 luma, used as the grayscale input of the feature bank.
    pub fn luminance(&self) -> ndarray::Array2<f32> {
        let (h, w, _) = self.data.dim();
        ndarray::Array2::from_shape_fn((h, w), |(y, x)| {
            0.299 * self.data[(y, x, 0)] + 0.587 * self.data[(y, x, 1)] + 0.114 * self.data[(y, x, 2)]
        })
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        [
            self.data[(y, x, 0)],
            self.data[(y, x, 1)],
            self.data[(y, x, 2)],
        ]
    }
}

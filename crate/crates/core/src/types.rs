//! Image containers shared across the pipeline.

use ndarray::{ArrayView2, ArrayViewMut2};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type C32 = Complex<f32>;

/// Segmentation labels.
pub mod label {
    pub const BACKGROUND: u8 = 0;
    pub const LV: u8 = 1;
    pub const MYOCARDIUM: u8 = 2;
    pub const RV: u8 = 3;
    pub const COUNT: usize = 4;

    pub const NAMES: [&str; COUNT] = ["background", "lv", "myocardium", "rv"];
}

/// Stack of 2D images over slices and frames on a fixed grid.
///
/// Storage is row-major `[slice][frame][row][col]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSeries<T> {
    pub height: usize,
    pub width: usize,
    pub n_frames: usize,
    pub n_slices: usize,
    /// mm
    pub pixel_size: f64,
    /// mm
    pub slice_thickness: f64,
    pub data: Vec<T>,
}

/// Per-frame label maps, values in [`label`].
pub type SegmentationMask = ImageSeries<u8>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub pixel_size: f64,
    pub slice_thickness: f64,
}

impl<T: Clone + Default> ImageSeries<T> {
    pub fn zeros(
        height: usize,
        width: usize,
        n_frames: usize,
        n_slices: usize,
        pixel_size: f64,
        slice_thickness: f64,
    ) -> Self {
        Self {
            height,
            width,
            n_frames,
            n_slices,
            pixel_size,
            slice_thickness,
            data: vec![T::default(); height * width * n_frames * n_slices],
        }
    }

    /// Builds a single-slice series from equally sized frames.
    pub fn from_frames(frames: Vec<ndarray::Array2<T>>, pixel_size: f64, slice_thickness: f64) -> Result<Self> {
        let (h, w) = frames.first().map(|f| f.dim()).unwrap_or((0, 0));
        let mut data = Vec::with_capacity(h * w * frames.len());
        for (i, f) in frames.iter().enumerate() {
            if f.dim() != (h, w) {
                return Err(Error::shape(
                    format!("frame {i}"),
                    format!("{h}x{w}"),
                    format!("{}x{}", f.dim().0, f.dim().1),
                ));
            }
            data.extend(f.iter().cloned());
        }
        Ok(Self {
            height: h,
            width: w,
            n_frames: frames.len(),
            n_slices: 1,
            pixel_size,
            slice_thickness,
            data,
        })
    }
}

impl<T> ImageSeries<T> {
    #[inline]
    pub fn frame_len(&self) -> usize {
        self.height * self.width
    }

    fn offset(&self, slice: usize, frame: usize) -> usize {
        assert!(slice < self.n_slices && frame < self.n_frames);
        (slice * self.n_frames + frame) * self.frame_len()
    }

    pub fn frame(&self, slice: usize, frame: usize) -> ArrayView2<'_, T> {
        let o = self.offset(slice, frame);
        ArrayView2::from_shape((self.height, self.width), &self.data[o..o + self.frame_len()]).expect("frame view")
    }

    pub fn frame_mut(&mut self, slice: usize, frame: usize) -> ArrayViewMut2<'_, T> {
        let o = self.offset(slice, frame);
        let len = self.frame_len();
        ArrayViewMut2::from_shape((self.height, self.width), &mut self.data[o..o + len]).expect("frame view")
    }

    pub fn geometry(&self) -> Geometry {
        Geometry {
            pixel_size: self.pixel_size,
            slice_thickness: self.slice_thickness,
        }
    }
}

//! Single-channel 2-D grids: input images, fused images and gradient images.

use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Extents of an image with `n = height * width` pixels.
///
/// Linear pixel indices are 1-based and row-major: `i = row * width + col + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
}

/// A pixel location, 0-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pixel {
    pub row: usize,
    pub col: usize,
}

impl Pixel {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

impl ImageShape {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub fn n(&self) -> usize {
        self.height * self.width
    }

    /// Converts a 1-based linear index into a pixel.
    pub fn pixel(&self, index: usize) -> Result<Pixel> {
        if index == 0 || index > self.n() {
            return Err(Error::InvalidPixel {
                index,
                n: self.n(),
            });
        }
        let k = index - 1;
        Ok(Pixel::new(k / self.width, k % self.width))
    }

    /// The 1-based linear index of `pixel`.
    pub fn index(&self, pixel: Pixel) -> Result<usize> {
        self.check(pixel)?;
        Ok(self.offset(pixel) + 1)
    }

    pub fn check(&self, pixel: Pixel) -> Result<()> {
        if pixel.row < self.height && pixel.col < self.width {
            Ok(())
        } else {
            Err(Error::InvalidPixel {
                index: pixel.row * self.width + pixel.col + 1,
                n: self.n(),
            })
        }
    }

    pub(crate) fn offset(&self, pixel: Pixel) -> usize {
        pixel.row * self.width + pixel.col
    }
}

impl fmt::Display for ImageShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

/// Which of the two fusion inputs a quantity refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Modality {
    /// First input (anatomical, MRI-like).
    First,
    /// Second input (functional, PET-like).
    Second,
}

impl Modality {
    pub const BOTH: [Modality; 2] = [Modality::First, Modality::Second];

    pub fn label(self) -> &'static str {
        match self {
            Modality::First => "x1",
            Modality::Second => "x2",
        }
    }
}

/// Row-major single-channel grid of finite values.
///
/// No range is implied: gradient images are signed. Inputs to fusion are
/// checked against `[0, 1]` with [`Image::check_unit_range`].
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    shape: ImageShape,
    data: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidConfig(format!(
                "image extents must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::ElementCount {
                shape: vec![height, width],
                expected: height * width,
                actual: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            shape: ImageShape::new(height, width),
            data,
        })
    }

    pub(crate) fn from_parts(shape: ImageShape, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.n(), data.len());
        Self { shape, data }
    }

    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self {
            shape: ImageShape::new(height, width),
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self {
            shape: ImageShape::new(height, width),
            data,
        }
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn at(&self, pixel: Pixel) -> T {
        self.data[self.shape.offset(pixel)]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn check_unit_range(&self, what: &'static str) -> Result<()> {
        for &v in &self.data {
            crate::error::check_range(what, v.to_f64_lossy(), 0.0, 1.0)?;
        }
        Ok(())
    }

    pub fn check_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape.height != other.shape.height {
            return Err(Error::Dimension {
                op,
                axis: "height",
                expected: self.shape.height,
                actual: other.shape.height,
            });
        }
        if self.shape.width != other.shape.width {
            return Err(Error::Dimension {
                op,
                axis: "width",
                expected: self.shape.width,
                actual: other.shape.width,
            });
        }
        Ok(())
    }

    /// `[1, 1, H, W]` tensor view of the image.
    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::from_parts(
            vec![1, 1, self.shape.height, self.shape.width],
            self.data.clone(),
        )
    }

    /// Reads batch element `b`, channel 0 of a `[B, C, H, W]` tensor.
    pub fn from_tensor(t: &Tensor<T>, b: usize) -> Result<Self> {
        let [nb, c, h, w] = t.dims4("image")?;
        if b >= nb {
            return Err(Error::Dimension {
                op: "image",
                axis: "batch",
                expected: b + 1,
                actual: nb,
            });
        }
        let plane = h * w;
        let start = b * c * plane;
        Ok(Self::from_parts(
            ImageShape::new(h, w),
            t.data()[start..start + plane].to_vec(),
        ))
    }

    pub fn min_max(&self) -> (T, T) {
        self.data.iter().fold(
            (T::infinity(), T::neg_infinity()),
            |(lo, hi), &v| (lo.min(v), hi.max(v)),
        )
    }

    /// Converts between scalar types.
    pub fn cast<U: Scalar>(&self) -> Image<U> {
        Image {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|&v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }
}

/// Stacks same-shaped images into a `[B, 1, H, W]` tensor.
pub fn stack<T: Scalar>(images: &[&Image<T>]) -> Result<Tensor<T>> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidConfig("cannot stack zero images".into()))?;
    let mut data = Vec::with_capacity(images.len() * first.shape.n());
    for img in images {
        first.check_same_shape(img, "stack")?;
        data.extend_from_slice(&img.data);
    }
    Ok(Tensor::from_parts(
        vec![images.len(), 1, first.height(), first.width()],
        data,
    ))
}

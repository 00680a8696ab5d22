//! Image files, datasets and synthetic image pairs.

mod io;
mod manifest;
mod synth;

use crate::error::Result;
use crate::image::Image;
use crate::scalar::Scalar;
pub use io::{encode_gray_png, encode_rgb_png, load_image, quantize, save_image, save_rgb_png};
pub use manifest::{load_manifest, write_manifest};
pub use synth::{synth_pairs, synth_pairs_annotated, AnnotatedPair, SyntheticSpec};

/// Two registered single-channel images in `[0, 1]`: `x1` plays the
/// anatomical (MRI) role and `x2` the functional (PET) role.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair<T> {
    pub id: String,
    pub x1: Image<T>,
    pub x2: Image<T>,
}

impl<T: Scalar> ImagePair<T> {
    pub fn new(id: impl Into<String>, x1: Image<T>, x2: Image<T>) -> Result<Self> {
        let pair = Self {
            id: id.into(),
            x1,
            x2,
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn validate(&self) -> Result<()> {
        self.x1.check_same_shape(&self.x2, "image pair")?;
        self.x1.check_unit_range("x1")?;
        self.x2.check_unit_range("x2")
    }
}

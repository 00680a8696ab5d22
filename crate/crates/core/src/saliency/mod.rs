//! Jacobian images, guidance images and their display transforms.

mod display;
mod scatter;

use std::sync::atomic::{AtomicBool, Ordering};

use crate::error::{Error, Result};
use crate::graph::Window;
use crate::image::{Image, ImageShape, Modality, Pixel};
use crate::models::{FusionModel, ModelKind, RetainedPass};
use crate::scalar::Scalar;
pub use display::{
    display_normalize, gamma_correct, guidance_rgb, joint_normalize, DisplayConfig, GuidanceRgb,
    GAMMA_MAX, GAMMA_MIN,
};
pub use scatter::{neighborhood, pearson, scatter_data, write_scatter_csv, ScatterData, SCATTER_HEADER};

/// Seed rows per batched backward sweep when computing guidance images.
pub const DEFAULT_BLOCK_SIZE: usize = 64;
/// Half-size of the highlighted square around the principle pixel.
pub const DEFAULT_NEIGHBORHOOD_RADIUS: usize = 10;

/// Signed derivatives of one fused pixel with respect to every pixel of
/// one input.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobianImage<T> {
    /// 1-based row-major index of the fused pixel.
    pub principle: usize,
    pub modality: Modality,
    pub values: Image<T>,
}

/// Signed image whose pixel `j` is `dy(j) / dx(j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceImage<T> {
    pub modality: Modality,
    pub values: Image<T>,
}

/// Both Jacobian images of fused pixel `index` (1-based) from a single
/// one-hot backward pass over the retained activations.
pub fn jacobian_pair<T: Scalar>(
    pass: &RetainedPass<T>,
    index: usize,
) -> Result<(JacobianImage<T>, JacobianImage<T>)> {
    pass.shape.pixel(index)?;
    let grads = pass.graph.backward_one_hot(pass.output, index - 1)?;
    let extract = |modality: Modality| -> Result<JacobianImage<T>> {
        let values = match grads.get(pass.input(modality)) {
            Some(t) => Image::from_tensor(&t, 0)?,
            None => Image::filled(pass.shape.height, pass.shape.width, T::zero()),
        };
        Ok(JacobianImage {
            principle: index,
            modality,
            values,
        })
    };
    Ok((extract(Modality::First)?, extract(Modality::Second)?))
}

/// Convenience wrapper running a fresh forward pass first.
pub fn jacobian_pair_for<T: Scalar>(
    model: &FusionModel<T>,
    x1: &Image<T>,
    x2: &Image<T>,
    index: usize,
) -> Result<(JacobianImage<T>, JacobianImage<T>)> {
    jacobian_pair(&model.retain(x1, x2)?, index)
}

/// Knobs for the batched guidance computation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GuidanceOptions {
    pub block_size: usize,
}

impl Default for GuidanceOptions {
    fn default() -> Self {
        Self {
            block_size: DEFAULT_BLOCK_SIZE,
        }
    }
}

/// Guidance images for both modalities, one backward pass per pixel,
/// issued in blocks of `block_size` seeds.
///
/// `progress(done, total)` is called after each block. Setting `cancel`
/// aborts between blocks with [`Error::Cancelled`].
pub fn guidance_pair<T: Scalar>(
    pass: &RetainedPass<T>,
    options: GuidanceOptions,
    mut progress: impl FnMut(usize, usize),
    cancel: Option<&AtomicBool>,
) -> Result<(GuidanceImage<T>, GuidanceImage<T>)> {
    if options.block_size == 0 {
        return Err(Error::InvalidConfig("guidance block size must be positive".into()));
    }
    let n = pass.shape.n();
    let mut g1 = vec![T::zero(); n];
    let mut g2 = vec![T::zero(); n];
    let seeds: Vec<usize> = (0..n).collect();
    let mut done = 0;
    for block in seeds.chunks(options.block_size) {
        if cancel.is_some_and(|c| c.load(Ordering::Relaxed)) {
            return Err(Error::Cancelled);
        }
        let grads = pass.graph.backward_one_hot_many(pass.output, block)?;
        for (&j, g) in block.iter().zip(&grads) {
            g1[j] = g.value_at(pass.x1, j);
            g2[j] = g.value_at(pass.x2, j);
        }
        done += block.len();
        progress(done, n);
    }
    let wrap = |modality, data| GuidanceImage {
        modality,
        values: Image::from_parts(pass.shape, data),
    };
    Ok((wrap(Modality::First, g1), wrap(Modality::Second, g2)))
}

/// Guidance image of a single modality.
pub fn guidance_image<T: Scalar>(
    pass: &RetainedPass<T>,
    modality: Modality,
) -> Result<GuidanceImage<T>> {
    let (a, b) = guidance_pair(pass, GuidanceOptions::default(), |_, _| {}, None)?;
    Ok(match modality {
        Modality::First => a,
        Modality::Second => b,
    })
}

/// Rectangle of input pixels that can influence fused pixel `pixel`
/// through `modality`, from the model's declared architecture. `None`
/// when the output does not depend on that input at all.
pub fn receptive_window(
    kind: ModelKind,
    shape: ImageShape,
    pixel: Pixel,
    modality: Modality,
) -> Result<Option<Window>> {
    shape.check(pixel)?;
    let radius = match kind.architecture() {
        None => Some(0),
        Some(arch) => arch.receptive_radius(modality),
    };
    Ok(radius.map(|r| Window::point(pixel.row, pixel.col).dilate(r, shape.height, shape.width)))
}

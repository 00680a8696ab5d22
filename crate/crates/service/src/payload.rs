use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use fuselens_core::data::quantize;
use fuselens_core::saliency::{gamma_correct, jacobian_pair, neighborhood, DEFAULT_NEIGHBORHOOD_RADIUS};
use fuselens_core::Image;
use serde::{Deserialize, Serialize};

use crate::state::Session;
use crate::ServiceError;

/// 8-bit grayscale image, base64 encoded, with the value range that was
/// mapped onto `0..=255`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ImagePayload {
    pub width: usize,
    pub height: usize,
    pub min: f64,
    pub max: f64,
    pub data: String,
}

impl ImagePayload {
    /// Encodes a display image already in `[0, 1]`.
    pub fn unit(image: &Image<f64>, min: f64, max: f64) -> Self {
        Self {
            width: image.width(),
            height: image.height(),
            min,
            max,
            data: STANDARD.encode(quantize(image)),
        }
    }

    pub fn bytes(&self) -> Result<Vec<u8>, base64::DecodeError> {
        STANDARD.decode(&self.data)
    }
}

/// Joint max-min of magnitudes over both images, then `gamma`.
pub fn display_pair(
    a: &Image<f64>,
    b: &Image<f64>,
    gamma: f64,
) -> Result<(ImagePayload, ImagePayload), ServiceError> {
    let (lo, hi) = a
        .data()
        .iter()
        .chain(b.data())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v.abs()), hi.max(v.abs())));
    let (na, nb) = fuselens_core::saliency::joint_normalize(a, b)?;
    let (ga, gb) = (gamma_correct(&na, gamma)?, gamma_correct(&nb, gamma)?);
    Ok((ImagePayload::unit(&ga, lo, hi), ImagePayload::unit(&gb, lo, hi)))
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
pub struct HoverRequest {
    /// 1-based row-major pixel index.
    pub pixel: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct HoverMessage {
    pub seq: u64,
    pub pixel: usize,
    /// 1-based, like `pixel`.
    pub row: usize,
    pub col: usize,
    pub gamma: f64,
    pub jacobian_x1: ImagePayload,
    pub jacobian_x2: ImagePayload,
    /// Signed `dy(i)/dx1(i)` and `dy(i)/dx2(i)`.
    pub gradient_x1: f64,
    pub gradient_x2: f64,
    pub highlight: Vec<usize>,
    pub compute_ms: f64,
}

/// Runs one hover query: a single backward pass from pixel `index`.
/// The sequence number is filled in by the caller at send time.
pub fn hover(session: &Session, index: usize) -> Result<HoverMessage, ServiceError> {
    let start = std::time::Instant::now();
    let shape = session.pass.shape;
    let pixel = shape.pixel(index)?;
    let (j1, j2) = jacobian_pair(&session.pass, index)?;
    let gamma = session.display().gamma_corr1;
    let (p1, p2) = display_pair(&j1.values, &j2.values, gamma)?;
    Ok(HoverMessage {
        seq: 0,
        pixel: index,
        row: pixel.row + 1,
        col: pixel.col + 1,
        gamma,
        gradient_x1: j1.values.data()[index - 1],
        gradient_x2: j2.values.data()[index - 1],
        jacobian_x1: p1,
        jacobian_x2: p2,
        highlight: neighborhood(shape, index, DEFAULT_NEIGHBORHOOD_RADIUS)?,
        compute_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

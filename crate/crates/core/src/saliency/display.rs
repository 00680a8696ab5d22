use super::GuidanceImage;
use crate::error::{check_range, Result};
use crate::image::Image;
use crate::scalar::Scalar;

pub const GAMMA_MIN: f64 = 0.1;
pub const GAMMA_MAX: f64 = 2.0;

/// Display exponents for Jacobian images (`gamma_corr1`) and guidance
/// images (`gamma_corr2`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DisplayConfig {
    pub gamma_corr1: f64,
    pub gamma_corr2: f64,
}

impl Default for DisplayConfig {
    fn default() -> Self {
        Self {
            gamma_corr1: 1.0,
            gamma_corr2: 1.0,
        }
    }
}

impl DisplayConfig {
    pub fn new(gamma_corr1: f64, gamma_corr2: f64) -> Result<Self> {
        check_range("gamma_corr1", gamma_corr1, GAMMA_MIN, GAMMA_MAX)?;
        check_range("gamma_corr2", gamma_corr2, GAMMA_MIN, GAMMA_MAX)?;
        Ok(Self {
            gamma_corr1,
            gamma_corr2,
        })
    }
}

/// Elementwise `v^gamma` of a display image in `[0, 1]`.
pub fn gamma_correct<T: Scalar>(image: &Image<T>, gamma: f64) -> Result<Image<T>> {
    check_range("gamma", gamma, GAMMA_MIN, GAMMA_MAX)?;
    if gamma == 1.0 {
        return Ok(image.clone());
    }
    let g = T::from_f64_lossy(gamma);
    Ok(image.map(|v| v.max(T::zero()).powf(g)))
}

fn magnitude_range<T: Scalar>(values: impl Iterator<Item = T>) -> (T, T) {
    values.fold((T::infinity(), T::neg_infinity()), |(lo, hi), v| {
        let m = v.abs();
        (lo.min(m), hi.max(m))
    })
}

fn rescale<T: Scalar>(image: &Image<T>, lo: T, hi: T) -> Image<T> {
    let span = hi - lo;
    if !(span > T::zero()) {
        return image.map(|_| T::zero());
    }
    image.map(|v| ((v.abs() - lo) / span).min(T::one()).max(T::zero()))
}

/// Max-min normalization of `|v|` into `[0, 1]`; a constant-magnitude
/// image maps to zeros.
pub fn display_normalize<T: Scalar>(image: &Image<T>) -> Image<T> {
    let (lo, hi) = magnitude_range(image.data().iter().copied());
    rescale(image, lo, hi)
}

/// Max-min normalization of `|v|` with the range shared by both images,
/// so the two stay comparable on one scale.
pub fn joint_normalize<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<(Image<T>, Image<T>)> {
    a.check_same_shape(b, "joint_normalize")?;
    let (lo, hi) = magnitude_range(a.data().iter().chain(b.data()).copied());
    Ok((rescale(a, lo, hi), rescale(b, lo, hi)))
}

/// Red and green are the per-image normalized guidance magnitudes of the
/// two modalities, blue is the fused image.
#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceRgb<T> {
    pub red: Image<T>,
    pub green: Image<T>,
    pub blue: Image<T>,
}

impl<T: Scalar> GuidanceRgb<T> {
    /// Interleaved 8-bit RGB bytes.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let q = crate::data::quantize;
        let (r, g, b) = (q(&self.red), q(&self.green), q(&self.blue));
        r.iter()
            .zip(&g)
            .zip(&b)
            .flat_map(|((&r, &g), &b)| [r, g, b])
            .collect()
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        crate::data::encode_rgb_png([&self.red, &self.green, &self.blue])
    }
}

pub fn guidance_rgb<T: Scalar>(
    gmri: &GuidanceImage<T>,
    gpet: &GuidanceImage<T>,
    fused: &Image<T>,
) -> Result<GuidanceRgb<T>> {
    gmri.values.check_same_shape(&gpet.values, "guidance_rgb")?;
    gmri.values.check_same_shape(fused, "guidance_rgb")?;
    fused.check_unit_range("fused")?;
    Ok(GuidanceRgb {
        red: display_normalize(&gmri.values),
        green: display_normalize(&gpet.values),
        blue: fused.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::image::Modality;

    fn row(v: &[f64]) -> Image<f64> {
        Image::new(1, v.len(), v.to_vec()).unwrap()
    }

    #[test]
    fn gamma_examples() {
        let img = row(&[0.0, 0.25, 0.5, 1.0]);
        assert_eq!(gamma_correct(&img, 1.0).unwrap(), img);
        assert_eq!(gamma_correct(&img, 0.5).unwrap().data()[1], 0.5);
        let bright = gamma_correct(&img, 0.1).unwrap();
        assert!(bright.data().iter().zip(img.data()).all(|(o, i)| o >= i));
        for g in [0.09, 2.01, f64::NAN] {
            assert!(matches!(gamma_correct(&img, g), Err(Error::OutOfRange { .. })));
        }
        assert!(DisplayConfig::new(0.1, 2.0).is_ok());
        assert!(DisplayConfig::new(0.05, 1.0).is_err());
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(display_normalize(&row(&[-2.0, 0.0, 2.0])).data(), &[1.0, 0.0, 1.0]);
        assert_eq!(display_normalize(&row(&[3.0, 3.0, -3.0])).data(), &[0.0; 3]);
        let n = display_normalize(&row(&[0.1, -0.7, 0.3, 0.2]));
        let (lo, hi) = n.min_max();
        assert_eq!((lo, hi), (0.0, 1.0));
    }

    #[test]
    fn joint_normalization_shares_scale() {
        let (a, b) = joint_normalize(&row(&[0.0, 1.0]), &row(&[2.0, 4.0])).unwrap();
        assert_eq!(a.data(), &[0.0, 0.25]);
        assert_eq!(b.data(), &[0.5, 1.0]);
    }

    #[test]
    fn rgb_colour_semantics() {
        let g = |v: &[f64], m| GuidanceImage { modality: m, values: row(v) };
        let gmri = g(&[1.0, 1.0, 0.0], Modality::First);
        let gpet = g(&[0.0, 1.0, 0.0], Modality::Second);
        let fused = row(&[0.0, 0.0, 1.0]);
        let rgb = guidance_rgb(&gmri, &gpet, &fused).unwrap().to_rgb8();
        assert_eq!(&rgb[0..3], &[255, 0, 0]);
        assert_eq!(&rgb[3..6], &[255, 255, 0]);
        assert_eq!(&rgb[6..9], &[0, 0, 255]);
    }
}

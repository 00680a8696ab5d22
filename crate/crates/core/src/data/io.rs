use std::path::Path;

use image::{ColorType, DynamicImage, GrayImage, ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;

/// Loads an 8-bit grayscale PGM (P5) or PNG, mapping `v` to `v / 255`.
pub fn load_image<T: Scalar>(path: impl AsRef<Path>) -> Result<Image<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    let decoded = image::load_from_memory(&bytes)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    let gray = match decoded.color() {
        ColorType::L8 => decoded.into_luma8(),
        ColorType::L16 | ColorType::La16 => {
            return Err(Error::Image(format!(
                "{}: unsupported bit depth (16-bit)",
                path.display()
            )))
        }
        other => {
            return Err(Error::Image(format!(
                "{}: expected single-channel grayscale, found {other:?}",
                path.display()
            )))
        }
    };
    let (w, h) = gray.dimensions();
    let scale = T::from_f64_lossy(255.0);
    let data = gray
        .into_raw()
        .into_iter()
        .map(|v| T::from_u8(v).unwrap() / scale)
        .collect();
    Image::new(h as usize, w as usize, data)
}

/// Maps `[0, 1]` to 8-bit levels (values outside are clamped).
pub fn quantize<T: Scalar>(image: &Image<T>) -> Vec<u8> {
    image
        .data()
        .iter()
        .map(|&v| (v.to_f64_lossy().clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

fn format_for(path: &Path) -> Result<ImageFormat> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => Ok(ImageFormat::Png),
        Some("pgm") | Some("pnm") => Ok(ImageFormat::Pnm),
        _ => Err(Error::Image(format!(
            "{}: expected a .png or .pgm extension",
            path.display()
        ))),
    }
}

/// Saves an image in `[0, 1]` as 8-bit grayscale PNG or binary PGM,
/// chosen by extension.
pub fn save_image<T: Scalar>(image: &Image<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let format = format_for(path)?;
    let gray = GrayImage::from_raw(image.width() as u32, image.height() as u32, quantize(image))
        .expect("buffer matches extents");
    let mut out = std::io::Cursor::new(Vec::new());
    match format {
        ImageFormat::Pnm => {
            use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
            let enc = PnmEncoder::new(&mut out).with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary));
            DynamicImage::ImageLuma8(gray)
                .write_with_encoder(enc)
                .map_err(|e| Error::Image(e.to_string()))?;
        }
        _ => DynamicImage::ImageLuma8(gray)
            .write_to(&mut out, ImageFormat::Png)
            .map_err(|e| Error::Image(e.to_string()))?,
    }
    std::fs::write(path, out.into_inner())?;
    Ok(())
}

/// Saves three `[0, 1]` channels as an 8-bit RGB PNG.
pub fn save_rgb_png<T: Scalar>(
    channels: [&Image<T>; 3],
    path: impl AsRef<Path>,
) -> Result<()> {
    let bytes = encode_rgb_png(channels)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn encode_rgb_png<T: Scalar>(channels: [&Image<T>; 3]) -> Result<Vec<u8>> {
    let [r, g, b] = channels;
    r.check_same_shape(g, "rgb")?;
    r.check_same_shape(b, "rgb")?;
    let (qr, qg, qb) = (quantize(r), quantize(g), quantize(b));
    let mut raw = Vec::with_capacity(qr.len() * 3);
    for k in 0..qr.len() {
        raw.extend_from_slice(&[qr[k], qg[k], qb[k]]);
    }
    let img = RgbImage::from_raw(r.width() as u32, r.height() as u32, raw).expect("extents");
    let mut out = std::io::Cursor::new(Vec::new());
    DynamicImage::ImageRgb8(img)
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Image(e.to_string()))?;
    Ok(out.into_inner())
}

pub fn encode_gray_png<T: Scalar>(image: &Image<T>) -> Result<Vec<u8>> {
    let gray = GrayImage::from_raw(image.width() as u32, image.height() as u32, quantize(image))
        .expect("extents");
    let mut out = std::io::Cursor::new(Vec::new());
    DynamicImage::ImageLuma8(gray)
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Image(e.to_string()))?;
    Ok(out.into_inner())
}

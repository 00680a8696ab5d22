use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ImagePair;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;

const X2_BACKGROUND: f64 = 0.05;
const X2_PLATEAU: f64 = 0.85;
const TISSUE_X1: f64 = 0.16;
const TISSUE_X2: f64 = 0.16;
const EDEMA_X1: f64 = 0.1;

/// Parameters of the synthetic lesion generator.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub resolution: usize,
    pub blobs: usize,
    pub seed: u64,
    /// Fraction of the `x2` plateau removed inside a lesion core.
    pub core_darkness: f64,
}

impl SyntheticSpec {
    pub fn new(resolution: usize, seed: u64) -> Self {
        Self {
            resolution,
            blobs: 2,
            seed,
            core_darkness: 0.9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 32 {
            return Err(Error::OutOfRange {
                what: "synthetic resolution",
                value: self.resolution as f64,
                min: 32.0,
                max: f64::INFINITY,
            });
        }
        if self.blobs == 0 {
            return Err(Error::InvalidConfig("synthetic blob count must be at least 1".into()));
        }
        crate::error::check_range("core_darkness", self.core_darkness, 0.0, 1.0)?;
        if self.core_darkness == 0.0 {
            return Err(Error::InvalidConfig("core_darkness must darken the core".into()));
        }
        Ok(())
    }
}

/// A generated pair plus the core and surround masks of its lesions.
#[derive(Clone, Debug)]
pub struct AnnotatedPair<T> {
    pub pair: ImagePair<T>,
    pub core: Vec<bool>,
    pub surround: Vec<bool>,
}

#[derive(Clone, Copy, Debug)]
struct Blob {
    cy: f64,
    cx: f64,
    core: f64,
    outer: f64,
}

fn smoothstep(edge0: f64, edge1: f64, x: f64) -> f64 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

// 1 well inside radius r, 0 outside, over a 1.5 px soft edge
fn disk(d: f64, r: f64) -> f64 {
    1.0 - smoothstep(r - 0.75, r + 0.75, d)
}

fn place_blobs(rng: &mut ChaCha8Rng, n: usize, count: usize) -> Vec<Blob> {
    let size = n as f64;
    let mut blobs: Vec<Blob> = Vec::with_capacity(count);
    let max_outer = (size / 5.0).max(6.0);
    for _ in 0..count {
        for attempt in 0..200 {
            let outer = rng.random_range(5.0..=max_outer);
            let core = outer * rng.random_range(0.4..0.5);
            let margin = outer + 1.5;
            let cy = rng.random_range(margin..size - margin);
            let cx = rng.random_range(margin..size - margin);
            let clear = blobs
                .iter()
                .all(|b| ((b.cy - cy).powi(2) + (b.cx - cx).powi(2)).sqrt() > b.outer + outer + 3.0);
            if clear || attempt == 199 && blobs.is_empty() {
                blobs.push(Blob { cy, cx, core, outer });
                break;
            }
        }
    }
    blobs
}

fn synth_one<T: Scalar>(spec: &SyntheticSpec, rng: &mut ChaCha8Rng, index: usize) -> AnnotatedPair<T> {
    let n = spec.resolution;
    let blobs = place_blobs(rng, n, spec.blobs);
    let (fy, fx) = (rng.random_range(0.5..1.5), rng.random_range(0.5..1.5));
    let (py, px) = (rng.random_range(0.0..6.3), rng.random_range(0.0..6.3));
    let tau = std::f64::consts::TAU;

    let mut x1 = Vec::with_capacity(n * n);
    let mut x2 = Vec::with_capacity(n * n);
    let mut core = Vec::with_capacity(n * n);
    let mut surround = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
            let (u, v) = (y / n as f64, x / n as f64);
            // shared anatomy: uptake in x2 follows the tissue texture of x1
            let tissue = 0.5 + 0.5 * (tau * fy * u + py).sin() * (tau * fx * v + px).cos();
            let mut a = 0.17 + TISSUE_X1 * tissue;
            let mut b = X2_BACKGROUND + TISSUE_X2 * tissue;
            let mut keep = 1.0;
            let (mut in_core, mut in_surround) = (false, false);
            for blob in &blobs {
                let d = ((y - blob.cy).powi(2) + (x - blob.cx).powi(2)).sqrt();
                let ring_r = blob.core + 1.0;
                a += 0.65 * (-(d - ring_r).powi(2) / (2.0 * 0.8f64.powi(2))).exp();
                a += 0.2 * disk(d, blob.core) + EDEMA_X1 * disk(d, blob.outer);
                b += X2_PLATEAU * disk(d, blob.outer);
                keep *= 1.0 - spec.core_darkness * disk(d, blob.core);
                in_core |= d < blob.core - 1.0;
                in_surround |= d > blob.core + 1.0 && d < blob.outer - 1.0;
            }
            b *= keep;
            x1.push(T::from_f64_lossy(a.clamp(0.0, 1.0)));
            x2.push(T::from_f64_lossy(b.clamp(0.0, 1.0)));
            core.push(in_core);
            surround.push(in_surround && !in_core);
        }
    }
    let pair = ImagePair {
        id: format!("synth{index:04}"),
        x1: Image::new(n, n, x1).expect("finite by construction"),
        x2: Image::new(n, n, x2).expect("finite by construction"),
    };
    AnnotatedPair { pair, core, surround }
}

/// Generates `count` deterministic MRI/PET-like pairs with lesion masks.
pub fn synth_pairs_annotated<T: Scalar>(spec: &SyntheticSpec, count: usize) -> Result<Vec<AnnotatedPair<T>>> {
    spec.validate()?;
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok((0..count).map(|k| synth_one(spec, &mut rng, k)).collect())
}

/// Generates `count` deterministic MRI/PET-like pairs.
///
/// `x1` is a smooth background with bright rings; `x2` is dark except for
/// bright blobs whose cores, inside the rings of `x1`, are attenuated by
/// `core_darkness`.
pub fn synth_pairs<T: Scalar>(spec: &SyntheticSpec, count: usize) -> Result<Vec<ImagePair<T>>> {
    Ok(synth_pairs_annotated(spec, count)?
        .into_iter()
        .map(|a| a.pair)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn masked_mean(img: &Image<f64>, mask: &[bool]) -> f64 {
        let vals: Vec<f64> = img.data().iter().zip(mask).filter(|(_, &m)| m).map(|(&v, _)| v).collect();
        assert!(!vals.is_empty());
        vals.iter().sum::<f64>() / vals.len() as f64
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = SyntheticSpec::new(48, 11);
        let a: Vec<ImagePair<f64>> = synth_pairs(&spec, 4).unwrap();
        let b: Vec<ImagePair<f64>> = synth_pairs(&spec, 4).unwrap();
        assert_eq!(a, b);
        let c: Vec<ImagePair<f64>> = synth_pairs(&SyntheticSpec::new(48, 12), 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn cores_are_dark_and_surrounds_bright() {
        for seed in 0..20 {
            let spec = SyntheticSpec { blobs: 3, ..SyntheticSpec::new(64, seed) };
            for a in synth_pairs_annotated::<f64>(&spec, 3).unwrap() {
                assert!(masked_mean(&a.pair.x2, &a.core) < 0.2, "seed {seed}");
                assert!(masked_mean(&a.pair.x2, &a.surround) > 0.5, "seed {seed}");
            }
        }
    }

    #[test]
    fn values_stay_in_unit_range() {
        for a in synth_pairs::<f64>(&SyntheticSpec { blobs: 4, ..SyntheticSpec::new(32, 3) }, 8).unwrap() {
            a.validate().unwrap();
        }
    }

    #[test]
    fn rejects_small_resolution_and_zero_count() {
        assert!(synth_pairs::<f64>(&SyntheticSpec::new(31, 0), 1).is_err());
        assert!(matches!(synth_pairs::<f64>(&SyntheticSpec::new(32, 0), 0), Err(Error::EmptyDataset)));
        let bad = SyntheticSpec { core_darkness: 0.0, ..SyntheticSpec::new(32, 0) };
        assert!(synth_pairs::<f64>(&bad, 1).is_err());
    }
}

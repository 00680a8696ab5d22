//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "FVCKPT1"
//! u32 len, model name (UTF-8)
//! u32 len, metadata (UTF-8 `key=value` lines)
//! u32 block count
//! per block: u32 len, name; u32 rank; rank x u64 extents; f64 values
//! ```
//!
//! Parameters and batch-norm running statistics are stored as blocks; floats
//! in the metadata use shortest round-trip formatting.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{FusionModel, ModelKind};
use crate::error::{Error, Result};
use crate::graph::RunningStats;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::training::{LossConfig, LossReport};

pub const MAGIC: &[u8; 7] = b"FVCKPT1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingMetadata {
    pub epochs: usize,
    pub seed: u64,
    pub loss_config: Option<LossConfig>,
    /// One report per completed epoch.
    pub history: Vec<LossReport>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub model: FusionModel<T>,
    pub metadata: TrainingMetadata,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(model: FusionModel<T>, metadata: TrainingMetadata) -> Self {
        Self { model, metadata }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_str(&mut out, self.model.name());
        put_str(&mut out, &self.metadata.to_text());
        let mut blocks: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
        for (name, t) in self.model.params() {
            blocks.push((name.clone(), t.shape().to_vec(), to_f64(t.data())));
        }
        for (group, s) in self.model.running_stats() {
            blocks.push((format!("{group}.bn.running_mean"), vec![s.mean.len()], to_f64(&s.mean)));
            blocks.push((format!("{group}.bn.running_var"), vec![s.var.len()], to_f64(&s.var)));
        }
        out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
        for (name, shape, values) in blocks {
            put_str(&mut out, &name);
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let kind: ModelKind = r.string()?.parse()?;
        let metadata = TrainingMetadata::from_text(&r.string()?)?;
        let count = r.u32()? as usize;
        let mut params = BTreeMap::new();
        let mut means = BTreeMap::new();
        let mut vars = BTreeMap::new();
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(usize::try_from(r.u64()?).map_err(|_| Error::Checkpoint("extent overflow".into()))?);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
            let values: Vec<T> = raw
                .chunks_exact(8)
                .map(|c| T::from_f64_lossy(f64::from_le_bytes(c.try_into().unwrap())))
                .collect();
            if let Some(group) = name.strip_suffix(".bn.running_mean") {
                means.insert(group.to_string(), values);
            } else if let Some(group) = name.strip_suffix(".bn.running_var") {
                vars.insert(group.to_string(), values);
            } else {
                params.insert(name, Tensor::new(shape, values)?);
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        let mut stats = BTreeMap::new();
        for (group, mean) in means {
            let var = vars
                .remove(&group)
                .ok_or_else(|| Error::Checkpoint(format!("{group} has no running_var")))?;
            stats.insert(group, RunningStats { mean, var });
        }
        let mut model = FusionModel::build(kind, 0);
        model.restore(params, stats)?;
        Ok(Self { model, metadata })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

impl TrainingMetadata {
    pub fn to_text(&self) -> String {
        let mut s = format!("epochs={}\nseed={}\n", self.epochs, self.seed);
        if let Some(c) = &self.loss_config {
            s += &format!(
                "lambda={}\ngamma_ssim={}\ngamma_l2={}\n",
                c.lambda, c.gamma_ssim, c.gamma_l2
            );
        }
        for (i, r) in self.history.iter().enumerate() {
            let v = r.values();
            let joined: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            s += &format!("history.{}={}\n", i + 1, joined.join(","));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("malformed metadata line `{line}`")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let num = |k: &str| -> Result<Option<f64>> {
            map.get(k)
                .map(|v| v.parse::<f64>().map_err(|_| Error::Checkpoint(format!("bad {k}"))))
                .transpose()
        };
        let epochs = map
            .get("epochs")
            .map(|v| v.parse().map_err(|_| Error::Checkpoint("bad epochs".into())))
            .transpose()?
            .unwrap_or(0);
        let seed = map
            .get("seed")
            .map(|v| v.parse().map_err(|_| Error::Checkpoint("bad seed".into())))
            .transpose()?
            .unwrap_or(0);
        let loss_config = match (num("lambda")?, num("gamma_ssim")?, num("gamma_l2")?) {
            (Some(lambda), Some(gamma_ssim), Some(gamma_l2)) => {
                Some(LossConfig::new(lambda, gamma_ssim, gamma_l2)?)
            }
            _ => None,
        };
        let mut history = Vec::new();
        for i in 1.. {
            let Some(line) = map.get(&format!("history.{i}")) else { break };
            let vals: std::result::Result<Vec<f64>, _> = line.split(',').map(str::parse).collect();
            let vals = vals.map_err(|_| Error::Checkpoint(format!("bad history.{i}")))?;
            history.push(
                LossReport::from_values(&vals)
                    .ok_or_else(|| Error::Checkpoint(format!("history.{i} needs 7 values")))?,
            );
        }
        Ok(Self {
            epochs,
            seed,
            loss_config,
            history,
        })
    }
}

fn to_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64_lossy()).collect()
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;

    fn sample_metadata() -> TrainingMetadata {
        TrainingMetadata {
            epochs: 2,
            seed: 99,
            loss_config: Some(LossConfig::new(0.99, 0.47, 0.5).unwrap()),
            history: vec![
                LossReport::from_values(&[0.1, 0.2, 0.3, 0.4, 0.15, 0.35, 1.0 / 3.0]).unwrap(),
                LossReport::from_values(&[0.01, 0.02, 0.03, 0.04, 0.015, 0.035, 0.1]).unwrap(),
            ],
        }
    }

    #[test]
    fn round_trip_reproduces_fuse_bit_exactly() {
        let x1 = Image::from_fn(8, 8, |r, c| ((r + 2 * c) % 9) as f64 / 8.0);
        let x2 = Image::from_fn(8, 8, |r, c| ((3 * r + c) % 7) as f64 / 6.0);
        for kind in ModelKind::ALL {
            let model = FusionModel::<f64>::build(kind, 4);
            let ckpt = Checkpoint::new(model, sample_metadata());
            let bytes = ckpt.to_bytes();
            assert_eq!(&bytes[..7], b"FVCKPT1");
            let back = Checkpoint::<f64>::from_bytes(&bytes).unwrap();
            assert_eq!(back, ckpt);
            assert_eq!(
                back.model.fuse(&x1, &x2).unwrap().data(),
                ckpt.model.fuse(&x1, &x2).unwrap().data()
            );
            assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fvckpt");
        let ckpt = Checkpoint::new(FusionModel::<f64>::build(ModelKind::DeepFuse, 1), sample_metadata());
        ckpt.save(&path).unwrap();
        assert_eq!(Checkpoint::<f64>::load(&path).unwrap(), ckpt);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let ckpt = Checkpoint::new(FusionModel::<f64>::build(ModelKind::FunFuseAn, 1), TrainingMetadata::default());
        let bytes = ckpt.to_bytes();
        assert!(Checkpoint::<f64>::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::<f64>::from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::<f64>::from_bytes(&extra).is_err());
    }
}

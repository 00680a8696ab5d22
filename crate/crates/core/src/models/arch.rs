//! Declarative layer graphs of the neural fusion models.
//!
//! Every model is described as a list of layers whose inputs refer to the
//! two images or to earlier layers. The forward pass, the parameter shapes
//! and the theoretical receptive field are all derived from this list.

use crate::error::{Error, Result};
use crate::image::Modality;

/// Where a layer reads from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Input(Modality),
    Layer(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    /// Leaky ReLU with slope [`super::LEAKY_SLOPE`].
    LeakyRelu,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    /// Same-padded convolution, optionally followed by batch norm and an
    /// activation. Layers naming the same `group` share all parameters.
    Conv {
        from: Source,
        group: String,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        batch_norm: bool,
        activation: Activation,
    },
    Concat(Vec<Source>),
    Add(Source, Source),
    /// `(tanh(x) + 1) / 2`, mapping to `[0, 1]`.
    Output(Source),
}

/// Parameter group shared by one or more convolution layers.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGroup {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub batch_norm: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArchitectureSpec {
    pub layers: Vec<Layer>,
}

fn conv(from: Source, group: &str, cin: usize, cout: usize) -> Layer {
    Layer::Conv {
        from,
        group: group.to_string(),
        in_channels: cin,
        out_channels: cout,
        kernel: 3,
        batch_norm: true,
        activation: Activation::LeakyRelu,
    }
}

fn head(from: Source, group: &str, cin: usize, kernel: usize) -> Layer {
    Layer::Conv {
        from,
        group: group.to_string(),
        in_channels: cin,
        out_channels: 1,
        kernel,
        batch_norm: false,
        activation: Activation::Identity,
    }
}

use Source::{Input, Layer as L};
const X1: Source = Input(Modality::First);
const X2: Source = Input(Modality::Second);

impl ArchitectureSpec {
    /// Two extraction branches, channel concat, fusion, reconstruction.
    pub fn fun_fuse_an() -> Self {
        let mut layers = Vec::new();
        for (branch, x) in [("branch1", X1), ("branch2", X2)] {
            let base = layers.len();
            layers.push(conv(x, &format!("{branch}.conv1"), 1, 16));
            layers.push(conv(L(base), &format!("{branch}.conv2"), 16, 32));
            layers.push(conv(L(base + 1), &format!("{branch}.conv3"), 32, 16));
        }
        layers.push(Layer::Concat(vec![L(2), L(5)]));
        layers.push(conv(L(6), "fusion", 32, 32));
        layers.push(conv(L(7), "reconstruct1", 32, 16));
        layers.push(head(L(8), "reconstruct2", 16, 3));
        layers.push(Layer::Output(L(9)));
        Self { layers }
    }

    /// Concatenated inputs through four densely connected blocks.
    pub fn mask_net() -> Self {
        const GROWTH: usize = 32;
        let mut layers = vec![Layer::Concat(vec![X1, X2])];
        let mut features = 0; // index of the running concatenation
        let mut channels = 2;
        for block in 1..=4 {
            layers.push(conv(L(features), &format!("dense{block}"), channels, GROWTH));
            let new = layers.len() - 1;
            layers.push(Layer::Concat(vec![L(features), L(new)]));
            features = layers.len() - 1;
            channels += GROWTH;
        }
        layers.push(head(L(features), "project", channels, 1));
        let last = layers.len() - 1;
        layers.push(Layer::Output(L(last)));
        Self { layers }
    }

    /// Tied-weight extraction applied to each input, additive fusion.
    pub fn deep_fuse() -> Self {
        let layers = vec![
            conv(X1, "extract1", 1, 16),
            conv(L(0), "extract2", 16, 32),
            conv(X2, "extract1", 1, 16),
            conv(L(2), "extract2", 16, 32),
            Layer::Add(L(1), L(3)),
            conv(L(4), "reconstruct1", 32, 32),
            conv(L(5), "reconstruct2", 32, 16),
            head(L(6), "reconstruct3", 16, 3),
            Layer::Output(L(7)),
        ];
        Self { layers }
    }

    /// Concatenated inputs, stem, three residual blocks.
    pub fn deep_pedestrian() -> Self {
        let mut layers = vec![Layer::Concat(vec![X1, X2]), conv(L(0), "stem", 2, 32)];
        let mut prev = 1;
        for block in 1..=3 {
            layers.push(conv(L(prev), &format!("residual{block}.conv1"), 32, 32));
            let a = layers.len() - 1;
            layers.push(Layer::Conv {
                from: L(a),
                group: format!("residual{block}.conv2"),
                in_channels: 32,
                out_channels: 32,
                kernel: 3,
                batch_norm: true,
                activation: Activation::Identity,
            });
            let b = layers.len() - 1;
            layers.push(Layer::Add(L(prev), L(b)));
            prev = layers.len() - 1;
        }
        layers.push(head(L(prev), "head", 32, 3));
        let last = layers.len() - 1;
        layers.push(Layer::Output(L(last)));
        Self { layers }
    }

    /// Channel count produced by every layer; fails on inconsistent wiring.
    pub fn channels(&self) -> Result<Vec<usize>> {
        let mut out: Vec<usize> = Vec::with_capacity(self.layers.len());
        let get = |out: &[usize], s: Source, at: usize| -> Result<usize> {
            match s {
                Source::Input(_) => Ok(1),
                Source::Layer(k) if k < at => Ok(out[k]),
                Source::Layer(k) => Err(Error::InvalidConfig(format!(
                    "layer {at} reads from layer {k}, which is not earlier"
                ))),
            }
        };
        for (i, layer) in self.layers.iter().enumerate() {
            let c = match layer {
                Layer::Conv {
                    from,
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => {
                    let got = get(&out, *from, i)?;
                    if got != *in_channels {
                        return Err(Error::Dimension {
                            op: "architecture",
                            axis: "channels",
                            expected: *in_channels,
                            actual: got,
                        });
                    }
                    if kernel % 2 == 0 {
                        return Err(Error::EvenKernel {
                            op: "architecture",
                            kernel: *kernel,
                        });
                    }
                    *out_channels
                }
                Layer::Concat(parts) => {
                    let mut total = 0;
                    for p in parts {
                        total += get(&out, *p, i)?;
                    }
                    total
                }
                Layer::Add(a, b) => {
                    let (ca, cb) = (get(&out, *a, i)?, get(&out, *b, i)?);
                    if ca != cb {
                        return Err(Error::Dimension {
                            op: "architecture add",
                            axis: "channels",
                            expected: ca,
                            actual: cb,
                        });
                    }
                    ca
                }
                Layer::Output(from) => get(&out, *from, i)?,
            };
            out.push(c);
        }
        match (self.layers.last(), out.last()) {
            (Some(Layer::Output(_)), Some(1)) => Ok(out),
            _ => Err(Error::InvalidConfig(
                "architecture must end in a single-channel output layer".into(),
            )),
        }
    }

    /// Distinct parameter groups in first-use order.
    pub fn param_groups(&self) -> Vec<ParamGroup> {
        let mut groups: Vec<ParamGroup> = Vec::new();
        for layer in &self.layers {
            if let Layer::Conv {
                group,
                in_channels,
                out_channels,
                kernel,
                batch_norm,
                ..
            } = layer
            {
                if !groups.iter().any(|g| &g.name == group) {
                    groups.push(ParamGroup {
                        name: group.clone(),
                        in_channels: *in_channels,
                        out_channels: *out_channels,
                        kernel: *kernel,
                        batch_norm: *batch_norm,
                    });
                }
            }
        }
        groups
    }

    /// Number of convolution layers that share their group with another layer.
    pub fn tied_layers(&self) -> usize {
        let names: Vec<&String> = self
            .layers
            .iter()
            .filter_map(|l| match l {
                Layer::Conv { group, .. } => Some(group),
                _ => None,
            })
            .collect();
        names
            .iter()
            .filter(|n| names.iter().filter(|m| m == n).count() > 1)
            .count()
    }

    /// Number of residual (additive skip) junctions.
    pub fn add_junctions(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, Layer::Add(..)))
            .count()
    }

    /// Chebyshev radius of the region of `modality` that can influence one
    /// output pixel, or `None` if the output does not depend on it.
    ///
    /// This is the longest path through the layer graph, counting
    /// `(k - 1) / 2` for every `k x k` convolution.
    pub fn receptive_radius(&self, modality: Modality) -> Option<usize> {
        let mut radius: Vec<Option<usize>> = Vec::with_capacity(self.layers.len());
        let of = |radius: &[Option<usize>], s: Source| match s {
            Source::Input(m) if m == modality => Some(0),
            Source::Input(_) => None,
            Source::Layer(k) => radius[k],
        };
        for layer in &self.layers {
            let r = match layer {
                Layer::Conv { from, kernel, .. } => of(&radius, *from).map(|r| r + (kernel - 1) / 2),
                Layer::Concat(parts) => parts.iter().filter_map(|p| of(&radius, *p)).max(),
                Layer::Add(a, b) => [of(&radius, *a), of(&radius, *b)].into_iter().flatten().max(),
                Layer::Output(from) => of(&radius, *from),
            };
            radius.push(r);
        }
        radius.last().copied().flatten()
    }
}

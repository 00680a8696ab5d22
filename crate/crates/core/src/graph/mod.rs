//! Append-only computation graph with reverse-mode differentiation.
//!
//! Forward operations are recorded by a single writer (`&mut Graph`). Once
//! built, any number of backward passes may run concurrently through `&Graph`;
//! each owns its gradient buffers and reads only the saved activations.

mod backward;
mod conv;
pub mod window;

use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{same_shape, Tensor};
use crate::training::ssim::SsimConfig;
use conv::ConvGeom;
pub use window::Window;
use window::{as4, Grad};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Per-channel running statistics of a batch normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![T::zero(); channels],
            var: vec![T::one(); channels],
        }
    }
}

pub enum BatchNormMode<'a, T> {
    /// Normalize with batch statistics and fold them into `running`.
    Train {
        running: &'a mut RunningStats<T>,
        momentum: T,
    },
    /// Normalize with the running statistics.
    Eval(&'a RunningStats<T>),
}

#[derive(Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeom,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    LeakyRelu {
        input: Var,
        slope: T,
    },
    Tanh {
        input: Var,
    },
    Affine {
        input: Var,
        scale: T,
    },
    Add {
        lhs: Var,
        rhs: Var,
    },
    Concat {
        parts: Vec<Var>,
    },
    WeightedAverage {
        x1: Var,
        x2: Var,
    },
    Ssim {
        a: Var,
        b: Var,
        config: SsimConfig,
    },
    RmsDiff {
        a: Var,
        b: Var,
        rms: Vec<T>,
    },
    WeightedSum {
        terms: Vec<(Var, T)>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded forward computation. Node ids increase in insertion order, so
/// the inputs of node `k` always have ids below `k`.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    backward_passes: AtomicUsize,
}

/// Gradients of every `requires_grad` leaf reached by one backward pass.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    leaves: Vec<LeafGrad<T>>,
}

#[derive(Clone, Debug)]
struct LeafGrad<T> {
    var: Var,
    shape: Vec<usize>,
    grad: Grad<T>,
}

impl<T: Scalar> Gradients<T> {
    /// Dense gradient of `var`, or `None` when the pass did not reach it.
    pub fn get(&self, var: Var) -> Option<Tensor<T>> {
        self.find(var).map(|(shape, g)| Tensor::from_parts(shape, g.to_dense()))
    }

    /// One entry of the gradient of `var` (by flat index into its shape).
    pub fn value_at(&self, var: Var, flat_index: usize) -> T {
        match self.find(var) {
            None => T::zero(),
            Some((_, g)) => {
                let [_, c, h, w] = g.dims;
                let plane = h * w;
                let (bc, rem) = (flat_index / plane, flat_index % plane);
                g.at(bc / c, bc % c, rem / w, rem % w)
            }
        }
    }

    /// The rectangle outside which the gradient of `var` is exactly zero.
    pub fn support(&self, var: Var) -> Option<Window> {
        self.find(var).map(|(_, g)| g.window)
    }

    /// Adds another pass's gradients into this one.
    pub fn accumulate(&mut self, other: Gradients<T>) {
        for leaf in other.leaves {
            match self.leaves.iter_mut().find(|l| l.var == leaf.var) {
                Some(existing) => existing.grad.accumulate(leaf.grad),
                None => self.leaves.push(leaf),
            }
        }
    }

    fn find(&self, var: Var) -> Option<(Vec<usize>, &Grad<T>)> {
        self.leaves
            .iter()
            .find(|l| l.var == var)
            .map(|l| (l.shape.clone(), &l.grad))
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            backward_passes: AtomicUsize::new(0),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of backward passes run on this graph so far.
    pub fn backward_count(&self) -> usize {
        self.backward_passes.load(Ordering::Relaxed)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf whose gradient is wanted.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Stride-1 convolution with `(k - 1) / 2` zero padding.
    ///
    /// `input: [B, Cin, H, W]`, `kernel: [Cout, Cin, k, k]`, `bias: [Cout]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var> {
        let [batch, c_in, height, width] = self.value(input).dims4("conv2d")?;
        let [c_out, k_in, kh, kw] = self.value(kernel).dims4("conv2d kernel")?;
        if k_in != c_in {
            return Err(Error::Dimension {
                op: "conv2d",
                axis: "channels",
                expected: c_in,
                actual: k_in,
            });
        }
        if kh != kw {
            return Err(Error::Dimension {
                op: "conv2d kernel",
                axis: "width",
                expected: kh,
                actual: kw,
            });
        }
        if kh % 2 == 0 {
            return Err(Error::EvenKernel {
                op: "conv2d",
                kernel: kh,
            });
        }
        let bias_len = self.value(bias).len();
        if bias_len != c_out {
            return Err(Error::Dimension {
                op: "conv2d bias",
                axis: "channels",
                expected: c_out,
                actual: bias_len,
            });
        }
        let geom = ConvGeom {
            batch,
            c_in,
            c_out,
            height,
            width,
            kernel: kh,
        };
        let out = conv::forward(
            &geom,
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
        );
        let value = Tensor::from_parts(vec![batch, c_out, height, width], out);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
            &[input, kernel, bias],
        ))
    }

    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        eps: T,
        mode: BatchNormMode<'_, T>,
    ) -> Result<Var> {
        if !(eps > T::zero()) {
            return Err(Error::InvalidEpsilon(eps.to_f64_lossy()));
        }
        let [nb, nc, h, w] = self.value(input).dims4("batch_norm")?;
        for (what, v) in [("gamma", gamma), ("beta", beta)] {
            let len = self.value(v).len();
            if len != nc {
                return Err(Error::Dimension {
                    op: if what == "gamma" { "batch_norm gamma" } else { "batch_norm beta" },
                    axis: "channels",
                    expected: nc,
                    actual: len,
                });
            }
        }
        let count = nb * h * w;
        let plane = h * w;
        let x = self.value(input).data();
        let (mean, inv_std, train) = match mode {
            BatchNormMode::Train { running, momentum } => {
                if count == 0 {
                    return Err(Error::DegenerateBatch { channel: 0 });
                }
                if running.mean.len() != nc || running.var.len() != nc {
                    return Err(Error::Dimension {
                        op: "batch_norm running stats",
                        axis: "channels",
                        expected: nc,
                        actual: running.mean.len(),
                    });
                }
                let n = T::from_usize(count).unwrap();
                let mut mean = vec![T::zero(); nc];
                let mut var = vec![T::zero(); nc];
                for c in 0..nc {
                    // shifted by the first sample so constant channels centre exactly
                    let shift = x[c * plane];
                    let mut s = T::zero();
                    for b in 0..nb {
                        let o = (b * nc + c) * plane;
                        s += x[o..o + plane].iter().map(|&v| v - shift).sum::<T>();
                    }
                    let m = shift + s / n;
                    let mut ss = T::zero();
                    for b in 0..nb {
                        let o = (b * nc + c) * plane;
                        ss += x[o..o + plane].iter().map(|&v| (v - m) * (v - m)).sum::<T>();
                    }
                    mean[c] = m;
                    var[c] = ss / n;
                }
                let unbias = if count > 1 {
                    n / (n - T::one())
                } else {
                    T::one()
                };
                for c in 0..nc {
                    running.mean[c] = (T::one() - momentum) * running.mean[c] + momentum * mean[c];
                    running.var[c] =
                        (T::one() - momentum) * running.var[c] + momentum * var[c] * unbias;
                }
                let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
                (mean, inv_std, true)
            }
            BatchNormMode::Eval(running) => {
                if running.mean.len() != nc || running.var.len() != nc {
                    return Err(Error::Dimension {
                        op: "batch_norm running stats",
                        axis: "channels",
                        expected: nc,
                        actual: running.mean.len(),
                    });
                }
                let inv_std = running
                    .var
                    .iter()
                    .map(|&v| T::one() / (v + eps).sqrt())
                    .collect();
                (running.mean.clone(), inv_std, false)
            }
        };
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut out = Vec::with_capacity(x.len());
        for b in 0..nb {
            for c in 0..nc {
                let o = (b * nc + c) * plane;
                let (m, s, ga, be) = (mean[c], inv_std[c], g[c], bt[c]);
                out.extend(x[o..o + plane].iter().map(|&v| ga * (v - m) * s + be));
            }
        }
        let value = Tensor::from_parts(vec![nb, nc, h, w], out);
        Ok(self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                mean,
                inv_std,
                train,
            },
            &[input, gamma, beta],
        ))
    }

    pub fn leaky_relu(&mut self, input: Var, slope: T) -> Var {
        let value = self
            .value(input)
            .map(|v| if v >= T::zero() { v } else { slope * v });
        self.push(value, Op::LeakyRelu { input, slope }, &[input])
    }

    pub fn tanh(&mut self, input: Var) -> Var {
        let value = self.value(input).map(T::tanh);
        self.push(value, Op::Tanh { input }, &[input])
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, input: Var, scale: T, shift: T) -> Var {
        let value = self.value(input).map(|v| scale * v + shift);
        self.push(value, Op::Affine { input, scale }, &[input])
    }

    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        same_shape("add", self.value(lhs), self.value(rhs))?;
        let value = self.value(lhs).zip_map(self.value(rhs), |a, b| a + b)?;
        Ok(self.push(value, Op::Add { lhs, rhs }, &[lhs, rhs]))
    }

    /// Stacks rank-4 tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidConfig("concat of zero tensors".into()))?;
        let [nb, _, h, w] = self.value(first).dims4("concat_channels")?;
        let mut total = 0;
        for &p in parts {
            let [pb, pc, ph, pw] = self.value(p).dims4("concat_channels")?;
            for (axis, expected, actual) in [("batch", nb, pb), ("height", h, ph), ("width", w, pw)] {
                if expected != actual {
                    return Err(Error::Dimension {
                        op: "concat_channels",
                        axis,
                        expected,
                        actual,
                    });
                }
            }
            total += pc;
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(nb * total * plane);
        for b in 0..nb {
            for &p in parts {
                let pc = self.value(p).shape()[1];
                let d = self.value(p).data();
                out.extend_from_slice(&d[b * pc * plane..(b + 1) * pc * plane]);
            }
        }
        let value = Tensor::from_parts(vec![nb, total, h, w], out);
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
            },
            parts,
        ))
    }

    /// Pixelwise weighted average `y = w1 x1 + w2 x2`, `w_k = x_k / (x1 + x2)`.
    pub fn weighted_average(&mut self, x1: Var, x2: Var) -> Result<Var> {
        same_shape("weighted_average", self.value(x1), self.value(x2))?;
        let value = self.value(x1).zip_map(self.value(x2), |a, b| {
            crate::models::weighted::blend(a, b).2
        })?;
        Ok(self.push(value, Op::WeightedAverage { x1, x2 }, &[x1, x2]))
    }

    /// Windowed SSIM of each `(batch, channel)` plane, averaged. Output `[1]`.
    pub fn ssim(&mut self, a: Var, b: Var, config: SsimConfig) -> Result<Var> {
        same_shape("ssim", self.value(a), self.value(b))?;
        let [nb, nc, h, w] = self.value(a).dims4("ssim")?;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let plane = h * w;
        let mut total = T::zero();
        for p in 0..nb * nc {
            let r = p * plane..(p + 1) * plane;
            total += crate::training::ssim::ssim_plane(&da[r.clone()], &db[r], h, w, &config)?;
        }
        let value = Tensor::scalar(total / T::from_usize(nb * nc).unwrap());
        Ok(self.push(value, Op::Ssim { a, b, config }, &[a, b]))
    }

    /// Root-mean-square difference of each `(batch, channel)` plane, averaged.
    pub fn rms_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("rms_diff", self.value(a), self.value(b))?;
        let [nb, nc, h, w] = as4(self.value(a).shape());
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let plane = h * w;
        let n = T::from_usize(plane).unwrap();
        let rms: Vec<T> = (0..nb * nc)
            .map(|p| {
                let r = p * plane..(p + 1) * plane;
                let ss: T = da[r.clone()]
                    .iter()
                    .zip(&db[r])
                    .map(|(&x, &y)| (x - y) * (x - y))
                    .sum();
                (ss / n).sqrt()
            })
            .collect();
        let mean = rms.iter().copied().sum::<T>() / T::from_usize(rms.len()).unwrap();
        Ok(self.push(Tensor::scalar(mean), Op::RmsDiff { a, b, rms }, &[a, b]))
    }

    /// `sum_k w_k * v_k` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        let mut total = T::zero();
        for &(v, weight) in terms {
            let t = self.value(v);
            if t.len() != 1 {
                return Err(Error::Rank {
                    op: "weighted_sum",
                    expected: 1,
                    shape: t.shape().to_vec(),
                });
            }
            total += weight * t.data()[0];
        }
        let inputs: Vec<Var> = terms.iter().map(|t| t.0).collect();
        Ok(self.push(
            Tensor::scalar(total),
            Op::WeightedSum {
                terms: terms.to_vec(),
            },
            &inputs,
        ))
    }

    /// Backpropagates `seed` from `output`: each reachable leaf with
    /// `requires_grad` receives `d sum(seed * output) / d leaf`.
    pub fn backward(&self, output: Var, seed: &Tensor<T>) -> Result<Gradients<T>> {
        self.check_output(output)?;
        same_shape("backward seed", self.value(output), seed)?;
        let dims = as4(seed.shape());
        let grad = match nonzero_window(dims, seed.data()) {
            Some(win) => {
                let mut g = Grad::zeros(dims, win);
                let [nb, nc, h, w] = dims;
                for b in 0..nb {
                    for c in 0..nc {
                        let base = (b * nc + c) * h * w;
                        let gp = g.plane(b, c);
                        for r in win.top..win.bottom {
                            let src = &seed.data()[base + r * w + win.left..base + r * w + win.right];
                            let d0 = gp + (r - win.top) * win.width();
                            g.data[d0..d0 + win.width()].copy_from_slice(src);
                        }
                    }
                }
                g
            }
            None => Grad::zeros(dims, Window::point(0, 0)),
        };
        Ok(self.run_backward(output, grad))
    }

    /// Backward pass seeded with a one-hot vector at `flat_index` of `output`.
    pub fn backward_one_hot(&self, output: Var, flat_index: usize) -> Result<Gradients<T>> {
        self.check_output(output)?;
        let dims = as4(self.value(output).shape());
        let n = self.value(output).len();
        if flat_index >= n {
            return Err(Error::InvalidPixel {
                index: flat_index + 1,
                n,
            });
        }
        let [_, nc, h, w] = dims;
        let plane = h * w;
        let (bc, rem) = (flat_index / plane, flat_index % plane);
        let mut g = Grad::zeros(dims, Window::point(rem / w, rem % w));
        let idx = g.plane(bc / nc, bc % nc);
        g.data[idx] = T::one();
        Ok(self.run_backward(output, g))
    }

    /// Independent one-hot backward passes sharing this graph's saved
    /// activations, run in parallel.
    pub fn backward_one_hot_many(
        &self,
        output: Var,
        flat_indices: &[usize],
    ) -> Result<Vec<Gradients<T>>> {
        flat_indices
            .par_iter()
            .map(|&i| self.backward_one_hot(output, i))
            .collect()
    }

    fn check_output(&self, output: Var) -> Result<()> {
        if output.0 >= self.nodes.len() || !self.nodes[output.0].requires_grad {
            return Err(Error::NoGraph);
        }
        Ok(())
    }

    fn run_backward(&self, output: Var, seed: Grad<T>) -> Gradients<T> {
        self.backward_passes.fetch_add(1, Ordering::Relaxed);
        let mut grads: Vec<Option<Grad<T>>> = (0..=output.0).map(|_| None).collect();
        grads[output.0] = Some(seed);
        let mut leaves = Vec::new();
        for id in (0..=output.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => leaves.push(LeafGrad {
                    var: Var(id),
                    shape: node.value.shape().to_vec(),
                    grad: g,
                }),
                op => self.propagate(op, &node.value, g, &mut grads),
            }
        }
        Gradients { leaves }
    }

    fn deposit(&self, grads: &mut [Option<Grad<T>>], var: Var, g: Grad<T>) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(existing) => existing.accumulate(g),
            slot @ None => *slot = Some(g),
        }
    }
}

/// Bounding box of the nonzero spatial positions of a seed.
fn nonzero_window<T: Scalar>(dims: [usize; 4], data: &[T]) -> Option<Window> {
    let [_, _, h, w] = dims;
    let mut win: Option<Window> = None;
    for (i, v) in data.iter().enumerate() {
        if *v != T::zero() {
            let rem = i % (h * w);
            let p = Window::point(rem / w, rem % w);
            win = Some(win.map_or(p, |cur| cur.union(&p)));
        }
    }
    win
}

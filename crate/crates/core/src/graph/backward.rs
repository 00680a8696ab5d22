//! Vector-Jacobian products for every recorded operation.

use super::conv;
use super::window::{as4, Grad};
use super::{Graph, Op};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

impl<T: Scalar> Graph<T> {
    pub(super) fn propagate(
        &self,
        op: &Op<T>,
        value: &Tensor<T>,
        g: Grad<T>,
        grads: &mut [Option<Grad<T>>],
    ) {
        match op {
            Op::Leaf => unreachable!("leaves are collected, not propagated"),
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            } => {
                if self.requires_grad(*kernel) || self.requires_grad(*bias) {
                    let (gk, gb) = conv::backward_params(geom, self.value(*input).data(), &g);
                    let kdims = as4(self.value(*kernel).shape());
                    self.deposit(grads, *kernel, Grad::dense(kdims, gk));
                    self.deposit(grads, *bias, Grad::dense(as4(self.value(*bias).shape()), gb));
                }
                if self.requires_grad(*input) {
                    let gi = conv::backward_input(geom, self.value(*kernel).data(), &g);
                    self.deposit(grads, *input, gi);
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                mean,
                inv_std,
                train,
            } => self.batch_norm_backward(
                (*input, *gamma, *beta),
                mean,
                inv_std,
                *train,
                g,
                grads,
            ),
            Op::LeakyRelu { input, slope } => {
                let slope = *slope;
                let gi = g.map_with(self.value(*input).data(), |g, x| {
                    if x >= T::zero() {
                        g
                    } else {
                        g * slope
                    }
                });
                self.deposit(grads, *input, gi);
            }
            Op::Tanh { input } => {
                let gi = g.map_with(value.data(), |g, y| g * (T::one() - y * y));
                self.deposit(grads, *input, gi);
            }
            Op::Affine { input, scale } => {
                let gi = g.scaled(*scale);
                self.deposit(grads, *input, gi);
            }
            Op::Add { lhs, rhs } => {
                self.deposit(grads, *lhs, g.clone());
                self.deposit(grads, *rhs, g);
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                let area = g.window.area();
                let [nb, total, _, _] = g.dims;
                for &p in parts {
                    let [_, pc, h, w] = as4(self.value(p).shape());
                    if self.requires_grad(p) {
                        let mut data = Vec::with_capacity(nb * pc * area);
                        for b in 0..nb {
                            let start = (b * total + offset) * area;
                            data.extend_from_slice(&g.data[start..start + pc * area]);
                        }
                        let part = Grad {
                            dims: [nb, pc, h, w],
                            window: g.window,
                            data,
                        };
                        self.deposit(grads, p, part);
                    }
                    offset += pc;
                }
            }
            Op::WeightedAverage { x1, x2 } => {
                let v1 = self.value(*x1).data();
                let v2 = self.value(*x2).data();
                // y = N / D with N = x1^2 + x2^2 and D = x1 + x2.
                let partial = |a: T, b: T| {
                    let d = a + b;
                    if d == T::zero() {
                        T::from_f64_lossy(0.5)
                    } else {
                        let two = T::from_f64_lossy(2.0);
                        (two * a * d - (a * a + b * b)) / (d * d)
                    }
                };
                if self.requires_grad(*x1) {
                    let g1 = g.map_at(|gv, k| gv * partial(v1[k], v2[k]));
                    self.deposit(grads, *x1, g1);
                }
                if self.requires_grad(*x2) {
                    let g2 = g.map_at(|gv, k| gv * partial(v2[k], v1[k]));
                    self.deposit(grads, *x2, g2);
                }
            }
            Op::Ssim { a, b, config } => {
                let scale = g.data[0];
                let va = self.value(*a);
                let vb = self.value(*b);
                let [nb, nc, h, w] = as4(va.shape());
                let plane = h * w;
                let planes = T::from_usize(nb * nc).unwrap();
                let mut ga = Vec::with_capacity(va.len());
                let mut gb = Vec::with_capacity(va.len());
                for p in 0..nb * nc {
                    let r = p * plane..(p + 1) * plane;
                    let (pa, pb) = crate::training::ssim::ssim_plane_grad(
                        &va.data()[r.clone()],
                        &vb.data()[r],
                        h,
                        w,
                        config,
                    )
                    .expect("shape validated during forward");
                    ga.extend(pa.into_iter().map(|v| v * scale / planes));
                    gb.extend(pb.into_iter().map(|v| v * scale / planes));
                }
                let dims = [nb, nc, h, w];
                self.deposit(grads, *a, Grad::dense(dims, ga));
                self.deposit(grads, *b, Grad::dense(dims, gb));
            }
            Op::RmsDiff { a, b, rms } => {
                let scale = g.data[0];
                let va = self.value(*a).data();
                let vb = self.value(*b).data();
                let dims = as4(self.value(*a).shape());
                let plane = dims[2] * dims[3];
                let n = T::from_usize(plane).unwrap();
                let planes = T::from_usize(rms.len()).unwrap();
                let mut ga = Vec::with_capacity(va.len());
                for (p, &r) in rms.iter().enumerate() {
                    let range = p * plane..(p + 1) * plane;
                    if r == T::zero() {
                        // Subgradient at the kink of the norm.
                        ga.extend(std::iter::repeat_n(T::zero(), plane));
                    } else {
                        let k = scale / (planes * n * r);
                        ga.extend(va[range.clone()].iter().zip(&vb[range]).map(|(&x, &y)| (x - y) * k));
                    }
                }
                let gb: Vec<T> = ga.iter().map(|&v| -v).collect();
                self.deposit(grads, *a, Grad::dense(dims, ga));
                self.deposit(grads, *b, Grad::dense(dims, gb));
            }
            Op::WeightedSum { terms } => {
                for &(v, weight) in terms {
                    self.deposit(grads, v, g.clone().scaled(weight));
                }
            }
        }
    }

    fn batch_norm_backward(
        &self,
        (input, gamma, beta): (super::Var, super::Var, super::Var),
        mean: &[T],
        inv_std: &[T],
        train: bool,
        g: Grad<T>,
        grads: &mut [Option<Grad<T>>],
    ) {
        let x = self.value(input).data();
        let gam = self.value(gamma).data();
        let [nb, nc, h, w] = g.dims;
        // Batch statistics couple every position of a channel.
        let g = if train { g.to_full() } else { g };
        let win = g.window;
        let area = win.area();
        let mut sum_g = vec![T::zero(); nc];
        let mut sum_gx = vec![T::zero(); nc];
        for b in 0..nb {
            for c in 0..nc {
                let gp = g.plane(b, c);
                let xbase = (b * nc + c) * h * w;
                for r in 0..win.height() {
                    let xrow = xbase + (r + win.top) * w + win.left;
                    for k in 0..win.width() {
                        let gv = g.data[gp + r * win.width() + k];
                        let xhat = (x[xrow + k] - mean[c]) * inv_std[c];
                        sum_g[c] += gv;
                        sum_gx[c] += gv * xhat;
                    }
                }
            }
        }
        if self.requires_grad(gamma) {
            self.deposit(grads, gamma, Grad::dense([1, 1, 1, nc], sum_gx.clone()));
        }
        if self.requires_grad(beta) {
            self.deposit(grads, beta, Grad::dense([1, 1, 1, nc], sum_g.clone()));
        }
        if !self.requires_grad(input) {
            return;
        }
        let mut gi = Grad::zeros([nb, nc, h, w], win);
        if train {
            let n = T::from_usize(nb * h * w).unwrap();
            for b in 0..nb {
                for c in 0..nc {
                    let p = g.plane(b, c);
                    let xbase = (b * nc + c) * h * w;
                    let k = gam[c] * inv_std[c];
                    for i in 0..area {
                        let xhat = (x[xbase + i] - mean[c]) * inv_std[c];
                        gi.data[p + i] = k * (g.data[p + i] - sum_g[c] / n - xhat * sum_gx[c] / n);
                    }
                }
            }
        } else {
            for b in 0..nb {
                for c in 0..nc {
                    let p = g.plane(b, c);
                    let k = gam[c] * inv_std[c];
                    for i in 0..area {
                        gi.data[p + i] = g.data[p + i] * k;
                    }
                }
            }
        }
        self.deposit(grads, input, gi);
    }
}

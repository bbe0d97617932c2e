//! Strided convolution over time applied to each feature column, a stack of
//! pointwise convolutions, and a linear skip path from the raw input.
//!
//! Parameter layout:
//! `conv1 w[kernel×filters] b[filters] | pointwise (W[filters×filters] b[filters])×L |
//! dense w[rows_out×F×filters] b | skip w[window×F] b`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use super::lstm::{axpy, dot};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CnnArch {
    pub input_dim: usize,
    /// Rows per input window.
    pub window: usize,
    pub kernel: usize,
    pub stride: usize,
    pub filters: usize,
    pub pointwise_layers: usize,
}

/// Activations of every convolution layer and the dense pre-activation.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnTrace {
    /// `pointwise_layers + 1` maps of `[rows_out × F × filters]`.
    pub maps: Vec<Vec<f64>>,
    pub dense_pre: f64,
}

impl CnnArch {
    pub const WINDOW: usize = 1800;
    pub const KERNEL: usize = 60;
    pub const STRIDE: usize = 30;
    pub const FILTERS: usize = 10;
    pub const POINTWISE: usize = 5;

    /// Full-size network for 1800-row windows.
    pub fn new(input_dim: usize) -> Self {
        CnnArch {
            input_dim,
            window: Self::WINDOW,
            kernel: Self::KERNEL,
            stride: Self::STRIDE,
            filters: Self::FILTERS,
            pointwise_layers: Self::POINTWISE,
        }
    }

    /// Scales kernel and stride with the window so that the first layer keeps
    /// the same relative receptive field: a 1800-row window gets the
    /// full-size network.
    pub fn for_window(input_dim: usize, window: usize) -> Result<Self> {
        let kernel = (window * Self::KERNEL / Self::WINDOW).max(2);
        let stride = (kernel / 2).max(1);
        Self::with_dims(input_dim, window, kernel, stride)
    }

    pub fn with_dims(input_dim: usize, window: usize, kernel: usize, stride: usize) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::config("input_dim", "must be positive"));
        }
        if kernel == 0 || stride == 0 {
            return Err(Error::config("kernel", "kernel and stride must be positive"));
        }
        if window < kernel {
            return Err(Error::config("window", format!("{window} rows is shorter than the kernel ({kernel})")));
        }
        Ok(CnnArch { input_dim, window, kernel, stride, filters: Self::FILTERS, pointwise_layers: Self::POINTWISE })
    }

    /// Output height of the first (valid, strided) convolution.
    pub fn rows_out(&self) -> usize {
        (self.window - self.kernel) / self.stride + 1
    }

    pub fn param_count(&self) -> usize {
        let nf = self.filters;
        let flat = self.rows_out() * self.input_dim * nf;
        (self.kernel * nf + nf) + self.pointwise_layers * (nf * nf + nf) + (flat + 1) + (self.window * self.input_dim + 1)
    }

    fn conv1_len(&self) -> usize {
        self.kernel * self.filters + self.filters
    }

    fn pointwise_offset(&self, layer: usize) -> usize {
        self.conv1_len() + layer * (self.filters * self.filters + self.filters)
    }

    fn dense_offset(&self) -> usize {
        self.pointwise_offset(self.pointwise_layers)
    }

    fn skip_offset(&self) -> usize {
        self.dense_offset() + self.rows_out() * self.input_dim * self.filters + 1
    }

    /// Glorot-uniform weights and zero biases.
    pub fn init(&self, seed: u64) -> Vec<f64> {
        let mut rng = crate::rng::rng(seed, &[crate::rng::tag::INIT]);
        let mut p = vec![0.0; self.param_count()];
        let nf = self.filters;
        let mut fill = |p: &mut [f64], fan_in: usize, fan_out: usize| {
            let a = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
            for x in p {
                *x = rng.random_range(-a..=a);
            }
        };
        fill(&mut p[..self.kernel * nf], self.kernel, self.kernel * nf);
        for l in 0..self.pointwise_layers {
            let o = self.pointwise_offset(l);
            fill(&mut p[o..o + nf * nf], nf, nf);
        }
        let (d, s) = (self.dense_offset(), self.skip_offset());
        fill(&mut p[d..s - 1], s - 1 - d, 1);
        let n = self.window * self.input_dim;
        fill(&mut p[s..s + n], n, 1);
        p
    }

    pub fn forward(&self, p: &[f64], x: &[f64]) -> (f64, CnnTrace) {
        let (f, nf, k) = (self.input_dim, self.filters, self.kernel);
        let rows = self.rows_out();
        let w1 = &p[..k * nf];
        let b1 = &p[k * nf..k * nf + nf];
        let mut map = vec![0.0; rows * f * nf];
        for r in 0..rows {
            let base = r * self.stride;
            for c in 0..f {
                let out = &mut map[(r * f + c) * nf..(r * f + c + 1) * nf];
                out.copy_from_slice(b1);
                for kk in 0..k {
                    let xv = x[(base + kk) * f + c];
                    axpy(out, xv, &w1[kk * nf..(kk + 1) * nf]);
                }
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        let mut maps = Vec::with_capacity(self.pointwise_layers + 1);
        maps.push(map);
        for l in 0..self.pointwise_layers {
            let o = self.pointwise_offset(l);
            let w = &p[o..o + nf * nf];
            let b = &p[o + nf * nf..o + nf * nf + nf];
            let prev = maps.last().expect("first map pushed above");
            let mut next = vec![0.0; prev.len()];
            for (src, dst) in prev.chunks_exact(nf).zip(next.chunks_exact_mut(nf)) {
                dst.copy_from_slice(b);
                for (i, &a) in src.iter().enumerate() {
                    if a != 0.0 {
                        axpy(dst, a, &w[i * nf..(i + 1) * nf]);
                    }
                }
                dst.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            maps.push(next);
        }
        let d = self.dense_offset();
        let s = self.skip_offset();
        let dense_pre = p[s - 1] + dot(&p[d..s - 1], maps.last().expect("at least one map"));
        let n = self.window * f;
        let skip = p[s + n] + dot(&p[s..s + n], &x[..n]);
        (dense_pre.max(0.0) + skip, CnnTrace { maps, dense_pre })
    }

    pub fn backward(&self, p: &[f64], x: &[f64], tr: &CnnTrace, dlogit: f64, grads: &mut [f64]) {
        let (f, nf, k) = (self.input_dim, self.filters, self.kernel);
        let rows = self.rows_out();
        let n = self.window * f;
        let s = self.skip_offset();
        axpy(&mut grads[s..s + n], dlogit, &x[..n]);
        grads[s + n] += dlogit;
        if tr.dense_pre <= 0.0 {
            return;
        }
        let d = self.dense_offset();
        let last = tr.maps.last().expect("at least one map");
        axpy(&mut grads[d..s - 1], dlogit, last);
        grads[s - 1] += dlogit;
        // Gradient w.r.t. the current map, masked to pre-activation.
        let mut delta: Vec<f64> =
            p[d..s - 1].iter().zip(last).map(|(w, &a)| if a > 0.0 { dlogit * w } else { 0.0 }).collect();
        for l in (0..self.pointwise_layers).rev() {
            let o = self.pointwise_offset(l);
            let prev = &tr.maps[l];
            let mut dprev = vec![0.0; prev.len()];
            for ((src, dz), dsrc) in prev.chunks_exact(nf).zip(delta.chunks_exact(nf)).zip(dprev.chunks_exact_mut(nf)) {
                for (i, &a) in src.iter().enumerate() {
                    if a != 0.0 {
                        axpy(&mut grads[o + i * nf..o + (i + 1) * nf], a, dz);
                        dsrc[i] = dot(&p[o + i * nf..o + (i + 1) * nf], dz);
                    }
                }
                axpy(&mut grads[o + nf * nf..o + nf * nf + nf], 1.0, dz);
            }
            delta = dprev;
        }
        for r in 0..rows {
            let base = r * self.stride;
            for c in 0..f {
                let dz = &delta[(r * f + c) * nf..(r * f + c + 1) * nf];
                if dz.iter().all(|&v| v == 0.0) {
                    continue;
                }
                for kk in 0..k {
                    let xv = x[(base + kk) * f + c];
                    axpy(&mut grads[kk * nf..(kk + 1) * nf], xv, dz);
                }
                axpy(&mut grads[k * nf..k * nf + nf], 1.0, dz);
            }
        }
    }
}

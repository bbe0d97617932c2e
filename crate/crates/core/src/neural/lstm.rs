//! Single-layer LSTM over the rows of a window, read out from the final
//! hidden state by one sigmoid unit.
//!
//! Parameter layout (gate order input, forget, candidate, output):
//! `W[4h×F] | U[4h×h] | b[4h] | v[h] | c`, all row-major.

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use super::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmArch {
    pub input_dim: usize,
    pub hidden: usize,
}

/// Gate activations, cell states and hidden states for every step.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmTrace {
    /// `[T × 4h]`, post-activation.
    pub gates: Vec<f64>,
    /// `[T × h]`.
    pub cells: Vec<f64>,
    /// `[T × h]`.
    pub hidden: Vec<f64>,
}

struct Offsets {
    w: usize,
    u: usize,
    b: usize,
    v: usize,
    c: usize,
}

impl LstmArch {
    pub const HIDDEN: usize = 2;

    pub fn new(input_dim: usize) -> Self {
        LstmArch { input_dim, hidden: Self::HIDDEN }
    }

    pub fn with_hidden(input_dim: usize, hidden: usize) -> Self {
        LstmArch { input_dim, hidden }
    }

    pub fn param_count(&self) -> usize {
        let (f, h) = (self.input_dim, self.hidden);
        4 * (h * (f + h) + h) + (h + 1)
    }

    fn offsets(&self) -> Offsets {
        let (f, h) = (self.input_dim, self.hidden);
        let w = 0;
        let u = w + 4 * h * f;
        let b = u + 4 * h * h;
        let v = b + 4 * h;
        let c = v + h;
        Offsets { w, u, b, v, c }
    }

    /// Input weights uniform in ±1/√F, recurrent and readout weights uniform
    /// in ±1/√h, zero biases except a forget bias of one.
    pub fn init(&self, seed: u64) -> Vec<f64> {
        let (f, h) = (self.input_dim, self.hidden);
        let o = self.offsets();
        let mut rng = crate::rng::rng(seed, &[crate::rng::tag::INIT]);
        let mut p = vec![0.0; self.param_count()];
        let a_in = 1.0 / libm::sqrt(f.max(1) as f64);
        let a_rec = 1.0 / libm::sqrt(h.max(1) as f64);
        for x in &mut p[o.w..o.u] {
            *x = rng.random_range(-a_in..=a_in);
        }
        for x in &mut p[o.u..o.b] {
            *x = rng.random_range(-a_rec..=a_rec);
        }
        for x in &mut p[o.b + h..o.b + 2 * h] {
            *x = 1.0;
        }
        for x in &mut p[o.v..o.c] {
            *x = rng.random_range(-a_rec..=a_rec);
        }
        p
    }

    /// Runs the recurrence over `rows` steps of `x` (row-major, F columns).
    pub fn forward(&self, p: &[f64], x: &[f64], rows: usize) -> (f64, LstmTrace) {
        let (f, h) = (self.input_dim, self.hidden);
        let o = self.offsets();
        let mut gates = vec![0.0; rows * 4 * h];
        let mut cells = vec![0.0; rows * h];
        let mut hidden = vec![0.0; rows * h];
        let zeros = vec![0.0; h];
        let mut z = vec![0.0; 4 * h];
        for t in 0..rows {
            let xt = &x[t * f..(t + 1) * f];
            let (h_prev, c_prev) = if t == 0 {
                (&zeros[..], &zeros[..])
            } else {
                (&hidden[(t - 1) * h..t * h], &cells[(t - 1) * h..t * h])
            };
            for (r, zr) in z.iter_mut().enumerate() {
                let wr = &p[o.w + r * f..o.w + (r + 1) * f];
                let ur = &p[o.u + r * h..o.u + (r + 1) * h];
                *zr = p[o.b + r] + dot(wr, xt) + dot(ur, h_prev);
            }
            let g = &mut gates[t * 4 * h..(t + 1) * 4 * h];
            for j in 0..h {
                g[j] = sigmoid(z[j]);
                g[h + j] = sigmoid(z[h + j]);
                g[2 * h + j] = libm::tanh(z[2 * h + j]);
                g[3 * h + j] = sigmoid(z[3 * h + j]);
            }
            let mut c_new = vec![0.0; h];
            for j in 0..h {
                c_new[j] = g[h + j] * c_prev[j] + g[j] * g[2 * h + j];
            }
            for j in 0..h {
                hidden[t * h + j] = g[3 * h + j] * libm::tanh(c_new[j]);
            }
            cells[t * h..(t + 1) * h].copy_from_slice(&c_new);
        }
        let last = if rows == 0 { &zeros[..] } else { &hidden[(rows - 1) * h..rows * h] };
        let logit = p[o.c] + dot(&p[o.v..o.c], last);
        (logit, LstmTrace { gates, cells, hidden })
    }

    /// Backpropagation through time; adds `dlogit`-scaled gradients.
    pub fn backward(&self, p: &[f64], x: &[f64], tr: &LstmTrace, dlogit: f64, grads: &mut [f64]) {
        let (f, h) = (self.input_dim, self.hidden);
        let o = self.offsets();
        let rows = tr.cells.len() / h.max(1);
        grads[o.c] += dlogit;
        if rows == 0 {
            return;
        }
        let last = &tr.hidden[(rows - 1) * h..rows * h];
        for j in 0..h {
            grads[o.v + j] += dlogit * last[j];
        }
        let mut dh: Vec<f64> = p[o.v..o.c].iter().map(|v| dlogit * v).collect();
        let mut dc = vec![0.0; h];
        let mut dz = vec![0.0; 4 * h];
        for t in (0..rows).rev() {
            let g = &tr.gates[t * 4 * h..(t + 1) * 4 * h];
            let c = &tr.cells[t * h..(t + 1) * h];
            for j in 0..h {
                let (i, fg, cand, og) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                let c_prev = if t == 0 { 0.0 } else { tr.cells[(t - 1) * h + j] };
                let tc = libm::tanh(c[j]);
                let d_o = dh[j] * tc;
                let dct = dc[j] + dh[j] * og * (1.0 - tc * tc);
                dz[j] = dct * cand * i * (1.0 - i);
                dz[h + j] = dct * c_prev * fg * (1.0 - fg);
                dz[2 * h + j] = dct * i * (1.0 - cand * cand);
                dz[3 * h + j] = d_o * og * (1.0 - og);
                dc[j] = dct * fg;
            }
            let xt = &x[t * f..(t + 1) * f];
            for (r, &dzr) in dz.iter().enumerate() {
                if dzr == 0.0 {
                    continue;
                }
                axpy(&mut grads[o.w + r * f..o.w + (r + 1) * f], dzr, xt);
                grads[o.b + r] += dzr;
            }
            dh.iter_mut().for_each(|d| *d = 0.0);
            if t > 0 {
                let h_prev = &tr.hidden[(t - 1) * h..t * h];
                for (r, &dzr) in dz.iter().enumerate() {
                    axpy(&mut grads[o.u + r * h..o.u + (r + 1) * h], dzr, h_prev);
                    for (j, d) in dh.iter_mut().enumerate() {
                        *d += p[o.u + r * h + j] * dzr;
                    }
                }
            }
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

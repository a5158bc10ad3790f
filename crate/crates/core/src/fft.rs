//! Three-dimensional complex FFTs on a cube, with pruning for the zero-padded
//! convolution used by the free-space Poisson solver.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Forward and inverse plans for a cube of side `m`.
pub struct Fft3 {
    pub m: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Fft3 {
    pub fn new(m: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            m,
            forward: planner.plan_fft_forward(m),
            inverse: planner.plan_fft_inverse(m),
        }
    }

    fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.m + j) * self.m + k
    }

    /// Transform along `axis` for all lines whose two other indices lie in
    /// `[0, lim_a) × [0, lim_b)` (ordered as the remaining axes).
    fn transform_axis(&self, data: &mut [Complex64], axis: usize, lim_a: usize, lim_b: usize, inverse: bool) {
        let m = self.m;
        let plan = if inverse { &self.inverse } else { &self.forward };
        let mut line = vec![Complex64::new(0.0, 0.0); m];
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        for a in 0..lim_a {
            for b in 0..lim_b {
                let (base, stride) = match axis {
                    0 => (self.idx(0, a, b), m * m),
                    1 => (self.idx(a, 0, b), m),
                    _ => (self.idx(a, b, 0), 1),
                };
                if stride == 1 {
                    plan.process_with_scratch(&mut data[base..base + m], &mut scratch);
                } else {
                    for (p, v) in line.iter_mut().enumerate() {
                        *v = data[base + p * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (p, v) in line.iter().enumerate() {
                        data[base + p * stride] = *v;
                    }
                }
            }
        }
    }

    /// Full unnormalised forward transform.
    pub fn forward(&self, data: &mut [Complex64]) {
        let m = self.m;
        for axis in [2, 1, 0] {
            self.transform_axis(data, axis, m, m, false);
        }
    }

    /// Forward transform of data that is nonzero only for indices `< n` on
    /// every axis.
    pub fn forward_pruned(&self, data: &mut [Complex64], n: usize) {
        let m = self.m;
        self.transform_axis(data, 2, n, n, false);
        self.transform_axis(data, 1, n, m, false);
        self.transform_axis(data, 0, m, m, false);
    }

    /// Inverse transform (normalised) where only outputs with indices `< n`
    /// on every axis are needed.
    pub fn inverse_pruned(&self, data: &mut [Complex64], n: usize) {
        let m = self.m;
        self.transform_axis(data, 0, m, m, true);
        self.transform_axis(data, 1, n, m, true);
        self.transform_axis(data, 2, n, n, true);
        let scale = 1.0 / (m * m * m) as f64;
        for i in 0..n {
            for j in 0..n {
                let base = self.idx(i, j, 0);
                for v in &mut data[base..base + n] {
                    *v *= scale;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pruned_matches_naive_circular_convolution() {
        let n = 3;
        let m = 6;
        let fft = Fft3::new(m);
        let f: Vec<f64> = (0..n * n * n).map(|i| ((i * 7 % 11) as f64) - 5.0).collect();
        let k: Vec<f64> = (0..m * m * m).map(|i| ((i * 13 % 17) as f64) * 0.1).collect();
        let mut fpad = vec![Complex64::new(0.0, 0.0); m * m * m];
        for i in 0..n {
            for j in 0..n {
                for l in 0..n {
                    fpad[(i * m + j) * m + l] = Complex64::new(f[(i * n + j) * n + l], 0.0);
                }
            }
        }
        let mut kc: Vec<Complex64> = k.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft.forward(&mut kc);
        fft.forward_pruned(&mut fpad, n);
        for (a, b) in fpad.iter_mut().zip(&kc) {
            *a *= b;
        }
        fft.inverse_pruned(&mut fpad, n);
        for i in 0..n {
            for j in 0..n {
                for l in 0..n {
                    let mut expect = 0.0;
                    for a in 0..n {
                        for b in 0..n {
                            for c in 0..n {
                                let ki = (i + m - a) % m;
                                let kj = (j + m - b) % m;
                                let kl = (l + m - c) % m;
                                expect += f[(a * n + b) * n + c] * k[(ki * m + kj) * m + kl];
                            }
                        }
                    }
                    let got = fpad[(i * m + j) * m + l].re;
                    assert!((got - expect).abs() < 1e-10, "{got} vs {expect}");
                }
            }
        }
    }
}

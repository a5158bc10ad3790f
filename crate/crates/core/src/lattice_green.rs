//! Green's function of the seven-point Laplacian on the infinite cubic
//! lattice, g with Σ_{nb} g(m+e) − 6 g(m) = δ_{m,0}.
//!
//! g(m) = −∫₀^∞ Ĩ_{m₁}(2t) Ĩ_{m₂}(2t) Ĩ_{m₃}(2t) dt with Ĩ_k(x) = e^{−x} I_k(x).
//! The integral is split into geometric Gauss–Legendre panels up to a large
//! cutoff plus an asymptotic tail integrated term by term.

use std::sync::{Arc, Mutex};

const PANEL_NODES: usize = 32;
const TAIL_TERMS: usize = 10;

/// Gauss–Legendre nodes and weights on [−1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2, "Gauss-Legendre rule needs at least two nodes");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// e^{−x} I_k(x) for k = 0..=kmax by Miller's backward recurrence, normalised
/// with Ĩ₀ + 2 Σ Ĩ_k = 1.
pub fn scaled_bessel_i(x: f64, kmax: usize) -> Vec<f64> {
    let mut out = vec![0.0; kmax + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return out;
    }
    let start = kmax + 30 + (90.0 * x).sqrt().ceil() as usize;
    let (mut above, mut cur) = (0.0f64, 1e-300f64);
    let mut sum = 0.0;
    for k in (1..=start).rev() {
        if k <= kmax {
            out[k] = cur;
        }
        sum += 2.0 * cur;
        let below = above + (2.0 * k as f64 / x) * cur;
        above = cur;
        cur = below;
        if cur.abs() > 1e200 {
            let s = 1e-200;
            cur *= s;
            above *= s;
            sum *= s;
            for v in out.iter_mut() {
                *v *= s;
            }
        }
    }
    out[0] = cur;
    sum += cur;
    for v in out.iter_mut() {
        *v /= sum;
    }
    out
}

/// Large-argument series coefficients: Ĩ_m(x) ≈ (2πx)^{−1/2} Σ_k s_k x^{−k}.
fn asymptotic_series(m: usize) -> [f64; TAIL_TERMS] {
    let mut s = [0.0; TAIL_TERMS];
    s[0] = 1.0;
    let mu = 4.0 * (m as f64).powi(2);
    for k in 1..TAIL_TERMS {
        let odd = (2 * k - 1) as f64;
        s[k] = -s[k - 1] * (mu - odd * odd) / (k as f64 * 8.0);
    }
    s
}

/// Table of g(m) for 0 ≤ m_i ≤ mmax (g is even in every coordinate).
#[derive(Debug)]
pub struct LatticeGreen {
    pub mmax: usize,
    values: Vec<f64>,
}

impl LatticeGreen {
    pub fn compute(mmax: usize) -> Self {
        let cutoff_x = 2000.0 * ((mmax * mmax) as f64 + 1.0);
        let cutoff = 0.5 * cutoff_x;
        let (gl_x, gl_w) = gauss_legendre(PANEL_NODES);
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        let mut panels = vec![(0.0, 0.5)];
        let mut a = 0.5;
        while a < cutoff {
            panels.push((a, 2.0 * a));
            a *= 2.0;
        }
        let cutoff = a;
        for (lo, hi) in panels {
            let half = 0.5 * (hi - lo);
            let mid = 0.5 * (hi + lo);
            for (x, w) in gl_x.iter().zip(&gl_w) {
                nodes.push(mid + half * x);
                weights.push(half * w);
            }
        }
        let bessel: Vec<Vec<f64>> = nodes.iter().map(|&t| scaled_bessel_i(2.0 * t, mmax)).collect();
        let series: Vec<[f64; TAIL_TERMS]> = (0..=mmax).map(asymptotic_series).collect();

        let side = mmax + 1;
        let mut values = vec![0.0; side * side * side];
        let pref = (4.0 * std::f64::consts::PI).powf(-1.5);
        for a in 0..=mmax {
            for b in 0..=a {
                for c in 0..=b {
                    let mut body = 0.0;
                    for (row, w) in bessel.iter().zip(&weights) {
                        body += w * row[a] * row[b] * row[c];
                    }
                    // product of the three series, truncated
                    let mut prod = [0.0; TAIL_TERMS];
                    for i in 0..TAIL_TERMS {
                        for j in 0..TAIL_TERMS - i {
                            for k in 0..TAIL_TERMS - i - j {
                                prod[i + j + k] += series[a][i] * series[b][j] * series[c][k];
                            }
                        }
                    }
                    let mut tail = 0.0;
                    for (k, coef) in prod.iter().enumerate() {
                        let kf = k as f64;
                        tail += coef * 2f64.powi(-(k as i32)) * cutoff.powf(-kf - 0.5) / (kf + 0.5);
                    }
                    let g = -(body + pref * tail);
                    for (i, j, k) in [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)] {
                        values[(i * side + j) * side + k] = g;
                    }
                }
            }
        }
        Self { mmax, values }
    }

    /// Shared table covering at least `mmax`, computed once per process.
    pub fn shared(mmax: usize) -> Arc<LatticeGreen> {
        static CACHE: Mutex<Option<Arc<LatticeGreen>>> = Mutex::new(None);
        let mut guard = CACHE.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(table) = guard.as_ref() {
            if table.mmax >= mmax {
                return table.clone();
            }
        }
        let table = Arc::new(LatticeGreen::compute(mmax));
        *guard = Some(table.clone());
        table
    }

    /// g at integer offset (any signs), |m_i| ≤ mmax.
    pub fn get(&self, m: [i64; 3]) -> f64 {
        let side = self.mmax + 1;
        let [a, b, c] = m.map(|v| v.unsigned_abs() as usize);
        self.values[(a * side + b) * side + c]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn watson_integral_at_origin() {
        let g = LatticeGreen::compute(4);
        // −W/6 with Watson's simple-cubic integral W = 1.516386059151978…
        assert!((g.get([0, 0, 0]) + 1.516_386_059_151_978 / 6.0).abs() < 1e-12, "{}", g.get([0, 0, 0]));
    }

    #[test]
    fn lattice_laplacian_is_delta() {
        let g = LatticeGreen::compute(12);
        for m in [[0i64, 0, 0], [1, 0, 0], [2, 1, 0], [5, 3, 2], [11, 0, 4], [7, 7, 7]] {
            let mut lap = -6.0 * g.get(m);
            for axis in 0..3 {
                for s in [-1i64, 1] {
                    let mut q = m;
                    q[axis] += s;
                    lap += g.get(q);
                }
            }
            let expect = if m == [0, 0, 0] { 1.0 } else { 0.0 };
            assert!((lap - expect).abs() < 1e-13, "m = {m:?}: {lap}");
        }
    }

    #[test]
    fn far_field_is_newtonian() {
        let g = LatticeGreen::compute(40);
        let r = 40.0f64;
        let newton = -1.0 / (4.0 * std::f64::consts::PI * r);
        let rel = (g.get([40, 0, 0]) - newton) / newton;
        assert!(rel.abs() < 1e-3, "{rel}");
    }

    #[test]
    fn bessel_normalisation_and_values() {
        let v = scaled_bessel_i(1.0, 3);
        // I0(1) e^{-1} = 0.46575960759364043
        assert!((v[0] - 0.465_759_607_593_640_4).abs() < 1e-15);
        // I1(1) e^{-1} = 0.2079104153497085
        assert!((v[1] - 0.207_910_415_349_708_5).abs() < 1e-15);
        let big = scaled_bessel_i(5.0e5, 2);
        let approx = 1.0 / (2.0 * std::f64::consts::PI * 5.0e5f64).sqrt();
        assert!((big[0] / approx - 1.0).abs() < 1e-5);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert!((s - 2.0 / 15.0).abs() < 1e-14);
    }
}

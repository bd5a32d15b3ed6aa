//! Orthonormal 2D DCT-II on square patches and 1D Haar along the group axis.

/// Row-major `n x n` orthonormal DCT-II matrix: `C[k][i]`.
#[derive(Debug, Clone)]
pub struct Dct2d {
    n: usize,
    basis: Vec<f64>,
}

impl Dct2d {
    pub fn new(n: usize) -> Self {
        assert!(n > 0);
        let mut basis = vec![0.0; n * n];
        let nf = n as f64;
        for k in 0..n {
            let scale = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
            for i in 0..n {
                basis[k * n + i] =
                    scale * (std::f64::consts::PI * (2.0 * i as f64 + 1.0) * k as f64 / (2.0 * nf)).cos();
            }
        }
        Self { n, basis }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    /// `out = C X C^T`, with `tmp` as scratch. All slices hold `n*n` values.
    pub fn forward(&self, x: &[f64], out: &mut [f64], tmp: &mut [f64]) {
        let n = self.n;
        let c = &self.basis;
        // tmp = C X
        for k in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for i in 0..n {
                    s += c[k * n + i] * x[i * n + j];
                }
                tmp[k * n + j] = s;
            }
        }
        // out = tmp C^T
        for k in 0..n {
            for l in 0..n {
                let mut s = 0.0;
                for j in 0..n {
                    s += tmp[k * n + j] * c[l * n + j];
                }
                out[k * n + l] = s;
            }
        }
    }

    /// `out = C^T Y C`.
    pub fn inverse(&self, y: &[f64], out: &mut [f64], tmp: &mut [f64]) {
        let n = self.n;
        let c = &self.basis;
        // tmp = C^T Y
        for i in 0..n {
            for l in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += c[k * n + i] * y[k * n + l];
                }
                tmp[i * n + l] = s;
            }
        }
        // out = tmp C
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for l in 0..n {
                    s += tmp[i * n + l] * c[l * n + j];
                }
                out[i * n + j] = s;
            }
        }
    }
}

/// In-place orthonormal multilevel Haar transform. `len` must be a power of two.
///
/// Output layout: `[approx, detail(coarsest), ..., detail(finest)]`.
pub fn haar_forward(v: &mut [f64], scratch: &mut [f64]) {
    let n = v.len();
    debug_assert!(n.is_power_of_two());
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut len = n;
    while len > 1 {
        let half = len / 2;
        for i in 0..half {
            let (a, b) = (v[2 * i], v[2 * i + 1]);
            scratch[i] = (a + b) * s;
            scratch[half + i] = (a - b) * s;
        }
        v[..len].copy_from_slice(&scratch[..len]);
        len = half;
    }
}

pub fn haar_inverse(v: &mut [f64], scratch: &mut [f64]) {
    let n = v.len();
    debug_assert!(n.is_power_of_two());
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        for i in 0..half {
            let (a, d) = (v[i], v[half + i]);
            scratch[2 * i] = (a + d) * s;
            scratch[2 * i + 1] = (a - d) * s;
        }
        v[..len].copy_from_slice(&scratch[..len]);
        len *= 2;
    }
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..64 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Separable 2D Kaiser window of side `n`, row-major.
pub fn kaiser_window(n: usize, beta: f64) -> Vec<f64> {
    let w1: Vec<f64> = if n == 1 {
        vec![1.0]
    } else {
        (0..n)
            .map(|i| {
                let r = 2.0 * i as f64 / (n as f64 - 1.0) - 1.0;
                bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / bessel_i0(beta)
            })
            .collect()
    };
    let mut w = Vec::with_capacity(n * n);
    for a in &w1 {
        for b in &w1 {
            w.push(a * b);
        }
    }
    w
}

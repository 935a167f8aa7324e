//! Iterative radix-2 complex FFT in `f64`.

use alloc::vec::Vec;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    pub const fn new(re: f64, im: f64) -> Self {
        Complex { re, im }
    }

    pub fn norm_sqr(self) -> f64 {
        self.re * self.re + self.im * self.im
    }
}

impl core::ops::Mul for Complex {
    type Output = Complex;

    fn mul(self, o: Complex) -> Complex {
        Complex::new(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)
    }
}

/// Precomputed plan for one power-of-two length.
#[derive(Clone, Debug)]
pub struct Fft {
    n: usize,
    twiddles: Vec<Complex>,
    bitrev: Vec<usize>,
}

impl Fft {
    pub fn new(n: usize) -> Self {
        assert!(n.is_power_of_two() && n >= 2, "fft length must be a power of two");
        let twiddles = (0..n / 2)
            .map(|k| {
                let a = -2.0 * core::f64::consts::PI * k as f64 / n as f64;
                Complex::new(libm::cos(a), libm::sin(a))
            })
            .collect();
        let bits = n.trailing_zeros();
        let bitrev = (0..n).map(|i| i.reverse_bits() >> (usize::BITS - bits)).collect();
        Fft { n, twiddles, bitrev }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// In-place forward transform, `X_k = Σ x_n e^{-2πikn/N}`.
    pub fn forward(&self, buf: &mut [Complex]) {
        self.run(buf, false);
    }

    /// In-place unnormalized inverse, `x_n = Σ X_k e^{+2πikn/N}`.
    pub fn inverse_unnormalized(&self, buf: &mut [Complex]) {
        self.run(buf, true);
    }

    fn run(&self, buf: &mut [Complex], inverse: bool) {
        let n = self.n;
        assert_eq!(buf.len(), n);
        for i in 0..n {
            let j = self.bitrev[i];
            if j > i {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let step = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let mut w = self.twiddles[k * step];
                    if inverse {
                        w.im = -w.im;
                    }
                    let u = buf[start + k];
                    let v = buf[start + k + half] * w;
                    buf[start + k] = Complex::new(u.re + v.re, u.im + v.im);
                    buf[start + k + half] = Complex::new(u.re - v.re, u.im - v.im);
                }
            }
            len <<= 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_direct_dft() {
        let n = 16;
        let x: Vec<Complex> = (0..n)
            .map(|i| Complex::new(libm::sin(i as f64 * 0.7), libm::cos(i as f64 * 1.3)))
            .collect();
        let mut y = x.clone();
        Fft::new(n).forward(&mut y);
        for (k, yk) in y.iter().enumerate() {
            let mut acc = Complex::default();
            for (j, v) in x.iter().enumerate() {
                let a = -2.0 * core::f64::consts::PI * (k * j) as f64 / n as f64;
                acc.re += v.re * libm::cos(a) - v.im * libm::sin(a);
                acc.im += v.re * libm::sin(a) + v.im * libm::cos(a);
            }
            assert!((acc.re - yk.re).abs() < 1e-9 && (acc.im - yk.im).abs() < 1e-9);
        }
    }

    #[test]
    fn inverse_round_trip() {
        let n = 64;
        let plan = Fft::new(n);
        let x: Vec<Complex> = (0..n).map(|i| Complex::new(i as f64, -(i as f64) * 0.5)).collect();
        let mut y = x.clone();
        plan.forward(&mut y);
        plan.inverse_unnormalized(&mut y);
        for (a, b) in x.iter().zip(&y) {
            assert!((a.re - b.re / n as f64).abs() < 1e-9);
            assert!((a.im - b.im / n as f64).abs() < 1e-9);
        }
    }
}

//! Second-order IIR sections (RBJ audio-EQ cookbook).

use core::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
}

impl Biquad {
    fn normalized(b0: f64, b1: f64, b2: f64, a0: f64, a1: f64, a2: f64) -> Self {
        Biquad {
            b0: b0 / a0,
            b1: b1 / a0,
            b2: b2 / a0,
            a1: a1 / a0,
            a2: a2 / a0,
        }
    }

    fn omega(freq: f64, sample_rate: f64) -> (f64, f64) {
        let w = 2.0 * PI * freq / sample_rate;
        (libm::cos(w), libm::sin(w))
    }

    pub fn low_pass(freq: f64, q: f64, sample_rate: f64) -> Self {
        let (c, s) = Self::omega(freq, sample_rate);
        let alpha = s / (2.0 * q);
        Self::normalized((1.0 - c) / 2.0, 1.0 - c, (1.0 - c) / 2.0, 1.0 + alpha, -2.0 * c, 1.0 - alpha)
    }

    pub fn high_pass(freq: f64, q: f64, sample_rate: f64) -> Self {
        let (c, s) = Self::omega(freq, sample_rate);
        let alpha = s / (2.0 * q);
        Self::normalized((1.0 + c) / 2.0, -(1.0 + c), (1.0 + c) / 2.0, 1.0 + alpha, -2.0 * c, 1.0 - alpha)
    }

    pub fn peaking(freq: f64, q: f64, gain_db: f64, sample_rate: f64) -> Self {
        let (c, s) = Self::omega(freq, sample_rate);
        let a = libm::pow(10.0, gain_db / 40.0);
        let alpha = s / (2.0 * q);
        Self::normalized(
            1.0 + alpha * a,
            -2.0 * c,
            1.0 - alpha * a,
            1.0 + alpha / a,
            -2.0 * c,
            1.0 - alpha / a,
        )
    }

    pub fn low_shelf(freq: f64, gain_db: f64, sample_rate: f64) -> Self {
        let (c, s) = Self::omega(freq, sample_rate);
        let a = libm::pow(10.0, gain_db / 40.0);
        let alpha = s / 2.0 * libm::sqrt(2.0);
        let sa = 2.0 * libm::sqrt(a) * alpha;
        Self::normalized(
            a * ((a + 1.0) - (a - 1.0) * c + sa),
            2.0 * a * ((a - 1.0) - (a + 1.0) * c),
            a * ((a + 1.0) - (a - 1.0) * c - sa),
            (a + 1.0) + (a - 1.0) * c + sa,
            -2.0 * ((a - 1.0) + (a + 1.0) * c),
            (a + 1.0) + (a - 1.0) * c - sa,
        )
    }

    pub fn high_shelf(freq: f64, gain_db: f64, sample_rate: f64) -> Self {
        let (c, s) = Self::omega(freq, sample_rate);
        let a = libm::pow(10.0, gain_db / 40.0);
        let alpha = s / 2.0 * libm::sqrt(2.0);
        let sa = 2.0 * libm::sqrt(a) * alpha;
        Self::normalized(
            a * ((a + 1.0) + (a - 1.0) * c + sa),
            -2.0 * a * ((a - 1.0) + (a + 1.0) * c),
            a * ((a + 1.0) + (a - 1.0) * c - sa),
            (a + 1.0) - (a - 1.0) * c + sa,
            2.0 * ((a - 1.0) - (a + 1.0) * c),
            (a + 1.0) - (a - 1.0) * c - sa,
        )
    }

    /// Filters `x` in place (direct form I, zero initial state).
    pub fn process(&self, x: &mut [f64]) {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        for v in x.iter_mut() {
            let x0 = *v;
            let y0 = self.b0 * x0 + self.b1 * x1 + self.b2 * x2 - self.a1 * y1 - self.a2 * y2;
            x2 = x1;
            x1 = x0;
            y2 = y1;
            y1 = y0;
            *v = y0;
        }
    }

    /// Magnitude response at `freq`.
    pub fn gain_at(&self, freq: f64, sample_rate: f64) -> f64 {
        let w = 2.0 * PI * freq / sample_rate;
        let (c1, s1, c2, s2) = (libm::cos(w), libm::sin(w), libm::cos(2.0 * w), libm::sin(2.0 * w));
        let nr = self.b0 + self.b1 * c1 + self.b2 * c2;
        let ni = -(self.b1 * s1 + self.b2 * s2);
        let dr = 1.0 + self.a1 * c1 + self.a2 * c2;
        let di = -(self.a1 * s1 + self.a2 * s2);
        libm::sqrt((nr * nr + ni * ni) / (dr * dr + di * di))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn responses_have_expected_shape() {
        let sr = 44_100.0;
        let lp = Biquad::low_pass(1000.0, core::f64::consts::FRAC_1_SQRT_2, sr);
        assert!((lp.gain_at(10.0, sr) - 1.0).abs() < 1e-3);
        assert!((lp.gain_at(1000.0, sr) - core::f64::consts::FRAC_1_SQRT_2).abs() < 1e-3);
        assert!(lp.gain_at(10_000.0, sr) < 0.02);
        let hp = Biquad::high_pass(1000.0, core::f64::consts::FRAC_1_SQRT_2, sr);
        assert!(hp.gain_at(50.0, sr) < 0.01);
        let pk = Biquad::peaking(2000.0, 1.0, 6.0, sr);
        assert!((20.0 * libm::log10(pk.gain_at(2000.0, sr)) - 6.0).abs() < 1e-6);
        let ls = Biquad::low_shelf(200.0, -9.0, sr);
        assert!((20.0 * libm::log10(ls.gain_at(5.0, sr)) + 9.0).abs() < 0.1);
        let hs = Biquad::high_shelf(5000.0, 9.0, sr);
        assert!((20.0 * libm::log10(hs.gain_at(20_000.0, sr)) - 9.0).abs() < 0.3);
    }
}

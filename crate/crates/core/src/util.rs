/// 64-bit FNV-1a, used for checkpoint and request fingerprints.
#[derive(Debug, Clone, Copy)]
pub struct Fnv64(u64);

impl Default for Fnv64 {
    fn default() -> Self {
        Fnv64(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv64 {
    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn write_u64(&mut self, v: u64) {
        self.write(&v.to_le_bytes());
    }

    pub fn write_f32s(&mut self, values: &[f32]) {
        for v in values {
            self.write(&v.to_le_bytes());
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

pub fn fingerprint_f32(values: &[f32]) -> u64 {
    let mut h = Fnv64::default();
    h.write_f32s(values);
    h.finish()
}

pub(crate) fn round_half_away(x: f64) -> f64 {
    if x >= 0.0 {
        libm::floor(x + 0.5)
    } else {
        -libm::floor(-x + 0.5)
    }
}

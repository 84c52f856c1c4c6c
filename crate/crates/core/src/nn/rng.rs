//! Counter-based randomness for dropout masks.
//!
//! A mask element is a pure function of `(seed, site, step, sample, index)`
//! so replaying a training step reproduces the same masks without carrying
//! generator state around.

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DropoutKey {
    pub seed: u64,
    pub step: u64,
    pub sample: u64,
}

impl DropoutKey {
    /// Uniform draw in `[0, 1)` for element `index` at dropout site `site`.
    pub fn uniform(&self, site: u64, index: u64) -> f64 {
        let mut h = splitmix64(self.seed);
        h = splitmix64(h ^ site);
        h = splitmix64(h ^ self.step);
        h = splitmix64(h ^ self.sample);
        h = splitmix64(h ^ index);
        (h >> 11) as f64 / (1u64 << 53) as f64
    }
}

//! Portable integer hashing for the mock encoders and synthetic scenes.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const MIX_1: u64 = 0xBF58_476D_1CE4_E5B9;
const MIX_2: u64 = 0x94D0_49BB_1331_11EB;

/// One step of SplitMix64 from state `x`: advance by the golden gamma, then
/// apply the finaliser.
#[inline]
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(MIX_1);
    z = (z ^ (z >> 27)).wrapping_mul(MIX_2);
    z ^ (z >> 31)
}

/// Raw coordinate `j` of concept `c` under `seed`, uniform on `[-1, 1)`.
#[inline]
pub fn concept_coord(seed: u64, concept: u64, j: u64) -> f64 {
    let x = splitmix64(seed ^ concept.wrapping_mul(GOLDEN_GAMMA) ^ j.wrapping_mul(MIX_1));
    let u = (x >> 11) as f64 / (1u64 << 53) as f64;
    2.0 * u - 1.0
}

/// Ids at or above this are reserved for derived (background, noise,
/// frame-direction) vectors; scene concept ids must stay below it.
pub const DERIVED_ID_BASE: u64 = 1 << 63;

/// Folds `parts` into an id in the derived range, distinct per `tag`.
pub fn derived_id(tag: u64, parts: &[u64]) -> u64 {
    let h = parts
        .iter()
        .fold(splitmix64(tag), |acc, &p| splitmix64(acc ^ p));
    h | DERIVED_ID_BASE
}

/// Sequential SplitMix64 stream for placement decisions.
#[derive(Clone, Debug)]
pub struct SplitMix {
    state: u64,
}

impl SplitMix {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        let out = splitmix64(self.state);
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        out
    }

    /// Uniform integer in `0..n` (multiply-shift; `n > 0`).
    pub fn below(&mut self, n: u64) -> u64 {
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// Uniform on `[lo, hi)` from the top 53 bits.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u = (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        lo + (hi - lo) * u
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_reference_values() {
        // First outputs of the reference SplitMix64 generator seeded with 0.
        let mut s = SplitMix::new(0);
        assert_eq!(s.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(s.next_u64(), 0x6E78_9E6A_A1B9_65F4);
    }

    #[test]
    fn coords_are_in_range() {
        for j in 0..1000 {
            let v = concept_coord(7, 3, j);
            assert!((-1.0..1.0).contains(&v));
        }
    }

    #[test]
    fn derived_ids_are_tagged() {
        let a = derived_id(1, &[0, 0, 0]);
        let b = derived_id(2, &[0, 0, 0]);
        assert_ne!(a, b);
        assert!(a >= DERIVED_ID_BASE && b >= DERIVED_ID_BASE);
    }
}

//! Philox-4x32 counter-based generator with a configurable round count.
//!
//! Word order, multipliers and the Weyl key schedule follow the Random123
//! reference, so `rounds = 10` reproduces the published Philox-4x32-10
//! known-answer vectors. Reduced-round variants (7, 5, 3) use the same
//! schedule truncated early.

use crate::error::{Error, Result};

const M0: u32 = 0xD251_1F53;
const M1: u32 = 0xCD9E_8D57;
const W0: u32 = 0x9E37_79B9;
const W1: u32 = 0xBB67_AE85;

/// Largest round count accepted by [`philox_block`].
pub const MAX_ROUNDS: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PhiloxKey {
    pub k0: u32,
    pub k1: u32,
}

impl PhiloxKey {
    pub const fn new(k0: u32, k1: u32) -> Self {
        Self { k0, k1 }
    }

    /// Low word of `seed` becomes `k0`, high word `k1`.
    pub const fn from_seed(seed: u64) -> Self {
        Self {
            k0: seed as u32,
            k1: (seed >> 32) as u32,
        }
    }
}

/// 128-bit counter; `c0` is the least significant word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PhiloxCounter {
    pub c0: u32,
    pub c1: u32,
    pub c2: u32,
    pub c3: u32,
}

impl PhiloxCounter {
    pub const fn new(c0: u32, c1: u32, c2: u32, c3: u32) -> Self {
        Self { c0, c1, c2, c3 }
    }

    /// Counter whose low 64 bits are `lo` and high 64 bits are `hi`.
    pub const fn from_u64_pair(lo: u64, hi: u64) -> Self {
        Self {
            c0: lo as u32,
            c1: (lo >> 32) as u32,
            c2: hi as u32,
            c3: (hi >> 32) as u32,
        }
    }

    pub const fn to_words(self) -> [u32; 4] {
        [self.c0, self.c1, self.c2, self.c3]
    }

    /// Wrapping increment with carry `c0 -> c1 -> c2 -> c3`.
    pub fn increment(self) -> Self {
        let (c0, carry) = self.c0.overflowing_add(1);
        let (c1, carry) = self.c1.overflowing_add(carry as u32);
        let (c2, carry) = self.c2.overflowing_add(carry as u32);
        let c3 = self.c3.wrapping_add(carry as u32);
        Self { c0, c1, c2, c3 }
    }
}

/// Four output words of one generator invocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PhiloxBlock(pub [u32; 4]);

impl PhiloxBlock {
    pub fn words(&self) -> [u32; 4] {
        self.0
    }
}

#[inline(always)]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = (a as u64) * (b as u64);
    ((p >> 32) as u32, p as u32)
}

/// One S-P round.
#[inline(always)]
pub fn philox_round(state: PhiloxCounter, key: PhiloxKey) -> PhiloxCounter {
    let (hi0, lo0) = mulhilo(M0, state.c0);
    let (hi1, lo1) = mulhilo(M1, state.c2);
    PhiloxCounter {
        c0: hi1 ^ state.c1 ^ key.k0,
        c1: lo1,
        c2: hi0 ^ state.c3 ^ key.k1,
        c3: lo0,
    }
}

#[inline(always)]
pub fn bump_key(key: PhiloxKey) -> PhiloxKey {
    PhiloxKey {
        k0: key.k0.wrapping_add(W0),
        k1: key.k1.wrapping_add(W1),
    }
}

/// Applies `rounds` rounds, bumping the key between rounds only.
///
/// Callers that have already validated `rounds` use this directly.
#[inline]
pub fn philox_block_unchecked(key: PhiloxKey, counter: PhiloxCounter, rounds: u32) -> PhiloxBlock {
    let mut state = philox_round(counter, key);
    let mut k = key;
    for _ in 1..rounds {
        k = bump_key(k);
        state = philox_round(state, k);
    }
    PhiloxBlock(state.to_words())
}

pub fn check_rounds(rounds: u32) -> Result<u32> {
    if (1..=MAX_ROUNDS).contains(&rounds) {
        Ok(rounds)
    } else {
        Err(Error::InvalidRounds(rounds))
    }
}

pub fn philox_block(key: PhiloxKey, counter: PhiloxCounter, rounds: u32) -> Result<PhiloxBlock> {
    check_rounds(rounds)?;
    Ok(philox_block_unchecked(key, counter, rounds))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_round_is_zero() {
        let out = philox_round(PhiloxCounter::default(), PhiloxKey::default());
        assert_eq!(out, PhiloxCounter::default());
    }

    #[test]
    fn single_multiply_lands_in_last_word() {
        let out = philox_round(PhiloxCounter::new(1, 0, 0, 0), PhiloxKey::default());
        assert_eq!(out, PhiloxCounter::new(0, 0, 0, 0xD251_1F53));
    }

    #[test]
    fn bump_key_constants_and_wrap() {
        assert_eq!(bump_key(PhiloxKey::new(0, 0)), PhiloxKey::new(0x9E37_79B9, 0xBB67_AE85));
        assert_eq!(
            bump_key(PhiloxKey::new(u32::MAX, u32::MAX)),
            PhiloxKey::new(0x9E37_79B8, 0xBB67_AE84)
        );
    }

    #[test]
    fn ten_bumps_match_wide_multiply() {
        let mut k = PhiloxKey::default();
        for _ in 0..10 {
            k = bump_key(k);
        }
        let expect0 = ((10u64 * W0 as u64) & 0xFFFF_FFFF) as u32;
        let expect1 = ((10u64 * W1 as u64) & 0xFFFF_FFFF) as u32;
        assert_eq!(k, PhiloxKey::new(expect0, expect1));
    }

    #[test]
    fn one_round_on_zeros() {
        let b = philox_block(PhiloxKey::default(), PhiloxCounter::default(), 1).unwrap();
        assert_eq!(b.words(), [0; 4]);
    }

    #[test]
    fn rejects_bad_round_counts() {
        let k = PhiloxKey::default();
        let c = PhiloxCounter::default();
        assert!(matches!(philox_block(k, c, 0), Err(Error::InvalidRounds(0))));
        assert!(matches!(philox_block(k, c, 17), Err(Error::InvalidRounds(17))));
        assert!(philox_block(k, c, 16).is_ok());
    }

    #[test]
    fn counter_increment_carries() {
        let c = PhiloxCounter::new(u32::MAX, u32::MAX, 5, 0).increment();
        assert_eq!(c, PhiloxCounter::new(0, 0, 6, 0));
        let c = PhiloxCounter::new(u32::MAX, u32::MAX, u32::MAX, u32::MAX).increment();
        assert_eq!(c, PhiloxCounter::default());
    }

    #[test]
    fn seed_split() {
        assert_eq!(
            PhiloxKey::from_seed(0x1122_3344_5566_7788),
            PhiloxKey::new(0x5566_7788, 0x1122_3344)
        );
    }
}
